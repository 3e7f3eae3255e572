#include "ul/config.hpp"

#include <cmath>
#include <iomanip>
#include <sstream>

#include "ul/container.hpp"
#include "ul/saliency.hpp"

namespace ul {
namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long long n = std::stoll(v, &pos);
    UL_CHECK(pos == v.size(), "config", "trailing junk in integer for " + key);
    return n;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail("config", "expected an integer for " + key + ", got '" + v + "'");
  }
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    UL_CHECK(pos == v.size(), "config", "trailing junk in number for " + key);
    return x;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    fail("config", "expected a number for " + key + ", got '" + v + "'");
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail("config", "expected true or false for " + key + ", got '" + v + "'");
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  long long n = to_int(key, v);
  UL_CHECK(n >= 0, "config", key + " must be nonnegative");
  return static_cast<std::uint64_t>(n);
}

void apply(RunConfig& c, const std::string& key, const std::string& v) {
  if (key == "model.d_vision") c.model.d_vision = static_cast<int>(to_int(key, v));
  else if (key == "model.d_model") c.model.d_model = static_cast<int>(to_int(key, v));
  else if (key == "model.n_layers") c.model.n_layers = static_cast<int>(to_int(key, v));
  else if (key == "model.n_vision_layers") c.model.n_vision_layers = static_cast<int>(to_int(key, v));
  else if (key == "model.n_heads") c.model.n_heads = static_cast<int>(to_int(key, v));
  else if (key == "model.patch_size") c.model.patch_size = static_cast<int>(to_int(key, v));
  else if (key == "model.max_seq_len") c.model.max_seq_len = static_cast<int>(to_int(key, v));
  else if (key == "data.n_concepts") c.data.n_concepts = static_cast<int>(to_int(key, v));
  else if (key == "data.n_attributes") c.data.n_attributes = static_cast<int>(to_int(key, v));
  else if (key == "data.value_pool") c.data.value_pool = static_cast<int>(to_int(key, v));
  else if (key == "data.per_concept_vqa") c.data.per_concept_vqa = static_cast<int>(to_int(key, v));
  else if (key == "data.per_concept_qa") c.data.per_concept_qa = static_cast<int>(to_int(key, v));
  else if (key == "data.n_choices") c.data.n_choices = static_cast<int>(to_int(key, v));
  else if (key == "data.n_general_visual") c.data.n_general_visual = static_cast<int>(to_int(key, v));
  else if (key == "data.n_general_textual") c.data.n_general_textual = static_cast<int>(to_int(key, v));
  else if (key == "data.image_h") c.data.image_h = static_cast<int>(to_int(key, v));
  else if (key == "data.image_w") c.data.image_w = static_cast<int>(to_int(key, v));
  else if (key == "data.image_c") c.data.image_c = static_cast<int>(to_int(key, v));
  else if (key == "data.forget_ratio") c.forget_ratio = to_double(key, v);
  else if (key == "vanilla.epochs") c.vanilla.epochs = static_cast<int>(to_int(key, v));
  else if (key == "vanilla.batch_size") c.vanilla.batch_size = static_cast<int>(to_int(key, v));
  else if (key == "vanilla.lr") c.vanilla.lr = to_double(key, v);
  else if (key == "vanilla.optimizer") c.vanilla.optimizer = v;
  else if (key == "unlearn.method") c.unlearn.method = parse_method(v);
  else if (key == "unlearn.epochs") c.unlearn.epochs = static_cast<int>(to_int(key, v));
  else if (key == "unlearn.batch_size") c.unlearn.batch_size = static_cast<int>(to_int(key, v));
  else if (key == "unlearn.lr") c.unlearn.lr = to_double(key, v);
  else if (key == "unlearn.optimizer") c.unlearn.optimizer = v;
  else if (key == "unlearn.npo_beta") c.unlearn.npo_beta = to_double(key, v);
  else if (key == "unlearn.mask_beta") c.unlearn.mask_beta = to_double(key, v);
  else if (key == "unlearn.mask_scope") c.unlearn.mask_scope = parse_scope(v);
  else if (key == "unlearn.retain_term") c.unlearn.retain_term = to_bool(key, v);
  else if (key == "unlearn.retain_data") c.unlearn.retain_data = v;
  else if (key == "unlearn.kl_data") c.unlearn.kl_data = v;
  else if (key == "run.seed") c.seed = to_u64(key, v);
  else if (key == "run.out") c.out = v;
  else fail("config", "unknown key '" + key + "'");
}

}  // namespace

void TrainConfig::validate() const {
  UL_CHECK(epochs >= 0, "config", "epochs must be nonnegative");
  UL_CHECK(batch_size >= 1, "config", "batch_size must be positive");
  UL_CHECK(std::isfinite(lr) && lr > 0.0, "config", "lr must be positive");
  UL_CHECK(optimizer == "sgd" || optimizer == "adam", "config",
           "optimizer must be sgd or adam");
}

void RunConfig::validate() const {
  data.validate();
  UL_CHECK(std::isfinite(forget_ratio) && forget_ratio > 0.0 && forget_ratio < 1.0, "config",
           "forget_ratio must lie strictly between 0 and 1");
  vanilla.validate();
  unlearn.validate();
  materialized_model(*this).validate();
  UL_CHECK(!out.empty(), "config", "output directory must be set");
}

ModelConfig materialized_model(const RunConfig& cfg) {
  ModelConfig m = cfg.model;
  m.image_h = cfg.data.image_h;
  m.image_w = cfg.data.image_w;
  m.image_c = cfg.data.image_c;
  m.vocab_size = Vocab::build(cfg.data).size();
  return m;
}

RunConfig parse_config_text(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    UL_CHECK(eq != std::string::npos, "config",
             "line " + std::to_string(lineno) + " is not 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    UL_CHECK(!key.empty(), "config", "line " + std::to_string(lineno) + " has an empty key");
    apply(c, key, value);
  }
  return c;
}

RunConfig load_config(const std::string& path) {
  return parse_config_text(read_file_bytes(path));
}

std::string config_text(const RunConfig& c) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "model.d_vision = " << c.model.d_vision << "\n";
  out << "model.d_model = " << c.model.d_model << "\n";
  out << "model.n_layers = " << c.model.n_layers << "\n";
  out << "model.n_vision_layers = " << c.model.n_vision_layers << "\n";
  out << "model.n_heads = " << c.model.n_heads << "\n";
  out << "model.patch_size = " << c.model.patch_size << "\n";
  out << "model.max_seq_len = " << c.model.max_seq_len << "\n";
  out << "data.n_concepts = " << c.data.n_concepts << "\n";
  out << "data.n_attributes = " << c.data.n_attributes << "\n";
  out << "data.value_pool = " << c.data.value_pool << "\n";
  out << "data.per_concept_vqa = " << c.data.per_concept_vqa << "\n";
  out << "data.per_concept_qa = " << c.data.per_concept_qa << "\n";
  out << "data.n_choices = " << c.data.n_choices << "\n";
  out << "data.n_general_visual = " << c.data.n_general_visual << "\n";
  out << "data.n_general_textual = " << c.data.n_general_textual << "\n";
  out << "data.image_h = " << c.data.image_h << "\n";
  out << "data.image_w = " << c.data.image_w << "\n";
  out << "data.image_c = " << c.data.image_c << "\n";
  out << "data.forget_ratio = " << c.forget_ratio << "\n";
  out << "vanilla.epochs = " << c.vanilla.epochs << "\n";
  out << "vanilla.batch_size = " << c.vanilla.batch_size << "\n";
  out << "vanilla.lr = " << c.vanilla.lr << "\n";
  out << "vanilla.optimizer = " << c.vanilla.optimizer << "\n";
  out << "unlearn.method = " << method_str(c.unlearn.method) << "\n";
  out << "unlearn.epochs = " << c.unlearn.epochs << "\n";
  out << "unlearn.batch_size = " << c.unlearn.batch_size << "\n";
  out << "unlearn.lr = " << c.unlearn.lr << "\n";
  out << "unlearn.optimizer = " << c.unlearn.optimizer << "\n";
  out << "unlearn.npo_beta = " << c.unlearn.npo_beta << "\n";
  out << "unlearn.mask_beta = " << c.unlearn.mask_beta << "\n";
  out << "unlearn.mask_scope = " << c.unlearn.mask_scope.str() << "\n";
  out << "unlearn.retain_term = " << (c.unlearn.retain_term ? "true" : "false") << "\n";
  out << "unlearn.retain_data = " << c.unlearn.retain_data << "\n";
  out << "unlearn.kl_data = " << c.unlearn.kl_data << "\n";
  out << "run.seed = " << c.seed << "\n";
  out << "run.out = " << c.out << "\n";
  return out.str();
}

}  // namespace ul
