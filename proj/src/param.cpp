#include "ul/param.hpp"

#include <cmath>

namespace ul {

const char* component_name(Component c) {
  switch (c) {
    case Component::vision_encoder: return "vision_encoder";
    case Component::connector: return "connector";
    case Component::language_model: return "language_model";
  }
  return "?";
}

Component component_from_name(const std::string& s) {
  if (s == "vision_encoder") return Component::vision_encoder;
  if (s == "connector") return Component::connector;
  if (s == "language_model") return Component::language_model;
  fail("config", "unknown component: " + s);
}

void ParamSet::add(std::string name, Component comp, Tensor value) {
  UL_CHECK(!has(name), "contract", "duplicate parameter name: " + name);
  require_finite(value, "ParamSet::add");
  index_[name] = entries_.size();
  entries_.push_back({std::move(name), comp, std::move(value)});
}

std::size_t ParamSet::index_of(const std::string& name) const {
  auto it = index_.find(name);
  UL_CHECK(it != index_.end(), "contract", "unknown parameter: " + name);
  return it->second;
}

std::size_t ParamSet::total_coords() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

GradSet::GradSet(const ParamSet& ps) {
  names_.reserve(ps.size());
  grads_.reserve(ps.size());
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const auto& e = ps.entry(i);
    index_[e.name] = names_.size();
    names_.push_back(e.name);
    grads_.push_back(Tensor::zeros(e.value.shape));
  }
}

Tensor& GradSet::at(const std::string& name) {
  auto it = index_.find(name);
  UL_CHECK(it != index_.end(), "contract", "unknown gradient key: " + name);
  return grads_[it->second];
}

const Tensor& GradSet::at(const std::string& name) const {
  auto it = index_.find(name);
  UL_CHECK(it != index_.end(), "contract", "unknown gradient key: " + name);
  return grads_[it->second];
}

bool GradSet::aligned_with(const ParamSet& ps) const {
  if (ps.size() != names_.size()) return false;
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (ps.entry(i).name != names_[i]) return false;
    if (ps.entry(i).value.shape != grads_[i].shape) return false;
  }
  return true;
}

void GradSet::add_scaled(const GradSet& other, double s) {
  UL_CHECK(names_ == other.names_, "contract", "GradSet key mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    UL_CHECK(grads_[i].same_shape(other.grads_[i]), "contract",
             "GradSet shape mismatch at " + names_[i]);
    const auto& src = other.grads_[i].data;
    auto& dst = grads_[i].data;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += s * src[j];
  }
}

void GradSet::add_squared(const GradSet& other) {
  UL_CHECK(names_ == other.names_, "contract", "GradSet key mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) {
    const auto& src = other.grads_[i].data;
    auto& dst = grads_[i].data;
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j] * src[j];
  }
}

void GradSet::scale(double s) {
  for (auto& g : grads_)
    for (double& v : g.data) v *= s;
}

double GradSet::l2_norm() const {
  double s = 0.0;
  for (const auto& g : grads_)
    for (double v : g.data) s += v * v;
  return std::sqrt(s);
}

namespace {

// "b3" -> 3, anything else -> -1
int block_index(const std::string& tok) {
  if (tok.size() < 2 || tok[0] != 'b') return -1;
  int v = 0;
  for (std::size_t i = 1; i < tok.size(); ++i) {
    if (tok[i] < '0' || tok[i] > '9') return -1;
    v = v * 10 + (tok[i] - '0');
  }
  return v;
}

std::vector<std::string> split_dots(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == '.') {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace

ParamCell classify_param_name(const std::string& name) {
  auto parts = split_dots(name);
  UL_CHECK(parts.size() >= 2, "contract", "unclassifiable parameter name: " + name);
  const std::string& top = parts[0];
  if (top == "vision") {
    int b = block_index(parts[1]);
    return {b < 0 ? 0 : b + 1, "vision"};
  }
  if (top == "connector") return {0, "connector"};
  if (top == "lm") {
    int b = block_index(parts[1]);
    if (b >= 0) {
      UL_CHECK(parts.size() >= 3, "contract", "unclassifiable parameter name: " + name);
      if (parts[2] == "attn" || parts[2] == "ln1") return {b + 1, "attention"};
      if (parts[2] == "mlp" || parts[2] == "ln2") return {b + 1, "mlp"};
      fail("contract", "unclassifiable parameter name: " + name);
    }
    if (parts[1] == "tok_embed" || parts[1] == "pos_embed") return {0, "embedding"};
    if (parts[1] == "final_ln" || parts[1] == "head") return {-1, "head"};
    fail("contract", "unclassifiable parameter name: " + name);
  }
  fail("contract", "unclassifiable parameter name: " + name);
}

}  // namespace ul
