#include "ul/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iomanip>
#include <sstream>

#include "ul/container.hpp"
#include "ul/rng.hpp"
#include "ul/saliency.hpp"

namespace fs = std::filesystem;

namespace ul {
namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

bool file_exists(const std::string& path) { return fs::exists(fs::path(path)); }

std::string input_line(const std::string& path) {
  return "in " + fs::path(path).filename().string() + " " + hex64(fnv1a(read_file_bytes(path))) +
         "\n";
}

// Lines of the canonical config text whose key matches a filter entry; an
// entry ending in '.' matches the whole section.
std::string config_slice(const RunConfig& cfg, const std::vector<std::string>& filters) {
  std::istringstream in(config_text(cfg));
  std::ostringstream out;
  std::string line;
  while (std::getline(in, line)) {
    std::string key = line.substr(0, line.find(" ="));
    for (const auto& f : filters) {
      bool hit = f.back() == '.' ? key.rfind(f, 0) == 0 : key == f;
      if (hit) {
        out << line << "\n";
        break;
      }
    }
  }
  return out.str();
}

void require_inputs(const std::vector<std::string>& paths, const char* hint) {
  for (const auto& p : paths)
    UL_CHECK(file_exists(p), "io", "missing input artifact " + p + " (" + hint + ")");
}

bool up_to_date(const RunPaths& p, const std::string& stage, const std::string& digest,
                const std::vector<std::string>& outputs) {
  std::string stamp_path = p.stamp(stage);
  if (!file_exists(stamp_path)) return false;
  if (read_file_bytes(stamp_path) != hex64(fnv1a(digest))) return false;
  for (const auto& o : outputs)
    if (!file_exists(o)) return false;
  return true;
}

void write_stamp(const RunPaths& p, const std::string& stage, const std::string& digest) {
  std::string stamp_path = p.stamp(stage);
  fs::create_directories(fs::path(stamp_path).parent_path());
  write_file_bytes(stamp_path, hex64(fnv1a(digest)));
}

struct VanillaStep {
  int step, epoch;
  double loss;
};

void save_vanilla_log_csv(const std::string& path, const std::vector<VanillaStep>& rows) {
  std::ostringstream out;
  out << "step,epoch,loss\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g\n", r.step, r.epoch, r.loss);
    out << buf;
  }
  write_file_bytes(path, out.str());
}

std::string ratio_tag(double r) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", r);
  return buf;
}

void copy_if_missing(const std::string& from, const std::string& to) {
  if (file_exists(to) || !file_exists(from)) return;
  fs::create_directories(fs::path(to).parent_path());
  write_file_bytes(to, read_file_bytes(from));
}

}  // namespace

RunPaths::RunPaths(std::string run_dir) : dir(std::move(run_dir)) {
  items = dir + "/items.jsonl";
  images = dir + "/images.ulc";
  vanilla_ckpt = dir + "/vanilla.ckpt";
  vanilla_train = dir + "/vanilla_train.csv";
  saliency_t = dir + "/saliency_T.ulc";
  saliency_p = dir + "/saliency_P.ulc";
  mask = dir + "/mask.ulc";
  mask_stats = dir + "/mask_stats.csv";
  vanilla_report_csv = dir + "/report_vanilla.csv";
  vanilla_report_txt = dir + "/report_vanilla.txt";
}

std::string RunPaths::unlearned_ckpt(Method m) const {
  return dir + "/unlearned_" + method_str(m) + ".ckpt";
}
std::string RunPaths::train_log(Method m) const {
  return dir + "/train_" + method_str(m) + ".csv";
}
std::string RunPaths::report_csv(Method m) const {
  return dir + "/report_" + method_str(m) + ".csv";
}
std::string RunPaths::report_txt(Method m) const {
  return dir + "/report_" + method_str(m) + ".txt";
}
std::string RunPaths::deltas_csv(Method m) const {
  return dir + "/deltas_" + method_str(m) + ".csv";
}
std::string RunPaths::heatmap_csv(Method m) const {
  return dir + "/heatmap_" + method_str(m) + ".csv";
}
std::string RunPaths::stamp(const std::string& stage) const {
  return dir + "/.stamps/" + stage + ".stamp";
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::vector<int> forget_concepts(const RunConfig& cfg) {
  return make_split(cfg.data.n_concepts, cfg.forget_ratio, cfg.seed + 1);
}

Dataset load_run_dataset(const RunConfig& cfg) {
  RunPaths p(cfg.out);
  require_inputs({p.items, p.images}, "run the finetune stage first");
  Dataset d;
  d.cfg = cfg.data;
  d.vocab = Vocab::build(cfg.data);
  d.items = load_items_jsonl(p.items, d.vocab);
  d.images = load_images(p.images);
  for (const auto& item : d.items)
    UL_CHECK(item.image_index < static_cast<int>(d.images.size()), "io",
             "item references a missing image");
  return d;
}

bool stage_dataset(const RunConfig& cfg) {
  cfg.validate();
  RunPaths p(cfg.out);
  fs::create_directories(fs::path(p.dir));
  std::string digest = "stage dataset\n" +
                       config_slice(cfg, {"data.n_concepts", "data.n_attributes",
                                          "data.value_pool", "data.per_concept_vqa",
                                          "data.per_concept_qa", "data.n_choices",
                                          "data.n_general_visual", "data.n_general_textual",
                                          "data.image_h", "data.image_w", "data.image_c",
                                          "run.seed"});
  if (up_to_date(p, "dataset", digest, {p.items, p.images})) return false;
  Dataset d = build_dataset(cfg.data, cfg.seed + 1);
  save_items_jsonl(p.items, d);
  save_images(p.images, d);
  write_stamp(p, "dataset", digest);
  return true;
}

bool stage_finetune(const RunConfig& cfg) {
  cfg.validate();
  RunPaths p(cfg.out);
  require_inputs({p.items, p.images}, "run the dataset stage first");
  std::string digest = "stage finetune\n" +
                       config_slice(cfg, {"model.", "vanilla.", "run.seed"}) +
                       input_line(p.items) + input_line(p.images);
  if (up_to_date(p, "finetune", digest, {p.vanilla_ckpt, p.vanilla_train})) return false;

  Dataset d = load_run_dataset(cfg);
  ToyMLLM model = ToyMLLM::init(materialized_model(cfg), cfg.seed + 2);
  std::vector<int> order = all_indices(d);
  Rng order_rng(cfg.seed + 3);
  AdamState adam;
  bool use_adam = cfg.vanilla.optimizer == "adam";
  if (use_adam) adam = AdamState::init(model.params);
  AdamConfig acfg;
  acfg.lr = cfg.vanilla.lr;

  std::vector<VanillaStep> log;
  int step = 0;
  for (int epoch = 0; epoch < cfg.vanilla.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t at = 0; at < order.size(); at += cfg.vanilla.batch_size) {
      std::size_t end = std::min(order.size(), at + cfg.vanilla.batch_size);
      std::vector<int> batch(order.begin() + at, order.begin() + end);
      BatchEval be = batch_nll(model, d, batch);
      if (use_adam)
        adam_step(model.params, be.grad, adam, acfg);
      else
        sgd_step(model.params, be.grad, cfg.vanilla.lr);
      log.push_back({step++, epoch, be.loss});
    }
  }

  save_checkpoint(p.vanilla_ckpt, model);
  save_vanilla_log_csv(p.vanilla_train, log);

  double acc = mc_accuracy(model, d, all_indices(d));
  if (acc < kGateAccuracy) {
    char buf[128];
    std::snprintf(buf, sizeof(buf), "train accuracy %.4f below the %.2f learnability gate", acc,
                  kGateAccuracy);
    fail("gate", buf);
  }
  write_stamp(p, "finetune", digest);
  return true;
}

bool stage_saliency(const RunConfig& cfg) {
  cfg.validate();
  RunPaths p(cfg.out);
  require_inputs({p.items, p.images, p.vanilla_ckpt}, "run the finetune stage first");
  std::string digest = "stage saliency\n" +
                       config_slice(cfg, {"data.forget_ratio", "unlearn.mask_beta",
                                          "unlearn.mask_scope", "run.seed"}) +
                       input_line(p.vanilla_ckpt) + input_line(p.items) + input_line(p.images);
  std::vector<std::string> outs{p.saliency_t, p.saliency_p, p.mask, p.mask_stats};
  if (up_to_date(p, "saliency", digest, outs)) return false;

  Dataset d = load_run_dataset(cfg);
  std::vector<int> forget = forget_concepts(cfg);
  ToyMLLM model = load_checkpoint(p.vanilla_ckpt);
  SaliencyMap st = fisher_diag(model, d, targeted_indices(d, forget));
  SaliencyMap sp = fisher_diag(model, d, preserved_indices(d, forget));
  GradSet mask =
      compute_mask(model.params, st, sp, cfg.unlearn.mask_beta, cfg.unlearn.mask_scope);
  save_grad_container(p.saliency_t, model.params, st);
  save_grad_container(p.saliency_p, model.params, sp);
  save_grad_container(p.mask, model.params, mask);
  save_mask_stats_csv(p.mask_stats, mask_stats(model.params, mask));
  write_stamp(p, "saliency", digest);
  return true;
}

bool stage_unlearn(const RunConfig& cfg) {
  cfg.validate();
  RunPaths p(cfg.out);
  require_inputs({p.items, p.images, p.vanilla_ckpt}, "run the finetune stage first");
  Method method = cfg.unlearn.method;
  bool with_mask = method == Method::mm_unlearner && file_exists(p.mask);
  std::string digest = "stage unlearn\n" +
                       config_slice(cfg, {"unlearn.", "data.forget_ratio", "run.seed"}) +
                       input_line(p.vanilla_ckpt) + input_line(p.items) + input_line(p.images) +
                       (with_mask ? input_line(p.mask) : std::string());
  std::vector<std::string> outs{p.unlearned_ckpt(method), p.train_log(method)};
  if (up_to_date(p, "unlearn", digest, outs)) return false;

  Dataset d = load_run_dataset(cfg);
  std::vector<int> forget = forget_concepts(cfg);
  Splits splits;
  splits.forget = targeted_indices(d, forget);
  splits.retain = retain_train_indices(d, forget);
  splits.preserved = preserved_indices(d, forget);

  ToyMLLM model = load_checkpoint(p.vanilla_ckpt);
  UnlearnConfig ucfg = cfg.unlearn;
  ucfg.seed = cfg.seed + 3;
  GradSet mask;
  const GradSet* mask_ptr = nullptr;
  if (with_mask) {
    mask = load_grad_container(p.mask, model.params, true);
    mask_ptr = &mask;
  }
  UnlearnResult res = run_unlearning(model, d, splits, ucfg, mask_ptr);
  save_checkpoint(p.unlearned_ckpt(method), model);
  save_train_log_csv(p.train_log(method), method, res.log);
  write_stamp(p, "unlearn", digest);
  return true;
}

bool stage_eval(const RunConfig& cfg) {
  cfg.validate();
  RunPaths p(cfg.out);
  require_inputs({p.items, p.images, p.vanilla_ckpt}, "run the finetune stage first");
  Method method = cfg.unlearn.method;
  bool both = file_exists(p.unlearned_ckpt(method));
  std::string digest = "stage eval\n" +
                       config_slice(cfg, {"data.forget_ratio", "unlearn.method", "run.seed"}) +
                       input_line(p.vanilla_ckpt) +
                       (both ? input_line(p.unlearned_ckpt(method)) : std::string()) +
                       input_line(p.items) + input_line(p.images);
  std::vector<std::string> outs{p.vanilla_report_csv, p.vanilla_report_txt};
  if (both) {
    outs.push_back(p.report_csv(method));
    outs.push_back(p.report_txt(method));
    outs.push_back(p.deltas_csv(method));
    outs.push_back(p.heatmap_csv(method));
  }
  if (up_to_date(p, "eval", digest, outs)) return false;

  Dataset d = load_run_dataset(cfg);
  EvalGroups groups = eval_groups(d, forget_concepts(cfg));
  ToyMLLM vanilla = load_checkpoint(p.vanilla_ckpt);
  EvalReport rv = evaluate_all(vanilla, d, groups);
  save_report_csv(p.vanilla_report_csv, rv);
  save_report_text(p.vanilla_report_txt, rv);
  if (both) {
    ToyMLLM after = load_checkpoint(p.unlearned_ckpt(method));
    EvalReport ra = evaluate_all(after, d, groups);
    save_report_csv(p.report_csv(method), ra);
    save_report_text(p.report_txt(method), ra);
    save_deltas_csv(p.deltas_csv(method), rv, ra);
    long long n =
        std::min(kHeatmapTopN, static_cast<long long>(vanilla.params.total_coords()));
    save_heatmap_csv(p.heatmap_csv(method), deviation_heatmap(vanilla.params, after.params, n));
  }
  write_stamp(p, "eval", digest);
  return true;
}

std::vector<SweepCell> run_sweep(const RunConfig& cfg, const std::vector<Method>& methods,
                                 const std::vector<double>& ratios) {
  cfg.validate();
  UL_CHECK(!methods.empty() && !ratios.empty(), "config", "sweep needs methods and ratios");
  stage_dataset(cfg);
  stage_finetune(cfg);
  RunPaths root(cfg.out);
  fs::create_directories(fs::path(cfg.out + "/sweep"));

  std::ostringstream table;
  table << "method,ratio,dimension,value\n";
  std::vector<SweepCell> cells;
  for (Method m : methods) {
    for (double r : ratios) {
      SweepCell cell;
      cell.method = m;
      cell.ratio = r;
      RunConfig cc = cfg;
      cc.forget_ratio = r;
      cc.unlearn.method = m;
      cc.out = cfg.out + "/sweep/" + method_str(m) + "_" + ratio_tag(r);
      try {
        fs::create_directories(fs::path(cc.out));
        RunPaths cp(cc.out);
        // the dataset and vanilla model do not depend on ratio or method, so
        // cells start from byte-identical copies of the root artifacts
        copy_if_missing(root.items, cp.items);
        copy_if_missing(root.images, cp.images);
        copy_if_missing(root.vanilla_ckpt, cp.vanilla_ckpt);
        copy_if_missing(root.vanilla_train, cp.vanilla_train);
        copy_if_missing(root.stamp("dataset"), cp.stamp("dataset"));
        copy_if_missing(root.stamp("finetune"), cp.stamp("finetune"));
        stage_dataset(cc);
        stage_finetune(cc);
        if (m == Method::mm_unlearner) stage_saliency(cc);
        stage_unlearn(cc);
        stage_eval(cc);
        // the cell report is already on disk; lift accuracy rows into the table
        std::istringstream report(read_file_bytes(cp.report_csv(m)));
        std::string line;
        std::getline(report, line);  // header
        while (std::getline(report, line)) {
          std::size_t c1 = line.find(',');
          std::size_t c2 = line.find(',', c1 + 1);
          std::size_t c3 = line.find(',', c2 + 1);
          UL_CHECK(c1 != std::string::npos && c3 != std::string::npos, "io",
                   "malformed report row: " + line);
          table << method_str(m) << "," << ratio_tag(r) << "," << line.substr(0, c1) << ","
                << line.substr(c2 + 1, c3 - c2 - 1) << "\n";
        }
      } catch (const Error& e) {
        cell.failed = true;
        cell.error_class = e.cls();
        cell.message = e.what();
      } catch (const std::exception& e) {
        cell.failed = true;
        cell.error_class = "internal";
        cell.message = e.what();
      }
      cells.push_back(cell);
    }
  }

  write_file_bytes(cfg.out + "/sweep/sweep.csv", table.str());
  std::ostringstream failures;
  failures << "method,ratio,error_class,message\n";
  for (const auto& c : cells) {
    if (!c.failed) continue;
    std::string msg = c.message;
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::replace(msg.begin(), msg.end(), ',', ';');
    failures << method_str(c.method) << "," << ratio_tag(c.ratio) << "," << c.error_class << ","
             << msg << "\n";
  }
  write_file_bytes(cfg.out + "/sweep/sweep_failures.csv", failures.str());
  return cells;
}

}  // namespace ul
