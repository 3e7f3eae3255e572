// Launch gate: every release-blocking property checked end to end, one
// [PASS]/[FAIL] line each. Exits nonzero when any check fails.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ul/config.hpp"
#include "ul/container.hpp"
#include "ul/eval.hpp"
#include "ul/pipeline.hpp"
#include "ul/rng.hpp"
#include "ul/saliency.hpp"
#include "ul/unlearn.hpp"

using namespace ul;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int id, const std::string& what, bool ok, const std::string& detail = "") {
  if (!ok) ++g_failures;
  std::printf("[%s] criterion %d: %s%s%s\n", ok ? "PASS" : "FAIL", id, what.c_str(),
              detail.empty() ? "" : " ", detail.c_str());
  std::fflush(stdout);
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// Small learnable setup shared by the local checks.
struct Local {
  RunConfig cfg;
  Dataset data;
  ToyMLLM model;
  std::vector<int> forget;
};

Local make_local() {
  Local l;
  l.cfg.model.d_vision = 16;
  l.cfg.model.d_model = 24;
  l.cfg.model.n_heads = 2;
  l.cfg.model.n_layers = 1;
  l.cfg.model.n_vision_layers = 1;
  l.cfg.data.n_concepts = 6;
  l.cfg.data.per_concept_vqa = 3;
  l.cfg.data.per_concept_qa = 3;
  l.cfg.data.value_pool = 6;
  l.cfg.data.n_choices = 3;
  l.cfg.data.n_general_visual = 4;
  l.cfg.data.n_general_textual = 4;
  l.cfg.forget_ratio = 0.34;
  l.data = build_dataset(l.cfg.data, 91);
  l.model = ToyMLLM::init(materialized_model(l.cfg), 92);
  l.forget = make_split(l.cfg.data.n_concepts, l.cfg.forget_ratio, 91);
  return l;
}

bool bitwise_equal(const ParamSet& a, const ParamSet& b, std::string& why) {
  if (a.size() != b.size()) {
    why = "parameter count differs";
    return false;
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Tensor& ta = a.entry(i).value;
    const Tensor& tb = b.entry(i).value;
    if (ta.data.size() != tb.data.size()) {
      why = "shape differs at " + a.entry(i).name;
      return false;
    }
    for (std::size_t k = 0; k < ta.data.size(); ++k) {
      if (std::bit_cast<std::uint64_t>(ta.data[k]) != std::bit_cast<std::uint64_t>(tb.data[k])) {
        why = a.entry(i).name + "[" + std::to_string(k) + "]";
        return false;
      }
    }
  }
  return true;
}

// criterion 1: reverse-mode gradients against central finite differences
void check_gradients() {
  auto t0 = Clock::now();
  Local l = make_local();
  std::vector<int> batch{0, 1, 2};
  BatchEval base = batch_nll(l.model, l.data, batch);

  Rng rng(2026);
  const double h = 1e-5;
  int tested[3] = {0, 0, 0};
  double worst = 0.0;
  std::string worst_at;
  ParamSet& ps = l.model.params;
  for (int comp = 0; comp < 3; ++comp) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < ps.size(); ++i)
      if (static_cast<int>(ps.entry(i).comp) == comp) pool.push_back(i);
    int done = 0;
    int attempts = 0;
    while (done < 20 && attempts < 400) {
      ++attempts;
      std::size_t ei = pool[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(pool.size())))];
      Tensor& t = ps.entry(ei).value;
      std::size_t k = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(t.data.size())));
      double ad = base.grad.grad(ei).data[k];
      double saved = t.data[k];
      t.data[k] = saved + h;
      double up = batch_nll(l.model, l.data, batch).loss;
      t.data[k] = saved - h;
      double down = batch_nll(l.model, l.data, batch).loss;
      t.data[k] = saved;
      double fd = (up - down) / (2.0 * h);
      if (std::abs(fd) < 1e-6 && std::abs(ad) < 1e-6) continue;  // untestable at relative scale
      double rel = std::abs(ad - fd) / std::max(1.0, std::abs(fd));
      if (rel > worst) {
        worst = rel;
        worst_at = ps.entry(ei).name + "[" + std::to_string(k) + "]";
      }
      ++done;
    }
    tested[comp] = done;
  }
  double secs = seconds_since(t0);
  bool ok = worst <= 1e-4 && tested[0] >= 20 && tested[1] >= 20 && tested[2] >= 20 && secs < 60.0;
  char buf[200];
  std::snprintf(buf, sizeof(buf), "(worst rel %.2e at %s; %d/%d/%d coords; %.1fs)", worst,
                worst_at.c_str(), tested[0], tested[1], tested[2], secs);
  report(1, "analytic gradients match finite differences", ok, buf);
}

// criterion 2: mask threshold algebra and the no-touch guarantee
void check_mask_algebra() {
  auto t0 = Clock::now();
  Local l = make_local();
  SaliencyMap st = fisher_diag(l.model, l.data, targeted_indices(l.data, l.forget));
  SaliencyMap sp = fisher_diag(l.model, l.data, preserved_indices(l.data, l.forget));
  ComponentScope scope;
  GradSet m_half = compute_mask(l.model.params, st, sp, 0.5, scope);
  GradSet m_one = compute_mask(l.model.params, st, sp, 1.0, scope);
  GradSet m_two = compute_mask(l.model.params, st, sp, 2.0, scope);
  bool nested = true;
  for (std::size_t i = 0; i < m_one.size() && nested; ++i)
    for (std::size_t k = 0; k < m_one.grad(i).data.size(); ++k) {
      double b2 = m_two.grad(i).data[k], b1 = m_one.grad(i).data[k], bh = m_half.grad(i).data[k];
      if (b2 > b1 || b1 > bh) {
        nested = false;
        break;
      }
    }

  // exact ratio ties resolve to bit 1: preserved scores equal to targeted
  GradSet m_tie = compute_mask(l.model.params, st, st, 1.0, scope);
  bool ties = true;
  long long tie_bits = 0;
  for (std::size_t i = 0; i < m_tie.size() && ties; ++i)
    for (std::size_t k = 0; k < m_tie.grad(i).data.size(); ++k) {
      bool positive = st.grad(i).data[k] > 0.0;
      if (m_tie.grad(i).data[k] != (positive ? 1.0 : 0.0)) {
        ties = false;
        break;
      }
      if (positive) ++tie_bits;
    }

  // with the retain term off, unmasked coordinates never move
  UnlearnConfig uc;
  uc.method = Method::mm_unlearner;
  uc.retain_term = false;
  uc.epochs = 100;
  uc.batch_size = 64;  // one step per epoch
  uc.lr = 0.05;
  uc.seed = 5;
  Splits sp2{targeted_indices(l.data, l.forget), retain_train_indices(l.data, l.forget),
             preserved_indices(l.data, l.forget)};
  ToyMLLM before = l.model;
  ToyMLLM after = l.model;
  UnlearnResult res = run_unlearning(after, l.data, sp2, uc, &m_one);
  bool untouched = true;
  std::string where;
  for (std::size_t i = 0; i < m_one.size() && untouched; ++i)
    for (std::size_t k = 0; k < m_one.grad(i).data.size(); ++k)
      if (m_one.grad(i).data[k] == 0.0 &&
          std::bit_cast<std::uint64_t>(after.params.entry(i).value.data[k]) !=
              std::bit_cast<std::uint64_t>(before.params.entry(i).value.data[k])) {
        untouched = false;
        where = m_one.name(i);
        break;
      }
  bool steps_ok = static_cast<int>(res.log.size()) == 100;
  double secs = seconds_since(t0);
  bool ok = nested && ties && untouched && steps_ok && secs < 60.0;
  char buf[220];
  std::snprintf(buf, sizeof(buf),
                "(nesting %s; %lld tie bits set; %d steps, masked-out coords %s%s%s; %.1fs)",
                nested ? "holds" : "broken", tie_bits, static_cast<int>(res.log.size()),
                untouched ? "frozen" : "moved at ", untouched ? "" : where.c_str(),
                steps_ok ? "" : "; step count off", secs);
  report(2, "saliency mask algebra and selectivity", ok, buf);
}

// criterion 3: squared-gradient scores on a one-parameter logistic model
void check_fisher_oracle() {
  Rng rng(33);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    double w = -2.0 + 4.0 * rng.uniform();
    double x = -2.0 + 4.0 * rng.uniform();
    int y = rng.uniform_int(2);
    ParamSet ps;
    ps.add("w", Component::language_model, Tensor::full({1, 1}, w));
    SaliencyMap sal = fisher_from_builder(ps, 1, [&](Graph& g, int) {
      auto wn = g.param(ps, "w");
      auto xn = g.constant(Tensor::full({1, 1}, x));
      auto z = g.matmul(wn, xn);
      auto zs = g.scale(z, y == 1 ? -1.0 : 1.0);
      return g.sum_all(g.softplus(zs));
    });
    double sig = 1.0 / (1.0 + std::exp(-w * x));
    double gi = (sig - y) * x;
    worst = std::max(worst, std::abs(sal.grad(0).data[0] - gi * gi));
  }
  char buf[80];
  std::snprintf(buf, sizeof(buf), "(worst abs err %.2e over 50 draws)", worst);
  report(3, "squared-gradient saliency matches the logistic formula", worst <= 1e-10, buf);
}

// criterion 4: loss values at their analytic anchor points
void check_loss_anchors() {
  Local l = make_local();
  std::vector<int> batch{0, 3, 7};

  double pair = npo_pair_loss(-4.2, -4.2, 0.4);
  double pair_want = (2.0 / 0.4) * std::log(2.0);
  double pair_err = std::abs(pair - pair_want);

  RefLogpCache cache = build_npo_cache(l.model, l.data, batch);
  double batch_err = std::abs(batch_npo(l.model, l.data, batch, cache, 0.4).loss - pair_want);

  RefProbCache kl_cache = build_kl_cache(l.model, l.data, batch);
  double kl_err = std::abs(batch_kl(l.model, l.data, batch, kl_cache).loss);

  UnlearnConfig uc;
  uc.method = Method::ga_diff;
  uc.batch_size = 8;
  uc.lr = 0.01;
  ToyMLLM scratch = l.model;
  GradSet ones = mask_all_ones(scratch.params);
  StepLog log = masked_step(scratch, ones, l.data, batch, batch, uc, nullptr);
  double joint_err = std::abs(log.total_loss);

  bool ok = pair_err <= 1e-6 && batch_err <= 1e-6 && kl_err <= 1e-8 && joint_err <= 1e-10;
  char buf[180];
  std::snprintf(buf, sizeof(buf),
                "(preference pair %.1e, preference batch %.1e, divergence anchor %.1e, "
                "joint ascent %.1e)",
                pair_err, batch_err, kl_err, joint_err);
  report(4, "losses hit their analytic anchor values", ok, buf);
}

// criterion 5: metric implementations against independent oracles
namespace oracle {
int lcs(const std::vector<int>& a, const std::vector<int>& b, std::size_t i, std::size_t j,
        std::map<std::pair<std::size_t, std::size_t>, int>& memo) {
  if (i == 0 || j == 0) return 0;
  auto key = std::make_pair(i, j);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  int v;
  if (a[i - 1] == b[j - 1])
    v = lcs(a, b, i - 1, j - 1, memo) + 1;
  else
    v = std::max(lcs(a, b, i - 1, j, memo), lcs(a, b, i, j - 1, memo));
  memo[key] = v;
  return v;
}
}  // namespace oracle

void check_metric_oracles() {
  Rng rng(44);
  bool rouge_ok = true;
  for (int t = 0; t < 100 && rouge_ok; ++t) {
    auto draw = [&](int lo) {
      std::vector<int> v(lo + rng.uniform_int(20));
      if (v.empty()) v.resize(1);
      for (int& x : v) x = rng.uniform_int(6);
      return v;
    };
    std::vector<int> pred = draw(1);
    std::vector<int> ref = draw(1);
    std::map<std::pair<std::size_t, std::size_t>, int> memo;
    int L = oracle::lcs(pred, ref, pred.size(), ref.size(), memo);
    double want = 0.0;
    if (L > 0) {
      double r = static_cast<double>(L) / static_cast<double>(ref.size());
      double p = static_cast<double>(L) / static_cast<double>(pred.size());
      want = 2.0 * r * p / (r + p);
    }
    if (rouge_l(pred, ref) != want) rouge_ok = false;
  }

  Local l = make_local();
  EvalGroups g = eval_groups(l.data, l.forget);
  bool mc_ok = true;
  for (const std::vector<int>* set :
       {&g.forget_visual, &g.forget_textual, &g.retain_visual, &g.retain_textual,
        &g.general_visual, &g.general_textual}) {
    int hits = 0;
    for (int idx : *set) {
      const QAItem& item = l.data.items[static_cast<std::size_t>(idx)];
      int best = 0;
      double best_score = score_choice(l.model, l.data, item, 0);
      for (int k = 1; k < static_cast<int>(item.choices.size()); ++k) {
        double s = score_choice(l.model, l.data, item, k);
        if (s > best_score) {
          best_score = s;
          best = k;
        }
      }
      if (best == item.correct_index) ++hits;
    }
    double want = static_cast<double>(hits) / static_cast<double>(set->size());
    if (mc_accuracy(l.model, l.data, *set) != want) mc_ok = false;
  }
  report(5, "metrics agree with independent oracles", rouge_ok && mc_ok,
         std::string("(overlap metric ") + (rouge_ok ? "exact" : "off") + ", choice accuracy " +
             (mc_ok ? "exact" : "off") + ")");
}

// criterion 6: the masked trainer with an all-ones mask is the joint trainer
void check_reduction() {
  Local l = make_local();
  Splits sp{targeted_indices(l.data, l.forget), retain_train_indices(l.data, l.forget),
            preserved_indices(l.data, l.forget)};
  UnlearnConfig base;
  base.epochs = 1;
  base.batch_size = 64;  // single step covering each pool
  base.lr = 0.02;
  base.seed = 17;

  UnlearnConfig masked = base;
  masked.method = Method::mm_unlearner;
  masked.retain_data = "dr";  // the joint trainer descends on the retain split
  UnlearnConfig joint = base;
  joint.method = Method::ga_diff;

  ToyMLLM a = l.model;
  ToyMLLM b = l.model;
  GradSet ones = mask_all_ones(a.params);
  run_unlearning(a, l.data, sp, masked, &ones);
  run_unlearning(b, l.data, sp, joint);
  std::string why;
  bool ok = bitwise_equal(a.params, b.params, why);
  report(6, "all-ones masked update reproduces the joint update bit for bit", ok,
         ok ? "(first step identical)" : "(differs at " + why + ")");
}

// criterion 7: directional end-to-end run at the default configuration
void check_end_to_end(const RunConfig& defaults, const std::string& out_a) {
  auto t0 = Clock::now();
  RunConfig cfg = defaults;
  cfg.out = out_a;
  cfg.unlearn.method = Method::mm_unlearner;
  stage_dataset(cfg);
  stage_finetune(cfg);
  stage_saliency(cfg);
  stage_unlearn(cfg);
  stage_eval(cfg);
  RunConfig ga_cfg = cfg;
  ga_cfg.unlearn.method = Method::ga;
  stage_unlearn(ga_cfg);
  stage_eval(ga_cfg);

  Dataset d = load_run_dataset(cfg);
  EvalGroups g = eval_groups(d, forget_concepts(cfg));
  RunPaths p(cfg.out);
  ToyMLLM vanilla = load_checkpoint(p.vanilla_ckpt);
  ToyMLLM masked = load_checkpoint(p.unlearned_ckpt(Method::mm_unlearner));
  ToyMLLM ascent = load_checkpoint(p.unlearned_ckpt(Method::ga));
  EvalReport rv = evaluate_all(vanilla, d, g);
  EvalReport rm = evaluate_all(masked, d, g);
  EvalReport rg = evaluate_all(ascent, d, g);
  double van_fv = report_dim(rv, "forget_visual").accuracy;
  double van_ft = report_dim(rv, "forget_textual").accuracy;
  double van_rt = report_dim(rv, "retain_textual").accuracy;
  double mm_fv = report_dim(rm, "forget_visual").accuracy;
  double mm_ft = report_dim(rm, "forget_textual").accuracy;
  double mm_rt = report_dim(rm, "retain_textual").accuracy;
  double ga_ft = report_dim(rg, "forget_textual").accuracy;
  double secs = seconds_since(t0);

  bool ok = van_fv >= 0.9 && (van_fv - mm_fv) >= 0.30 && std::abs(van_ft - mm_ft) <= 0.10 &&
            std::abs(van_rt - mm_rt) <= 0.10 && ga_ft < mm_ft && secs < 900.0;
  char buf[240];
  std::snprintf(buf, sizeof(buf),
                "(vanilla fv %.3f; masked fv %.3f ft %.3f rt %.3f; ascent ft %.3f; %.0fs)",
                van_fv, mm_fv, mm_ft, mm_rt, ga_ft, secs);
  report(7, "selective forgetting beats plain ascent at the default run", ok, buf);
}

// criterion 8: forget-ratio sweep stays monotone for every method
void check_sweep(const RunConfig& defaults, const std::string& out_a) {
  auto t0 = Clock::now();
  RunConfig cfg = defaults;
  cfg.out = out_a;  // reuses the dataset and vanilla stage from criterion 7
  std::vector<Method> methods{Method::ga, Method::ga_diff, Method::kl_min, Method::npo,
                              Method::mm_unlearner};
  std::vector<double> ratios{0.05, 0.10, 0.15};
  std::vector<SweepCell> cells = run_sweep(cfg, methods, ratios);
  int failed = 0;
  for (const auto& c : cells)
    if (c.failed) ++failed;

  // forget-visual accuracy per (method, ratio) from the lifted table
  std::map<std::string, std::map<std::string, double>> fv;
  std::istringstream table(read_file_bytes(cfg.out + "/sweep/sweep.csv"));
  std::string line;
  std::getline(table, line);
  while (std::getline(table, line)) {
    std::istringstream row(line);
    std::string m, r, dim, val;
    std::getline(row, m, ',');
    std::getline(row, r, ',');
    std::getline(row, dim, ',');
    std::getline(row, val, ',');
    if (dim == "forget_visual") fv[m][r] = std::stod(val);
  }
  bool monotone = true;
  std::string detail;
  for (const Method m : methods) {
    const auto& by_ratio = fv[method_str(m)];
    if (by_ratio.size() != 3) {
      monotone = false;
      detail += method_str(m) + " incomplete; ";
      continue;
    }
    double a = by_ratio.at("0.05"), b = by_ratio.at("0.1"), c = by_ratio.at("0.15");
    if (b > a + 0.03 + 1e-9 || c > b + 0.03 + 1e-9) {
      monotone = false;
      char seg[100];
      std::snprintf(seg, sizeof(seg), "%s %.2f/%.2f/%.2f; ", method_str(m).c_str(), a, b, c);
      detail += seg;
    }
  }
  double secs = seconds_since(t0);
  bool ok = failed == 0 && monotone && secs < 2700.0;
  char buf[300];
  std::snprintf(buf, sizeof(buf), "(%d cells, %d failed; %s%.0fs)", static_cast<int>(cells.size()),
                failed, detail.empty() ? "all methods non-increasing; " : detail.c_str(), secs);
  report(8, "forget accuracy never rises with the forget ratio", ok, buf);
}

// criterion 9: deviation ranking partitions exactly and recovers the mask
void check_heatmap() {
  Local l = make_local();
  SaliencyMap st = fisher_diag(l.model, l.data, targeted_indices(l.data, l.forget));
  SaliencyMap sp = fisher_diag(l.model, l.data, preserved_indices(l.data, l.forget));
  ComponentScope scope;
  GradSet mask = compute_mask(l.model.params, st, sp, 1.0, scope);

  UnlearnConfig uc;
  uc.method = Method::mm_unlearner;
  uc.retain_term = false;
  uc.epochs = 3;
  uc.batch_size = 64;
  uc.lr = 0.05;
  uc.seed = 9;
  Splits sp2{targeted_indices(l.data, l.forget), retain_train_indices(l.data, l.forget),
             preserved_indices(l.data, l.forget)};
  ToyMLLM before = l.model;
  ToyMLLM after = l.model;
  run_unlearning(after, l.data, sp2, uc, &mask);

  long long total = static_cast<long long>(before.params.total_coords());
  bool sums_ok = true;
  for (long long n : {10LL, 1000LL, total}) {
    std::vector<DeviationGroup> groups = deviation_heatmap(before.params, after.params, n);
    long long sum = 0;
    for (const auto& gr : groups) sum += gr.count;
    if (sum != n) sums_ok = false;
  }

  long long bits = mask_set_bits(mask);
  std::vector<TopCoord> top = top_deviated(before.params, after.params, bits);
  std::set<std::pair<std::string, std::size_t>> top_set;
  for (const auto& t : top) top_set.insert({t.name, t.coord});
  std::set<std::pair<std::string, std::size_t>> mask_set;
  for (std::size_t i = 0; i < mask.size(); ++i)
    for (std::size_t k = 0; k < mask.grad(i).data.size(); ++k)
      if (mask.grad(i).data[k] == 1.0) mask_set.insert({mask.name(i), k});
  bool sets_equal = top_set == mask_set;

  char buf[140];
  std::snprintf(buf, sizeof(buf), "(group counts %s; %lld mask bits, top set %s)",
                sums_ok ? "partition exactly" : "off", bits,
                sets_equal ? "matches" : "differs");
  report(9, "deviation ranking is exact and recovers the masked coordinates",
         sums_ok && sets_equal, buf);
}

// criterion 10: repeated runs are byte-identical
void check_determinism(const RunConfig& defaults, const std::string& out_a,
                       const std::string& out_b) {
  auto t0 = Clock::now();
  RunConfig cfg = defaults;
  cfg.out = out_b;
  cfg.unlearn.method = Method::mm_unlearner;
  stage_dataset(cfg);
  stage_finetune(cfg);
  stage_saliency(cfg);
  stage_unlearn(cfg);
  stage_eval(cfg);

  RunPaths pa(out_a);
  RunPaths pb(out_b);
  std::vector<std::pair<std::string, std::string>> pairs{
      {pa.items, pb.items},
      {pa.images, pb.images},
      {pa.vanilla_ckpt, pb.vanilla_ckpt},
      {pa.mask, pb.mask},
      {pa.unlearned_ckpt(Method::mm_unlearner), pb.unlearned_ckpt(Method::mm_unlearner)},
      {pa.vanilla_report_csv, pb.vanilla_report_csv},
      {pa.report_csv(Method::mm_unlearner), pb.report_csv(Method::mm_unlearner)},
      {pa.deltas_csv(Method::mm_unlearner), pb.deltas_csv(Method::mm_unlearner)},
      {pa.heatmap_csv(Method::mm_unlearner), pb.heatmap_csv(Method::mm_unlearner)},
  };
  bool ok = true;
  std::string which;
  for (const auto& [fa, fb] : pairs)
    if (read_file_bytes(fa) != read_file_bytes(fb)) {
      ok = false;
      which = fs::path(fa).filename().string();
      break;
    }
  double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof(buf), "(%zu artifacts compared%s%s; %.0fs)", pairs.size(),
                ok ? ", all identical" : "; first difference in ", which.c_str(), secs);
  report(10, "a repeated run reproduces every artifact byte for byte", ok, buf);
}

}  // namespace

int main() {
  RunConfig defaults;
  std::string out_a = "acceptance_run_a";
  std::string out_b = "acceptance_run_b";
  fs::remove_all(out_a);
  fs::remove_all(out_b);

  check_gradients();
  check_mask_algebra();
  check_fisher_oracle();
  check_loss_anchors();
  check_metric_oracles();
  check_reduction();
  check_heatmap();
  check_end_to_end(defaults, out_a);
  check_sweep(defaults, out_a);
  check_determinism(defaults, out_a, out_b);

  if (g_failures > 0) {
    std::printf("%d criterion(s) failed\n", g_failures);
    return 1;
  }
  std::printf("all criteria passed\n");
  return 0;
}
