#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ul/config.hpp"
#include "ul/eval.hpp"
#include "ul/unlearn.hpp"

namespace ul {

// Stage runner with content-addressed re-entrancy: each stage stamps a hash
// of its config slice and input artifact bytes; rerunning with unchanged
// inputs is a no-op.

struct RunPaths {
  explicit RunPaths(std::string run_dir);
  std::string dir;
  std::string items;
  std::string images;
  std::string vanilla_ckpt;
  std::string vanilla_train;
  std::string saliency_t;
  std::string saliency_p;
  std::string mask;
  std::string mask_stats;
  std::string vanilla_report_csv;
  std::string vanilla_report_txt;
  std::string unlearned_ckpt(Method m) const;
  std::string train_log(Method m) const;
  std::string report_csv(Method m) const;
  std::string report_txt(Method m) const;
  std::string deltas_csv(Method m) const;
  std::string heatmap_csv(Method m) const;
  std::string stamp(const std::string& stage) const;
};

std::uint64_t fnv1a(const std::string& bytes);

// Minimum per-run train accuracy the vanilla model must reach.
inline constexpr double kGateAccuracy = 0.9;
// Coordinates ranked in the deviation heatmap artifact (clamped to the total).
inline constexpr long long kHeatmapTopN = 1000;

// Forget split for this run: concept ids, nested across ratios at a fixed seed.
std::vector<int> forget_concepts(const RunConfig& cfg);

// Dataset reconstructed from the run's artifacts.
Dataset load_run_dataset(const RunConfig& cfg);

// Each stage returns true when it did work, false when already up to date.
bool stage_dataset(const RunConfig& cfg);
bool stage_finetune(const RunConfig& cfg);
bool stage_saliency(const RunConfig& cfg);
bool stage_unlearn(const RunConfig& cfg);
bool stage_eval(const RunConfig& cfg);

struct SweepCell {
  Method method = Method::ga;
  double ratio = 0.0;
  bool failed = false;
  std::string error_class;
  std::string message;
};

// Runs the full pipeline per (method, ratio) cell under {out}/sweep, writing
// a long-format CSV plus a failure list; cell failures do not stop the sweep.
std::vector<SweepCell> run_sweep(const RunConfig& cfg, const std::vector<Method>& methods,
                                 const std::vector<double>& ratios);

}  // namespace ul
