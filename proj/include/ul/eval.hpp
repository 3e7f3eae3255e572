#pragma once

#include <string>
#include <vector>

#include "ul/datagen.hpp"
#include "ul/model.hpp"

namespace ul {

// Multiple-choice scoring, ROUGE-L, the six-dimension report, and the
// parameter-deviation breakdown.

// Length-normalized log-probability of one answer choice given the question
// (and image for visual items).
double score_choice(ToyMLLM& m, const Dataset& d, const QAItem& item, int choice_index);

// Argmax over choice scores; exact ties resolve to the lowest index.
int predict_choice(ToyMLLM& m, const Dataset& d, const QAItem& item);

// Fraction of items whose predicted choice is the correct one.
double mc_accuracy(ToyMLLM& m, const Dataset& d, const std::vector<int>& items);

// LCS-based F1 over token id sequences. Empty prediction scores 0; an empty
// reference is rejected.
double rouge_l(const std::vector<int>& prediction, const std::vector<int>& reference);

struct DimensionScore {
  std::string name;
  bool present = false;
  int count = 0;
  double accuracy = 0.0;
  bool has_rouge = false;
  double rouge = 0.0;
};

struct EvalReport {
  std::vector<DimensionScore> dims;  // fixed six-dimension order
};

extern const char* const kDimensionOrder[6];

EvalReport evaluate_all(ToyMLLM& m, const Dataset& d, const EvalGroups& groups);
const DimensionScore& report_dim(const EvalReport& r, const std::string& name);

void save_report_csv(const std::string& path, const EvalReport& r);
void save_report_text(const std::string& path, const EvalReport& r);
void save_deltas_csv(const std::string& path, const EvalReport& vanilla, const EvalReport& after);

// Coordinates with the largest |after - before|, ranked by deviation with
// ties broken by parameter name then coordinate index.
struct TopCoord {
  std::string name;
  std::size_t coord = 0;
  double deviation = 0.0;
};
std::vector<TopCoord> top_deviated(const ParamSet& before, const ParamSet& after, long long n);

struct DeviationGroup {
  int layer = 0;
  std::string kind;
  long long count = 0;
};
std::vector<DeviationGroup> deviation_heatmap(const ParamSet& before, const ParamSet& after,
                                              long long n);
void save_heatmap_csv(const std::string& path, const std::vector<DeviationGroup>& rows);

}  // namespace ul
