#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ul/datagen.hpp"
#include "ul/graph.hpp"
#include "ul/model.hpp"

namespace ul {

// Diagonal importance scores: squared per-sample gradients of the answer
// loss, averaged over a set of items. Stored aligned with the model params.
using SaliencyMap = GradSet;

// Generic form: loss_builder(g, i) returns the scalar loss node for sample i.
SaliencyMap fisher_from_builder(ParamSet& params, int n_samples,
                                const std::function<Graph::NodeId(Graph&, int)>& loss_builder);

SaliencyMap fisher_diag(ToyMLLM& model, const Dataset& data, const std::vector<int>& item_idx);

// Which model components a mask may touch.
struct ComponentScope {
  bool vision_encoder = true;
  bool connector = true;
  bool language_model = true;
  bool contains(Component c) const;
  std::string str() const;
};
ComponentScope parse_scope(const std::string& s);  // "all" or comma-separated names

// Binary mask stored as 0.0/1.0 tensors aligned with the model params.
// bit = 1 iff targeted saliency dominates preserved saliency at threshold
// beta and the parameter's component lies in scope.
GradSet compute_mask(const ParamSet& ps, const SaliencyMap& s_targeted,
                     const SaliencyMap& s_preserved, double beta, const ComponentScope& scope);
GradSet mask_all_ones(const ParamSet& ps);

long long mask_set_bits(const GradSet& mask);
long long mask_total_bits(const GradSet& mask);

struct MaskStatRow {
  int layer = 0;
  std::string kind;
  long long set_bits = 0;
  long long total_bits = 0;
};
std::vector<MaskStatRow> mask_stats(const ParamSet& ps, const GradSet& mask);
void save_mask_stats_csv(const std::string& path, const std::vector<MaskStatRow>& rows);

// Saliency maps and masks share one tensor-container file format.
void save_grad_container(const std::string& path, const ParamSet& ps, const GradSet& g);
GradSet load_grad_container(const std::string& path, const ParamSet& ps, bool require_binary);

}  // namespace ul
