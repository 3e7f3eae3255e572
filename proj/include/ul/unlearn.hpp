#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "ul/datagen.hpp"
#include "ul/model.hpp"
#include "ul/optim.hpp"
#include "ul/saliency.hpp"

namespace ul {

// Five unlearning trainers over a fine-tuned model: plain ascent (ga),
// ascent plus retain descent (ga_diff), ascent plus a KL anchor to the
// pre-unlearning snapshot (kl_min), a preference-style penalty against a
// retain-trained reference (npo), and saliency-masked ascent plus retain
// descent (mm_unlearner).

enum class Method { ga, ga_diff, kl_min, npo, mm_unlearner };
Method parse_method(const std::string& s);
std::string method_str(Method m);

struct UnlearnConfig {
  Method method = Method::mm_unlearner;
  int epochs = 4;
  int batch_size = 6;
  double lr = 0.105;
  std::string optimizer = "sgd";  // sgd | adam
  double npo_beta = 0.4;
  double mask_beta = 1.0;
  ComponentScope mask_scope;
  bool retain_term = true;        // two-term methods drop their retain part when off
  std::string retain_data = "p";  // p | dr: masked method's retain pool
  std::string kl_data = "dr";     // dr | df: pool anchored by the KL term
  std::uint64_t seed = 0;
  void validate() const;
};

// Item index pools: forget = targeted visual items, retain = retain-concept
// items both modalities, preserved = forget-textual plus all retain items.
struct Splits {
  std::vector<int> forget;
  std::vector<int> retain;
  std::vector<int> preserved;
};

struct StepLog {
  int step = 0;
  int epoch = 0;
  double forget_loss = 0.0;
  double retain_loss = 0.0;
  double total_loss = 0.0;
  double grad_norm_masked = 0.0;
  double grad_norm_total = 0.0;
};

struct BatchEval {
  double loss = 0.0;
  GradSet grad;
};

// Mean answer NLL and its gradient over a batch of items.
BatchEval batch_nll(ToyMLLM& m, const Dataset& d, const std::vector<int>& batch);

// Rows of the next-token distribution that the KL anchor covers: every row
// predicting a text token after the first one.
struct KlSpan {
  int first_row = 0;
  int n_rows = 0;
};
KlSpan kl_span(const ModelConfig& cfg, const QAItem& item);

using RefProbCache = std::map<int, Tensor>;   // item id -> reference rows
using RefLogpCache = std::map<int, double>;   // item id -> reference logprob

RefProbCache build_kl_cache(ToyMLLM& ref, const Dataset& d, const std::vector<int>& pool);
BatchEval batch_kl(ToyMLLM& m, const Dataset& d, const std::vector<int>& batch,
                   const RefProbCache& cache);

RefLogpCache build_npo_cache(ToyMLLM& ref, const Dataset& d, const std::vector<int>& pool);
BatchEval batch_npo(ToyMLLM& m, const Dataset& d, const std::vector<int>& batch,
                    const RefLogpCache& cache, double beta);
double npo_pair_loss(double logp_cur, double logp_ref, double beta);

// One optimizer step of masked ascent plus optional retain descent. The
// update direction is -(mask-selected forget gradient) + retain gradient;
// ga is this step with an all-ones mask and no retain term, ga_diff with an
// all-ones mask and the retain term on.
StepLog masked_step(ToyMLLM& m, const GradSet& mask, const Dataset& d,
                    const std::vector<int>& forget_batch, const std::vector<int>& retain_batch,
                    const UnlearnConfig& cfg, AdamState* adam);

// Copy of the model fine-tuned further on the retain pool; serves as the
// npo reference policy.
ToyMLLM make_npo_reference(const ToyMLLM& vanilla, const Dataset& d,
                           const std::vector<int>& retain, const UnlearnConfig& cfg);

struct UnlearnResult {
  std::vector<StepLog> log;
};

// Runs the configured method in place. A precomputed mask may be supplied
// for the masked method; otherwise it is derived from the entry-state model.
UnlearnResult run_unlearning(ToyMLLM& model, const Dataset& d, const Splits& splits,
                             const UnlearnConfig& cfg, const GradSet* mask = nullptr);

void save_train_log_csv(const std::string& path, Method method, const std::vector<StepLog>& log);

}  // namespace ul
