#include "ul/unlearn.hpp"

#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>

#include "ul/container.hpp"
#include "ul/exec.hpp"

namespace ul {
namespace {

const ImageGrid* item_image(const Dataset& d, const QAItem& item) {
  return item.image_index >= 0 ? &d.images[item.image_index] : nullptr;
}

void check_batch(const Dataset& d, const std::vector<int>& batch) {
  UL_CHECK(!batch.empty(), "contract", "batch must be nonempty");
  for (int idx : batch)
    UL_CHECK(idx >= 0 && idx < static_cast<int>(d.items.size()), "contract",
             "item index out of range");
}

// Deterministic endless sampler: shuffles the pool, deals it out, reshuffles.
class PoolCycle {
 public:
  PoolCycle(std::vector<int> pool, std::uint64_t seed) : pool_(std::move(pool)), rng_(seed) {
    UL_CHECK(!pool_.empty(), "contract", "cannot cycle an empty item pool");
    rng_.shuffle(pool_);
  }
  std::vector<int> next(int k) {
    std::vector<int> out;
    while (k-- > 0) {
      if (pos_ == pool_.size()) {
        rng_.shuffle(pool_);
        pos_ = 0;
      }
      out.push_back(pool_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<int> pool_;
  Rng rng_;
  std::size_t pos_ = 0;
};

template <typename PerItem>
BatchEval batch_mean(ToyMLLM& m, int n, const PerItem& per_item) {
  BatchEval acc;
  acc.grad = GradSet(m.params);
  exec::ordered_sample_reduce<BatchEval>(
      n,
      [&](int i) {
        BatchEval b;
        Graph g;
        Graph::NodeId loss = per_item(g, i);
        b.loss = g.value(loss).item();
        b.grad = g.backward(loss, m.params);
        return b;
      },
      [&](int, BatchEval&& b) {
        acc.loss += b.loss;
        acc.grad.add_scaled(b.grad, 1.0);
      });
  acc.loss /= n;
  acc.grad.scale(1.0 / n);
  return acc;
}

double stable_softplus(double z) {
  return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace

Method parse_method(const std::string& s) {
  if (s == "ga") return Method::ga;
  if (s == "ga_diff") return Method::ga_diff;
  if (s == "kl_min") return Method::kl_min;
  if (s == "npo") return Method::npo;
  if (s == "mm_unlearner") return Method::mm_unlearner;
  fail("config", "unknown method: " + s);
}

std::string method_str(Method m) {
  switch (m) {
    case Method::ga: return "ga";
    case Method::ga_diff: return "ga_diff";
    case Method::kl_min: return "kl_min";
    case Method::npo: return "npo";
    case Method::mm_unlearner: return "mm_unlearner";
  }
  fail("contract", "bad method enum");
}

void UnlearnConfig::validate() const {
  UL_CHECK(std::isfinite(lr) && lr > 0.0, "config", "lr must be positive");
  UL_CHECK(epochs >= 0, "config", "epochs must be nonnegative");
  UL_CHECK(batch_size >= 1, "config", "batch_size must be positive");
  UL_CHECK(std::isfinite(npo_beta) && npo_beta > 0.0, "config", "npo_beta must be positive");
  UL_CHECK(std::isfinite(mask_beta) && mask_beta > 0.0, "config", "mask_beta must be positive");
  UL_CHECK(optimizer == "sgd" || optimizer == "adam", "config",
           "optimizer must be sgd or adam");
  UL_CHECK(retain_data == "p" || retain_data == "dr", "config",
           "retain_data must be p or dr");
  UL_CHECK(kl_data == "dr" || kl_data == "df", "config", "kl_data must be dr or df");
}

BatchEval batch_nll(ToyMLLM& m, const Dataset& d, const std::vector<int>& batch) {
  check_batch(d, batch);
  return batch_mean(m, static_cast<int>(batch.size()), [&](Graph& g, int i) {
    const QAItem& item = d.items[batch[i]];
    return build_nll(g, m, item_image(d, item), item.seq);
  });
}

KlSpan kl_span(const ModelConfig& cfg, const QAItem& item) {
  int len = static_cast<int>(item.seq.ids.size());
  UL_CHECK(len >= 2, "contract", "sequence too short for a KL span");
  KlSpan s;
  s.first_row = item.image_index >= 0 ? cfg.n_patches() : 0;
  s.n_rows = len - 1;
  return s;
}

RefProbCache build_kl_cache(ToyMLLM& ref, const Dataset& d, const std::vector<int>& pool) {
  check_batch(d, pool);
  RefProbCache cache;
  for (int idx : pool) {
    const QAItem& item = d.items[idx];
    Tensor logits = lm_logits(ref, item_image(d, item), item.seq.ids);
    KlSpan s = kl_span(ref.cfg, item);
    Tensor probs = Tensor::zeros({s.n_rows, logits.cols()});
    for (int r = 0; r < s.n_rows; ++r) {
      double mx = logits.at(s.first_row + r, 0);
      for (int c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits.at(s.first_row + r, c));
      double tot = 0.0;
      for (int c = 0; c < logits.cols(); ++c) {
        probs.at(r, c) = std::exp(logits.at(s.first_row + r, c) - mx);
        tot += probs.at(r, c);
      }
      for (int c = 0; c < logits.cols(); ++c) probs.at(r, c) /= tot;
    }
    cache[item.id] = std::move(probs);
  }
  return cache;
}

BatchEval batch_kl(ToyMLLM& m, const Dataset& d, const std::vector<int>& batch,
                   const RefProbCache& cache) {
  check_batch(d, batch);
  return batch_mean(m, static_cast<int>(batch.size()), [&](Graph& g, int i) {
    const QAItem& item = d.items[batch[i]];
    auto it = cache.find(item.id);
    UL_CHECK(it != cache.end(), "contract", "item missing from the reference cache");
    Graph::NodeId logits = build_logits(g, m, item_image(d, item), item.seq.ids);
    return g.kl_mean(logits, it->second, kl_span(m.cfg, item).first_row);
  });
}

RefLogpCache build_npo_cache(ToyMLLM& ref, const Dataset& d, const std::vector<int>& pool) {
  check_batch(d, pool);
  RefLogpCache cache;
  for (int idx : pool) {
    const QAItem& item = d.items[idx];
    cache[item.id] = sequence_logprob(ref, item_image(d, item), item.seq);
  }
  return cache;
}

double npo_pair_loss(double logp_cur, double logp_ref, double beta) {
  UL_CHECK(beta > 0.0, "contract", "beta must be positive");
  return 2.0 / beta * stable_softplus(beta * (logp_cur - logp_ref));
}

BatchEval batch_npo(ToyMLLM& m, const Dataset& d, const std::vector<int>& batch,
                    const RefLogpCache& cache, double beta) {
  check_batch(d, batch);
  UL_CHECK(beta > 0.0, "contract", "beta must be positive");
  return batch_mean(m, static_cast<int>(batch.size()), [&](Graph& g, int i) {
    const QAItem& item = d.items[batch[i]];
    auto it = cache.find(item.id);
    UL_CHECK(it != cache.end(), "contract", "item missing from the reference cache");
    Graph::NodeId lp = build_logprob_sum(g, m, item_image(d, item), item.seq);
    Graph::NodeId diff = g.add(lp, g.constant(Tensor::scalar(-it->second)));
    return g.scale(g.softplus(g.scale(diff, beta)), 2.0 / beta);
  });
}

StepLog masked_step(ToyMLLM& m, const GradSet& mask, const Dataset& d,
                    const std::vector<int>& forget_batch, const std::vector<int>& retain_batch,
                    const UnlearnConfig& cfg, AdamState* adam) {
  UL_CHECK(mask.aligned_with(m.params), "contract", "mask does not match the model");
  BatchEval fb = batch_nll(m, d, forget_batch);
  BatchEval rb;
  if (cfg.retain_term) rb = batch_nll(m, d, retain_batch);

  GradSet total(m.params);
  double masked_sq = 0.0, total_sq = 0.0;
  for (std::size_t i = 0; i < total.size(); ++i) {
    const Tensor& mk = mask.grad(i);
    const Tensor& gf = fb.grad.grad(i);
    Tensor& out = total.grad(i);
    for (std::size_t k = 0; k < out.data.size(); ++k) {
      // select, never multiply: untouched coordinates stay an exact +0.0
      double sel = mk.data[k] != 0.0 ? gf.data[k] : 0.0;
      masked_sq += sel * sel;
      double t = cfg.retain_term ? rb.grad.grad(i).data[k] - sel : -sel;
      out.data[k] = t;
      total_sq += t * t;
    }
  }

  if (cfg.optimizer == "adam") {
    UL_CHECK(adam != nullptr, "contract", "adam state required");
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    adam_step(m.params, total, *adam, acfg);
  } else {
    sgd_step(m.params, total, cfg.lr);
  }

  StepLog log;
  log.forget_loss = fb.loss;
  log.retain_loss = cfg.retain_term ? rb.loss : 0.0;
  log.total_loss = -fb.loss + log.retain_loss;
  log.grad_norm_masked = std::sqrt(masked_sq);
  log.grad_norm_total = std::sqrt(total_sq);
  return log;
}

ToyMLLM make_npo_reference(const ToyMLLM& vanilla, const Dataset& d,
                           const std::vector<int>& retain, const UnlearnConfig& cfg) {
  UL_CHECK(!retain.empty(), "contract", "npo reference needs retain items");
  // Light retain fine-tune of the current model. The unlearning lr is an
  // ascent-scale step size; reusing it here would wreck the reference, so the
  // reference pass runs at a plain training lr for a single epoch.
  ToyMLLM ref = vanilla;
  AdamState st = AdamState::init(ref.params);
  AdamConfig acfg;
  acfg.lr = 1e-3;
  Rng order(cfg.seed + 53);
  std::vector<int> pool = retain;
  for (int e = 0; e < 1; ++e) {
    order.shuffle(pool);
    for (std::size_t b = 0; b < pool.size(); b += cfg.batch_size) {
      std::vector<int> batch(pool.begin() + b,
                             pool.begin() + std::min(pool.size(), b + cfg.batch_size));
      BatchEval be = batch_nll(ref, d, batch);
      adam_step(ref.params, be.grad, st, acfg);
    }
  }
  return ref;
}

UnlearnResult run_unlearning(ToyMLLM& model, const Dataset& d, const Splits& splits,
                             const UnlearnConfig& cfg, const GradSet* mask) {
  cfg.validate();
  UnlearnResult res;
  if (splits.forget.empty()) {
    std::fprintf(stderr, "warning: forget pool is empty; model left unchanged\n");
    return res;
  }

  bool use_adam = cfg.optimizer == "adam";
  AdamState adam;
  if (use_adam) adam = AdamState::init(model.params);

  // per-method setup against the entry-state model
  UnlearnConfig step_cfg = cfg;
  GradSet local_mask;
  const GradSet* step_mask = nullptr;
  std::vector<int> retain_pool;
  RefProbCache kl_cache;
  RefLogpCache npo_cache;

  switch (cfg.method) {
    case Method::ga:
      local_mask = mask_all_ones(model.params);
      step_mask = &local_mask;
      step_cfg.retain_term = false;
      break;
    case Method::ga_diff:
      local_mask = mask_all_ones(model.params);
      step_mask = &local_mask;
      retain_pool = splits.retain;
      break;
    case Method::mm_unlearner: {
      if (mask != nullptr) {
        step_mask = mask;
      } else {
        SaliencyMap st = fisher_diag(model, d, splits.forget);
        SaliencyMap sp = fisher_diag(model, d, splits.preserved);
        local_mask = compute_mask(model.params, st, sp, cfg.mask_beta, cfg.mask_scope);
        step_mask = &local_mask;
      }
      retain_pool = cfg.retain_data == "p" ? splits.preserved : splits.retain;
      break;
    }
    case Method::kl_min: {
      const std::vector<int>& pool = cfg.kl_data == "dr" ? splits.retain : splits.forget;
      kl_cache = build_kl_cache(model, d, pool);
      retain_pool = pool;
      break;
    }
    case Method::npo: {
      ToyMLLM ref = make_npo_reference(model, d, splits.retain, cfg);
      npo_cache = build_npo_cache(ref, d, splits.forget);
      break;
    }
  }

  bool needs_retain = (cfg.method == Method::ga_diff || cfg.method == Method::mm_unlearner) &&
                      step_cfg.retain_term;
  bool needs_kl = cfg.method == Method::kl_min;
  std::unique_ptr<PoolCycle> retain_cycle;
  if (needs_retain || needs_kl) {
    UL_CHECK(!retain_pool.empty(), "contract", "retain pool is empty");
    retain_cycle = std::make_unique<PoolCycle>(retain_pool, cfg.seed + 43);
  }

  Rng forget_order_rng(cfg.seed + 41);
  std::vector<int> forget_order = splits.forget;
  int step = 0;
  for (int e = 0; e < cfg.epochs; ++e) {
    forget_order_rng.shuffle(forget_order);
    for (std::size_t b = 0; b < forget_order.size(); b += cfg.batch_size) {
      std::vector<int> fbatch(
          forget_order.begin() + b,
          forget_order.begin() + std::min(forget_order.size(), b + cfg.batch_size));
      StepLog row;
      switch (cfg.method) {
        case Method::ga:
        case Method::ga_diff:
        case Method::mm_unlearner: {
          std::vector<int> rbatch;
          if (needs_retain) rbatch = retain_cycle->next(static_cast<int>(fbatch.size()));
          row = masked_step(model, *step_mask, d, fbatch, rbatch, step_cfg,
                            use_adam ? &adam : nullptr);
          break;
        }
        case Method::kl_min: {
          std::vector<int> kbatch = retain_cycle->next(static_cast<int>(fbatch.size()));
          BatchEval fb = batch_nll(model, d, fbatch);
          BatchEval kb = batch_kl(model, d, kbatch, kl_cache);
          GradSet total(model.params);
          total.add_scaled(fb.grad, -1.0);
          total.add_scaled(kb.grad, 1.0);
          if (use_adam) {
            AdamConfig acfg;
            acfg.lr = cfg.lr;
            adam_step(model.params, total, adam, acfg);
          } else {
            sgd_step(model.params, total, cfg.lr);
          }
          row.forget_loss = fb.loss;
          row.retain_loss = kb.loss;
          row.total_loss = -fb.loss + kb.loss;
          row.grad_norm_masked = fb.grad.l2_norm();
          row.grad_norm_total = total.l2_norm();
          break;
        }
        case Method::npo: {
          BatchEval nb = batch_npo(model, d, fbatch, npo_cache, cfg.npo_beta);
          if (use_adam) {
            AdamConfig acfg;
            acfg.lr = cfg.lr;
            adam_step(model.params, nb.grad, adam, acfg);
          } else {
            sgd_step(model.params, nb.grad, cfg.lr);
          }
          row.forget_loss = nb.loss;
          row.retain_loss = 0.0;
          row.total_loss = nb.loss;
          row.grad_norm_masked = nb.grad.l2_norm();
          row.grad_norm_total = nb.grad.l2_norm();
          break;
        }
      }
      row.step = step++;
      row.epoch = e;
      res.log.push_back(row);
    }
  }
  return res;
}

void save_train_log_csv(const std::string& path, Method method, const std::vector<StepLog>& log) {
  std::ostringstream out;
  out << "step,epoch,method,forget_loss,retain_loss,total_loss,grad_norm_masked,grad_norm_total\n";
  char buf[512];
  for (const auto& r : log) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%s,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step, r.epoch,
                  method_str(method).c_str(), r.forget_loss, r.retain_loss, r.total_loss,
                  r.grad_norm_masked, r.grad_norm_total);
    out << buf;
  }
  write_file_bytes(path, out.str());
}

}  // namespace ul
