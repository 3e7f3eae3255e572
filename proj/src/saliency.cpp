#include "ul/saliency.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <map>
#include <sstream>

#include "ul/container.hpp"
#include "ul/exec.hpp"

namespace ul {

SaliencyMap fisher_from_builder(ParamSet& params, int n_samples,
                                const std::function<Graph::NodeId(Graph&, int)>& loss_builder) {
  UL_CHECK(n_samples >= 0, "contract", "sample count must be nonnegative");
  GradSet acc(params);
  exec::ordered_sample_reduce<GradSet>(
      n_samples,
      [&](int i) {
        Graph g;
        Graph::NodeId loss = loss_builder(g, i);
        return g.backward(loss, params);
      },
      [&](int, GradSet&& gi) { acc.add_squared(gi); });
  if (n_samples > 0) acc.scale(1.0 / n_samples);
  return acc;
}

SaliencyMap fisher_diag(ToyMLLM& model, const Dataset& data, const std::vector<int>& item_idx) {
  for (int idx : item_idx)
    UL_CHECK(idx >= 0 && idx < static_cast<int>(data.items.size()), "contract",
             "item index out of range");
  return fisher_from_builder(
      model.params, static_cast<int>(item_idx.size()), [&](Graph& g, int i) {
        const QAItem& item = data.items[item_idx[i]];
        const ImageGrid* img =
            item.image_index >= 0 ? &data.images[item.image_index] : nullptr;
        return build_nll(g, model, img, item.seq);
      });
}

bool ComponentScope::contains(Component c) const {
  switch (c) {
    case Component::vision_encoder: return vision_encoder;
    case Component::connector: return connector;
    case Component::language_model: return language_model;
  }
  return false;
}

std::string ComponentScope::str() const {
  if (vision_encoder && connector && language_model) return "all";
  std::string out;
  auto app = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ",";
    out += name;
  };
  app(vision_encoder, "vision_encoder");
  app(connector, "connector");
  app(language_model, "language_model");
  return out.empty() ? "none" : out;
}

ComponentScope parse_scope(const std::string& s) {
  ComponentScope out;
  if (s == "all" || s.empty()) return out;
  out = ComponentScope{false, false, false};
  if (s == "none") return out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, ',')) {
    if (part == "vision_encoder")
      out.vision_encoder = true;
    else if (part == "connector")
      out.connector = true;
    else if (part == "language_model")
      out.language_model = true;
    else
      fail("config", "unknown scope component: " + part);
  }
  return out;
}

GradSet compute_mask(const ParamSet& ps, const SaliencyMap& s_targeted,
                     const SaliencyMap& s_preserved, double beta, const ComponentScope& scope) {
  UL_CHECK(std::isfinite(beta) && beta >= 0.0, "config", "beta must be finite and nonnegative");
  UL_CHECK(s_targeted.aligned_with(ps) && s_preserved.aligned_with(ps), "contract",
           "saliency maps must align with the parameters");
  constexpr double kEps = 1e-12;
  GradSet mask(ps);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    bool in_scope = scope.contains(ps.entry(i).comp);
    const Tensor& st = s_targeted.grad(i);
    const Tensor& sp = s_preserved.grad(i);
    Tensor& m = mask.grad(i);
    for (std::size_t k = 0; k < m.data.size(); ++k) {
      if (!in_scope) continue;  // stays 0: never touched by the forget update
      double denom = sp.data[k] > 0.0 ? sp.data[k] : kEps;
      m.data[k] = (st.data[k] / denom >= beta) ? 1.0 : 0.0;
    }
  }
  return mask;
}

GradSet mask_all_ones(const ParamSet& ps) {
  GradSet mask(ps);
  for (std::size_t i = 0; i < mask.size(); ++i)
    for (double& v : mask.grad(i).data) v = 1.0;
  return mask;
}

long long mask_set_bits(const GradSet& mask) {
  long long n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    for (double v : mask.grad(i).data) {
      UL_CHECK(v == 0.0 || v == 1.0, "contract", "mask values must be 0 or 1");
      if (v == 1.0) ++n;
    }
  return n;
}

long long mask_total_bits(const GradSet& mask) {
  long long n = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    n += static_cast<long long>(mask.grad(i).data.size());
  return n;
}

std::vector<MaskStatRow> mask_stats(const ParamSet& ps, const GradSet& mask) {
  UL_CHECK(mask.aligned_with(ps), "contract", "mask must align with the parameters");
  // key sorts blocks by layer with the output stage (layer -1) last
  std::map<std::pair<int, std::string>, MaskStatRow> rows;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ParamCell cell = classify_param_name(ps.entry(i).name);
    int sort_layer = cell.layer < 0 ? INT_MAX : cell.layer;
    auto& row = rows[{sort_layer, cell.kind}];
    row.layer = cell.layer;
    row.kind = cell.kind;
    for (double v : mask.grad(i).data) {
      ++row.total_bits;
      if (v == 1.0) ++row.set_bits;
    }
  }
  std::vector<MaskStatRow> out;
  for (auto& [key, row] : rows) out.push_back(std::move(row));
  return out;
}

void save_mask_stats_csv(const std::string& path, const std::vector<MaskStatRow>& rows) {
  std::ostringstream out;
  out << "layer_index,sublayer_kind,set_bits,total_bits\n";
  for (const auto& r : rows)
    out << r.layer << "," << r.kind << "," << r.set_bits << "," << r.total_bits << "\n";
  write_file_bytes(path, out.str());
}

void save_grad_container(const std::string& path, const ParamSet& ps, const GradSet& g) {
  UL_CHECK(g.aligned_with(ps), "contract", "gradients must align with the parameters");
  std::vector<ContainerEntry> entries;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    ContainerEntry e;
    e.name = ps.entry(i).name;
    e.tag = static_cast<std::uint8_t>(ps.entry(i).comp);
    e.t = g.grad(i);
    entries.push_back(std::move(e));
  }
  save_container(path, entries);
}

GradSet load_grad_container(const std::string& path, const ParamSet& ps, bool require_binary) {
  auto entries = load_container(path);
  UL_CHECK(entries.size() == ps.size(), "io", "entry count does not match the parameters");
  GradSet g(ps);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    UL_CHECK(entries[i].name == ps.entry(i).name, "io",
             "entry order does not match the parameters: " + entries[i].name);
    UL_CHECK(entries[i].t.shape == ps.entry(i).value.shape, "io",
             "entry shape mismatch: " + entries[i].name);
    if (require_binary)
      for (double v : entries[i].t.data)
        UL_CHECK(v == 0.0 || v == 1.0, "io", "mask file holds non-binary values");
    g.grad(i) = std::move(entries[i].t);
  }
  return g;
}

}  // namespace ul
