#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "ul/tensor.hpp"

namespace ul {

enum class Component { vision_encoder, connector, language_model };

const char* component_name(Component c);
Component component_from_name(const std::string& s);

// Ordered collection of named parameter tensors. Iteration order is
// insertion order and is the canonical order for serialization, gradient
// layout, and every deterministic reduction.
class ParamSet {
 public:
  struct Entry {
    std::string name;
    Component comp;
    Tensor value;
  };

  void add(std::string name, Component comp, Tensor value);
  bool has(const std::string& name) const { return index_.count(name) > 0; }
  std::size_t size() const { return entries_.size(); }

  const Entry& entry(std::size_t i) const { return entries_[i]; }
  Entry& entry(std::size_t i) { return entries_[i]; }
  std::size_t index_of(const std::string& name) const;

  Tensor& at(const std::string& name) { return entries_[index_of(name)].value; }
  const Tensor& at(const std::string& name) const { return entries_[index_of(name)].value; }

  std::size_t total_coords() const;

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Gradient (or any per-coordinate quantity) laid out parallel to a ParamSet:
// same names, same order, same shapes.
class GradSet {
 public:
  GradSet() = default;
  explicit GradSet(const ParamSet& ps);  // zeros, shapes from ps

  std::size_t size() const { return names_.size(); }
  const std::string& name(std::size_t i) const { return names_[i]; }
  Tensor& grad(std::size_t i) { return grads_[i]; }
  const Tensor& grad(std::size_t i) const { return grads_[i]; }
  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  bool aligned_with(const ParamSet& ps) const;

  void add_scaled(const GradSet& other, double s);  // this += s * other
  void add_squared(const GradSet& other);           // this += other^2
  void scale(double s);
  double l2_norm() const;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> grads_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Our parameter naming convention encodes position and role:
//   vision.patch_embed.w, vision.pos_embed, vision.b{i}.attn.wq, ...
//   connector.proj.w / connector.proj.b
//   lm.tok_embed, lm.pos_embed, lm.b{i}.attn.wo, lm.b{i}.mlp.w1,
//   lm.final_ln.g, lm.head.w, ...
// classify_param_name maps a name to a (layer, kind) cell for the mask
// stats and deviation heatmap:
//   layer 0          = embeddings / connector / patch embed
//   layer 1..L       = transformer block i+1
//   layer -1         = final norm + output head (sorted after the blocks)
// kind in {vision, connector, embedding, attention, mlp, head}.
struct ParamCell {
  int layer;
  std::string kind;
};
ParamCell classify_param_name(const std::string& name);

}  // namespace ul
