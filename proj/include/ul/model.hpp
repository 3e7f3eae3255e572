#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ul/graph.hpp"
#include "ul/param.hpp"

namespace ul {

struct ModelConfig {
  int image_h = 8;
  int image_w = 8;
  int image_c = 3;
  int patch_size = 4;
  int d_vision = 64;
  int d_model = 96;
  int n_layers = 2;         // language model blocks
  int n_vision_layers = 2;  // vision encoder blocks
  int n_heads = 4;
  int vocab_size = 0;       // filled from the vocabulary
  int max_seq_len = 12;

  int n_patches() const { return (image_h / patch_size) * (image_w / patch_size); }
  int patch_dim() const { return patch_size * patch_size * image_c; }
  void validate() const;
};

// Text token ids plus the half-open answer span [answer_start, answer_end)
// in text coordinates. The span is what the NLL objective covers.
struct TokenSequence {
  std::vector<int> ids;
  int answer_start = 0;
  int answer_end = 0;
};

// Pixel grid in [0,1], laid out (row, col, channel).
struct ImageGrid {
  int h = 0, w = 0, c = 0;
  std::vector<double> pix;

  static ImageGrid zeros(int h, int w, int c);
  double& at(int r, int col, int ch) {
    return pix[(static_cast<std::size_t>(r) * w + col) * c + ch];
  }
  double at(int r, int col, int ch) const {
    return pix[(static_cast<std::size_t>(r) * w + col) * c + ch];
  }
};

// Tiny multimodal LM: patch-embedding vision encoder (bidirectional
// attention), a linear connector into the LM width, and a causal LM stack.
// Visual tokens are prepended to the text tokens; one absolute position
// table runs across the boundary.
struct ToyMLLM {
  ModelConfig cfg;
  ParamSet params;

  static ToyMLLM init(const ModelConfig& cfg, std::uint64_t seed);
};

// --- graph builders (training path) ---

// Projected visual tokens, (n_patches x d_model).
Graph::NodeId build_visual(Graph& g, const ToyMLLM& m, const ImageGrid& img);
// Vision encoder output before the connector, (n_patches x d_vision).
Graph::NodeId build_encoded(Graph& g, const ToyMLLM& m, const ImageGrid& img);
// Full forward; logits for every position, ((n_vis + T) x vocab).
// img == nullptr is the pure-text path and touches no vision or connector
// parameters.
Graph::NodeId build_logits(Graph& g, const ToyMLLM& m, const ImageGrid* img,
                           const std::vector<int>& ids);
// Mean NLL over the answer span; scalar.
Graph::NodeId build_nll(Graph& g, const ToyMLLM& m, const ImageGrid* img,
                        const TokenSequence& seq);
// Sum of answer-token log-probabilities; scalar.
Graph::NodeId build_logprob_sum(Graph& g, const ToyMLLM& m, const ImageGrid* img,
                                const TokenSequence& seq);

// Row of the logits matrix that predicts text token `text_pos`.
int pred_row(int n_visual, int text_pos);

// --- value-level API (evaluation path) ---

Tensor encode_image(const ToyMLLM& m, const ImageGrid& img);
Tensor project(const ToyMLLM& m, const Tensor& encoded);
Tensor lm_logits(const ToyMLLM& m, const ImageGrid* img, const std::vector<int>& ids);
double nll_loss(const ToyMLLM& m, const ImageGrid* img, const TokenSequence& seq);
double sequence_logprob(const ToyMLLM& m, const ImageGrid* img, const TokenSequence& seq);

// Greedy decoding from prompt. Appends argmax tokens (ties resolved to the
// lowest token id) until stop_token would be emitted (not appended), max_new
// tokens were added, or the context window fills. Returns prompt + generated.
std::vector<int> generate_greedy(const ToyMLLM& m, const ImageGrid* img,
                                 std::vector<int> prompt, int max_new, int stop_token);

// --- checkpoint ---

void save_checkpoint(const std::string& path, const ToyMLLM& m);
ToyMLLM load_checkpoint(const std::string& path);

}  // namespace ul
