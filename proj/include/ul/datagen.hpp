#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ul/model.hpp"
#include "ul/rng.hpp"

namespace ul {

// Synthetic multimodal QA corpus. Concepts carry attribute profiles; each
// concept owns a visually distinctive image family (an injective glyph strip
// plus seeded decorations). Questions are multiple choice with a single
// correct token answer.

inline constexpr int kPaletteSize = 6;
inline constexpr int kMaxCellCount = 8;

struct DatagenConfig {
  int n_concepts = 20;
  int n_attributes = 7;
  int value_pool = 10;
  int per_concept_vqa = 7;
  int per_concept_qa = 7;
  int n_choices = 4;
  int n_general_visual = 24;
  int n_general_textual = 24;
  int image_h = 8;
  int image_w = 8;
  int image_c = 3;
  void validate() const;
};

struct Vocab {
  int n_attributes = 0;
  int value_pool = 0;
  int n_concepts = 0;
  int n_general_keys = 0;

  static Vocab build(const DatagenConfig& cfg);

  int pad() const { return 0; }
  int bos() const { return 1; }
  int eos() const { return 2; }
  int sep() const { return 3; }
  int q_color() const { return 4; }
  int q_count() const { return 5; }
  int attr(int a) const;
  int name(int c) const;
  int val(int a, int v) const;       // per-attribute disjoint value tokens
  int color(int k) const;            // k in [0, kPaletteSize)
  int count(int k) const;            // k in [1, kMaxCellCount]
  int general_key(int i) const;
  int general_value(int j) const;    // j in [0, value_pool)
  int size() const;

  std::string token_str(int id) const;
  int parse_token(const std::string& s) const;
};

enum class Modality { visual, textual };

std::string modality_str(Modality m);
Modality parse_modality(const std::string& s);

struct ConceptProfile {
  int concept_id = -1;
  std::vector<int> attr_value;  // value index per attribute
};

struct QAItem {
  int id = -1;
  Modality modality = Modality::textual;
  int concept_id = -1;   // -1 for general knowledge items
  int attribute = -1;    // -1 when the question is not attribute-based
  int image_index = -1;  // -1 when the item has no image
  TokenSequence seq;     // full sequence, span covers answer tokens
  std::vector<int> choices;
  int correct_index = -1;
};

struct Dataset {
  DatagenConfig cfg;
  Vocab vocab;
  std::vector<ConceptProfile> profiles;
  std::vector<int> general_fact;  // general key index -> value index
  std::vector<QAItem> items;
  std::vector<ImageGrid> images;
};

std::vector<ConceptProfile> synth_profiles(const DatagenConfig& cfg, std::uint64_t seed);
ImageGrid render_concept_image(const DatagenConfig& cfg, const ConceptProfile& p, int variant);
Dataset build_dataset(const DatagenConfig& cfg, std::uint64_t seed);

// Sorted concept ids selected for forgetting. Selections are nested: a larger
// ratio at the same seed is a superset of a smaller one.
std::vector<int> make_split(int n_concepts, double ratio, std::uint64_t seed);
bool in_split(const std::vector<int>& split, int concept_id);

// Index sets over dataset.items.
std::vector<int> targeted_indices(const Dataset& d, const std::vector<int>& forget);
std::vector<int> preserved_indices(const Dataset& d, const std::vector<int>& forget);
std::vector<int> retain_train_indices(const Dataset& d, const std::vector<int>& forget);
std::vector<int> all_indices(const Dataset& d);

struct EvalGroups {
  std::vector<int> forget_visual;
  std::vector<int> forget_textual;
  std::vector<int> retain_visual;
  std::vector<int> retain_textual;
  std::vector<int> general_visual;
  std::vector<int> general_textual;
};
EvalGroups eval_groups(const Dataset& d, const std::vector<int>& forget);

std::vector<int> prompt_ids(const QAItem& item);
TokenSequence with_choice(const QAItem& item, int choice_token);

void save_items_jsonl(const std::string& path, const Dataset& d);
std::vector<QAItem> load_items_jsonl(const std::string& path, const Vocab& vocab);
void save_images(const std::string& path, const Dataset& d);
std::vector<ImageGrid> load_images(const std::string& path);

}  // namespace ul
