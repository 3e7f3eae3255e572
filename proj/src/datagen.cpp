#include "ul/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "ul/container.hpp"

namespace ul {
namespace {

constexpr double kPalette[kPaletteSize][3] = {
    {1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0},
    {1.0, 1.0, 0.0}, {1.0, 0.0, 1.0}, {0.0, 1.0, 1.0},
};
constexpr int kStripSide = 4;   // glyph strip occupies this top-left square
constexpr int kDecorCells = 6;  // seeded decorative cells per concept image

std::vector<std::pair<int, int>> non_strip_cells(const DatagenConfig& cfg) {
  std::vector<std::pair<int, int>> cells;
  for (int r = 0; r < cfg.image_h; ++r)
    for (int c = 0; c < cfg.image_w; ++c)
      if (r >= kStripSide || c >= kStripSide) cells.emplace_back(r, c);
  return cells;
}

void paint_cell(ImageGrid& img, int r, int c, int palette_idx) {
  for (int ch = 0; ch < img.c; ++ch) img.at(r, c, ch) = kPalette[palette_idx][ch % 3];
}

// Places the correct token at a uniformly drawn position among seeded
// distractors drawn without replacement from the rest of the pool.
void make_choices(Rng& r, const std::vector<int>& pool, int correct_token, int n_choices,
                  std::vector<int>& choices, int& correct_index) {
  std::vector<int> wrong;
  for (int tok : pool)
    if (tok != correct_token) wrong.push_back(tok);
  UL_CHECK(static_cast<int>(wrong.size()) >= n_choices - 1, "contract",
           "answer pool too small for requested choice count");
  r.shuffle(wrong);
  correct_index = r.uniform_int(n_choices);
  choices.clear();
  int wi = 0;
  for (int k = 0; k < n_choices; ++k)
    choices.push_back(k == correct_index ? correct_token : wrong[wi++]);
}

TokenSequence answer_sequence(std::vector<int> prefix, int answer_token, int eos) {
  TokenSequence s;
  s.answer_start = static_cast<int>(prefix.size());
  prefix.push_back(answer_token);
  prefix.push_back(eos);
  s.answer_end = static_cast<int>(prefix.size());
  s.ids = std::move(prefix);
  return s;
}

}  // namespace

void DatagenConfig::validate() const {
  UL_CHECK(n_concepts >= 2 && n_concepts + 1 < (1 << (kStripSide * kStripSide)), "config",
           "n_concepts out of range");
  UL_CHECK(n_attributes >= 1, "config", "n_attributes must be positive");
  UL_CHECK(value_pool >= 2, "config", "value_pool must be at least 2");
  UL_CHECK(per_concept_vqa >= 1 && per_concept_qa >= 1, "config",
           "per-concept item counts must be positive");
  UL_CHECK(n_choices >= 2, "config", "n_choices must be at least 2");
  UL_CHECK(n_choices <= value_pool && n_choices <= kPaletteSize && n_choices <= kMaxCellCount,
           "config", "n_choices exceeds an answer pool");
  UL_CHECK(n_general_visual >= 0 && n_general_textual >= 0, "config",
           "general item counts must be nonnegative");
  UL_CHECK(image_h >= kStripSide && image_w >= kStripSide && image_c >= 1, "config",
           "image too small for the glyph strip");
  int free_cells = image_h * image_w - kStripSide * kStripSide;
  UL_CHECK(free_cells >= kDecorCells && free_cells >= kMaxCellCount, "config",
           "image too small for decorations");
}

Vocab Vocab::build(const DatagenConfig& cfg) {
  cfg.validate();
  Vocab v;
  v.n_attributes = cfg.n_attributes;
  v.value_pool = cfg.value_pool;
  v.n_concepts = cfg.n_concepts;
  v.n_general_keys = cfg.n_general_textual;
  return v;
}

int Vocab::attr(int a) const {
  UL_CHECK(a >= 0 && a < n_attributes, "contract", "attribute index out of range");
  return 6 + a;
}
int Vocab::name(int c) const {
  UL_CHECK(c >= 0 && c < n_concepts, "contract", "concept index out of range");
  return 6 + n_attributes + c;
}
int Vocab::val(int a, int v) const {
  UL_CHECK(a >= 0 && a < n_attributes && v >= 0 && v < value_pool, "contract",
           "value index out of range");
  return 6 + n_attributes + n_concepts + a * value_pool + v;
}
int Vocab::color(int k) const {
  UL_CHECK(k >= 0 && k < kPaletteSize, "contract", "color index out of range");
  return 6 + n_attributes + n_concepts + n_attributes * value_pool + k;
}
int Vocab::count(int k) const {
  UL_CHECK(k >= 1 && k <= kMaxCellCount, "contract", "count out of range");
  return color(0) + kPaletteSize + (k - 1);
}
int Vocab::general_key(int i) const {
  UL_CHECK(i >= 0 && i < n_general_keys, "contract", "general key out of range");
  return color(0) + kPaletteSize + kMaxCellCount + i;
}
int Vocab::general_value(int j) const {
  UL_CHECK(j >= 0 && j < value_pool, "contract", "general value out of range");
  return color(0) + kPaletteSize + kMaxCellCount + n_general_keys + j;
}
int Vocab::size() const {
  return 6 + n_attributes + n_concepts + n_attributes * value_pool + kPaletteSize +
         kMaxCellCount + n_general_keys + value_pool;
}

std::string Vocab::token_str(int id) const {
  UL_CHECK(id >= 0 && id < size(), "contract", "token id out of range");
  static const char* specials[] = {"<pad>", "<bos>", "<eos>", "<sep>", "<q:color>", "<q:count>"};
  if (id < 6) return specials[id];
  int x = id - 6;
  if (x < n_attributes) return "attr" + std::to_string(x);
  x -= n_attributes;
  if (x < n_concepts) return "name" + std::to_string(x);
  x -= n_concepts;
  if (x < n_attributes * value_pool)
    return "a" + std::to_string(x / value_pool) + "v" + std::to_string(x % value_pool);
  x -= n_attributes * value_pool;
  if (x < kPaletteSize) return "color" + std::to_string(x);
  x -= kPaletteSize;
  if (x < kMaxCellCount) return "cnt" + std::to_string(x + 1);
  x -= kMaxCellCount;
  if (x < n_general_keys) return "k" + std::to_string(x);
  x -= n_general_keys;
  return "gv" + std::to_string(x);
}

int Vocab::parse_token(const std::string& s) const {
  for (int id = 0; id < size(); ++id)
    if (token_str(id) == s) return id;
  fail("io", "unknown token string: " + s);
}

std::string modality_str(Modality m) { return m == Modality::visual ? "visual" : "textual"; }

Modality parse_modality(const std::string& s) {
  if (s == "visual") return Modality::visual;
  if (s == "textual") return Modality::textual;
  fail("io", "unknown modality: " + s);
}

std::vector<ConceptProfile> synth_profiles(const DatagenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng r(seed + 11);
  std::vector<ConceptProfile> out;
  for (int c = 0; c < cfg.n_concepts; ++c) {
    ConceptProfile p;
    p.concept_id = c;
    for (int a = 0; a < cfg.n_attributes; ++a) p.attr_value.push_back(r.uniform_int(cfg.value_pool));
    out.push_back(std::move(p));
  }
  return out;
}

ImageGrid render_concept_image(const DatagenConfig& cfg, const ConceptProfile& p, int variant) {
  UL_CHECK(p.concept_id >= 0 && p.concept_id < cfg.n_concepts, "contract",
           "profile id out of range");
  UL_CHECK(variant >= 0, "contract", "variant must be nonnegative");
  ImageGrid img = ImageGrid::zeros(cfg.image_h, cfg.image_w, cfg.image_c);

  // glyph strip: the concept id in binary, one bit per cell
  unsigned code = static_cast<unsigned>(p.concept_id + 1);
  for (int r = 0; r < kStripSide; ++r)
    for (int c = 0; c < kStripSide; ++c) {
      unsigned bit = (code >> (r * kStripSide + c)) & 1u;
      img.at(r, c, 0) = bit ? 1.0 : 0.25;
    }

  // stable decorative cells, jittered per variant
  Rng deco(0x5EED0000ULL + static_cast<std::uint64_t>(p.concept_id));
  auto cells = non_strip_cells(cfg);
  deco.shuffle(cells);
  std::vector<int> palette_pick;
  for (int i = 0; i < kDecorCells; ++i) palette_pick.push_back(deco.uniform_int(kPaletteSize));
  Rng jitter(0xB0B0ULL + static_cast<std::uint64_t>(p.concept_id) * 9973ULL +
             static_cast<std::uint64_t>(variant));
  for (int i = 0; i < kDecorCells; ++i) {
    auto [r, c] = cells[i];
    paint_cell(img, r, c, palette_pick[i]);
    for (int ch = 0; ch < cfg.image_c; ++ch) {
      double v = img.at(r, c, ch) + (jitter.uniform() - 0.5) * 0.1;
      img.at(r, c, ch) = std::min(1.0, std::max(0.0, v));
    }
  }
  return img;
}

Dataset build_dataset(const DatagenConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Dataset d;
  d.cfg = cfg;
  d.vocab = Vocab::build(cfg);
  d.profiles = synth_profiles(cfg, seed);
  const Vocab& vb = d.vocab;

  Rng rfact(seed + 13);
  for (int i = 0; i < cfg.n_general_textual; ++i)
    d.general_fact.push_back(rfact.uniform_int(cfg.value_pool));

  Rng rchoice(seed + 17);
  Rng rgen(seed + 19);

  auto push_item = [&](QAItem item) {
    item.id = static_cast<int>(d.items.size());
    d.items.push_back(std::move(item));
  };

  for (int c = 0; c < cfg.n_concepts; ++c) {
    for (int j = 0; j < cfg.per_concept_vqa; ++j) {
      int a = j % cfg.n_attributes;
      QAItem it;
      it.modality = Modality::visual;
      it.concept_id = c;
      it.attribute = a;
      it.image_index = static_cast<int>(d.images.size());
      d.images.push_back(render_concept_image(cfg, d.profiles[c], j));
      int correct = vb.val(a, d.profiles[c].attr_value[a]);
      std::vector<int> pool;
      for (int v = 0; v < cfg.value_pool; ++v) pool.push_back(vb.val(a, v));
      make_choices(rchoice, pool, correct, cfg.n_choices, it.choices, it.correct_index);
      it.seq = answer_sequence({vb.bos(), vb.attr(a), vb.sep()}, correct, vb.eos());
      push_item(std::move(it));
    }
    for (int j = 0; j < cfg.per_concept_qa; ++j) {
      int a = j % cfg.n_attributes;
      QAItem it;
      it.modality = Modality::textual;
      it.concept_id = c;
      it.attribute = a;
      int correct = vb.val(a, d.profiles[c].attr_value[a]);
      std::vector<int> pool;
      for (int v = 0; v < cfg.value_pool; ++v) pool.push_back(vb.val(a, v));
      make_choices(rchoice, pool, correct, cfg.n_choices, it.choices, it.correct_index);
      it.seq = answer_sequence({vb.bos(), vb.name(c), vb.attr(a), vb.sep()}, correct, vb.eos());
      push_item(std::move(it));
    }
  }

  auto cells = non_strip_cells(cfg);
  for (int i = 0; i < cfg.n_general_visual; ++i) {
    bool color_q = (i % 2 == 0);
    int k = 1 + rgen.uniform_int(kMaxCellCount);
    int col = rgen.uniform_int(kPaletteSize);
    ImageGrid img = ImageGrid::zeros(cfg.image_h, cfg.image_w, cfg.image_c);
    auto spots = cells;
    rgen.shuffle(spots);
    for (int s = 0; s < k; ++s) paint_cell(img, spots[s].first, spots[s].second, col);

    QAItem it;
    it.modality = Modality::visual;
    it.image_index = static_cast<int>(d.images.size());
    d.images.push_back(std::move(img));
    int correct;
    std::vector<int> pool;
    if (color_q) {
      correct = vb.color(col);
      for (int v = 0; v < kPaletteSize; ++v) pool.push_back(vb.color(v));
    } else {
      correct = vb.count(k);
      for (int v = 1; v <= kMaxCellCount; ++v) pool.push_back(vb.count(v));
    }
    make_choices(rchoice, pool, correct, cfg.n_choices, it.choices, it.correct_index);
    it.seq = answer_sequence({vb.bos(), color_q ? vb.q_color() : vb.q_count(), vb.sep()}, correct,
                             vb.eos());
    push_item(std::move(it));
  }

  for (int i = 0; i < cfg.n_general_textual; ++i) {
    QAItem it;
    it.modality = Modality::textual;
    int correct = vb.general_value(d.general_fact[i]);
    std::vector<int> pool;
    for (int v = 0; v < cfg.value_pool; ++v) pool.push_back(vb.general_value(v));
    make_choices(rchoice, pool, correct, cfg.n_choices, it.choices, it.correct_index);
    it.seq = answer_sequence({vb.bos(), vb.general_key(i), vb.sep()}, correct, vb.eos());
    push_item(std::move(it));
  }
  return d;
}

std::vector<int> make_split(int n_concepts, double ratio, std::uint64_t seed) {
  UL_CHECK(n_concepts >= 1, "contract", "need at least one concept");
  UL_CHECK(std::isfinite(ratio) && ratio >= 0.0 && ratio <= 1.0, "config",
           "forget ratio must lie in [0, 1]");
  int k = static_cast<int>(std::lround(ratio * n_concepts));
  k = std::min(k, n_concepts);
  std::vector<int> ids(n_concepts);
  for (int i = 0; i < n_concepts; ++i) ids[i] = i;
  Rng r(seed + 23);
  r.shuffle(ids);
  std::vector<int> out(ids.begin(), ids.begin() + k);
  std::sort(out.begin(), out.end());
  return out;
}

bool in_split(const std::vector<int>& split, int concept_id) {
  return std::binary_search(split.begin(), split.end(), concept_id);
}

std::vector<int> targeted_indices(const Dataset& d, const std::vector<int>& forget) {
  std::vector<int> out;
  for (const auto& it : d.items)
    if (it.modality == Modality::visual && it.concept_id >= 0 && in_split(forget, it.concept_id))
      out.push_back(it.id);
  return out;
}

std::vector<int> preserved_indices(const Dataset& d, const std::vector<int>& forget) {
  std::vector<int> out;
  for (const auto& it : d.items) {
    if (it.concept_id < 0) continue;
    bool is_forget = in_split(forget, it.concept_id);
    if (is_forget && it.modality == Modality::textual) out.push_back(it.id);
    if (!is_forget) out.push_back(it.id);
  }
  return out;
}

std::vector<int> retain_train_indices(const Dataset& d, const std::vector<int>& forget) {
  std::vector<int> out;
  for (const auto& it : d.items)
    if (it.concept_id >= 0 && !in_split(forget, it.concept_id)) out.push_back(it.id);
  return out;
}

std::vector<int> all_indices(const Dataset& d) {
  std::vector<int> out(d.items.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<int>(i);
  return out;
}

EvalGroups eval_groups(const Dataset& d, const std::vector<int>& forget) {
  EvalGroups g;
  for (const auto& it : d.items) {
    bool vis = it.modality == Modality::visual;
    if (it.concept_id < 0) {
      (vis ? g.general_visual : g.general_textual).push_back(it.id);
    } else if (in_split(forget, it.concept_id)) {
      (vis ? g.forget_visual : g.forget_textual).push_back(it.id);
    } else {
      (vis ? g.retain_visual : g.retain_textual).push_back(it.id);
    }
  }
  return g;
}

std::vector<int> prompt_ids(const QAItem& item) {
  UL_CHECK(item.seq.answer_start >= 0 &&
               item.seq.answer_start <= static_cast<int>(item.seq.ids.size()),
           "contract", "bad answer span");
  return {item.seq.ids.begin(), item.seq.ids.begin() + item.seq.answer_start};
}

TokenSequence with_choice(const QAItem& item, int choice_token) {
  TokenSequence s;
  s.ids = prompt_ids(item);
  s.answer_start = static_cast<int>(s.ids.size());
  s.ids.push_back(choice_token);
  s.answer_end = static_cast<int>(s.ids.size());
  return s;
}

void save_items_jsonl(const std::string& path, const Dataset& d) {
  std::ostringstream out;
  for (const auto& it : d.items) {
    nlohmann::json j;
    j["id"] = it.id;
    j["modality"] = modality_str(it.modality);
    j["concept_id"] = it.concept_id;
    j["attribute"] = it.attribute;
    if (it.image_index >= 0)
      j["image"] = "img" + std::to_string(it.image_index);
    else
      j["image"] = nullptr;
    std::vector<std::string> toks;
    for (int id : it.seq.ids) toks.push_back(d.vocab.token_str(id));
    j["tokens"] = toks;
    j["answer_start"] = it.seq.answer_start;
    j["answer_end"] = it.seq.answer_end;
    std::vector<std::string> ch;
    for (int id : it.choices) ch.push_back(d.vocab.token_str(id));
    j["choices"] = ch;
    j["correct_index"] = it.correct_index;
    out << j.dump() << "\n";
  }
  write_file_bytes(path, out.str());
}

std::vector<QAItem> load_items_jsonl(const std::string& path, const Vocab& vocab) {
  std::istringstream in(read_file_bytes(path));
  std::vector<QAItem> items;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      fail("io", std::string("bad item line: ") + e.what());
    }
    QAItem it;
    it.id = j.at("id").get<int>();
    it.modality = parse_modality(j.at("modality").get<std::string>());
    it.concept_id = j.at("concept_id").get<int>();
    it.attribute = j.at("attribute").get<int>();
    if (!j.at("image").is_null()) {
      std::string name = j.at("image").get<std::string>();
      UL_CHECK(name.rfind("img", 0) == 0, "io", "bad image reference: " + name);
      it.image_index = std::stoi(name.substr(3));
    }
    for (const auto& t : j.at("tokens")) it.seq.ids.push_back(vocab.parse_token(t));
    it.seq.answer_start = j.at("answer_start").get<int>();
    it.seq.answer_end = j.at("answer_end").get<int>();
    for (const auto& t : j.at("choices")) it.choices.push_back(vocab.parse_token(t));
    it.correct_index = j.at("correct_index").get<int>();
    UL_CHECK(it.correct_index >= 0 && it.correct_index < static_cast<int>(it.choices.size()),
             "io", "correct_index out of range");
    UL_CHECK(it.seq.answer_start >= 0 && it.seq.answer_start < it.seq.answer_end &&
                 it.seq.answer_end <= static_cast<int>(it.seq.ids.size()),
             "io", "bad answer span in item file");
    UL_CHECK(it.choices[it.correct_index] == it.seq.ids[it.seq.answer_start], "io",
             "correct choice does not match the stored answer");
    items.push_back(std::move(it));
  }
  for (std::size_t i = 0; i < items.size(); ++i)
    UL_CHECK(items[i].id == static_cast<int>(i), "io", "item ids must be sequential");
  return items;
}

void save_images(const std::string& path, const Dataset& d) {
  std::vector<ContainerEntry> entries;
  for (std::size_t i = 0; i < d.images.size(); ++i) {
    const ImageGrid& g = d.images[i];
    ContainerEntry e;
    e.name = "img" + std::to_string(i);
    Tensor t = Tensor::zeros({g.h, g.w, g.c});
    t.data = g.pix;
    e.t = std::move(t);
    entries.push_back(std::move(e));
  }
  save_container(path, entries);
}

std::vector<ImageGrid> load_images(const std::string& path) {
  std::vector<ImageGrid> out;
  auto entries = load_container(path);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    UL_CHECK(entries[i].name == "img" + std::to_string(i), "io", "unexpected image entry order");
    const Tensor& t = entries[i].t;
    UL_CHECK(t.shape.size() == 3, "io", "image entries must be rank 3");
    ImageGrid g = ImageGrid::zeros(t.shape[0], t.shape[1], t.shape[2]);
    g.pix = t.data;
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace ul
