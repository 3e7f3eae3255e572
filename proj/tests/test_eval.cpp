#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "ul/container.hpp"
#include "ul/eval.hpp"
#include "ul/rng.hpp"
#include "ul/saliency.hpp"

using namespace ul;

namespace {

struct Setup {
  DatagenConfig dc;
  ModelConfig mc;
  Dataset data;
  ToyMLLM model;
};

Setup make_setup(int n_concepts = 4, std::uint64_t seed = 7) {
  DatagenConfig dc;
  dc.n_concepts = n_concepts;
  dc.per_concept_vqa = 3;
  dc.per_concept_qa = 3;
  dc.n_general_visual = 4;
  dc.n_general_textual = 4;
  ModelConfig mc;
  mc.d_vision = 8;
  mc.d_model = 8;
  mc.n_heads = 2;
  mc.n_layers = 1;
  mc.n_vision_layers = 1;
  mc.vocab_size = Vocab::build(dc).size();
  Dataset d = build_dataset(dc, seed);
  ToyMLLM m = ToyMLLM::init(mc, seed + 1);
  return {dc, mc, std::move(d), std::move(m)};
}

// plain recursive LCS with memoization, independent of the DP in rouge_l
int lcs_rec(const std::vector<int>& a, const std::vector<int>& b, std::size_t i, std::size_t j,
            std::map<std::pair<std::size_t, std::size_t>, int>& memo) {
  if (i == 0 || j == 0) return 0;
  auto key = std::make_pair(i, j);
  auto it = memo.find(key);
  if (it != memo.end()) return it->second;
  int v;
  if (a[i - 1] == b[j - 1])
    v = lcs_rec(a, b, i - 1, j - 1, memo) + 1;
  else
    v = std::max(lcs_rec(a, b, i - 1, j, memo), lcs_rec(a, b, i, j - 1, memo));
  memo[key] = v;
  return v;
}

double rouge_oracle(const std::vector<int>& pred, const std::vector<int>& ref) {
  if (pred.empty()) return 0.0;
  std::map<std::pair<std::size_t, std::size_t>, int> memo;
  int l = lcs_rec(pred, ref, pred.size(), ref.size(), memo);
  if (l == 0) return 0.0;
  double recall = static_cast<double>(l) / ref.size();
  double precision = static_cast<double>(l) / pred.size();
  return 2.0 * recall * precision / (recall + precision);
}

double logprob_oracle(const Setup& s, const QAItem& item, int choice_index) {
  TokenSequence seq = with_choice(item, item.choices[choice_index]);
  const ImageGrid* img = item.image_index >= 0 ? &s.data.images[item.image_index] : nullptr;
  Tensor logits = lm_logits(s.model, img, seq.ids);
  int nv = img ? s.mc.n_patches() : 0;
  double lp = 0.0;
  for (int t = seq.answer_start; t < seq.answer_end; ++t) {
    int row = pred_row(nv, t);
    double mx = logits.at(row, 0);
    for (int c = 1; c < logits.cols(); ++c) mx = std::max(mx, logits.at(row, c));
    double sum = 0.0;
    for (int c = 0; c < logits.cols(); ++c) sum += std::exp(logits.at(row, c) - mx);
    lp += logits.at(row, seq.ids[t]) - mx - std::log(sum);
  }
  return lp / (seq.answer_end - seq.answer_start);
}

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (ch == '\n') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

TEST_CASE("rouge_l hand-checked values") {
  std::vector<int> abc{1, 2, 3};
  CHECK(rouge_l(abc, abc) == doctest::Approx(1.0));
  CHECK(rouge_l({1, 2, 4}, {1, 2, 3}) == doctest::Approx(2.0 / 3.0));
  CHECK(rouge_l({7, 8}, {1, 2, 3}) == 0.0);
  CHECK(rouge_l({}, {1}) == 0.0);
  CHECK_THROWS_AS(rouge_l({1}, {}), Error);
  // subset on one side: LCS 3, recall 1, precision 1/2
  CHECK(rouge_l({1, 2, 3, 4, 5, 6}, {2, 4, 6}) == doctest::Approx(2.0 / 3.0));
  // same multiset, different order, is not a perfect score
  CHECK(rouge_l({1, 2}, {2, 1}) == doctest::Approx(0.5));
  // swapping arguments swaps precision and recall, F1 is symmetric
  CHECK(rouge_l({1, 3, 5, 9}, {1, 5}) == rouge_l({1, 5}, {1, 3, 5, 9}));
}

TEST_CASE("rouge_l agrees with a recursive LCS oracle") {
  Rng rng(99);
  for (int trial = 0; trial < 100; ++trial) {
    int np = 1 + static_cast<int>(rng.uniform_int(20));
    int nr = 1 + static_cast<int>(rng.uniform_int(20));
    std::vector<int> pred(np), ref(nr);
    for (int& v : pred) v = static_cast<int>(rng.uniform_int(5));
    for (int& v : ref) v = static_cast<int>(rng.uniform_int(5));
    CHECK(rouge_l(pred, ref) == doctest::Approx(rouge_oracle(pred, ref)).epsilon(1e-12));
  }
}

TEST_CASE("choice scores match a plain log-softmax oracle") {
  Setup s = make_setup();
  std::vector<int> picks = all_indices(s.data);
  // a visual and a textual slice is enough; cover both with a stride
  for (std::size_t i = 0; i < picks.size(); i += 3) {
    const QAItem& item = s.data.items[picks[i]];
    int n = static_cast<int>(item.choices.size());
    for (int k = 0; k < n; ++k) {
      double oracle = logprob_oracle(s, item, k);
      double got = score_choice(s.model, s.data, item, k);
      CHECK(got == doctest::Approx(oracle).epsilon(1e-9));
    }
    // independent strict argmax over the public scorer
    int best = 0;
    double best_score = score_choice(s.model, s.data, item, 0);
    for (int k = 1; k < n; ++k) {
      double sc = score_choice(s.model, s.data, item, k);
      if (sc > best_score) {
        best_score = sc;
        best = k;
      }
    }
    CHECK(predict_choice(s.model, s.data, item) == best);
  }
  CHECK_THROWS_AS(score_choice(s.model, s.data, s.data.items[0], 99), Error);
}

TEST_CASE("exact score ties resolve to the lowest choice index") {
  Setup s = make_setup();
  QAItem item = s.data.items[0];
  // identical tokens produce identical sequences and therefore exact ties
  item.choices = {item.choices[0], item.choices[0], item.choices[0]};
  item.correct_index = 0;
  CHECK(predict_choice(s.model, s.data, item) == 0);
}

TEST_CASE("an untrained model scores near chance") {
  Setup s = make_setup(40, 21);
  double acc = mc_accuracy(s.model, s.data, all_indices(s.data));
  // 608 items, 4 choices, correct slots placed uniformly
  CHECK(acc > 0.12);
  CHECK(acc < 0.38);
  CHECK_THROWS_AS(mc_accuracy(s.model, s.data, {}), Error);
}

TEST_CASE("six-dimension report shape") {
  Setup s = make_setup();
  auto forget = make_split(s.dc.n_concepts, 0.25, 7);
  EvalGroups g = eval_groups(s.data, forget);
  EvalReport r = evaluate_all(s.model, s.data, g);
  REQUIRE(r.dims.size() == 6);
  const std::vector<int>* sets[6] = {&g.forget_visual,  &g.forget_textual, &g.retain_visual,
                                     &g.retain_textual, &g.general_visual, &g.general_textual};
  for (int i = 0; i < 6; ++i) {
    CHECK(r.dims[i].name == kDimensionOrder[i]);
    CHECK(r.dims[i].present);
    CHECK(r.dims[i].count == static_cast<int>(sets[i]->size()));
    CHECK(r.dims[i].accuracy >= 0.0);
    CHECK(r.dims[i].accuracy <= 1.0);
    bool textual = r.dims[i].name.find("textual") != std::string::npos;
    CHECK(r.dims[i].has_rouge == textual);
    if (textual) {
      CHECK(r.dims[i].rouge >= 0.0);
      CHECK(r.dims[i].rouge <= 1.0);
    }
  }
  CHECK(report_dim(r, "retain_visual").count == static_cast<int>(g.retain_visual.size()));
  CHECK_THROWS_AS(report_dim(r, "bogus"), Error);

  // accuracies recompute identically from the public scorer
  CHECK(report_dim(r, "forget_visual").accuracy ==
        mc_accuracy(s.model, s.data, g.forget_visual));

  EvalReport again = evaluate_all(s.model, s.data, g);
  for (int i = 0; i < 6; ++i) {
    CHECK(r.dims[i].accuracy == again.dims[i].accuracy);
    CHECK(r.dims[i].rouge == again.dims[i].rouge);
  }
}

TEST_CASE("empty groups are reported absent, not zero") {
  Setup s = make_setup();
  EvalGroups g = eval_groups(s.data, {});
  CHECK(g.forget_visual.empty());
  CHECK(g.forget_textual.empty());
  EvalReport r = evaluate_all(s.model, s.data, g);
  CHECK_FALSE(report_dim(r, "forget_visual").present);
  CHECK_FALSE(report_dim(r, "forget_textual").present);
  CHECK(report_dim(r, "retain_visual").present);

  std::string csv_path = "eval_absent.csv";
  std::string txt_path = "eval_absent.txt";
  save_report_csv(csv_path, r);
  save_report_text(txt_path, r);
  auto csv_lines = split_lines(read_file_bytes(csv_path));
  REQUIRE(csv_lines.size() == 5);  // header plus the four populated dimensions
  CHECK(csv_lines[0] == "dimension,count,accuracy,rouge_l");
  for (std::size_t i = 1; i < csv_lines.size(); ++i) {
    CHECK(csv_lines[i].find("forget") == std::string::npos);
    CHECK(std::count(csv_lines[i].begin(), csv_lines[i].end(), ',') == 3);
  }
  // visual rows leave the rouge field empty, textual rows fill it
  CHECK(csv_lines[1].rfind("retain_visual,", 0) == 0);
  CHECK(csv_lines[1].back() == ',');
  CHECK(csv_lines[2].rfind("retain_textual,", 0) == 0);
  CHECK(csv_lines[2].back() != ',');

  auto txt_lines = split_lines(read_file_bytes(txt_path));
  REQUIRE(txt_lines.size() == 7);  // header plus all six dimensions
  CHECK(txt_lines[1].find("forget_visual") != std::string::npos);
  CHECK(txt_lines[1].find("absent") != std::string::npos);
  CHECK(txt_lines[3].find("retain_visual") != std::string::npos);
  CHECK(txt_lines[3].find("absent") == std::string::npos);
  std::remove(csv_path.c_str());
  std::remove(txt_path.c_str());
}

TEST_CASE("report files are byte-stable") {
  Setup s = make_setup();
  auto forget = make_split(s.dc.n_concepts, 0.25, 7);
  EvalReport r = evaluate_all(s.model, s.data, eval_groups(s.data, forget));
  save_report_csv("eval_a.csv", r);
  save_report_csv("eval_b.csv", r);
  CHECK(read_file_bytes("eval_a.csv") == read_file_bytes("eval_b.csv"));
  std::remove("eval_a.csv");
  std::remove("eval_b.csv");
}

TEST_CASE("delta export covers dimensions present on both sides") {
  EvalReport vanilla, after;
  for (int i = 0; i < 6; ++i) {
    DimensionScore v;
    v.name = kDimensionOrder[i];
    v.present = true;
    v.count = 10;
    v.accuracy = 0.9 - 0.1 * i;
    vanilla.dims.push_back(v);
    DimensionScore a = v;
    a.accuracy = v.accuracy - 0.25;
    after.dims.push_back(a);
  }
  after.dims[5].present = false;  // absent after unlearning, row must vanish
  std::string path = "eval_deltas.csv";
  save_deltas_csv(path, vanilla, after);
  auto lines = split_lines(read_file_bytes(path));
  REQUIRE(lines.size() == 6);  // header plus five shared dimensions
  CHECK(lines[0] == "dimension,vanilla_accuracy,accuracy,delta");
  CHECK(lines[1] == "forget_visual,0.900000,0.650000,-0.250000");
  CHECK(lines[5] == "general_visual,0.500000,0.250000,-0.250000");
  std::remove(path.c_str());
}

TEST_CASE("top deviated coordinates rank by deviation, name, coordinate") {
  Setup s = make_setup();
  ParamSet before = s.model.params;
  ParamSet after = before;
  auto bump = [&](const std::string& name, std::size_t coord, double dv) {
    after.at(name).data[coord] += dv;
  };
  bump("lm.head.w", 3, 0.5);
  bump("lm.head.w", 1, -0.5);          // same deviation, earlier coordinate
  bump("connector.proj.w", 0, 0.25);   // smaller deviation ranks after both

  auto top = top_deviated(before, after, 3);
  REQUIRE(top.size() == 3);
  CHECK(top[0].name == "lm.head.w");
  CHECK(top[0].coord == 1);
  CHECK(top[0].deviation == doctest::Approx(0.5));
  CHECK(top[1].name == "lm.head.w");
  CHECK(top[1].coord == 3);
  CHECK(top[2].name == "connector.proj.w");
  CHECK(top[2].coord == 0);

  CHECK(top_deviated(before, after, 0).empty());
  auto all = top_deviated(before, after, static_cast<long long>(before.total_coords()));
  CHECK(all.size() == before.total_coords());
  CHECK_THROWS_AS(top_deviated(before, after, static_cast<long long>(before.total_coords()) + 1),
                  Error);

  ModelConfig other = s.mc;
  other.d_model = 16;
  ToyMLLM m2 = ToyMLLM::init(other, 1);
  CHECK_THROWS_AS(top_deviated(before, m2.params, 1), Error);
}

TEST_CASE("heatmap groups partition the selected coordinates") {
  Setup s = make_setup();
  ParamSet before = s.model.params;
  ParamSet after = before;
  Rng rng(31);
  for (std::size_t i = 0; i < after.size(); ++i)
    for (double& v : after.entry(i).value.data) v += rng.normal() * 0.01;

  long long total = static_cast<long long>(before.total_coords());
  GradSet ones = mask_all_ones(before);
  auto cells = mask_stats(before, ones);

  for (long long n : {10LL, 1000LL, total}) {
    auto rows = deviation_heatmap(before, after, n);
    REQUIRE(rows.size() == cells.size());
    long long sum = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      CHECK(rows[i].layer == cells[i].layer);
      CHECK(rows[i].kind == cells[i].kind);
      CHECK(rows[i].count >= 0);
      CHECK(rows[i].count <= cells[i].total_bits);
      sum += rows[i].count;
    }
    CHECK(sum == n);
  }

  // full selection fills every group to its coordinate capacity
  auto full = deviation_heatmap(before, after, total);
  for (std::size_t i = 0; i < full.size(); ++i) CHECK(full[i].count == cells[i].total_bits);

  // identical parameter sets still produce a clean partition
  auto zero = deviation_heatmap(before, before, 5);
  long long zsum = 0;
  for (const auto& g : zero) zsum += g.count;
  CHECK(zsum == 5);

  // a single perturbed coordinate lands in its own cell
  ParamSet one = before;
  one.at("lm.b0.attn.wq").data[2] += 1.0;
  auto single = deviation_heatmap(before, one, 1);
  long long hits = 0;
  for (const auto& g : single) {
    if (g.count > 0) {
      CHECK(g.layer == 1);
      CHECK(g.kind == "attention");
      CHECK(g.count == 1);
      ++hits;
    }
  }
  CHECK(hits == 1);

  std::string path = "eval_heatmap.csv";
  save_heatmap_csv(path, single);
  auto lines = split_lines(read_file_bytes(path));
  REQUIRE(lines.size() == cells.size() + 1);
  CHECK(lines[0] == "layer_index,sublayer_kind,count");
  std::remove(path.c_str());
}
