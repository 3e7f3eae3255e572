#include "ul/eval.hpp"

#include <algorithm>
#include <climits>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "ul/container.hpp"
#include "ul/exec.hpp"

namespace ul {
namespace {

const ImageGrid* item_image(const Dataset& d, const QAItem& item) {
  return item.image_index >= 0 ? &d.images[item.image_index] : nullptr;
}

std::vector<int> reference_answer(const Dataset& d, const QAItem& item) {
  // the answer span without its closing end-of-sequence token
  std::vector<int> ref(item.seq.ids.begin() + item.seq.answer_start,
                       item.seq.ids.begin() + item.seq.answer_end);
  while (!ref.empty() && ref.back() == d.vocab.eos()) ref.pop_back();
  return ref;
}

double mean_rouge(ToyMLLM& m, const Dataset& d, const std::vector<int>& items) {
  std::vector<double> scores(items.size(), 0.0);
  exec::ordered_sample_reduce<double>(
      static_cast<int>(items.size()),
      [&](int i) {
        const QAItem& item = d.items[items[i]];
        std::vector<int> ref = reference_answer(d, item);
        std::vector<int> prompt = prompt_ids(item);
        int span = item.seq.answer_end - item.seq.answer_start;
        std::vector<int> out =
            generate_greedy(m, item_image(d, item), prompt, span, d.vocab.eos());
        std::vector<int> pred(out.begin() + prompt.size(), out.end());
        return rouge_l(pred, ref);
      },
      [&](int i, double&& v) { scores[i] = v; });
  double sum = 0.0;
  for (double v : scores) sum += v;
  return sum / items.size();
}

}  // namespace

double score_choice(ToyMLLM& m, const Dataset& d, const QAItem& item, int choice_index) {
  UL_CHECK(choice_index >= 0 && choice_index < static_cast<int>(item.choices.size()),
           "contract", "choice index out of range");
  TokenSequence seq = with_choice(item, item.choices[choice_index]);
  double lp = sequence_logprob(m, item_image(d, item), seq);
  return lp / (seq.answer_end - seq.answer_start);
}

int predict_choice(ToyMLLM& m, const Dataset& d, const QAItem& item) {
  UL_CHECK(!item.choices.empty(), "contract", "item has no choices");
  int best = 0;
  double best_score = score_choice(m, d, item, 0);
  for (int k = 1; k < static_cast<int>(item.choices.size()); ++k) {
    double s = score_choice(m, d, item, k);
    if (s > best_score) {  // strict: ties keep the lowest index
      best_score = s;
      best = k;
    }
  }
  return best;
}

double mc_accuracy(ToyMLLM& m, const Dataset& d, const std::vector<int>& items) {
  UL_CHECK(!items.empty(), "contract", "cannot score an empty item set");
  long long correct = 0;
  exec::ordered_sample_reduce<int>(
      static_cast<int>(items.size()),
      [&](int i) {
        const QAItem& item = d.items[items[i]];
        return predict_choice(m, d, item) == item.correct_index ? 1 : 0;
      },
      [&](int, int&& hit) { correct += hit; });
  return static_cast<double>(correct) / items.size();
}

double rouge_l(const std::vector<int>& prediction, const std::vector<int>& reference) {
  UL_CHECK(!reference.empty(), "contract", "reference must be nonempty");
  if (prediction.empty()) return 0.0;
  std::size_t np = prediction.size(), nr = reference.size();
  std::vector<std::vector<int>> lcs(np + 1, std::vector<int>(nr + 1, 0));
  for (std::size_t i = 1; i <= np; ++i)
    for (std::size_t j = 1; j <= nr; ++j)
      lcs[i][j] = prediction[i - 1] == reference[j - 1]
                      ? lcs[i - 1][j - 1] + 1
                      : std::max(lcs[i - 1][j], lcs[i][j - 1]);
  int l = lcs[np][nr];
  if (l == 0) return 0.0;
  double recall = static_cast<double>(l) / nr;
  double precision = static_cast<double>(l) / np;
  return 2.0 * recall * precision / (recall + precision);
}

const char* const kDimensionOrder[6] = {"forget_visual",  "forget_textual", "retain_visual",
                                        "retain_textual", "general_visual", "general_textual"};

EvalReport evaluate_all(ToyMLLM& m, const Dataset& d, const EvalGroups& groups) {
  const std::vector<int>* sets[6] = {&groups.forget_visual,  &groups.forget_textual,
                                     &groups.retain_visual,  &groups.retain_textual,
                                     &groups.general_visual, &groups.general_textual};
  EvalReport r;
  for (int i = 0; i < 6; ++i) {
    DimensionScore ds;
    ds.name = kDimensionOrder[i];
    ds.count = static_cast<int>(sets[i]->size());
    ds.present = ds.count > 0;
    if (ds.present) {
      ds.accuracy = mc_accuracy(m, d, *sets[i]);
      bool textual = ds.name.find("textual") != std::string::npos;
      if (textual) {
        ds.has_rouge = true;
        ds.rouge = mean_rouge(m, d, *sets[i]);
      }
    }
    r.dims.push_back(std::move(ds));
  }
  return r;
}

const DimensionScore& report_dim(const EvalReport& r, const std::string& name) {
  for (const auto& ds : r.dims)
    if (ds.name == name) return ds;
  fail("contract", "unknown report dimension: " + name);
}

void save_report_csv(const std::string& path, const EvalReport& r) {
  std::ostringstream out;
  out << "dimension,count,accuracy,rouge_l\n";
  char buf[256];
  for (const auto& ds : r.dims) {
    if (!ds.present) continue;
    if (ds.has_rouge)
      std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,%.6f\n", ds.name.c_str(), ds.count,
                    ds.accuracy, ds.rouge);
    else
      std::snprintf(buf, sizeof(buf), "%s,%d,%.6f,\n", ds.name.c_str(), ds.count, ds.accuracy);
    out << buf;
  }
  write_file_bytes(path, out.str());
}

void save_report_text(const std::string& path, const EvalReport& r) {
  std::ostringstream out;
  char buf[256];
  out << "dimension         count  accuracy  rouge_l\n";
  for (const auto& ds : r.dims) {
    if (!ds.present) {
      std::snprintf(buf, sizeof(buf), "%-17s %5s  %8s  %7s\n", ds.name.c_str(), "-", "absent",
                    "-");
    } else if (ds.has_rouge) {
      std::snprintf(buf, sizeof(buf), "%-17s %5d  %8.4f  %7.4f\n", ds.name.c_str(), ds.count,
                    ds.accuracy, ds.rouge);
    } else {
      std::snprintf(buf, sizeof(buf), "%-17s %5d  %8.4f  %7s\n", ds.name.c_str(), ds.count,
                    ds.accuracy, "-");
    }
    out << buf;
  }
  write_file_bytes(path, out.str());
}

void save_deltas_csv(const std::string& path, const EvalReport& vanilla, const EvalReport& after) {
  std::ostringstream out;
  out << "dimension,vanilla_accuracy,accuracy,delta\n";
  char buf[256];
  for (const auto& ds : after.dims) {
    const DimensionScore& v = report_dim(vanilla, ds.name);
    if (!ds.present || !v.present) continue;
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.6f\n", ds.name.c_str(), v.accuracy,
                  ds.accuracy, ds.accuracy - v.accuracy);
    out << buf;
  }
  write_file_bytes(path, out.str());
}

std::vector<TopCoord> top_deviated(const ParamSet& before, const ParamSet& after, long long n) {
  UL_CHECK(before.size() == after.size(), "contract", "parameter sets differ in size");
  UL_CHECK(n >= 0 && n <= static_cast<long long>(before.total_coords()), "contract",
           "top-n exceeds the coordinate count");
  struct Row {
    double dev;
    std::size_t param;
    std::size_t coord;
  };
  std::vector<Row> rows;
  rows.reserve(before.total_coords());
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& b = before.entry(i);
    const auto& a = after.entry(i);
    UL_CHECK(b.name == a.name && b.value.shape == a.value.shape, "contract",
             "parameter sets are not aligned");
    for (std::size_t k = 0; k < b.value.data.size(); ++k)
      rows.push_back({std::abs(a.value.data[k] - b.value.data[k]), i, k});
  }
  std::sort(rows.begin(), rows.end(), [&](const Row& x, const Row& y) {
    if (x.dev != y.dev) return x.dev > y.dev;
    const std::string& nx = before.entry(x.param).name;
    const std::string& ny = before.entry(y.param).name;
    if (nx != ny) return nx < ny;
    return x.coord < y.coord;
  });
  std::vector<TopCoord> out;
  for (long long i = 0; i < n; ++i)
    out.push_back({before.entry(rows[i].param).name, rows[i].coord, rows[i].dev});
  return out;
}

std::vector<DeviationGroup> deviation_heatmap(const ParamSet& before, const ParamSet& after,
                                              long long n) {
  std::vector<TopCoord> top = top_deviated(before, after, n);
  // all cells appear, zero counts included, layer order with the output last
  std::map<std::pair<int, std::string>, DeviationGroup> groups;
  for (std::size_t i = 0; i < before.size(); ++i) {
    ParamCell cell = classify_param_name(before.entry(i).name);
    int sort_layer = cell.layer < 0 ? INT_MAX : cell.layer;
    auto& g = groups[{sort_layer, cell.kind}];
    g.layer = cell.layer;
    g.kind = cell.kind;
  }
  for (const auto& tc : top) {
    ParamCell cell = classify_param_name(tc.name);
    int sort_layer = cell.layer < 0 ? INT_MAX : cell.layer;
    ++groups.at({sort_layer, cell.kind}).count;
  }
  std::vector<DeviationGroup> out;
  for (auto& [key, g] : groups) out.push_back(std::move(g));
  return out;
}

void save_heatmap_csv(const std::string& path, const std::vector<DeviationGroup>& rows) {
  std::ostringstream out;
  out << "layer_index,sublayer_kind,count\n";
  for (const auto& g : rows) out << g.layer << "," << g.kind << "," << g.count << "\n";
  write_file_bytes(path, out.str());
}

}  // namespace ul
