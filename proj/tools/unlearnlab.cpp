#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "ul/pipeline.hpp"

using namespace ul;

namespace {

struct Options {
  std::string command;
  std::string config_path;
  std::string out;
  long long seed = -1;
  std::string method;
  double ratio = -1.0;
};

RunConfig resolve_config(const Options& opt) {
  RunConfig cfg = opt.config_path.empty() ? RunConfig{} : load_config(opt.config_path);
  if (!opt.out.empty()) cfg.out = opt.out;
  if (opt.seed >= 0) cfg.seed = static_cast<std::uint64_t>(opt.seed);
  if (!opt.method.empty()) cfg.unlearn.method = parse_method(opt.method);
  if (opt.ratio >= 0.0) cfg.forget_ratio = opt.ratio;
  cfg.validate();
  return cfg;
}

int dispatch(const Options& opt) {
  RunConfig cfg = resolve_config(opt);
  if (opt.command == "finetune") {
    bool built = stage_dataset(cfg);
    bool trained = stage_finetune(cfg);
    std::printf("ok finetune%s out=%s\n", built || trained ? "" : " (up to date)",
                cfg.out.c_str());
  } else if (opt.command == "saliency") {
    bool ran = stage_saliency(cfg);
    std::printf("ok saliency%s out=%s\n", ran ? "" : " (up to date)", cfg.out.c_str());
  } else if (opt.command == "unlearn") {
    bool ran = stage_unlearn(cfg);
    std::printf("ok unlearn method=%s%s out=%s\n", method_str(cfg.unlearn.method).c_str(),
                ran ? "" : " (up to date)", cfg.out.c_str());
  } else if (opt.command == "eval") {
    bool ran = stage_eval(cfg);
    std::printf("ok eval%s out=%s\n", ran ? "" : " (up to date)", cfg.out.c_str());
  } else {
    std::vector<Method> methods{Method::ga, Method::ga_diff, Method::kl_min, Method::npo,
                                Method::mm_unlearner};
    std::vector<double> ratios{0.05, 0.10, 0.15};
    if (!opt.method.empty()) methods = {parse_method(opt.method)};
    if (opt.ratio >= 0.0) ratios = {opt.ratio};
    std::vector<SweepCell> cells = run_sweep(cfg, methods, ratios);
    int failed = 0;
    for (const auto& c : cells) {
      if (!c.failed) continue;
      ++failed;
      std::fprintf(stderr, "cell %s ratio=%g failed: class=%s %s\n",
                   method_str(c.method).c_str(), c.ratio, c.error_class.c_str(),
                   c.message.c_str());
    }
    if (failed > 0) {
      std::fprintf(stderr, "error: class=sweep_cell %d of %zu cells failed\n", failed,
                   cells.size());
      return 1;
    }
    std::printf("ok sweep cells=%zu out=%s\n", cells.size(), cfg.out.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective unlearning laboratory for a toy vision-language model"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "config file (flat section.key = value)");
    sub->add_option("--out", opt.out, "output directory override");
    sub->add_option("--seed", opt.seed, "root seed override");
    sub->add_option("--method", opt.method, "ga, ga_diff, kl_min, npo, or mm_unlearner");
    sub->add_option("--ratio", opt.ratio, "forget ratio override");
    sub->callback([&, sub] { opt.command = sub->get_name(); });
    return sub;
  };
  add_common(app.add_subcommand("finetune", "generate data and train the vanilla model"));
  add_common(app.add_subcommand("saliency", "compute saliency maps and the update mask"));
  add_common(app.add_subcommand("unlearn", "run an unlearning method"));
  add_common(app.add_subcommand("eval", "score checkpoints and export reports"));
  add_common(app.add_subcommand("sweep", "run method x ratio cells"));

  CLI11_PARSE(app, argc, argv);
  try {
    return dispatch(opt);
  } catch (const Error& e) {
    std::fprintf(stderr, "error: class=%s %s\n", e.cls().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: class=internal %s\n", e.what());
    return 1;
  }
}
