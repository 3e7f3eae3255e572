#pragma once

#include <cstdint>
#include <string>

#include "ul/datagen.hpp"
#include "ul/model.hpp"
#include "ul/unlearn.hpp"

namespace ul {

// One flat text file drives a whole run: `section.key = value` lines with
// `#` comments. Unknown keys are rejected so typos cannot silently fall back
// to defaults.

struct TrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 2e-3;
  std::string optimizer = "adam";
  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  DatagenConfig data;
  double forget_ratio = 0.10;
  TrainConfig vanilla;
  UnlearnConfig unlearn;
  std::uint64_t seed = 7;
  std::string out = "out";
  void validate() const;
};

// Parses config text; keys omitted keep their defaults.
RunConfig parse_config_text(const std::string& text);
RunConfig load_config(const std::string& path);

// The model config actually used by a run: image dims come from the data
// section and the vocabulary size from the generated vocabulary.
ModelConfig materialized_model(const RunConfig& cfg);

// Canonical serialization; parsing it reproduces the config exactly.
std::string config_text(const RunConfig& cfg);

}  // namespace ul
