// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "wjepa/eval.hpp"
#include "wjepa/jepa.hpp"
#include "wjepa/synthdata.hpp"

namespace wjepa {

constexpr int kConfigSchemaVersion = 1;

// Exit codes: 0 ok, 2 usage/config error, 3 data or I/O error,
// 4 numerical failure.
enum ExitCode { kOk = 0, kUsageError = 2, kIoFailure = 3, kNumericFailure = 4 };

struct SynthArgs {
  SyntheticDatasetSpec spec;
  std::string out;
};

struct PretrainArgs {
  TrainConfig cfg;
  std::string dataset;
  std::string out;
};

struct EvalArgs {
  std::string checkpoint;  // empty when init == "random"
  std::string dataset;
  std::string out;
  std::string init = "checkpoint";  // "checkpoint" | "random"
  std::string arch = "wjcnn32";     // for random init
  uint64_t seed = 0;
  ShotProtocol protocol;
  std::vector<std::string> methods = {"linear", "knn"};
  int knn_k = 5;
};

struct MaskVizArgs {
  std::string out;
  double fraction = 0.25;
  uint64_t seed = 0;
  int latent_h = 8, latent_w = 8;
  int stride = 32;
};

struct IngestArgs {
  std::string input;
  std::string meta;  // sidecar JSON; defaults to <input>.json
  std::string out;
  int window = 256;
  int stride = 0;  // 0 = window (non-overlapping)
  int tile_antennas = 0;
  double train_fraction = 1.0;
};

int cmd_synth(const SynthArgs& args);
int cmd_pretrain(const PretrainArgs& args);
int cmd_eval(const EvalArgs& args);
int cmd_mask_viz(const MaskVizArgs& args);
int cmd_ingest(const IngestArgs& args);

// JSON round trip for --config files; unknown keys are rejected.
SynthArgs synth_args_from_json(const std::string& path);
PretrainArgs pretrain_args_from_json(const std::string& path);
EvalArgs eval_args_from_json(const std::string& path);
MaskVizArgs mask_viz_args_from_json(const std::string& path);
IngestArgs ingest_args_from_json(const std::string& path);

}  // namespace wjepa
