// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "wjepa/net.hpp"

namespace wjepa {

// Named encoder presets:
//   wjcnn32 - stride-32 compact encoder: 3x3 stem conv (2->24) + 3x3 maxpool,
//             then three stages of depthwise-separable blocks (one stride-2
//             and one stride-1 block per stage, channels 48/96/192).
//   tiny4   - stride-4, 8-channel variant for fast tests.
std::vector<LayerSpec> make_encoder_spec(const std::string& arch);

// Predictor: three depthwise-separable blocks at constant channel count
// (depthwise 3x3 + pointwise 1x1 + batchnorm + relu), stride 1.
std::vector<LayerSpec> make_predictor_spec(int channels);

template <typename T>
Net<T> make_encoder(const std::string& arch, Rng& rng) {
  Net<T> net;
  net.arch = arch;
  net.specs = make_encoder_spec(arch);
  net.init(rng);
  return net;
}

template <typename T>
Net<T> make_predictor(int channels, Rng& rng) {
  Net<T> net;
  net.arch = "predictor";
  net.specs = make_predictor_spec(channels);
  net.init(rng);
  return net;
}

}  // namespace wjepa
