// SPDX-License-Identifier: Apache-2.0
#include "wjepa/encoder.hpp"

#include <stdexcept>

namespace wjepa {

namespace {

LayerSpec conv(int k, int s, int p, int ci, int co) {
  return {LayerKind::kConv, k, k, s, p, ci, co};
}
LayerSpec dw(int c, int s) {
  return {LayerKind::kDepthwiseConv, 3, 3, s, 1, c, c};
}
LayerSpec pw(int ci, int co) {
  return {LayerKind::kPointwiseConv, 1, 1, 1, 0, ci, co};
}
LayerSpec bn(int c) { return {LayerKind::kBatchNorm, 1, 1, 1, 0, c, c}; }
LayerSpec relu(int c) { return {LayerKind::kReLU, 1, 1, 1, 0, c, c}; }
LayerSpec maxpool(int k, int s, int p, int c) {
  return {LayerKind::kMaxPool, k, k, s, p, c, c};
}

void sep_block(std::vector<LayerSpec>& v, int ci, int co, int stride) {
  v.push_back(dw(ci, stride));
  v.push_back(bn(ci));
  v.push_back(relu(ci));
  v.push_back(pw(ci, co));
  v.push_back(bn(co));
  v.push_back(relu(co));
}

}  // namespace

std::vector<LayerSpec> make_encoder_spec(const std::string& arch) {
  std::vector<LayerSpec> v;
  if (arch == "wjcnn32") {
    v.push_back(conv(3, 2, 1, 2, 24));
    v.push_back(bn(24));
    v.push_back(relu(24));
    v.push_back(maxpool(3, 2, 1, 24));
    sep_block(v, 24, 48, 2);
    sep_block(v, 48, 48, 1);
    sep_block(v, 48, 96, 2);
    sep_block(v, 96, 96, 1);
    sep_block(v, 96, 192, 2);
    sep_block(v, 192, 192, 1);
    return v;
  }
  if (arch == "tiny4") {
    v.push_back(conv(3, 2, 1, 2, 8));
    v.push_back(bn(8));
    v.push_back(relu(8));
    v.push_back(maxpool(3, 2, 1, 8));
    sep_block(v, 8, 8, 1);
    return v;
  }
  throw std::invalid_argument("unknown encoder architecture: " + arch);
}

std::vector<LayerSpec> make_predictor_spec(int channels) {
  std::vector<LayerSpec> v;
  for (int i = 0; i < 3; ++i) {
    v.push_back(dw(channels, 1));
    v.push_back(pw(channels, channels));
    v.push_back(bn(channels));
    v.push_back(relu(channels));
  }
  return v;
}

}  // namespace wjepa
