// SPDX-License-Identifier: Apache-2.0
#include "wjepa/grid.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace wjepa {

void IQRecording::validate() const {
  if (antennas < 1) throw std::invalid_argument("recording needs >= 1 antenna");
  const size_t expect =
      static_cast<size_t>(kIQChannels) * antennas * samples_per_antenna;
  if (data.size() != expect)
    throw std::invalid_argument("recording buffer size does not match A x N");
  for (float x : data)
    if (!std::isfinite(x))
      throw std::invalid_argument("recording contains non-finite values");
}

std::vector<IQSample> segment_recording(const IQRecording& rec, int window,
                                        int stride) {
  if (window < 1 || stride < 1)
    throw std::invalid_argument("window and stride must be >= 1");
  if (rec.samples_per_antenna < window)
    throw std::invalid_argument(
        "recording shorter than window (" +
        std::to_string(rec.samples_per_antenna) + " < " +
        std::to_string(window) + ")");

  const int64_t count = (rec.samples_per_antenna - window) / stride + 1;
  std::vector<IQSample> out;
  out.reserve(count);
  for (int64_t k = 0; k < count; ++k) {
    IQSample s;
    s.x = Tensor4<float>(1, kIQChannels, rec.antennas, window);
    const int64_t t0 = k * stride;
    for (int ch = 0; ch < kIQChannels; ++ch)
      for (int a = 0; a < rec.antennas; ++a)
        for (int t = 0; t < window; ++t)
          s.x.at(0, ch, a, t) = rec.at(ch, a, t0 + t);
    s.mod_label = rec.mod_label;
    s.aoa_label = rec.aoa_label;
    out.push_back(std::move(s));
  }
  return out;
}

void unit_max_normalize_inplace(Tensor4<float>& x) {
  float peak = 0.0f;
  for (float v : x.v) peak = std::max(peak, std::abs(v));
  if (peak == 0.0f)
    throw std::invalid_argument("unit_max_normalize: all-zero input");
  const float inv = 1.0f / peak;
  for (float& v : x.v) v *= inv;
}

IQSample unit_max_normalize(const IQSample& s) {
  IQSample out = s;
  unit_max_normalize_inplace(out.x);
  return out;
}

GridTensor upsample_antennas(const Tensor4<float>& x, int factor) {
  if (factor < 1) throw std::invalid_argument("upsample factor must be >= 1");
  GridTensor g(x.n, x.c, x.h * factor, x.w);
  for (int n = 0; n < x.n; ++n)
    for (int c = 0; c < x.c; ++c)
      for (int i = 0; i < g.h; ++i) {
        const float* src = x.channel(n, c) + static_cast<size_t>(i / factor) * x.w;
        float* dst = g.channel(n, c) + static_cast<size_t>(i) * g.w;
        std::copy(src, src + x.w, dst);
      }
  return g;
}

GridTensor upsample_antennas(const IQSample& s, int factor) {
  return upsample_antennas(s.x, factor);
}

Tensor4<float> downsample_antennas(const GridTensor& g, int factor) {
  if (factor < 1 || g.h % factor != 0)
    throw std::invalid_argument("grid height not divisible by factor");
  Tensor4<float> x(g.n, g.c, g.h / factor, g.w);
  for (int n = 0; n < g.n; ++n)
    for (int c = 0; c < g.c; ++c)
      for (int i = 0; i < x.h; ++i) {
        const float* src =
            g.channel(n, c) + static_cast<size_t>(i) * factor * g.w;
        float* dst = x.channel(n, c) + static_cast<size_t>(i) * x.w;
        std::copy(src, src + g.w, dst);
      }
  return x;
}

}  // namespace wjepa
