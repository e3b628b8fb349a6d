// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wjepa/tensor.hpp"

namespace wjepa {

constexpr int kIQChannels = 2;  // I and Q

// One multi-antenna capture. data is laid out (2, A, N): all I rows first,
// then all Q rows, row-major within a channel.
struct IQRecording {
  int antennas = 0;
  int64_t samples_per_antenna = 0;
  std::vector<float> data;
  double sample_rate = 0.0;  // metadata only
  int mod_label = -1;        // -1 = unlabeled
  int aoa_label = -1;

  float& at(int ch, int ant, int64_t t) {
    return data[(static_cast<size_t>(ch) * antennas + ant) * samples_per_antenna + t];
  }
  float at(int ch, int ant, int64_t t) const {
    return data[(static_cast<size_t>(ch) * antennas + ant) * samples_per_antenna + t];
  }

  // Throws if the buffer size is inconsistent or any value is non-finite.
  void validate() const;
};

// One training window, tensor shape (1, 2, A, T).
struct IQSample {
  Tensor4<float> x;
  int mod_label = -1;
  int aoa_label = -1;

  int antennas() const { return x.h; }
  int window() const { return x.w; }
};

// Upsampled antenna-time grid, shape (1, 2, A*F, T).
using GridTensor = Tensor4<float>;

// Cuts a recording into windows of `window` samples every `stride` samples.
// Returns floor((N - window)/stride) + 1 windows; labels are copied.
std::vector<IQSample> segment_recording(const IQRecording& rec, int window,
                                        int stride);

// x <- x / max|x|. Throws std::invalid_argument on an all-zero input.
IQSample unit_max_normalize(const IQSample& s);
void unit_max_normalize_inplace(Tensor4<float>& x);

// Row-replication upsampling along the antenna axis:
// out[c, i, t] = in[c, floor(i/factor), t].
GridTensor upsample_antennas(const IQSample& s, int factor);
GridTensor upsample_antennas(const Tensor4<float>& x, int factor);

// Inverse of upsample_antennas for replicated grids (takes every factor-th row).
Tensor4<float> downsample_antennas(const GridTensor& g, int factor);

}  // namespace wjepa
