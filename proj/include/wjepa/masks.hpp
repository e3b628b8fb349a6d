// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wjepa/rng.hpp"

namespace wjepa {

// Binary occupancy grid at latent resolution. 1 = visible, 0 = masked.
struct LatentMask {
  int h = 0, w = 0;
  std::vector<uint8_t> v;

  LatentMask() = default;
  LatentMask(int h_, int w_, uint8_t fill = 1)
      : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, fill) {}

  uint8_t& at(int i, int j) { return v[static_cast<size_t>(i) * w + j]; }
  uint8_t at(int i, int j) const { return v[static_cast<size_t>(i) * w + j]; }

  int masked_count() const {
    int k = 0;
    for (uint8_t b : v) k += (b == 0);
    return k;
  }
  int visible_count() const { return h * w - masked_count(); }
  double masked_fraction() const {
    return static_cast<double>(masked_count()) / (static_cast<double>(h) * w);
  }
  bool operator==(const LatentMask& o) const {
    return h == o.h && w == o.w && v == o.v;
  }
};

enum class MaskGeometry { kRandom, kAntenna, kTime, kMultiblock };

MaskGeometry mask_geometry_from_string(const std::string& s);
std::string to_string(MaskGeometry g);

struct MaskSpec {
  MaskGeometry geometry = MaskGeometry::kRandom;
  // Unit patch size in latent cells. <= 0 selects the geometry default
  // (input patch size divided by the encoder stride 32):
  // random/multiblock (2,1); antenna (2, full width); time (full height, 1).
  int patch_rows = 0;
  int patch_cols = 0;
  double target_fraction = 0.25;
  uint64_t seed = 0;
  // Optional variant: scatter the time-mask columns instead of one
  // contiguous run. Off by default.
  bool time_scattered = false;
};

// Resolved per-geometry default patch for a (hl, wl) latent grid.
void resolve_patch(const MaskSpec& spec, int hl, int wl, int& pr, int& pc);

LatentMask gen_random_mask(const MaskSpec& spec, int hl, int wl, Rng& rng);
LatentMask gen_antenna_mask(const MaskSpec& spec, int hl, int wl, Rng& rng);
LatentMask gen_time_mask(const MaskSpec& spec, int hl, int wl, Rng& rng);
LatentMask gen_multiblock_mask(const MaskSpec& spec, int hl, int wl, Rng& rng);

// Dispatch on spec.geometry; seeds a fresh RNG from spec.seed.
LatentMask gen_mask(const MaskSpec& spec, int hl, int wl);
LatentMask gen_mask(const MaskSpec& spec, int hl, int wl, Rng& rng);

// Nearest-neighbor expansion to input resolution (hl*stride, wl*stride).
LatentMask upsample_mask(const LatentMask& m, int stride);

// Nearest-neighbor rescale to a layer's spatial dims. Both dims must be
// integer multiples or divisors of the latent dims; masks are block-aligned
// to the latent grid, so the mapping is exact in both directions.
LatentMask adapt_mask_to_layer(const LatentMask& m, int layer_h, int layer_w);

}  // namespace wjepa
