// SPDX-License-Identifier: Apache-2.0
#include "wjepa/masks.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace wjepa {

MaskGeometry mask_geometry_from_string(const std::string& s) {
  if (s == "random") return MaskGeometry::kRandom;
  if (s == "antenna") return MaskGeometry::kAntenna;
  if (s == "time") return MaskGeometry::kTime;
  if (s == "multiblock") return MaskGeometry::kMultiblock;
  throw std::invalid_argument("unknown mask geometry: " + s);
}

std::string to_string(MaskGeometry g) {
  switch (g) {
    case MaskGeometry::kRandom: return "random";
    case MaskGeometry::kAntenna: return "antenna";
    case MaskGeometry::kTime: return "time";
    case MaskGeometry::kMultiblock: return "multiblock";
  }
  return "?";
}

void resolve_patch(const MaskSpec& spec, int hl, int wl, int& pr, int& pc) {
  pr = spec.patch_rows;
  pc = spec.patch_cols;
  if (pr <= 0 || pc <= 0) {
    switch (spec.geometry) {
      case MaskGeometry::kRandom:
      case MaskGeometry::kMultiblock:
        if (pr <= 0) pr = 2;
        if (pc <= 0) pc = 1;
        break;
      case MaskGeometry::kAntenna:
        if (pr <= 0) pr = 2;
        if (pc <= 0) pc = wl;  // full width
        break;
      case MaskGeometry::kTime:
        if (pr <= 0) pr = hl;  // full height
        if (pc <= 0) pc = 1;
        break;
    }
  }
  if (pr > hl || pc > wl)
    throw std::invalid_argument("mask patch does not fit latent grid");
}

namespace {

void check_fraction(double f) {
  if (!(f > 0.0 && f < 1.0))
    throw std::invalid_argument("target_fraction must be in (0,1)");
}

void check_nonempty_context(const LatentMask& m) {
  if (m.visible_count() == 0)
    throw std::runtime_error("mask left no visible context");
}

// Stamps unit rectangles at random positions until the masked fraction
// reaches the target. Overlap is allowed; the loop stops at >= target, so
// the final fraction overshoots by at most one unit area.
LatentMask place_until(const MaskSpec& spec, int hl, int wl, int br, int bc,
                       Rng& rng) {
  check_fraction(spec.target_fraction);
  if (br > hl || bc > wl)
    throw std::invalid_argument("mask block does not fit latent grid");
  LatentMask m(hl, wl, 1);
  const int total = hl * wl;
  const int need = static_cast<int>(std::ceil(spec.target_fraction * total));
  int masked = 0;
  while (masked < need) {
    const int r0 = rng.uniform_int(hl - br + 1);
    const int c0 = rng.uniform_int(wl - bc + 1);
    for (int i = r0; i < r0 + br; ++i)
      for (int j = c0; j < c0 + bc; ++j) {
        uint8_t& cell = m.at(i, j);
        masked += (cell != 0);
        cell = 0;
      }
  }
  check_nonempty_context(m);
  return m;
}

}  // namespace

LatentMask gen_random_mask(const MaskSpec& spec, int hl, int wl, Rng& rng) {
  int pr, pc;
  resolve_patch(spec, hl, wl, pr, pc);
  return place_until(spec, hl, wl, pr, pc, rng);
}

LatentMask gen_multiblock_mask(const MaskSpec& spec, int hl, int wl, Rng& rng) {
  int pr, pc;
  resolve_patch(spec, hl, wl, pr, pc);
  // One block = a contiguous 2x2 arrangement of unit patches, clamped to
  // the grid when the doubled block would not fit.
  const int br = std::min(2 * pr, hl);
  const int bc = std::min(2 * pc, wl);
  return place_until(spec, hl, wl, br, bc, rng);
}

LatentMask gen_antenna_mask(const MaskSpec& spec, int hl, int wl, Rng& rng) {
  check_fraction(spec.target_fraction);
  int pr, pc;
  resolve_patch(spec, hl, wl, pr, pc);
  if (hl % pr != 0)
    throw std::invalid_argument("latent height not divisible by band height");
  const int bands = hl / pr;
  int k = static_cast<int>(std::lround(spec.target_fraction * bands));
  if (k < 1) k = 1;
  if (k >= bands)
    throw std::invalid_argument("antenna mask would occlude every band");

  // k distinct bands, uniform without replacement.
  std::vector<int> idx(bands);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < k; ++i) {
    const int j = i + rng.uniform_int(bands - i);
    std::swap(idx[i], idx[j]);
  }
  LatentMask m(hl, wl, 1);
  for (int b = 0; b < k; ++b)
    for (int i = idx[b] * pr; i < (idx[b] + 1) * pr; ++i)
      for (int j = 0; j < wl; ++j) m.at(i, j) = 0;
  return m;
}

LatentMask gen_time_mask(const MaskSpec& spec, int hl, int wl, Rng& rng) {
  check_fraction(spec.target_fraction);
  int k = static_cast<int>(std::lround(spec.target_fraction * wl));
  if (k < 1) k = 1;
  if (k >= wl)
    throw std::invalid_argument("time mask would occlude every column");

  LatentMask m(hl, wl, 1);
  if (spec.time_scattered) {
    std::vector<int> idx(wl);
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < k; ++i) {
      const int j = i + rng.uniform_int(wl - i);
      std::swap(idx[i], idx[j]);
    }
    for (int i = 0; i < k; ++i)
      for (int r = 0; r < hl; ++r) m.at(r, idx[i]) = 0;
  } else {
    const int start = rng.uniform_int(wl - k + 1);
    for (int j = start; j < start + k; ++j)
      for (int r = 0; r < hl; ++r) m.at(r, j) = 0;
  }
  return m;
}

LatentMask gen_mask(const MaskSpec& spec, int hl, int wl, Rng& rng) {
  switch (spec.geometry) {
    case MaskGeometry::kRandom: return gen_random_mask(spec, hl, wl, rng);
    case MaskGeometry::kAntenna: return gen_antenna_mask(spec, hl, wl, rng);
    case MaskGeometry::kTime: return gen_time_mask(spec, hl, wl, rng);
    case MaskGeometry::kMultiblock:
      return gen_multiblock_mask(spec, hl, wl, rng);
  }
  throw std::invalid_argument("unknown mask geometry");
}

LatentMask gen_mask(const MaskSpec& spec, int hl, int wl) {
  Rng rng(spec.seed);
  return gen_mask(spec, hl, wl, rng);
}

LatentMask upsample_mask(const LatentMask& m, int stride) {
  if (stride < 1) throw std::invalid_argument("stride must be >= 1");
  LatentMask out(m.h * stride, m.w * stride, 1);
  for (int i = 0; i < out.h; ++i)
    for (int j = 0; j < out.w; ++j)
      out.at(i, j) = m.at(i / stride, j / stride);
  return out;
}

LatentMask adapt_mask_to_layer(const LatentMask& m, int layer_h, int layer_w) {
  if (layer_h < 1 || layer_w < 1)
    throw std::invalid_argument("layer dims must be >= 1");
  LatentMask out(layer_h, layer_w, 1);
  auto map_index = [](int li, int layer_dim, int mask_dim) {
    if (layer_dim >= mask_dim) {
      if (layer_dim % mask_dim != 0)
        throw std::invalid_argument(
            "layer dim is not an integer multiple of the latent dim");
      return li / (layer_dim / mask_dim);
    }
    if (mask_dim % layer_dim != 0)
      throw std::invalid_argument(
          "latent dim is not an integer multiple of the layer dim");
    return li * (mask_dim / layer_dim);
  };
  for (int i = 0; i < layer_h; ++i) {
    const int mi = map_index(i, layer_h, m.h);
    for (int j = 0; j < layer_w; ++j) out.at(i, j) = m.at(mi, map_index(j, layer_w, m.w));
  }
  return out;
}

}  // namespace wjepa
