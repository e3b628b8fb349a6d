// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "wjepa/rng.hpp"

namespace wjepa {

// Dense NCHW tensor. Row-major: index ((n*C + c)*H + h)*W + w.
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {}

  size_t size() const { return v.size(); }
  int plane() const { return h * w; }

  T& at(int in, int ic, int ih, int iw) {
    return v[((static_cast<size_t>(in) * c + ic) * h + ih) * w + iw];
  }
  T at(int in, int ic, int ih, int iw) const {
    return v[((static_cast<size_t>(in) * c + ic) * h + ih) * w + iw];
  }

  T* channel(int in, int ic) {
    return v.data() + (static_cast<size_t>(in) * c + ic) * h * w;
  }
  const T* channel(int in, int ic) const {
    return v.data() + (static_cast<size_t>(in) * c + ic) * h * w;
  }

  // View of one sample (shares no storage; copies).
  Tensor4<T> sample(int in) const {
    Tensor4<T> out(1, c, h, w);
    const size_t stride = static_cast<size_t>(c) * h * w;
    std::copy(v.begin() + in * stride, v.begin() + (in + 1) * stride,
              out.v.begin());
    return out;
  }

  void set_sample(int in, const Tensor4<T>& s) {
    assert(s.n == 1 && s.c == c && s.h == h && s.w == w);
    const size_t stride = static_cast<size_t>(c) * h * w;
    std::copy(s.v.begin(), s.v.end(), v.begin() + in * stride);
  }

  bool same_shape(const Tensor4<T>& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  void fill_normal(Rng& rng, double mean, double stddev) {
    for (auto& x : v) x = static_cast<T>(rng.normal(mean, stddev));
  }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(n, c, h, w);
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }
};

template <typename T>
double max_abs_diff(const Tensor4<T>& a, const Tensor4<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("shape mismatch");
  double m = 0.0;
  for (size_t i = 0; i < a.v.size(); ++i) {
    const double d = std::abs(static_cast<double>(a.v[i]) - static_cast<double>(b.v[i]));
    if (d > m) m = d;
  }
  return m;
}

}  // namespace wjepa
