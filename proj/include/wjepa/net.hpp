// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "wjepa/masks.hpp"
#include "wjepa/parallel.hpp"
#include "wjepa/rng.hpp"
#include "wjepa/tensor.hpp"

namespace wjepa {

constexpr double kBnEps = 1e-5;
constexpr double kBnMomentum = 0.1;

enum class LayerKind {
  kConv,
  kDepthwiseConv,
  kPointwiseConv,
  kMaxPool,
  kBatchNorm,
  kReLU
};

struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  int kh = 1, kw = 1;
  int stride = 1;
  int pad = 0;
  int in_ch = 0, out_ch = 0;

  bool has_weights() const {
    return kind == LayerKind::kConv || kind == LayerKind::kDepthwiseConv ||
           kind == LayerKind::kPointwiseConv;
  }
  size_t weight_count() const {
    switch (kind) {
      case LayerKind::kConv:
        return static_cast<size_t>(out_ch) * in_ch * kh * kw;
      case LayerKind::kDepthwiseConv:
        return static_cast<size_t>(in_ch) * kh * kw;
      case LayerKind::kPointwiseConv:
        return static_cast<size_t>(out_ch) * in_ch;
      default:
        return 0;
    }
  }
  void spatial_out(int h, int w, int& ho, int& wo) const {
    switch (kind) {
      case LayerKind::kConv:
      case LayerKind::kDepthwiseConv:
      case LayerKind::kMaxPool:
        ho = (h + 2 * pad - kh) / stride + 1;
        wo = (w + 2 * pad - kw) / stride + 1;
        break;
      default:
        ho = h;
        wo = w;
        break;
    }
  }
};

// Learnable tensors of one layer. Convolutions are bias-free (every conv in
// the supplied architectures is followed by a batchnorm).
template <typename T>
struct LayerParams {
  std::vector<T> w;            // conv kernels
  std::vector<T> gamma, beta;  // batchnorm affine
};

// Batchnorm running statistics; state, not parameters. The teacher keeps its
// own copy, independent of the student.
template <typename T>
struct NormState {
  std::vector<T> mean, var;
};

template <typename T>
using Grads = std::vector<LayerParams<T>>;

template <typename T>
struct Tape {
  bool recorded = false;
  bool sparse = false;
  bool training = true;
  std::vector<LatentMask> masks;       // per-sample latent masks (sparse only)
  std::vector<Tensor4<T>> act;         // act[0]=input, act[i+1]=output of layer i
  struct BnCtx {
    std::vector<T> mean, invstd;       // statistics used by the forward pass
    double count = 0;                  // positions per channel in the reduction
  };
  std::vector<BnCtx> bn;
  std::vector<std::vector<int32_t>> argmax;  // maxpool input plane indices
};

template <typename T>
struct Net {
  std::string arch;
  std::vector<LayerSpec> specs;
  std::vector<LayerParams<T>> params;
  std::vector<NormState<T>> norm;

  int total_stride() const {
    int s = 1;
    for (const auto& sp : specs) s *= sp.stride;
    return s;
  }
  int out_channels() const {
    int c = 0;
    for (const auto& sp : specs)
      if (sp.out_ch > 0) c = sp.out_ch;
    return c;
  }

  void allocate() {
    params.assign(specs.size(), {});
    norm.assign(specs.size(), {});
    for (size_t i = 0; i < specs.size(); ++i) {
      const LayerSpec& sp = specs[i];
      if (sp.has_weights()) params[i].w.assign(sp.weight_count(), T(0));
      if (sp.kind == LayerKind::kBatchNorm) {
        params[i].gamma.assign(sp.in_ch, T(1));
        params[i].beta.assign(sp.in_ch, T(0));
        norm[i].mean.assign(sp.in_ch, T(0));
        norm[i].var.assign(sp.in_ch, T(1));
      }
    }
  }

  // He-normal init for conv kernels; batchnorm starts at identity.
  void init(Rng& rng) {
    allocate();
    for (size_t i = 0; i < specs.size(); ++i) {
      const LayerSpec& sp = specs[i];
      if (!sp.has_weights()) continue;
      int fan_in = sp.in_ch * sp.kh * sp.kw;
      if (sp.kind == LayerKind::kDepthwiseConv) fan_in = sp.kh * sp.kw;
      const double stddev = std::sqrt(2.0 / fan_in);
      for (auto& x : params[i].w) x = static_cast<T>(rng.normal(0.0, stddev));
    }
  }

  template <typename Fn>
  void visit_trainable(Fn&& fn) {
    for (auto& p : params) {
      if (!p.w.empty()) fn(p.w);
      if (!p.gamma.empty()) fn(p.gamma);
      if (!p.beta.empty()) fn(p.beta);
    }
  }
};

template <typename T>
Grads<T> make_grads_like(const Net<T>& net) {
  Grads<T> g(net.params.size());
  for (size_t i = 0; i < net.params.size(); ++i) {
    g[i].w.assign(net.params[i].w.size(), T(0));
    g[i].gamma.assign(net.params[i].gamma.size(), T(0));
    g[i].beta.assign(net.params[i].beta.size(), T(0));
  }
  return g;
}

namespace detail {

using EMatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

// ---- forward kernels ------------------------------------------------------

template <typename T>
void conv_forward(const LayerSpec& sp, const std::vector<T>& w,
                  const Tensor4<T>& in, Tensor4<T>& out) {
  const int ho = out.h, wo = out.w;
  parallel_for(in.n, [&](int n) {
    for (int co = 0; co < sp.out_ch; ++co) {
      T* op = out.channel(n, co);
      for (int ci = 0; ci < sp.in_ch; ++ci) {
        const T* ip = in.channel(n, ci);
        const T* wk = w.data() + (static_cast<size_t>(co) * sp.in_ch + ci) * sp.kh * sp.kw;
        for (int kh = 0; kh < sp.kh; ++kh) {
          for (int kw = 0; kw < sp.kw; ++kw) {
            const T wv = wk[kh * sp.kw + kw];
            if (wv == T(0)) continue;
            for (int oh = 0; oh < ho; ++oh) {
              const int ih = oh * sp.stride - sp.pad + kh;
              if (ih < 0 || ih >= in.h) continue;
              const T* irow = ip + static_cast<size_t>(ih) * in.w;
              T* orow = op + static_cast<size_t>(oh) * wo;
              const int shift = kw - sp.pad;
              int ow0 = 0, ow1 = wo;
              // clamp to valid input columns: 0 <= ow*stride+shift < in.w
              while (ow0 < wo && ow0 * sp.stride + shift < 0) ++ow0;
              while (ow1 > ow0 && (ow1 - 1) * sp.stride + shift >= in.w) --ow1;
              if (sp.stride == 1) {
                const T* ir = irow + ow0 + shift;
                for (int ow = ow0; ow < ow1; ++ow) orow[ow] += wv * ir[ow - ow0];
              } else {
                for (int ow = ow0; ow < ow1; ++ow)
                  orow[ow] += wv * irow[ow * sp.stride + shift];
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
void depthwise_forward(const LayerSpec& sp, const std::vector<T>& w,
                       const Tensor4<T>& in, Tensor4<T>& out) {
  const int ho = out.h, wo = out.w;
  parallel_for(in.n * sp.in_ch, [&](int idx) {
    const int n = idx / sp.in_ch, c = idx % sp.in_ch;
    const T* ip = in.channel(n, c);
    T* op = out.channel(n, c);
    const T* wk = w.data() + static_cast<size_t>(c) * sp.kh * sp.kw;
    for (int kh = 0; kh < sp.kh; ++kh) {
      for (int kw = 0; kw < sp.kw; ++kw) {
        const T wv = wk[kh * sp.kw + kw];
        for (int oh = 0; oh < ho; ++oh) {
          const int ih = oh * sp.stride - sp.pad + kh;
          if (ih < 0 || ih >= in.h) continue;
          const T* irow = ip + static_cast<size_t>(ih) * in.w;
          T* orow = op + static_cast<size_t>(oh) * wo;
          const int shift = kw - sp.pad;
          int ow0 = 0, ow1 = wo;
          while (ow0 < wo && ow0 * sp.stride + shift < 0) ++ow0;
          while (ow1 > ow0 && (ow1 - 1) * sp.stride + shift >= in.w) --ow1;
          if (sp.stride == 1) {
            const T* ir = irow + ow0 + shift;
            for (int ow = ow0; ow < ow1; ++ow) orow[ow] += wv * ir[ow - ow0];
          } else {
            for (int ow = ow0; ow < ow1; ++ow)
              orow[ow] += wv * irow[ow * sp.stride + shift];
          }
        }
      }
    }
  });
}

template <typename T>
void pointwise_forward(const LayerSpec& sp, const std::vector<T>& w,
                       const Tensor4<T>& in, Tensor4<T>& out) {
  const int hw = in.h * in.w;
  ECMap<T> W(w.data(), sp.out_ch, sp.in_ch);
  parallel_for(in.n, [&](int n) {
    ECMap<T> X(in.channel(n, 0), sp.in_ch, hw);
    EMap<T> Y(out.channel(n, 0), sp.out_ch, hw);
    Y.noalias() = W * X;
  });
}

template <typename T>
void maxpool_forward(const LayerSpec& sp, const Tensor4<T>& in, Tensor4<T>& out,
                     std::vector<int32_t>& argmax) {
  const int ho = out.h, wo = out.w, C = in.c;
  argmax.assign(out.size(), -1);
  parallel_for(in.n * C, [&](int idx) {
    const int n = idx / C, c = idx % C;
    const T* ip = in.channel(n, c);
    T* op = out.channel(n, c);
    int32_t* am = argmax.data() + (static_cast<size_t>(n) * C + c) * ho * wo;
    for (int oh = 0; oh < ho; ++oh) {
      for (int ow = 0; ow < wo; ++ow) {
        T best = T(0);
        int32_t bi = -1;
        for (int kh = 0; kh < sp.kh; ++kh) {
          const int ih = oh * sp.stride - sp.pad + kh;
          if (ih < 0 || ih >= in.h) continue;
          for (int kw = 0; kw < sp.kw; ++kw) {
            const int iw = ow * sp.stride - sp.pad + kw;
            if (iw < 0 || iw >= in.w) continue;
            const T v = ip[static_cast<size_t>(ih) * in.w + iw];
            if (bi < 0 || v > best) {  // first max in scan order wins ties
              best = v;
              bi = ih * in.w + iw;
            }
          }
        }
        op[static_cast<size_t>(oh) * wo + ow] = best;
        am[static_cast<size_t>(oh) * wo + ow] = bi;
      }
    }
  });
}

template <typename T>
void relu_forward(const Tensor4<T>& in, Tensor4<T>& out) {
  const size_t sz = in.size();
  out.v.resize(sz);
  const size_t chunk = (sz + 7) / 8;
  parallel_for(8, [&](int k) {
    const size_t b = k * chunk, e = std::min(sz, b + chunk);
    for (size_t i = b; i < e; ++i) out.v[i] = in.v[i] > T(0) ? in.v[i] : T(0);
  });
}

// Set masked positions of every channel to zero. `mask` is at (t.h, t.w).
template <typename T>
void apply_mask_sample(Tensor4<T>& t, int n, const LatentMask& mask) {
  for (int c = 0; c < t.c; ++c) {
    T* p = t.channel(n, c);
    const uint8_t* m = mask.v.data();
    const size_t sz = static_cast<size_t>(t.h) * t.w;
    for (size_t i = 0; i < sz; ++i)
      if (!m[i]) p[i] = T(0);
  }
}

}  // namespace detail

// Per-channel batch normalization over the unmasked positions of a batch.
// masks[n] must match (x.h, x.w); pass an empty vector for the dense variant.
// Training mode computes batch statistics over unmasked positions and updates
// the running state from them; eval mode applies the running statistics.
// Masked positions are written as exact zeros.
template <typename T>
Tensor4<T> masked_batchnorm(const Tensor4<T>& x,
                            const std::vector<LatentMask>& masks,
                            const std::vector<T>& gamma,
                            const std::vector<T>& beta, NormState<T>& state,
                            bool training,
                            typename Tape<T>::BnCtx* ctx = nullptr) {
  const int C = x.c, plane = x.h * x.w;
  const bool sparse = !masks.empty();
  if (sparse && static_cast<int>(masks.size()) != x.n)
    throw std::invalid_argument("masked_batchnorm: one mask per sample required");
  if (static_cast<int>(gamma.size()) != C)
    throw std::invalid_argument("masked_batchnorm: channel mismatch");

  Tensor4<T> y(x.n, x.c, x.h, x.w);
  std::vector<T> mean(C), invstd(C);
  double count = 0;

  if (training) {
    if (sparse) {
      for (const auto& m : masks) count += m.visible_count();
    } else {
      count = static_cast<double>(x.n) * plane;
    }
    if (count <= 0)
      throw std::invalid_argument("masked_batchnorm: zero unmasked positions");

    // Per-channel sums are accumulated in double, samples in index order.
    std::vector<double> sum(C, 0.0), sumsq(C, 0.0);
    parallel_for(C, [&](int c) {
      double s = 0.0, ss = 0.0;
      for (int n = 0; n < x.n; ++n) {
        const T* p = x.channel(n, c);
        if (sparse) {
          const uint8_t* m = masks[n].v.data();
          for (int i = 0; i < plane; ++i)
            if (m[i]) {
              const double v = static_cast<double>(p[i]);
              s += v;
              ss += v * v;
            }
        } else {
          for (int i = 0; i < plane; ++i) {
            const double v = static_cast<double>(p[i]);
            s += v;
            ss += v * v;
          }
        }
      }
      sum[c] = s;
      sumsq[c] = ss;
    });
    for (int c = 0; c < C; ++c) {
      const double mu = sum[c] / count;
      const double var = std::max(0.0, sumsq[c] / count - mu * mu);
      mean[c] = static_cast<T>(mu);
      invstd[c] = static_cast<T>(1.0 / std::sqrt(var + kBnEps));
      state.mean[c] = static_cast<T>((1.0 - kBnMomentum) * state.mean[c] +
                                     kBnMomentum * mu);
      state.var[c] =
          static_cast<T>((1.0 - kBnMomentum) * state.var[c] + kBnMomentum * var);
    }
  } else {
    for (int c = 0; c < C; ++c) {
      mean[c] = state.mean[c];
      invstd[c] = static_cast<T>(
          1.0 / std::sqrt(static_cast<double>(state.var[c]) + kBnEps));
    }
    count = static_cast<double>(x.n) * plane;
  }

  parallel_for(x.n, [&](int n) {
    const uint8_t* m = sparse ? masks[n].v.data() : nullptr;
    for (int c = 0; c < C; ++c) {
      const T* p = x.channel(n, c);
      T* q = y.channel(n, c);
      const T mu = mean[c], is = invstd[c], g = gamma[c], b = beta[c];
      for (int i = 0; i < plane; ++i)
        q[i] = (m && !m[i]) ? T(0) : g * (p[i] - mu) * is + b;
    }
  });

  if (ctx) {
    ctx->mean = std::move(mean);
    ctx->invstd = std::move(invstd);
    ctx->count = count;
  }
  return y;
}

namespace detail {

// Shared driver for the dense and sparse forward passes. In sparse mode the
// latent mask is rescaled to each layer's output dims and reapplied after
// every non-normalization layer; normalization layers reduce over unmasked
// positions only and write zeros at masked ones.
template <typename T>
Tensor4<T> run_forward(Net<T>& net, const Tensor4<T>& x, bool training,
                       const std::vector<LatentMask>* masks, Tape<T>* tape) {
  if (net.specs.empty()) throw std::invalid_argument("empty network");
  const bool sparse = masks != nullptr;
  if (sparse && static_cast<int>(masks->size()) != x.n)
    throw std::invalid_argument("sparse_forward: one latent mask per sample");

  if (tape) {
    *tape = Tape<T>{};
    tape->recorded = true;
    tape->sparse = sparse;
    tape->training = training;
    if (sparse) tape->masks = *masks;
    tape->act.reserve(net.specs.size() + 1);
    tape->bn.resize(net.specs.size());
    tape->argmax.resize(net.specs.size());
  }

  Tensor4<T> cur = x;
  if (tape) tape->act.push_back(cur);

  std::vector<LatentMask> layer_masks;  // per-sample masks at current dims
  if (sparse) layer_masks.resize(x.n);

  for (size_t li = 0; li < net.specs.size(); ++li) {
    const LayerSpec& sp = net.specs[li];
    if (sp.in_ch > 0 && cur.c != sp.in_ch)
      throw std::invalid_argument("layer " + std::to_string(li) +
                                  ": channel mismatch");
    int ho, wo;
    sp.spatial_out(cur.h, cur.w, ho, wo);
    const int out_ch = sp.out_ch > 0 ? sp.out_ch : cur.c;
    Tensor4<T> out(cur.n, out_ch, ho, wo);

    if (sparse && sp.kind != LayerKind::kBatchNorm) {
      for (int n = 0; n < cur.n; ++n)
        layer_masks[n] = adapt_mask_to_layer((*masks)[n], ho, wo);
    }

    switch (sp.kind) {
      case LayerKind::kConv:
        conv_forward(sp, net.params[li].w, cur, out);
        break;
      case LayerKind::kDepthwiseConv:
        depthwise_forward(sp, net.params[li].w, cur, out);
        break;
      case LayerKind::kPointwiseConv:
        pointwise_forward(sp, net.params[li].w, cur, out);
        break;
      case LayerKind::kMaxPool: {
        std::vector<int32_t> argmax;
        maxpool_forward(sp, cur, out, argmax);
        if (tape) tape->argmax[li] = std::move(argmax);
        break;
      }
      case LayerKind::kReLU:
        relu_forward(cur, out);
        break;
      case LayerKind::kBatchNorm: {
        std::vector<LatentMask> bn_masks;
        if (sparse) {
          bn_masks.resize(cur.n);
          for (int n = 0; n < cur.n; ++n)
            bn_masks[n] = adapt_mask_to_layer((*masks)[n], cur.h, cur.w);
        }
        out = masked_batchnorm(cur, bn_masks, net.params[li].gamma,
                               net.params[li].beta, net.norm[li], training,
                               tape ? &tape->bn[li] : nullptr);
        break;
      }
    }

    if (sparse && sp.kind != LayerKind::kBatchNorm) {
      parallel_for(out.n, [&](int n) { apply_mask_sample(out, n, layer_masks[n]); });
    }

    cur = std::move(out);
    if (tape) tape->act.push_back(cur);
  }

  if (sparse && ((*masks)[0].h != cur.h || (*masks)[0].w != cur.w))
    throw std::invalid_argument(
        "latent mask dims do not match the encoder output");
  return cur;
}

}  // namespace detail

// Standard CNN forward, no masking.
template <typename T>
Tensor4<T> dense_forward(Net<T>& net, const Tensor4<T>& x, bool training,
                         Tape<T>* tape = nullptr) {
  return detail::run_forward(net, x, training, nullptr, tape);
}

// Masked forward: the caller supplies x_masked = x (.) upsample_mask(m, S).
template <typename T>
Tensor4<T> sparse_forward(Net<T>& net, const Tensor4<T>& x_masked,
                          const std::vector<LatentMask>& masks, bool training,
                          Tape<T>* tape = nullptr) {
  return detail::run_forward(net, x_masked, training, &masks, tape);
}

namespace detail {

template <typename T>
void conv_backward(const LayerSpec& sp, const std::vector<T>& w,
                   const Tensor4<T>& in, const Tensor4<T>& gout,
                   std::vector<T>& gw, Tensor4<T>& gin) {
  // per-sample weight-gradient buffers, reduced in sample order
  std::vector<std::vector<T>> partial(in.n);
  parallel_for(in.n, [&](int n) {
    partial[n].assign(w.size(), T(0));
    for (int co = 0; co < sp.out_ch; ++co) {
      const T* gp = gout.channel(n, co);
      for (int ci = 0; ci < sp.in_ch; ++ci) {
        const T* ip = in.channel(n, ci);
        T* gip = gin.channel(n, ci);
        const T* wk = w.data() + (static_cast<size_t>(co) * sp.in_ch + ci) * sp.kh * sp.kw;
        T* gwk = partial[n].data() + (static_cast<size_t>(co) * sp.in_ch + ci) * sp.kh * sp.kw;
        for (int kh = 0; kh < sp.kh; ++kh) {
          for (int kw = 0; kw < sp.kw; ++kw) {
            const T wv = wk[kh * sp.kw + kw];
            T acc = T(0);
            for (int oh = 0; oh < gout.h; ++oh) {
              const int ih = oh * sp.stride - sp.pad + kh;
              if (ih < 0 || ih >= in.h) continue;
              const T* irow = ip + static_cast<size_t>(ih) * in.w;
              T* girow = gip + static_cast<size_t>(ih) * in.w;
              const T* grow = gp + static_cast<size_t>(oh) * gout.w;
              const int shift = kw - sp.pad;
              int ow0 = 0, ow1 = gout.w;
              while (ow0 < gout.w && ow0 * sp.stride + shift < 0) ++ow0;
              while (ow1 > ow0 && (ow1 - 1) * sp.stride + shift >= in.w) --ow1;
              for (int ow = ow0; ow < ow1; ++ow) {
                const int iw = ow * sp.stride + shift;
                acc += grow[ow] * irow[iw];
                girow[iw] += wv * grow[ow];
              }
            }
            gwk[kh * sp.kw + kw] += acc;
          }
        }
      }
    }
  });
  for (int n = 0; n < in.n; ++n)
    for (size_t k = 0; k < gw.size(); ++k) gw[k] += partial[n][k];
}

template <typename T>
void depthwise_backward(const LayerSpec& sp, const std::vector<T>& w,
                        const Tensor4<T>& in, const Tensor4<T>& gout,
                        std::vector<T>& gw, Tensor4<T>& gin) {
  std::vector<std::vector<T>> partial(in.n);
  parallel_for(in.n, [&](int n) {
    partial[n].assign(w.size(), T(0));
    for (int c = 0; c < sp.in_ch; ++c) {
      const T* gp = gout.channel(n, c);
      const T* ip = in.channel(n, c);
      T* gip = gin.channel(n, c);
      const T* wk = w.data() + static_cast<size_t>(c) * sp.kh * sp.kw;
      T* gwk = partial[n].data() + static_cast<size_t>(c) * sp.kh * sp.kw;
      for (int kh = 0; kh < sp.kh; ++kh) {
        for (int kw = 0; kw < sp.kw; ++kw) {
          const T wv = wk[kh * sp.kw + kw];
          T acc = T(0);
          for (int oh = 0; oh < gout.h; ++oh) {
            const int ih = oh * sp.stride - sp.pad + kh;
            if (ih < 0 || ih >= in.h) continue;
            const T* irow = ip + static_cast<size_t>(ih) * in.w;
            T* girow = gip + static_cast<size_t>(ih) * in.w;
            const T* grow = gp + static_cast<size_t>(oh) * gout.w;
            const int shift = kw - sp.pad;
            int ow0 = 0, ow1 = gout.w;
            while (ow0 < gout.w && ow0 * sp.stride + shift < 0) ++ow0;
            while (ow1 > ow0 && (ow1 - 1) * sp.stride + shift >= in.w) --ow1;
            for (int ow = ow0; ow < ow1; ++ow) {
              const int iw = ow * sp.stride + shift;
              acc += grow[ow] * irow[iw];
              girow[iw] += wv * grow[ow];
            }
          }
          gwk[kh * sp.kw + kw] += acc;
        }
      }
    }
  });
  for (int n = 0; n < in.n; ++n)
    for (size_t k = 0; k < gw.size(); ++k) gw[k] += partial[n][k];
}

template <typename T>
void pointwise_backward(const LayerSpec& sp, const std::vector<T>& w,
                        const Tensor4<T>& in, const Tensor4<T>& gout,
                        std::vector<T>& gw, Tensor4<T>& gin) {
  const int hw = in.h * in.w;
  ECMap<T> W(w.data(), sp.out_ch, sp.in_ch);
  std::vector<EMat<T>> partial(in.n);
  parallel_for(in.n, [&](int n) {
    ECMap<T> X(in.channel(n, 0), sp.in_ch, hw);
    ECMap<T> G(gout.channel(n, 0), sp.out_ch, hw);
    EMap<T> GX(gin.channel(n, 0), sp.in_ch, hw);
    GX.noalias() = W.transpose() * G;
    partial[n].noalias() = G * X.transpose();
  });
  EMap<T> GW(gw.data(), sp.out_ch, sp.in_ch);
  for (int n = 0; n < in.n; ++n) GW += partial[n];
}

template <typename T>
void masked_batchnorm_backward(const LayerSpec& sp,
                               const typename Tape<T>::BnCtx& ctx,
                               const std::vector<T>& gamma,
                               const Tensor4<T>& in,
                               const std::vector<LatentMask>& masks,
                               bool training, const Tensor4<T>& gout,
                               std::vector<T>& ggamma, std::vector<T>& gbeta,
                               Tensor4<T>& gin) {
  const int C = sp.in_ch, plane = in.h * in.w;
  const bool sparse = !masks.empty();
  const double count = ctx.count;

  // dgamma / dbeta reductions, per channel (deterministic sample order).
  std::vector<double> sg(C, 0.0), sgx(C, 0.0);
  parallel_for(C, [&](int c) {
    const double mu = ctx.mean[c], is = ctx.invstd[c];
    double a = 0.0, b = 0.0;
    for (int n = 0; n < in.n; ++n) {
      const T* gp = gout.channel(n, c);
      const T* ip = in.channel(n, c);
      const uint8_t* m = sparse ? masks[n].v.data() : nullptr;
      for (int i = 0; i < plane; ++i) {
        if (m && !m[i]) continue;
        const double g = static_cast<double>(gp[i]);
        const double xh = (static_cast<double>(ip[i]) - mu) * is;
        a += g;
        b += g * xh;
      }
    }
    sg[c] = a;
    sgx[c] = b;
  });
  for (int c = 0; c < C; ++c) {
    gbeta[c] += static_cast<T>(sg[c]);
    ggamma[c] += static_cast<T>(sgx[c]);
  }

  parallel_for(in.n, [&](int n) {
    const uint8_t* m = sparse ? masks[n].v.data() : nullptr;
    for (int c = 0; c < C; ++c) {
      const double mu = ctx.mean[c], is = ctx.invstd[c];
      const double gam = static_cast<double>(gamma[c]);
      const T* gp = gout.channel(n, c);
      const T* ip = in.channel(n, c);
      T* q = gin.channel(n, c);
      if (training) {
        const double mg = sg[c] / count, mgx = sgx[c] / count;
        for (int i = 0; i < plane; ++i) {
          if (m && !m[i]) {
            q[i] = T(0);
            continue;
          }
          const double xh = (static_cast<double>(ip[i]) - mu) * is;
          q[i] = static_cast<T>(gam * is *
                                (static_cast<double>(gp[i]) - mg - xh * mgx));
        }
      } else {
        for (int i = 0; i < plane; ++i)
          q[i] = (m && !m[i]) ? T(0)
                              : static_cast<T>(gam * is * static_cast<double>(gp[i]));
      }
    }
  });
}

}  // namespace detail

// Reverse pass over a recorded forward. Returns parameter gradients; the
// gradient w.r.t. the network input is written to grad_input when given.
template <typename T>
Grads<T> backward(const Net<T>& net, const Tape<T>& tape,
                  const Tensor4<T>& grad_out, Tensor4<T>* grad_input = nullptr) {
  if (!tape.recorded) throw std::invalid_argument("backward before forward");
  if (tape.act.size() != net.specs.size() + 1)
    throw std::invalid_argument("tape does not match network");

  Grads<T> grads = make_grads_like(net);
  Tensor4<T> g = grad_out;

  for (int li = static_cast<int>(net.specs.size()) - 1; li >= 0; --li) {
    const LayerSpec& sp = net.specs[li];
    const Tensor4<T>& in = tape.act[li];
    const Tensor4<T>& out = tape.act[li + 1];
    if (!g.same_shape(out))
      throw std::invalid_argument("gradient shape mismatch at layer " +
                                  std::to_string(li));

    // Undo the post-layer mask multiplication first.
    if (tape.sparse && sp.kind != LayerKind::kBatchNorm) {
      parallel_for(g.n, [&](int n) {
        const LatentMask lm = adapt_mask_to_layer(tape.masks[n], g.h, g.w);
        detail::apply_mask_sample(g, n, lm);
      });
    }

    Tensor4<T> gin(in.n, in.c, in.h, in.w);
    switch (sp.kind) {
      case LayerKind::kConv:
        detail::conv_backward(sp, net.params[li].w, in, g, grads[li].w, gin);
        break;
      case LayerKind::kDepthwiseConv:
        detail::depthwise_backward(sp, net.params[li].w, in, g, grads[li].w, gin);
        break;
      case LayerKind::kPointwiseConv:
        detail::pointwise_backward(sp, net.params[li].w, in, g, grads[li].w, gin);
        break;
      case LayerKind::kMaxPool: {
        const std::vector<int32_t>& am = tape.argmax[li];
        const int plane_out = out.h * out.w, plane_in = in.h * in.w;
        parallel_for(in.n * in.c, [&](int idx) {
          const int n = idx / in.c, c = idx % in.c;
          const T* gp = g.channel(n, c);
          T* q = gin.v.data() + (static_cast<size_t>(n) * in.c + c) * plane_in;
          const int32_t* a =
              am.data() + (static_cast<size_t>(n) * in.c + c) * plane_out;
          for (int i = 0; i < plane_out; ++i)
            if (a[i] >= 0) q[a[i]] += gp[i];
        });
        break;
      }
      case LayerKind::kReLU: {
        const size_t sz = g.size();
        parallel_for(g.n, [&](int n) {
          const size_t per = sz / g.n;
          const T* o = out.v.data() + n * per;
          const T* gp = g.v.data() + n * per;
          T* q = gin.v.data() + n * per;
          for (size_t i = 0; i < per; ++i) q[i] = o[i] > T(0) ? gp[i] : T(0);
        });
        break;
      }
      case LayerKind::kBatchNorm: {
        std::vector<LatentMask> bn_masks;
        if (tape.sparse) {
          bn_masks.resize(in.n);
          for (int n = 0; n < in.n; ++n)
            bn_masks[n] = adapt_mask_to_layer(tape.masks[n], in.h, in.w);
        }
        detail::masked_batchnorm_backward(sp, tape.bn[li], net.params[li].gamma,
                                          in, bn_masks, tape.training, g,
                                          grads[li].gamma, grads[li].beta, gin);
        break;
      }
    }
    g = std::move(gin);
  }

  if (grad_input) *grad_input = std::move(g);
  return grads;
}

// h~[c, i, j] = token[c] at masked cells, h elsewhere.
template <typename T>
Tensor4<T> insert_mask_token(const Tensor4<T>& h,
                             const std::vector<LatentMask>& masks,
                             const std::vector<T>& token) {
  if (static_cast<int>(masks.size()) != h.n)
    throw std::invalid_argument("insert_mask_token: one mask per sample");
  if (static_cast<int>(token.size()) != h.c)
    throw std::invalid_argument("insert_mask_token: token length != channels");
  Tensor4<T> out = h;
  const int plane = h.h * h.w;
  for (int n = 0; n < h.n; ++n) {
    if (masks[n].h != h.h || masks[n].w != h.w)
      throw std::invalid_argument("insert_mask_token: mask dims mismatch");
    const uint8_t* m = masks[n].v.data();
    for (int c = 0; c < h.c; ++c) {
      T* p = out.channel(n, c);
      const T z = token[c];
      for (int i = 0; i < plane; ++i)
        if (!m[i]) p[i] = z;
    }
  }
  return out;
}

// Backward of insert_mask_token: gradients at masked cells accumulate into
// the token; gradients at visible cells pass through to h.
template <typename T>
void insert_mask_token_backward(const Tensor4<T>& grad_htilde,
                                const std::vector<LatentMask>& masks,
                                Tensor4<T>& grad_h, std::vector<T>& grad_token) {
  grad_h = grad_htilde;
  const int plane = grad_htilde.h * grad_htilde.w;
  for (int n = 0; n < grad_htilde.n; ++n) {
    const uint8_t* m = masks[n].v.data();
    for (int c = 0; c < grad_htilde.c; ++c) {
      T* p = grad_h.channel(n, c);
      T acc = T(0);
      for (int i = 0; i < plane; ++i)
        if (!m[i]) {
          acc += p[i];
          p[i] = T(0);
        }
      grad_token[c] += acc;
    }
  }
}

}  // namespace wjepa
