// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "wjepa/encoder.hpp"
#include "wjepa/errors.hpp"
#include "wjepa/grid.hpp"
#include "wjepa/masks.hpp"
#include "wjepa/net.hpp"

namespace wjepa {

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double base_lr = 1e-3;
  double weight_decay = 0.05;
  double tau0 = 0.996, tau1 = 1.0;
  double clip_norm = 0.0;  // 0 = no clipping
  MaskSpec mask;
  uint64_t seed = 0;
  std::string arch = "wjcnn32";
  int upsample_factor = 0;  // 0 = auto (window / antennas)
  std::string precision = "float32";

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (tau0 < 0.0 || tau0 > 1.0 || tau1 < 0.0 || tau1 > 1.0)
      throw ConfigError("tau endpoints must lie in [0,1]");
    if (precision != "float32" && precision != "float64")
      throw ConfigError("precision must be float32 or float64");
  }
};

struct LossReport {
  int64_t step = 0;  // 1-based
  int epoch = 0;     // 1-based
  double loss = 0.0;
  int64_t masked_cells = 0;  // summed over the batch
  double tau = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

// L = (1/|M|) sum_{(i,j) in M} ||yhat_ij - y_ij||^2, channels summed,
// masked cells averaged; batch entries are averaged.
template <typename T>
double masked_l2_loss(const Tensor4<T>& yhat, const Tensor4<T>& y,
                      const std::vector<LatentMask>& masks,
                      Tensor4<T>* grad_yhat = nullptr) {
  if (!yhat.same_shape(y)) throw std::invalid_argument("masked_l2_loss: shape mismatch");
  if (static_cast<int>(masks.size()) != yhat.n)
    throw std::invalid_argument("masked_l2_loss: one mask per sample");
  if (grad_yhat) *grad_yhat = Tensor4<T>(yhat.n, yhat.c, yhat.h, yhat.w);

  const int plane = yhat.h * yhat.w;
  double total = 0.0;
  for (int n = 0; n < yhat.n; ++n) {
    if (masks[n].h != yhat.h || masks[n].w != yhat.w)
      throw std::invalid_argument("masked_l2_loss: mask dims mismatch");
    const int mcount = masks[n].masked_count();
    if (mcount == 0)
      throw std::invalid_argument("masked_l2_loss: empty masked set");
    const uint8_t* m = masks[n].v.data();
    double acc = 0.0;
    for (int c = 0; c < yhat.c; ++c) {
      const T* a = yhat.channel(n, c);
      const T* b = y.channel(n, c);
      for (int i = 0; i < plane; ++i) {
        if (m[i]) continue;
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        acc += d * d;
      }
    }
    total += acc / mcount;
    if (grad_yhat) {
      const T scale = static_cast<T>(2.0 / (static_cast<double>(mcount) * yhat.n));
      for (int c = 0; c < yhat.c; ++c) {
        const T* a = yhat.channel(n, c);
        const T* b = y.channel(n, c);
        T* g = grad_yhat->channel(n, c);
        for (int i = 0; i < plane; ++i) g[i] = m[i] ? T(0) : scale * (a[i] - b[i]);
      }
    }
  }
  return total / yhat.n;
}

// Cosine ramp of the teacher momentum from tau0 to tau1; endpoint-exact and
// nondecreasing.
inline double momentum_schedule(int64_t step, int64_t total_steps,
                                double tau0 = 0.996, double tau1 = 1.0) {
  if (total_steps <= 0) throw std::invalid_argument("total_steps must be > 0");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("step out of range");
  const double x = static_cast<double>(step) / static_cast<double>(total_steps);
  return tau1 - (tau1 - tau0) * (1.0 + std::cos(M_PI * x)) / 2.0;
}

// Cosine decay from base_lr to 0.
inline double lr_schedule(int64_t step, int64_t total_steps, double base_lr) {
  if (total_steps <= 0) throw std::invalid_argument("total_steps must be > 0");
  if (step < 0 || step > total_steps)
    throw std::invalid_argument("step out of range");
  const double x = static_cast<double>(step) / static_cast<double>(total_steps);
  return base_lr * (1.0 + std::cos(M_PI * x)) / 2.0;
}

// teacher <- tau * teacher + (1 - tau) * student, elementwise over the
// learnable tensors. The teacher is never touched by gradient descent.
template <typename T>
void ema_update(Net<T>& teacher, const Net<T>& student, double tau) {
  if (teacher.params.size() != student.params.size())
    throw std::invalid_argument("ema_update: layer count mismatch");
  for (size_t i = 0; i < teacher.params.size(); ++i) {
    auto blend = [tau](std::vector<T>& t, const std::vector<T>& s) {
      if (t.size() != s.size())
        throw std::invalid_argument("ema_update: tensor shape mismatch");
      for (size_t k = 0; k < t.size(); ++k)
        t[k] = static_cast<T>(tau * static_cast<double>(t[k]) +
                              (1.0 - tau) * static_cast<double>(s[k]));
    };
    blend(teacher.params[i].w, student.params[i].w);
    blend(teacher.params[i].gamma, student.params[i].gamma);
    blend(teacher.params[i].beta, student.params[i].beta);
  }
}

// AdamW with decoupled weight decay: p <- p(1 - lr*wd) - lr * mhat/(sqrt(vhat)+eps).
template <typename T>
struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 0.0;
  int64_t step = 0;
  std::vector<std::vector<T>> m, v;

  void update(const std::vector<std::vector<T>*>& params,
              const std::vector<const std::vector<T>*>& grads, double lr) {
    if (params.size() != grads.size())
      throw std::invalid_argument("AdamW: params/grads mismatch");
    if (m.empty()) {
      m.resize(params.size());
      v.resize(params.size());
      for (size_t i = 0; i < params.size(); ++i) {
        m[i].assign(params[i]->size(), T(0));
        v[i].assign(params[i]->size(), T(0));
      }
    }
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (size_t i = 0; i < params.size(); ++i) {
      std::vector<T>& p = *params[i];
      const std::vector<T>& g = *grads[i];
      if (p.size() != g.size())
        throw std::invalid_argument("AdamW: gradient shape mismatch");
      for (size_t k = 0; k < p.size(); ++k) {
        const double gk = static_cast<double>(g[k]);
        const double mk = beta1 * static_cast<double>(m[i][k]) + (1.0 - beta1) * gk;
        const double vk =
            beta2 * static_cast<double>(v[i][k]) + (1.0 - beta2) * gk * gk;
        m[i][k] = static_cast<T>(mk);
        v[i][k] = static_cast<T>(vk);
        const double mhat = mk / bc1;
        const double vhat = vk / bc2;
        double pk = static_cast<double>(p[k]);
        pk -= lr * weight_decay * pk;
        pk -= lr * mhat / (std::sqrt(vhat) + eps);
        p[k] = static_cast<T>(pk);
      }
    }
  }
};

// Student encoder, predictor, learnable mask token and the EMA teacher.
template <typename T>
struct JepaModel {
  Net<T> student;
  Net<T> predictor;
  std::vector<T> token;
  Net<T> teacher;

  int latent_channels() const { return student.out_channels(); }
  int total_stride() const { return student.total_stride(); }

  std::vector<std::vector<T>*> trainable() {
    std::vector<std::vector<T>*> out;
    student.visit_trainable([&](std::vector<T>& t) { out.push_back(&t); });
    predictor.visit_trainable([&](std::vector<T>& t) { out.push_back(&t); });
    out.push_back(&token);
    return out;
  }
};

// Mask token init: iid normal, mean 0, std 0.02.
template <typename T>
JepaModel<T> make_jepa_model(const std::string& arch, uint64_t seed) {
  JepaModel<T> model;
  Rng enc_rng(derive_seed(seed, 0));
  Rng pred_rng(derive_seed(seed, 1));
  Rng tok_rng(derive_seed(seed, 2));
  model.student = make_encoder<T>(arch, enc_rng);
  model.predictor = make_predictor<T>(model.student.out_channels(), pred_rng);
  model.token.resize(model.student.out_channels());
  for (auto& z : model.token) z = static_cast<T>(tok_rng.normal(0.0, 0.02));
  model.teacher = model.student;  // same init, independent state afterwards
  return model;
}

template <typename T>
struct StepResult {
  double loss = 0.0;
  int64_t masked_cells = 0;
};

// One training iteration over a prepared grid batch with per-sample latent
// masks: masked student forward, token insertion, prediction, dense teacher
// targets, masked L2 loss, AdamW update of (theta, phi, z), then the EMA
// teacher update at the supplied momentum.
template <typename T>
StepResult<T> train_step(JepaModel<T>& model, AdamW<T>& opt,
                         const Tensor4<T>& grid_batch,
                         const std::vector<LatentMask>& masks, double lr,
                         double tau, double clip_norm = 0.0) {
  const int stride = model.total_stride();
  StepResult<T> res;
  for (const auto& m : masks) res.masked_cells += m.masked_count();

  // x~ = x (.) M at input resolution
  Tensor4<T> masked_input = grid_batch;
  for (int n = 0; n < grid_batch.n; ++n) {
    const LatentMask input_mask = upsample_mask(masks[n], stride);
    if (input_mask.h != grid_batch.h || input_mask.w != grid_batch.w)
      throw std::invalid_argument("mask/input dimensions incompatible");
    detail::apply_mask_sample(masked_input, n, input_mask);
  }

  Tape<T> tape_s, tape_p;
  Tensor4<T> h = sparse_forward(model.student, masked_input, masks, true, &tape_s);
  Tensor4<T> htilde = insert_mask_token(h, masks, model.token);
  Tensor4<T> yhat = dense_forward(model.predictor, htilde, true, &tape_p);
  Tensor4<T> y = dense_forward(model.teacher, grid_batch, true);  // no tape

  Tensor4<T> grad_yhat;
  res.loss = masked_l2_loss(yhat, y, masks, &grad_yhat);
  if (!std::isfinite(res.loss))
    throw NumericalError("training loss is not finite");

  Tensor4<T> grad_htilde;
  Grads<T> gpred = backward(model.predictor, tape_p, grad_yhat, &grad_htilde);

  Tensor4<T> grad_h(h.n, h.c, h.h, h.w);
  std::vector<T> grad_token(model.token.size(), T(0));
  insert_mask_token_backward(grad_htilde, masks, grad_h, grad_token);

  Grads<T> gstud = backward(model.student, tape_s, grad_h);

  std::vector<std::vector<T>*> params = model.trainable();
  std::vector<const std::vector<T>*> grads;
  for (auto& lp : gstud) {
    if (!lp.w.empty()) grads.push_back(&lp.w);
    if (!lp.gamma.empty()) grads.push_back(&lp.gamma);
    if (!lp.beta.empty()) grads.push_back(&lp.beta);
  }
  for (auto& lp : gpred) {
    if (!lp.w.empty()) grads.push_back(&lp.w);
    if (!lp.gamma.empty()) grads.push_back(&lp.gamma);
    if (!lp.beta.empty()) grads.push_back(&lp.beta);
  }
  grads.push_back(&grad_token);

  std::vector<std::vector<T>> scaled;  // storage when clipping rescales
  if (clip_norm > 0.0) {
    double sq = 0.0;
    for (const auto* g : grads)
      for (T x : *g) sq += static_cast<double>(x) * static_cast<double>(x);
    const double norm = std::sqrt(sq);
    if (norm > clip_norm) {
      const double s = clip_norm / norm;
      scaled.reserve(grads.size());
      for (const auto* g : grads) {
        scaled.push_back(*g);
        for (T& x : scaled.back()) x = static_cast<T>(static_cast<double>(x) * s);
      }
      for (size_t i = 0; i < grads.size(); ++i) grads[i] = &scaled[i];
    }
  }

  opt.update(params, grads, lr);
  ema_update(model.teacher, model.student, tau);
  return res;
}

// Full pretraining loop; defined in pretrain.cpp (needs dataset/checkpoint IO).
struct Dataset;  // io.hpp
struct PretrainResult {
  int64_t steps = 0;
  double first_loss = 0.0, last_loss = 0.0;
};
PretrainResult pretrain(const TrainConfig& cfg, const Dataset& data,
                        const std::string& checkpoint_dir,
                        const std::string& metrics_csv);

}  // namespace wjepa
