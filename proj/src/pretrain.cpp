// SPDX-License-Identifier: Apache-2.0
#include <chrono>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "wjepa/errors.hpp"
#include "wjepa/io.hpp"
#include "wjepa/jepa.hpp"

namespace wjepa {

namespace {

// Mask seeds: one stream per drawn sample, base_seed XOR draw_index, so
// batch assembly can run ahead on workers without changing results.
constexpr uint64_t kMaskStream = 4;
constexpr uint64_t kShuffleStream = 100;

template <typename T>
Net<float> to_float_net(const Net<T>& net) {
  Net<float> out;
  out.arch = net.arch;
  out.specs = net.specs;
  out.params.resize(net.params.size());
  out.norm.resize(net.norm.size());
  auto cast = [](const std::vector<T>& src, std::vector<float>& dst) {
    dst.resize(src.size());
    for (size_t i = 0; i < src.size(); ++i) dst[i] = static_cast<float>(src[i]);
  };
  for (size_t i = 0; i < net.params.size(); ++i) {
    cast(net.params[i].w, out.params[i].w);
    cast(net.params[i].gamma, out.params[i].gamma);
    cast(net.params[i].beta, out.params[i].beta);
    cast(net.norm[i].mean, out.norm[i].mean);
    cast(net.norm[i].var, out.norm[i].var);
  }
  return out;
}

template <typename T>
PretrainResult pretrain_impl(const TrainConfig& cfg, const Dataset& data,
                             const std::string& checkpoint_dir,
                             const std::string& metrics_csv) {
  if (data.samples.empty()) throw ConfigError("pretrain: dataset is empty");

  int factor = cfg.upsample_factor;
  if (factor <= 0) {
    if (data.window % data.antennas != 0)
      throw ConfigError("window must be divisible by antenna count for the "
                        "square-grid default; pass an explicit factor");
    factor = data.window / data.antennas;
  }

  JepaModel<T> model = make_jepa_model<T>(cfg.arch, cfg.seed);
  const int stride = model.total_stride();
  const int grid_h = data.antennas * factor, grid_w = data.window;
  if (grid_h % stride != 0 || grid_w % stride != 0)
    throw ConfigError("grid dims (" + std::to_string(grid_h) + "x" +
                      std::to_string(grid_w) +
                      ") are not divisible by the encoder stride " +
                      std::to_string(stride));
  const int hl = grid_h / stride, wl = grid_w / stride;

  AdamW<T> opt;
  opt.weight_decay = cfg.weight_decay;

  const int64_t n = static_cast<int64_t>(data.samples.size());
  const int64_t batches_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = static_cast<int64_t>(cfg.epochs) * batches_per_epoch;
  const uint64_t mask_base = derive_seed(cfg.seed, kMaskStream);

  std::ofstream csv(metrics_csv, std::ios::trunc);
  if (!csv) throw IoError("cannot open metrics csv: " + metrics_csv);
  csv << "step,epoch,loss,masked_cells,tau,lr,wall_ms\n";

  PretrainResult result;
  int64_t step = 0;
  uint64_t draw_index = 0;
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, kShuffleStream + epoch));
    for (int64_t i = n - 1; i > 0; --i) {
      const int64_t j = shuffle_rng.uniform_int(static_cast<int>(i + 1));
      std::swap(order[i], order[j]);
    }

    for (int64_t b = 0; b < batches_per_epoch; ++b) {
      const auto t0 = std::chrono::steady_clock::now();
      const int64_t lo = b * cfg.batch_size;
      const int64_t hi = std::min(n, lo + cfg.batch_size);
      const int bs = static_cast<int>(hi - lo);

      Tensor4<T> batch(bs, kIQChannels, grid_h, grid_w);
      std::vector<LatentMask> masks(bs);
      for (int k = 0; k < bs; ++k) {
        const IQSample& s = data.samples[order[lo + k]];
        const GridTensor g = upsample_antennas(s.x, factor);
        if constexpr (std::is_same_v<T, float>) {
          batch.set_sample(k, g);
        } else {
          batch.set_sample(k, g.template cast<T>());
        }
        MaskSpec ms = cfg.mask;
        ms.seed = mask_base ^ draw_index++;
        masks[k] = gen_mask(ms, hl, wl);
      }

      const double tau = momentum_schedule(step, total_steps, cfg.tau0, cfg.tau1);
      const double lr = lr_schedule(step, total_steps, cfg.base_lr);
      const StepResult<T> sr =
          train_step(model, opt, batch, masks, lr, tau, cfg.clip_norm);
      ++step;

      const double wall_ms =
          std::chrono::duration<double, std::milli>(
              std::chrono::steady_clock::now() - t0)
              .count();
      char line[256];
      std::snprintf(line, sizeof(line), "%lld,%d,%.17g,%lld,%.17g,%.17g,%.3f\n",
                    static_cast<long long>(step), epoch, sr.loss,
                    static_cast<long long>(sr.masked_cells), tau, lr, wall_ms);
      csv << line;

      if (step == 1) result.first_loss = sr.loss;
      result.last_loss = sr.loss;
    }
  }
  csv.flush();
  if (!csv) throw IoError("write failed: " + metrics_csv);

  if constexpr (std::is_same_v<T, float>) {
    save_checkpoint(checkpoint_dir, model.student);
  } else {
    save_checkpoint(checkpoint_dir, to_float_net(model.student));
  }
  result.steps = step;
  return result;
}

}  // namespace

PretrainResult pretrain(const TrainConfig& cfg, const Dataset& data,
                        const std::string& checkpoint_dir,
                        const std::string& metrics_csv) {
  cfg.validate();
  if (cfg.precision == "float64")
    return pretrain_impl<double>(cfg, data, checkpoint_dir, metrics_csv);
  return pretrain_impl<float>(cfg, data, checkpoint_dir, metrics_csv);
}

}  // namespace wjepa
