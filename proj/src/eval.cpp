// SPDX-License-Identifier: Apache-2.0
#include "wjepa/eval.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "wjepa/errors.hpp"
#include "wjepa/parallel.hpp"

namespace wjepa {

namespace {
using EMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EMatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
}  // namespace

std::string to_string(EvalTask t) {
  return t == EvalTask::kModulation ? "modulation" : "aoa";
}
std::string to_string(EvalMethod m) {
  return m == EvalMethod::kLinear ? "linear" : "knn";
}

EmbeddingSet select_task(const EmbeddingCache& cache, EvalTask task) {
  EmbeddingSet out;
  out.dim = cache.dim;
  const auto& labels =
      task == EvalTask::kModulation ? cache.mod_labels : cache.aoa_labels;
  const auto& names = task == EvalTask::kModulation ? cache.mod_names : cache.aoa_names;
  out.num_classes = static_cast<int>(names.size());
  for (int i = 0; i < cache.count(); ++i) {
    if (labels[i] < 0) continue;
    out.labels.push_back(labels[i]);
    out.feats.insert(out.feats.end(), cache.feats.begin() + static_cast<size_t>(i) * cache.dim,
                     cache.feats.begin() + static_cast<size_t>(i + 1) * cache.dim);
  }
  return out;
}

EmbeddingCache extract_embeddings(Net<float>& encoder, const Dataset& ds,
                                  int upsample_factor) {
  if (ds.samples.empty()) throw ConfigError("extract_embeddings: empty dataset");
  int factor = upsample_factor;
  if (factor <= 0) {
    if (ds.window % ds.antennas != 0)
      throw ConfigError("window not divisible by antennas; pass a factor");
    factor = ds.window / ds.antennas;
  }
  const int stride = encoder.total_stride();
  const int gh = ds.antennas * factor, gw = ds.window;
  if (gh % stride != 0 || gw % stride != 0)
    throw ConfigError("encoder stride incompatible with dataset dims");

  const int dim = encoder.out_channels();
  const int n = static_cast<int>(ds.samples.size());
  EmbeddingCache cache;
  cache.dim = dim;
  cache.feats.assign(static_cast<size_t>(n) * dim, 0.0f);
  cache.mod_labels.resize(n);
  cache.aoa_labels.resize(n);
  cache.mod_names = ds.mod_names;
  cache.aoa_names = ds.aoa_names;

  // Eval mode never mutates running stats, so samples can run concurrently.
  parallel_for(n, [&](int i) {
    const GridTensor g = upsample_antennas(ds.samples[i].x, factor);
    const Tensor4<float> h = dense_forward(encoder, g, /*training=*/false);
    const int plane = h.h * h.w;
    float* out = cache.feats.data() + static_cast<size_t>(i) * dim;
    for (int c = 0; c < dim; ++c) {
      double acc = 0.0;
      const float* p = h.channel(0, c);
      for (int k = 0; k < plane; ++k) acc += p[k];
      out[c] = static_cast<float>(acc / plane);
    }
    cache.mod_labels[i] = ds.samples[i].mod_label;
    cache.aoa_labels[i] = ds.samples[i].aoa_label;
  });
  return cache;
}

double linear_probe(const EmbeddingSet& train, const EmbeddingSet& test,
                    const ProbeConfig& cfg) {
  const int n = train.count(), nt = test.count(), d = train.dim;
  if (n == 0 || nt == 0) throw ConfigError("linear_probe: empty embedding set");

  int num_classes = train.num_classes;
  for (int y : train.labels) num_classes = std::max(num_classes, y + 1);
  int distinct = 0;
  {
    std::vector<char> seen(num_classes, 0);
    for (int y : train.labels)
      if (!seen[y]) {
        seen[y] = 1;
        ++distinct;
      }
  }
  if (distinct < 2) throw ConfigError("linear_probe: single-class train set");

  // Standardize by train mean/std.
  EMatD X(n, d), Xt(nt, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = train.feats[static_cast<size_t>(i) * d + j];
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < d; ++j) Xt(i, j) = test.feats[static_cast<size_t>(i) * d + j];
  if (cfg.standardize) {
    const Eigen::RowVectorXd mean = X.colwise().mean();
    Eigen::RowVectorXd std =
        ((X.rowwise() - mean).array().square().colwise().sum() / n).sqrt();
    for (int j = 0; j < d; ++j)
      if (std(j) < 1e-8) std(j) = 1.0;
    X = (X.rowwise() - mean).array().rowwise() / std.array();
    Xt = (Xt.rowwise() - mean).array().rowwise() / std.array();
  }

  EMatD W = EMatD::Zero(num_classes, d);
  Eigen::VectorXd b = Eigen::VectorXd::Zero(num_classes);

  for (int it = 0; it < cfg.iterations; ++it) {
    const double lr =
        cfg.lr * (1.0 + std::cos(M_PI * static_cast<double>(it) / cfg.iterations)) / 2.0;
    EMatD logits = X * W.transpose();
    logits.rowwise() += b.transpose();
    // row-wise softmax
    for (int i = 0; i < n; ++i) {
      const double mx = logits.row(i).maxCoeff();
      logits.row(i) = (logits.row(i).array() - mx).exp();
      logits.row(i) /= logits.row(i).sum();
      logits(i, train.labels[i]) -= 1.0;
    }
    logits /= static_cast<double>(n);
    const EMatD gw = logits.transpose() * X + cfg.l2 * W;
    const Eigen::VectorXd gb = logits.colwise().sum().transpose();
    W -= lr * gw;
    b -= lr * gb;
  }

  EMatD logits = Xt * W.transpose();
  logits.rowwise() += b.transpose();
  int correct = 0;
  for (int i = 0; i < nt; ++i) {
    int best = 0;
    logits.row(i).maxCoeff(&best);
    correct += (best == test.labels[i]);
  }
  return static_cast<double>(correct) / nt;
}

double knn_classify(const EmbeddingSet& train, const EmbeddingSet& test, int k) {
  const int n = train.count(), nt = test.count(), d = train.dim;
  if (n == 0 || nt == 0) throw ConfigError("knn_classify: empty embedding set");
  if (k < 1 || k > n) throw ConfigError("knn_classify: k out of range");

  int num_classes = train.num_classes;
  for (int y : train.labels) num_classes = std::max(num_classes, y + 1);

  // L2-normalize both sets; cosine similarity becomes a dot product.
  auto normalized = [d](const EmbeddingSet& s) {
    EMatF m(s.count(), d);
    for (int i = 0; i < s.count(); ++i) {
      double sq = 0.0;
      const float* p = s.feats.data() + static_cast<size_t>(i) * d;
      for (int j = 0; j < d; ++j) sq += static_cast<double>(p[j]) * p[j];
      const float inv = sq > 0.0 ? static_cast<float>(1.0 / std::sqrt(sq)) : 0.0f;
      for (int j = 0; j < d; ++j) m(i, j) = p[j] * inv;
    }
    return m;
  };
  const EMatF Tr = normalized(train);
  const EMatF Te = normalized(test);

  std::vector<int> correct(nt, 0);
  parallel_for(nt, [&](int i) {
    const Eigen::VectorXf sims = Tr * Te.row(i).transpose();
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
      if (sims(a) != sims(b)) return sims(a) > sims(b);
      return a < b;  // deterministic tie order
    });
    std::vector<int> votes(num_classes, 0);
    std::vector<double> simsum(num_classes, 0.0);
    for (int j = 0; j < k; ++j) {
      const int cls = train.labels[idx[j]];
      votes[cls] += 1;
      simsum[cls] += sims(idx[j]);
    }
    int best = 0;
    for (int c = 1; c < num_classes; ++c) {
      if (votes[c] > votes[best] ||
          (votes[c] == votes[best] && simsum[c] > simsum[best]))
        best = c;
    }
    correct[i] = (best == test.labels[i]);
  });
  return static_cast<double>(std::accumulate(correct.begin(), correct.end(), 0)) / nt;
}

std::vector<ShotResult> few_shot_eval(const EmbeddingSet& train,
                                      const EmbeddingSet& test,
                                      const ShotProtocol& protocol,
                                      EvalMethod method, int knn_k) {
  int num_classes = train.num_classes;
  for (int y : train.labels) num_classes = std::max(num_classes, y + 1);

  std::vector<std::vector<int>> by_class(num_classes);
  for (int i = 0; i < train.count(); ++i) by_class[train.labels[i]].push_back(i);

  std::vector<ShotResult> results;
  for (int shots : protocol.shots) {
    std::string deficient;
    for (int c = 0; c < num_classes; ++c)
      if (static_cast<int>(by_class[c].size()) < shots)
        deficient += (deficient.empty() ? "" : ", ") + std::to_string(c) + " (" +
                     std::to_string(by_class[c].size()) + ")";
    if (!deficient.empty())
      throw ConfigError("insufficient examples for " + std::to_string(shots) +
                        "-shot sampling; deficient classes: " + deficient);

    ShotResult r;
    r.shots = shots;
    for (int s = 0; s < protocol.seeds; ++s) {
      Rng rng(derive_seed(protocol.seed_base, static_cast<uint64_t>(s)));
      EmbeddingSet sub;
      sub.dim = train.dim;
      sub.num_classes = num_classes;
      for (int c = 0; c < num_classes; ++c) {
        std::vector<int> pool = by_class[c];
        for (int i = 0; i < shots; ++i) {
          const int j = i + rng.uniform_int(static_cast<int>(pool.size()) - i);
          std::swap(pool[i], pool[j]);
        }
        // dataset order within the draw, so identical draws build identical sets
        std::sort(pool.begin(), pool.begin() + shots);
        for (int i = 0; i < shots; ++i) {
          const int row = pool[i];
          sub.labels.push_back(c);
          sub.feats.insert(sub.feats.end(),
                           train.feats.begin() + static_cast<size_t>(row) * train.dim,
                           train.feats.begin() + static_cast<size_t>(row + 1) * train.dim);
        }
      }
      const double acc = method == EvalMethod::kLinear
                             ? linear_probe(sub, test)
                             : knn_classify(sub, test, std::min(knn_k, sub.count()));
      r.per_seed.push_back(acc);
    }
    double mean = 0.0;
    for (double a : r.per_seed) mean += a;
    mean /= r.per_seed.size();
    double var = 0.0;
    for (double a : r.per_seed) var += (a - mean) * (a - mean);
    r.mean = mean;
    r.stddev = r.per_seed.size() > 1 ? std::sqrt(var / (r.per_seed.size() - 1)) : 0.0;
    results.push_back(std::move(r));
  }
  return results;
}

}  // namespace wjepa
