// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wjepa/io.hpp"
#include "wjepa/net.hpp"

namespace wjepa {

// Feature matrix with one label per row, as consumed by the classifiers.
struct EmbeddingSet {
  int dim = 0;
  std::vector<float> feats;  // N x dim, row-major
  std::vector<int> labels;
  int num_classes = 0;

  int count() const { return dim == 0 ? 0 : static_cast<int>(feats.size()) / dim; }
};

enum class EvalTask { kModulation, kAoA };
std::string to_string(EvalTask t);

// Select one label column of a cache; rows with missing labels are dropped.
EmbeddingSet select_task(const EmbeddingCache& cache, EvalTask task);

// Frozen-encoder readout: grid transform, dense forward in eval mode, then
// global average pooling over latent positions.
EmbeddingCache extract_embeddings(Net<float>& encoder, const Dataset& ds,
                                  int upsample_factor = 0);

struct ProbeConfig {
  int iterations = 500;
  double lr = 0.1;  // cosine-decayed
  double l2 = 1e-4;
  bool standardize = true;
};

// Multinomial logistic regression on frozen features, full-batch gradient
// descent; returns top-1 accuracy on the test set.
double linear_probe(const EmbeddingSet& train, const EmbeddingSet& test,
                    const ProbeConfig& cfg = {});

// Cosine-similarity k-NN, majority vote; ties broken by summed similarity,
// then by the lowest class id.
double knn_classify(const EmbeddingSet& train, const EmbeddingSet& test, int k);

struct ShotProtocol {
  std::vector<int> shots = {1, 100, 500};
  int seeds = 3;
  uint64_t seed_base = 0;
};

enum class EvalMethod { kLinear, kKnn };
std::string to_string(EvalMethod m);

struct ShotResult {
  int shots = 0;
  double mean = 0.0, stddev = 0.0;
  std::vector<double> per_seed;
};

// Class-balanced N-shot sampling from the train set, repeated per seed.
// Throws listing deficient classes when a class has fewer than N candidates.
std::vector<ShotResult> few_shot_eval(const EmbeddingSet& train,
                                      const EmbeddingSet& test,
                                      const ShotProtocol& protocol,
                                      EvalMethod method, int knn_k = 5);

}  // namespace wjepa
