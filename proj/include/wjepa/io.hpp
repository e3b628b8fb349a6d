// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "wjepa/grid.hpp"
#include "wjepa/masks.hpp"
#include "wjepa/net.hpp"

namespace wjepa {

constexpr int kDatasetFormatVersion = 1;
constexpr int kCheckpointFormatVersion = 1;

// In-memory labeled IQ corpus, mirroring the on-disk layout:
//   header.json  {version, count, channels, antennas, window, label_names}
//   data.bin     per sample: little-endian float32, channel-major
//                (all I rows, then all Q rows), row-major within a channel
//   labels.bin   two little-endian uint16 per sample (modulation id, AoA id),
//                0xFFFF = unlabeled
struct Dataset {
  int antennas = 0;
  int window = 0;
  std::vector<std::string> mod_names, aoa_names;
  std::vector<IQSample> samples;

  size_t size() const { return samples.size(); }
};

void save_dataset(const std::filesystem::path& dir, const Dataset& ds);
Dataset load_dataset(const std::filesystem::path& dir);

// Checkpoint directory: manifest.json (architecture id, layer specs, tensor
// name -> shape/dtype/offset) + params.bin, raw little-endian float32 tensors
// concatenated in manifest order. Includes batchnorm running statistics so a
// loaded encoder can run in eval mode. Round-trips are bit-exact.
void save_checkpoint(const std::filesystem::path& dir, const Net<float>& net);
Net<float> load_checkpoint(const std::filesystem::path& dir);
std::string checkpoint_id(const std::filesystem::path& dir);

// Embedding cache: header.json {checkpoint_id, D, N, label_names} +
// embeddings.bin (N x D little-endian float32) + labels.bin as above.
struct EmbeddingCache {
  std::string checkpoint_id;
  int dim = 0;
  std::vector<float> feats;  // N x dim, row-major
  std::vector<int> mod_labels, aoa_labels;
  std::vector<std::string> mod_names, aoa_names;

  int count() const {
    return dim == 0 ? 0 : static_cast<int>(feats.size()) / dim;
  }
};

void save_embeddings(const std::filesystem::path& dir, const EmbeddingCache& e);
EmbeddingCache load_embeddings(const std::filesystem::path& dir);

// Plain PGM (P2): masked = 0 (black), visible = 255 (white).
void write_pgm(const std::filesystem::path& file, const LatentMask& m);

// FNV-1a 64-bit, used for checkpoint ids.
uint64_t fnv1a64(const void* data, size_t len);
std::string hex64(uint64_t x);

// Exclusive .lock file in a directory; held for the lifetime of the guard.
class DirLock {
 public:
  explicit DirLock(const std::filesystem::path& dir);
  ~DirLock();
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;

 private:
  std::filesystem::path path_;
  int fd_ = -1;
};

std::vector<char> read_file_bytes(const std::filesystem::path& p);

}  // namespace wjepa
