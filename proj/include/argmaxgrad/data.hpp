#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "argmaxgrad/tensor.hpp"

namespace argmaxgrad {

/// Images as [count, d] values in [0,1]; labels optional, aligned by row.
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  std::string split = "train";

  int count() const { return images.rows(); }
  int dim() const { return images.cols(); }
  bool has_labels() const { return !labels.empty(); }

  Dataset take(int limit) const;  // first `limit` rows
  Tensor image_row(int i) const;  // [1, d]
};

/// Loads an IDX image file (magic 0x00000803) and optionally its label file
/// (magic 0x00000801). Gzip-compressed files are decompressed transparently.
/// Pixels are scaled by 1/255. Parse errors name the failing byte offset.
Dataset load_idx(const std::string& images_path,
                 const std::string& labels_path = "");

/// Writes images (and labels, when present) back out as plain IDX files.
/// Pixels are quantized to round(v*255); values already on the 1/255 grid
/// round-trip bit-exactly.
void save_idx(const Dataset& d, const std::string& images_path,
              const std::string& labels_path = "");

enum class BinarizeMode { kThreshold, kStochastic };

/// Threshold: pixel >= 0.5. Stochastic: Bernoulli(pixel) under the given
/// seed. Both are idempotent on already-binary data.
Dataset binarize(const Dataset& d, BinarizeMode mode, uint64_t seed = 0);

enum class SyntheticKind { kBars, kMixture };

struct SyntheticDataset {
  Dataset data;
  // Ground truth for the mixture kind: per-component Bernoulli means and
  // the (uniform) component weights.
  Tensor mixture_means;
  std::vector<double> mixture_weights;
};

/// "bars": 4x4 images, each one lit row or column (8 labeled classes).
/// "mixture": samples from a seeded `components`-component Bernoulli
/// mixture over 16 pixels, ground truth included.
SyntheticDataset synthetic_dataset(SyntheticKind kind, int n, uint64_t seed,
                                   int components = 4);

/// Seeded epoch permutation split into batches; the final short batch is
/// included, and the union of batches covers every index exactly once.
std::vector<std::vector<int>> epoch_batches(int count, int batch_size,
                                            uint64_t seed, int epoch);

Tensor gather_rows(const Tensor& t, std::span<const int> rows);

}  // namespace argmaxgrad
