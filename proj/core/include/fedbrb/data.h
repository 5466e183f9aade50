#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedbrb/rng.h"
#include "fedbrb/tensor.h"

namespace fedbrb {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// images: [count, channels, height, width]; labels in [0, class_count).
struct Dataset {
  Tensor images;
  std::vector<int> labels;
  int class_count = 0;

  std::size_t count() const { return labels.size(); }
  std::size_t example_size() const { return images.size() / images.dim(0); }
  Shape example_shape() const;
};

// A view of some dataset rows, used as a client's local data.
struct DatasetShard {
  const Dataset* dataset = nullptr;
  std::vector<std::size_t> indices;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

struct PartitionPlan {
  std::vector<std::vector<std::size_t>> client_indices;
  std::vector<std::vector<int>> allowed_labels;
  int labels_per_client = 0;  // 0 for iid plans

  std::size_t num_clients() const { return client_indices.size(); }
};

struct Normalization {
  double mean = 0.0;
  double stddev = 1.0;
};

// Standard MNIST normalization constants.
inline constexpr Normalization kMnistNormalization{0.1307, 0.3081};

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

// Big-endian IDX pair. Pixels are scaled to [0,1], then (x - mean) / stddev.
Dataset load_mnist_idx(const std::filesystem::path& images_path,
                       const std::filesystem::path& labels_path,
                       Normalization norm = kMnistNormalization);

// Writes an IDX pair; images are row-major [count][rows][cols] bytes.
void write_idx_pair(const std::filesystem::path& images_path,
                    const std::filesystem::path& labels_path, std::uint32_t rows,
                    std::uint32_t cols, std::span<const std::uint8_t> pixels,
                    std::span<const std::uint8_t> labels);

// Unit-variance Gaussian clusters with class means on a line, spaced by
// `separation`. Images have shape [count, dim, 1, 1].
Dataset synthetic_classes(int classes, std::size_t per_class, std::size_t dim,
                          double separation, Rng& rng);

// The first `count` rows after a seeded shuffle (count >= dataset size keeps all).
Dataset take_subset(const Dataset& dataset, std::size_t count, Rng& rng);

// Each client gets L labels by round-robin over a seeded label permutation;
// each label's examples are split evenly among the clients holding it.
PartitionPlan partition_noniid(const Dataset& dataset, std::size_t num_clients, int L,
                               Rng& rng);

PartitionPlan partition_iid(const Dataset& dataset, std::size_t num_clients, Rng& rng);

}  // namespace fedbrb
