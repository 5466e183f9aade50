#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedbrb/model.h"

namespace fedbrb {

struct GradCheckEntry {
  std::string tensor;  // e.g. "layer0:Conv(4,2,3).weight"
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double worst = 0.0;
  std::string worst_tensor;

  bool passed(double tolerance) const { return worst < tolerance; }
};

// Compares backward() against central differences of the forward loss for
// every parameter. Per element: |a - n| / max(|a|, |n|, 1e-6).
GradCheckReport gradient_check(const ModelArch& arch, const Params& params, const Tensor& batch,
                               std::span<const int> labels, double step = 1e-5,
                               const BackwardOptions& options = {});

// A small random network touching every layer type (strided and padded
// conv, pooling, flatten, dense, scaler).
ModelArch random_tiny_arch(Rng& rng);

// Runs gradient_check on `trials` random tiny networks drawn from `seed`.
GradCheckReport gradcheck_suite(std::uint64_t seed, int trials = 3,
                                const BackwardOptions& options = {});

}  // namespace fedbrb
