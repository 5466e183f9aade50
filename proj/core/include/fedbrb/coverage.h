#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedbrb/aggregate.h"
#include "fedbrb/model.h"
#include "fedbrb/partition.h"

namespace fedbrb {

enum class CoverageKind { Primary, Touched };

// Masks for one global tensor. touched is a superset of primary.
struct TensorCoverage {
  std::size_t layer = 0;
  bool is_bias = false;
  Shape shape;
  std::vector<std::uint8_t> primary;
  std::vector<std::uint8_t> touched;
  std::size_t primary_count = 0;
  std::size_t touched_count = 0;
  // 0-based round index at which the mask first became full.
  std::optional<std::uint64_t> primary_full_round;
  std::optional<std::uint64_t> touched_full_round;

  std::string name() const;
  std::size_t size() const { return primary.size(); }
  double untrained_fraction(CoverageKind which) const;
};

// Tracks the tensors of partitionable layers only: a weight whose in or out
// dim is partitionable, and a bias whose out dim is.
class CoverageMask {
 public:
  CoverageMask() = default;
  explicit CoverageMask(const ModelArch& arch);

  // Primary events mark both masks, broadcast events mark touched only.
  void record(const CoverageEvents& events, std::uint64_t round);
  void record(const std::vector<CoverageEvent>& events, std::uint64_t round);

  // Untrained cells over all tracked tensors; 0 when nothing is tracked.
  double untrained_fraction(CoverageKind which) const;

  const std::vector<TensorCoverage>& tensors() const { return tensors_; }
  // Index into tensors() for the weight of a layer, if tracked.
  std::optional<std::size_t> weight_index(std::size_t layer) const;

 private:
  std::vector<TensorCoverage> tensors_;
  std::vector<std::optional<std::size_t>> weight_slot_;
  std::vector<std::optional<std::size_t>> bias_slot_;
  std::vector<std::size_t> in_channels_;  // weight dim 1, after Flatten expansion
  std::vector<std::size_t> out_channels_;
};

CoverageMask record(CoverageMask mask, const CoverageEvents& events, std::uint64_t round);

struct TraversalQuery {
  Scheme scheme = Scheme::BlockRolling;
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  bool out_partitioned = true;
  bool in_partitioned = true;
  Ratio ratio;
  // Feature boundary number of the out dim; picks the fast or slow
  // block-rolling coordinate for layers partitioned along one dim only.
  std::size_t out_boundary = 2;
};

struct TraversalPrediction {
  enum class Kind { Rounds, Never, Stochastic };
  Kind kind = Kind::Never;
  std::uint64_t rounds = 0;  // rounds needed for full primary coverage

  static TraversalPrediction after(std::uint64_t rounds) { return {Kind::Rounds, rounds}; }
  static TraversalPrediction never() { return {Kind::Never, 0}; }
  std::string to_string() const;
  bool operator==(const TraversalPrediction&) const = default;
};

// Rounds a single-size client population needs before every cell of the
// layer has been gradient-trained at least once.
TraversalPrediction traversal_rounds(const TraversalQuery& query);

TraversalQuery traversal_query(const ModelArch& arch, std::size_t layer, Scheme scheme,
                               Ratio ratio);

// Selection-only simulation: each round, one client per listed ratio gets a
// spec and its primary placement is recorded. Runs `rounds` rounds.
CoverageMask simulate_selection(const ModelArch& arch, Scheme scheme,
                                const std::vector<Ratio>& ratios, std::uint64_t rounds,
                                std::uint64_t seed);

}  // namespace fedbrb
