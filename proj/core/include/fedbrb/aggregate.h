#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedbrb/model.h"
#include "fedbrb/partition.h"

namespace fedbrb {

// A trained sub-model delta positioned by the spec it was sliced with.
struct ClientUpdate {
  std::size_t client = 0;
  SubModelSpec spec;
  Params delta;  // local-after minus distributed-before, sub-model shapes
  std::size_t sample_count = 1;
};

struct AggregationPolicy {
  double beta = 0.5;  // broadcast weight in [0, 1)
  bool broadcast_enabled = true;
  std::vector<Ratio> exclude_ratios;
  // Weight contributions by sample_count instead of uniformly.
  bool sample_weighting = false;

  void validate() const;
  bool excludes(Ratio ratio) const;
};

enum class ContributionKind { Primary, Broadcast };

// One placement a client delta was written to, at channel granularity.
struct CoverageEvent {
  std::size_t client = 0;
  std::size_t layer = 0;
  LayerSelection placement;
  ContributionKind kind = ContributionKind::Primary;
};

struct CoverageEvents {
  std::vector<CoverageEvent> events;
  std::size_t excluded_updates = 0;
  // Set when no update survived exclusion; the global model is unchanged.
  bool empty_round = false;
};

struct AggregationResult {
  Params params;
  CoverageEvents coverage;
};

Params compute_delta(const Params& after, const Params& before);

// All tile-aligned channel placements with the primary's tile shape, minus
// the primary itself. The primary must be a contiguous, aligned range whose
// length is a multiple of the grid's block size (or the whole dim when the
// grid has a single block along it).
std::vector<ChannelSelection> broadcast_targets(const ChannelSelection& primary,
                                                std::size_t out_channels,
                                                std::size_t in_channels, const BlockGrid& grid);

// Per parameter: new = old + sum_c(w_c * delta_c) / sum_c(w_c), over the
// contributions touching it; primary overlays weigh 1, broadcast copies beta.
// Parameters without contributions are left bit-identical.
AggregationResult aggregate_round(const Params& global, const ModelArch& arch,
                                  std::span<const ClientUpdate> updates,
                                  const AggregationPolicy& policy, Ratio min_ratio);

}  // namespace fedbrb
