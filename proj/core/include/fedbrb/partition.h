#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fedbrb/model.h"
#include "fedbrb/ratio.h"
#include "fedbrb/rng.h"
#include "fedbrb/tensor.h"

namespace fedbrb {

// How sub-model channels are chosen each round.
//   Random       - fresh uniform subsets (federated dropout)
//   Fixed        - leading channels [0, count) (HeteroFL)
//   Rolling      - contiguous window advancing one channel per round (FedRolex)
//   BlockRolling - tile-aligned block windows rolled in raster order (FedBRB)
enum class Scheme { Random, Fixed, Rolling, BlockRolling };

std::string_view scheme_name(Scheme scheme);

struct ChannelRange {
  std::size_t begin = 0;
  std::size_t end = 0;  // exclusive

  std::size_t size() const { return end - begin; }
  bool operator==(const ChannelRange&) const = default;
};

// A tensor [M, N, ...] cut into rows x cols blocks of block_out x block_in channels.
struct BlockGrid {
  std::size_t block_out = 0;
  std::size_t block_in = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t count() const { return rows * cols; }
  bool operator==(const BlockGrid&) const = default;
};

// Block x (1-based row) / y (1-based column) of a grid and its channel ranges.
struct BlockPlacement {
  std::size_t x = 1;
  std::size_t y = 1;
  ChannelRange out_range;
  ChannelRange in_range;

  // 1-based raster index (x - 1) * cols + y.
  std::size_t index(const BlockGrid& grid) const { return (x - 1) * grid.cols + y; }
  bool operator==(const BlockPlacement&) const = default;
};

// block_out = M * min_ratio, block_in = N * min_ratio; both must be whole.
BlockGrid block_grid(std::size_t out_channels, std::size_t in_channels, Ratio min_ratio);

// Grid for a model weight layer: unpartitionable dims form a single block.
BlockGrid layer_block_grid(const ModelArch& arch, std::size_t param_layer, Ratio min_ratio);

// The i-th block (1-based, raster order).
BlockPlacement block_placement(std::size_t i, const BlockGrid& grid);

std::vector<std::size_t> fixed_sequence(std::size_t total, std::size_t count);

// [(round + j) mod total for j in 0..count).
std::vector<std::size_t> rolling_sequence(std::size_t total, std::size_t count,
                                          std::uint64_t round);

// count distinct indices drawn uniformly without replacement, sorted ascending.
std::vector<std::size_t> random_sequence(std::size_t total, std::size_t count, Rng& rng);

// The top-left block of a client's tile for this round. A ratio-R client
// occupies t x t blocks, t = R / min_ratio (1 block along an unpartitioned
// dim), and steps through the tile-aligned positions in raster order, one per
// round, wrapping around.
BlockPlacement brb_block_index(std::uint64_t round, const BlockGrid& grid, Ratio client_ratio,
                               Ratio min_ratio);

// Tile extent in blocks along each grid dim for a client ratio.
struct TileShape {
  std::size_t rows = 1;  // blocks along dim 0
  std::size_t cols = 1;  // blocks along dim 1
};
TileShape tile_shape(const BlockGrid& grid, Ratio client_ratio, Ratio min_ratio);

// Channel picks for one weight layer. `channels` holds channel-level indices
// for both dims; the weight tensor's dim 1 expands each input channel into
// in_group consecutive columns (Dense after Flatten).
struct LayerSelection {
  std::size_t layer = 0;  // weight layer index
  ChannelSelection channels;
  std::size_t in_group = 1;

  ChannelSelection weight_selection() const;
  ChannelSelection bias_selection() const;
  bool operator==(const LayerSelection&) const = default;
};

struct SubModelSpec {
  Ratio ratio;
  std::vector<LayerSelection> layers;
  std::uint64_t round = 0;
  Scheme scheme = Scheme::Fixed;

  bool operator==(const SubModelSpec&) const = default;
};

// Per-boundary channel lists for one client and round; chained layers share
// the list of the boundary between them, so adjacent selections always agree.
//
// BlockRolling advances boundary coordinates on a two-speed schedule: with
// p = 1 / ratio tile positions per dim and u = round mod p^2, odd-numbered
// boundaries take u mod p and even-numbered ones u div p. Every layer joins
// one fast and one slow boundary, so its tile walks all p^2 positions in p^2
// rounds; layers whose out boundary is even move in raster order, the rest in
// column-major order. A layer with one unpartitioned dim uses the coordinate
// of its partitioned boundary.
SubModelSpec build_submodel_spec(const ModelArch& arch, Scheme scheme, Ratio ratio,
                                 Ratio min_ratio, std::uint64_t round, Rng& rng);

// Checks per-layer index bounds and adjacent-layer channel consistency.
void validate_spec(const ModelArch& arch, const SubModelSpec& spec);

// Gathers every global tensor by the spec's selections.
Params extract_submodel(const Params& global_params, const ModelArch& arch,
                        const SubModelSpec& spec);

// Whether every weight layer of the sub-model is strictly smaller than the
// global layer along at least one partitionable dim.
bool is_strictly_smaller(const ModelArch& arch, const SubModelSpec& spec);

}  // namespace fedbrb
