#include "fedbrb/partition.h"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fedbrb {
namespace {

void check_count(std::size_t total, std::size_t count) {
  if (count > total) {
    throw std::invalid_argument("cannot select " + std::to_string(count) + " of " +
                                std::to_string(total) + " channels");
  }
}

std::vector<std::size_t> range_indices(std::size_t begin, std::size_t end) {
  std::vector<std::size_t> v(end - begin);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

void check_distinct_in_bounds(const std::vector<std::size_t>& idx, std::size_t bound,
                              const std::string& what) {
  std::vector<bool> seen(bound, false);
  for (std::size_t i : idx) {
    if (i >= bound || seen[i]) {
      throw std::invalid_argument(what + ": index " + std::to_string(i) +
                                  " is out of range or repeated");
    }
    seen[i] = true;
  }
}

}  // namespace

std::string_view scheme_name(Scheme scheme) {
  switch (scheme) {
    case Scheme::Random: return "random";
    case Scheme::Fixed: return "fixed";
    case Scheme::Rolling: return "rolling";
    case Scheme::BlockRolling: return "block-rolling";
  }
  return "unknown";
}

BlockGrid block_grid(std::size_t out_channels, std::size_t in_channels, Ratio min_ratio) {
  const std::size_t den = min_ratio.denominator();
  if (out_channels == 0 || in_channels == 0 || out_channels % den != 0 ||
      in_channels % den != 0) {
    throw std::invalid_argument("block_grid: " + std::to_string(out_channels) + "x" +
                                std::to_string(in_channels) + " is not divisible by ratio " +
                                min_ratio.to_string());
  }
  BlockGrid g;
  g.block_out = out_channels / den;
  g.block_in = in_channels / den;
  g.rows = den;
  g.cols = den;
  return g;
}

BlockGrid layer_block_grid(const ModelArch& arch, std::size_t param_layer, Ratio min_ratio) {
  const std::size_t out_b = param_layer + 1;
  const std::size_t in_b = param_layer;
  const std::size_t m = arch.boundary_width(out_b);
  const std::size_t n = arch.boundary_width(in_b);
  BlockGrid g;
  g.block_out = arch.boundary_partitionable(out_b) ? scale_width(m, min_ratio) : m;
  g.block_in = arch.boundary_partitionable(in_b) ? scale_width(n, min_ratio) : n;
  g.rows = m / g.block_out;
  g.cols = n / g.block_in;
  return g;
}

BlockPlacement block_placement(std::size_t i, const BlockGrid& grid) {
  if (i < 1 || i > grid.count()) {
    throw std::out_of_range("block index " + std::to_string(i) + " outside 1.." +
                            std::to_string(grid.count()));
  }
  BlockPlacement p;
  p.x = (i + grid.cols - 1) / grid.cols;  // ceil(i / cols)
  p.y = (i - 1) % grid.cols + 1;
  p.out_range = {(p.x - 1) * grid.block_out, p.x * grid.block_out};
  p.in_range = {(p.y - 1) * grid.block_in, p.y * grid.block_in};
  return p;
}

std::vector<std::size_t> fixed_sequence(std::size_t total, std::size_t count) {
  check_count(total, count);
  return range_indices(0, count);
}

std::vector<std::size_t> rolling_sequence(std::size_t total, std::size_t count,
                                          std::uint64_t round) {
  check_count(total, count);
  std::vector<std::size_t> v(count);
  const std::size_t start = total == 0 ? 0 : static_cast<std::size_t>(round % total);
  for (std::size_t j = 0; j < count; ++j) v[j] = (start + j) % total;
  return v;
}

std::vector<std::size_t> random_sequence(std::size_t total, std::size_t count, Rng& rng) {
  check_count(total, count);
  std::vector<std::size_t> pool = range_indices(0, total);
  // Partial Fisher-Yates: the first `count` slots become the sample.
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t pick = j + static_cast<std::size_t>(uniform_below(rng, total - j));
    std::swap(pool[j], pool[pick]);
  }
  pool.resize(count);
  std::sort(pool.begin(), pool.end());
  return pool;
}

TileShape tile_shape(const BlockGrid& grid, Ratio client_ratio, Ratio min_ratio) {
  if (client_ratio < min_ratio) {
    throw std::invalid_argument("client ratio " + client_ratio.to_string() +
                                " is smaller than the block ratio " + min_ratio.to_string());
  }
  const std::size_t t = min_ratio.denominator() / client_ratio.denominator();
  TileShape tile;
  tile.rows = grid.rows > 1 ? t : 1;
  tile.cols = grid.cols > 1 ? t : 1;
  if (grid.rows % tile.rows != 0 || grid.cols % tile.cols != 0) {
    throw std::invalid_argument("tile of " + std::to_string(t) +
                                " blocks does not divide the block grid");
  }
  return tile;
}

BlockPlacement brb_block_index(std::uint64_t round, const BlockGrid& grid, Ratio client_ratio,
                               Ratio min_ratio) {
  const TileShape tile = tile_shape(grid, client_ratio, min_ratio);
  const std::size_t pos_rows = grid.rows / tile.rows;
  const std::size_t pos_cols = grid.cols / tile.cols;
  const std::size_t pos = static_cast<std::size_t>(round % (pos_rows * pos_cols));
  const std::size_t bx = (pos / pos_cols) * tile.rows + 1;
  const std::size_t by = (pos % pos_cols) * tile.cols + 1;
  return block_placement((bx - 1) * grid.cols + by, grid);
}

ChannelSelection LayerSelection::weight_selection() const {
  ChannelSelection sel;
  sel.out_indices = channels.out_indices;
  if (in_group == 1) {
    sel.in_indices = channels.in_indices;
  } else {
    sel.in_indices.reserve(channels.in_indices.size() * in_group);
    for (std::size_t c : channels.in_indices) {
      for (std::size_t j = 0; j < in_group; ++j) sel.in_indices.push_back(c * in_group + j);
    }
  }
  return sel;
}

ChannelSelection LayerSelection::bias_selection() const {
  return ChannelSelection{channels.out_indices, {}};
}

SubModelSpec build_submodel_spec(const ModelArch& arch, Scheme scheme, Ratio ratio,
                                 Ratio min_ratio, std::uint64_t round, Rng& rng) {
  if (ratio < min_ratio) {
    throw std::invalid_argument("client ratio " + ratio.to_string() +
                                " is below the minimum ratio " + min_ratio.to_string());
  }
  arch.check_divisible(min_ratio);

  const std::size_t p = ratio.denominator();
  const std::uint64_t u = round % (static_cast<std::uint64_t>(p) * p);
  const std::size_t fast = static_cast<std::size_t>(u % p);
  const std::size_t slow = static_cast<std::size_t>(u / p);

  std::vector<std::vector<std::size_t>> boundary(arch.boundary_count());
  for (std::size_t b = 0; b < arch.boundary_count(); ++b) {
    const std::size_t width = arch.boundary_width(b);
    if (!arch.boundary_partitionable(b)) {
      boundary[b] = range_indices(0, width);
      continue;
    }
    const std::size_t count = scale_width(width, ratio);
    switch (scheme) {
      case Scheme::Fixed:
        boundary[b] = fixed_sequence(width, count);
        break;
      case Scheme::Rolling:
        boundary[b] = rolling_sequence(width, count, round);
        break;
      case Scheme::Random:
        boundary[b] = random_sequence(width, count, rng);
        break;
      case Scheme::BlockRolling: {
        const std::size_t coord = (b % 2 == 1) ? fast : slow;
        boundary[b] = range_indices(coord * count, (coord + 1) * count);
        break;
      }
    }
  }

  SubModelSpec spec;
  spec.ratio = ratio;
  spec.round = round;
  spec.scheme = scheme;
  for (std::size_t k = 0; k < arch.param_layer_count(); ++k) {
    LayerSelection ls;
    ls.layer = k;
    ls.channels.out_indices = boundary[k + 1];
    ls.channels.in_indices = boundary[k];
    ls.in_group = arch.param_layers()[k].in_group;
    spec.layers.push_back(std::move(ls));
  }
  return spec;
}

void validate_spec(const ModelArch& arch, const SubModelSpec& spec) {
  if (spec.layers.size() != arch.param_layer_count()) {
    throw std::invalid_argument("sub-model spec has " + std::to_string(spec.layers.size()) +
                                " layers, architecture has " +
                                std::to_string(arch.param_layer_count()));
  }
  for (std::size_t k = 0; k < spec.layers.size(); ++k) {
    const LayerSelection& ls = spec.layers[k];
    const ParamLayerInfo& info = arch.param_layers()[k];
    const std::string where = "spec layer " + std::to_string(k);
    if (ls.layer != k || ls.in_group != info.in_group) {
      throw std::invalid_argument(where + ": does not match the architecture");
    }
    if (ls.channels.out_indices.empty() || ls.channels.in_indices.empty()) {
      throw std::invalid_argument(where + ": empty selection");
    }
    check_distinct_in_bounds(ls.channels.out_indices, info.out_channels, where + " out");
    check_distinct_in_bounds(ls.channels.in_indices, info.in_channels, where + " in");
    if (k > 0 && spec.layers[k - 1].channels.out_indices != ls.channels.in_indices) {
      throw std::invalid_argument(where + ": input channels differ from the previous layer's outputs");
    }
  }
}

Params extract_submodel(const Params& global_params, const ModelArch& arch,
                        const SubModelSpec& spec) {
  check_params(arch, global_params);
  validate_spec(arch, spec);
  Params sub;
  sub.layers.reserve(spec.layers.size());
  for (const LayerSelection& ls : spec.layers) {
    const LayerParams& g = global_params.layers[ls.layer];
    sub.layers.push_back({gather_channels(g.weight, ls.weight_selection()),
                          gather_channels(g.bias, ls.bias_selection())});
  }
  return sub;
}

bool is_strictly_smaller(const ModelArch& arch, const SubModelSpec& spec) {
  for (const LayerSelection& ls : spec.layers) {
    const std::size_t k = ls.layer;
    const bool out_smaller = arch.boundary_partitionable(k + 1) &&
                             ls.channels.out_indices.size() < arch.boundary_width(k + 1);
    const bool in_smaller = arch.boundary_partitionable(k) &&
                            ls.channels.in_indices.size() < arch.boundary_width(k);
    if (!out_smaller && !in_smaller) return false;
  }
  return true;
}

}  // namespace fedbrb
