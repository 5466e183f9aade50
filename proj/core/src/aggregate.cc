#include "fedbrb/aggregate.h"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace fedbrb {
namespace {

// Start of the aligned window, or throws if `indices` is not one.
std::size_t aligned_start(const std::vector<std::size_t>& indices, std::size_t total,
                          std::size_t block, const char* which) {
  const std::size_t len = indices.size();
  if (len == 0 || len % block != 0 || total % len != 0) {
    throw std::invalid_argument(std::string("broadcast: ") + which +
                                " selection is not a whole number of blocks");
  }
  const std::size_t start = indices.front();
  for (std::size_t j = 0; j < len; ++j) {
    if (indices[j] != start + j) {
      throw std::invalid_argument(std::string("broadcast: ") + which +
                                  " selection is not contiguous");
    }
  }
  if (start % len != 0) {
    throw std::invalid_argument(std::string("broadcast: ") + which +
                                " selection is not tile-aligned");
  }
  return start;
}

std::vector<std::size_t> iota_from(std::size_t start, std::size_t len) {
  std::vector<std::size_t> v(len);
  for (std::size_t j = 0; j < len; ++j) v[j] = start + j;
  return v;
}

Tensor filled(const Shape& shape, double value) {
  Tensor t(shape);
  std::fill(t.data().begin(), t.data().end(), value);
  return t;
}

struct Accumulator {
  Params sum;
  Params weight;

  void add(std::size_t layer, const LayerSelection& sel, const LayerParams& delta,
           double w, bool with_bias) {
    auto& s = sum.layers[layer];
    auto& ws = weight.layers[layer];
    const ChannelSelection wsel = sel.weight_selection();
    scatter_add_channels_inplace(s.weight, wsel, delta.weight, w);
    scatter_add_channels_inplace(ws.weight, wsel, filled(delta.weight.shape(), 1.0), w);
    if (with_bias) add_bias(layer, sel.bias_selection(), delta, w);
  }

  void add_bias(std::size_t layer, const ChannelSelection& bsel, const LayerParams& delta,
                double w) {
    scatter_add_channels_inplace(sum.layers[layer].bias, bsel, delta.bias, w);
    scatter_add_channels_inplace(weight.layers[layer].bias, bsel,
                                 filled(delta.bias.shape(), 1.0), w);
  }
};

void apply_mean(Tensor& target, const Tensor& sum, const Tensor& weight) {
  auto t = target.data();
  const auto s = sum.data();
  const auto w = weight.data();
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (w[i] > 0.0) t[i] += s[i] / w[i];
  }
}

}  // namespace

void AggregationPolicy::validate() const {
  if (!(beta >= 0.0 && beta < 1.0)) throw std::invalid_argument("beta must be in [0, 1)");
}

bool AggregationPolicy::excludes(Ratio ratio) const {
  return std::find(exclude_ratios.begin(), exclude_ratios.end(), ratio) != exclude_ratios.end();
}

Params compute_delta(const Params& after, const Params& before) {
  if (after.layers.size() != before.layers.size()) {
    throw std::invalid_argument("compute_delta: layer count mismatch");
  }
  Params delta;
  delta.layers.reserve(after.layers.size());
  for (std::size_t k = 0; k < after.layers.size(); ++k) {
    delta.layers.push_back({add_scaled(after.layers[k].weight, before.layers[k].weight, -1.0),
                            add_scaled(after.layers[k].bias, before.layers[k].bias, -1.0)});
  }
  return delta;
}

std::vector<ChannelSelection> broadcast_targets(const ChannelSelection& primary,
                                                std::size_t out_channels,
                                                std::size_t in_channels, const BlockGrid& grid) {
  if (grid.block_out * grid.rows != out_channels || grid.block_in * grid.cols != in_channels) {
    throw std::invalid_argument("broadcast: grid does not match the layer shape");
  }
  const std::size_t out_start =
      aligned_start(primary.out_indices, out_channels, grid.block_out, "out");
  const std::size_t in_start =
      aligned_start(primary.in_indices, in_channels, grid.block_in, "in");
  const std::size_t out_len = primary.out_indices.size();
  const std::size_t in_len = primary.in_indices.size();

  std::vector<ChannelSelection> targets;
  for (std::size_t o = 0; o < out_channels; o += out_len) {
    for (std::size_t i = 0; i < in_channels; i += in_len) {
      if (o == out_start && i == in_start) continue;
      targets.push_back({iota_from(o, out_len), iota_from(i, in_len)});
    }
  }
  return targets;
}

AggregationResult aggregate_round(const Params& global, const ModelArch& arch,
                                  std::span<const ClientUpdate> updates,
                                  const AggregationPolicy& policy, Ratio min_ratio) {
  policy.validate();
  check_params(arch, global);

  AggregationResult result;
  result.params = global;
  const bool broadcast = policy.broadcast_enabled && policy.beta > 0.0;

  Accumulator acc{zero_params(arch), zero_params(arch)};
  std::size_t used = 0;
  for (const ClientUpdate& update : updates) {
    if (policy.excludes(update.spec.ratio)) {
      ++result.coverage.excluded_updates;
      continue;
    }
    validate_spec(arch, update.spec);
    if (update.sample_count == 0) throw std::invalid_argument("client update with no samples");
    if (update.delta.layers.size() != update.spec.layers.size()) {
      throw std::invalid_argument("client delta does not match its spec");
    }
    ++used;
    const double w = policy.sample_weighting ? static_cast<double>(update.sample_count) : 1.0;
    for (const LayerSelection& ls : update.spec.layers) {
      const std::size_t k = ls.layer;
      const LayerParams& delta = update.delta.layers[k];
      const LayerParams& g = global.layers[k];
      if (delta.weight.shape() != gathered_shape(g.weight, ls.weight_selection()) ||
          delta.bias.shape() != gathered_shape(g.bias, ls.bias_selection())) {
        throw std::invalid_argument("client delta shape does not match layer " +
                                    std::to_string(k) + " of its spec");
      }
      acc.add(k, ls, delta, w, true);
      result.coverage.events.push_back({update.client, k, ls, ContributionKind::Primary});
      if (!broadcast) continue;

      const ParamLayerInfo& info = arch.param_layers()[k];
      const BlockGrid grid = layer_block_grid(arch, k, min_ratio);
      std::vector<std::vector<std::size_t>> bias_targets;
      for (ChannelSelection& t : broadcast_targets(ls.channels, info.out_channels,
                                                   info.in_channels, grid)) {
        LayerSelection target{k, std::move(t), ls.in_group};
        acc.add(k, target, delta, w * policy.beta, false);
        const auto& out = target.channels.out_indices;
        if (out != ls.channels.out_indices &&
            std::find(bias_targets.begin(), bias_targets.end(), out) == bias_targets.end()) {
          bias_targets.push_back(out);
        }
        result.coverage.events.push_back(
            {update.client, k, std::move(target), ContributionKind::Broadcast});
      }
      for (auto& out : bias_targets) {
        acc.add_bias(k, ChannelSelection{std::move(out), {}}, delta, w * policy.beta);
      }
    }
  }

  if (used == 0) {
    result.coverage.empty_round = true;
    return result;
  }
  for (std::size_t k = 0; k < result.params.layers.size(); ++k) {
    apply_mean(result.params.layers[k].weight, acc.sum.layers[k].weight,
               acc.weight.layers[k].weight);
    apply_mean(result.params.layers[k].bias, acc.sum.layers[k].bias, acc.weight.layers[k].bias);
  }
  if (!all_finite(result.params)) throw std::domain_error("aggregation produced non-finite values");
  return result;
}

}  // namespace fedbrb
