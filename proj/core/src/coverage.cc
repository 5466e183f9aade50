#include "fedbrb/coverage.h"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace fedbrb {
namespace {

std::size_t mark(TensorCoverage& t, std::vector<std::uint8_t>& mask, std::size_t& count,
                 const ChannelSelection& sel, std::size_t in_dim) {
  const std::size_t trailing = t.is_bias ? 1 : shape_size(t.shape) / (t.shape[0] * in_dim);
  std::size_t newly = 0;
  auto hit = [&](std::size_t idx) {
    if (!mask[idx]) {
      mask[idx] = 1;
      ++count;
      ++newly;
    }
  };
  for (std::size_t o : sel.out_indices) {
    if (t.is_bias) {
      hit(o);
      continue;
    }
    for (std::size_t i : sel.in_indices) {
      const std::size_t base = (o * in_dim + i) * trailing;
      for (std::size_t j = 0; j < trailing; ++j) hit(base + j);
    }
  }
  return newly;
}

}  // namespace

std::string TensorCoverage::name() const {
  return "layer" + std::to_string(layer) + (is_bias ? ".bias" : ".weight");
}

double TensorCoverage::untrained_fraction(CoverageKind which) const {
  if (size() == 0) return 0.0;
  const std::size_t covered = which == CoverageKind::Primary ? primary_count : touched_count;
  return static_cast<double>(size() - covered) / static_cast<double>(size());
}

CoverageMask::CoverageMask(const ModelArch& arch) {
  const std::size_t layers = arch.param_layer_count();
  weight_slot_.assign(layers, std::nullopt);
  bias_slot_.assign(layers, std::nullopt);
  for (std::size_t k = 0; k < layers; ++k) {
    const ParamLayerInfo& info = arch.param_layers()[k];
    in_channels_.push_back(info.weight_shape[1]);
    out_channels_.push_back(info.out_channels);
    const bool out_p = arch.boundary_partitionable(k + 1);
    const bool in_p = arch.boundary_partitionable(k);
    if (out_p || in_p) {
      TensorCoverage t;
      t.layer = k;
      t.shape = info.weight_shape;
      t.primary.assign(shape_size(t.shape), 0);
      t.touched.assign(shape_size(t.shape), 0);
      weight_slot_[k] = tensors_.size();
      tensors_.push_back(std::move(t));
    }
    if (out_p) {
      TensorCoverage t;
      t.layer = k;
      t.is_bias = true;
      t.shape = info.bias_shape;
      t.primary.assign(shape_size(t.shape), 0);
      t.touched.assign(shape_size(t.shape), 0);
      bias_slot_[k] = tensors_.size();
      tensors_.push_back(std::move(t));
    }
  }
}

void CoverageMask::record(const CoverageEvents& events, std::uint64_t round) {
  record(events.events, round);
}

void CoverageMask::record(const std::vector<CoverageEvent>& events, std::uint64_t round) {
  for (const CoverageEvent& ev : events) {
    if (ev.layer >= weight_slot_.size() || ev.placement.layer != ev.layer) {
      throw std::invalid_argument("coverage event references an unknown layer");
    }
    const ChannelSelection wsel = ev.placement.weight_selection();
    for (std::size_t o : wsel.out_indices) {
      if (o >= out_channels_[ev.layer]) {
        throw std::invalid_argument("coverage event placement out of range");
      }
    }
    for (std::size_t i : wsel.in_indices) {
      if (i >= in_channels_[ev.layer]) {
        throw std::invalid_argument("coverage event placement out of range");
      }
    }
    const bool primary = ev.kind == ContributionKind::Primary;
    if (auto slot = weight_slot_[ev.layer]) {
      TensorCoverage& t = tensors_[*slot];
      mark(t, t.touched, t.touched_count, wsel, in_channels_[ev.layer]);
      if (primary) mark(t, t.primary, t.primary_count, wsel, in_channels_[ev.layer]);
    }
    if (auto slot = bias_slot_[ev.layer]) {
      TensorCoverage& t = tensors_[*slot];
      const ChannelSelection bsel = ev.placement.bias_selection();
      mark(t, t.touched, t.touched_count, bsel, 1);
      if (primary) mark(t, t.primary, t.primary_count, bsel, 1);
    }
  }
  for (TensorCoverage& t : tensors_) {
    if (!t.primary_full_round && t.primary_count == t.size()) t.primary_full_round = round;
    if (!t.touched_full_round && t.touched_count == t.size()) t.touched_full_round = round;
  }
}

double CoverageMask::untrained_fraction(CoverageKind which) const {
  std::size_t total = 0;
  std::size_t covered = 0;
  for (const TensorCoverage& t : tensors_) {
    total += t.size();
    covered += which == CoverageKind::Primary ? t.primary_count : t.touched_count;
  }
  if (total == 0) return 0.0;
  return static_cast<double>(total - covered) / static_cast<double>(total);
}

std::optional<std::size_t> CoverageMask::weight_index(std::size_t layer) const {
  return layer < weight_slot_.size() ? weight_slot_[layer] : std::nullopt;
}

CoverageMask record(CoverageMask mask, const CoverageEvents& events, std::uint64_t round) {
  mask.record(events, round);
  return mask;
}

std::string TraversalPrediction::to_string() const {
  switch (kind) {
    case Kind::Rounds: return std::to_string(rounds);
    case Kind::Never: return "never";
    case Kind::Stochastic: return "stochastic";
  }
  return "?";
}

TraversalPrediction traversal_rounds(const TraversalQuery& q) {
  const bool out_p = q.out_partitioned && q.ratio != Ratio::full();
  const bool in_p = q.in_partitioned && q.ratio != Ratio::full();
  if (!out_p && !in_p) return TraversalPrediction::after(1);
  const std::uint64_t p = q.ratio.denominator();

  switch (q.scheme) {
    case Scheme::Random:
      return {TraversalPrediction::Kind::Stochastic, 0};
    case Scheme::Fixed:
      return TraversalPrediction::never();
    case Scheme::BlockRolling: {
      if (out_p && in_p) return TraversalPrediction::after(p * p);
      // The lone partitioned boundary is odd (fast coordinate, one step per
      // round) or even (slow coordinate, one step per p rounds).
      const std::size_t boundary = out_p ? q.out_boundary : q.out_boundary - 1;
      if (boundary % 2 == 1) return TraversalPrediction::after(p);
      return TraversalPrediction::after(p * (p - 1) + 1);
    }
    case Scheme::Rolling: {
      if (out_p != in_p) {
        const std::uint64_t total = out_p ? q.out_channels : q.in_channels;
        return TraversalPrediction::after(total - total / p + 1);
      }
      const std::uint64_t m = q.out_channels;
      const std::uint64_t n = q.in_channels;
      // Shared start r: cell (o, i) is trained when (o - r) mod M < M/p and
      // (i - r) mod N < N/p. On a square tensor both windows coincide, so
      // cells with circular distance >= M/p are never reached.
      if (m == n) return TraversalPrediction::never();
      const std::uint64_t period = std::lcm(m, n);
      const std::uint64_t cm = m / p;
      const std::uint64_t cn = n / p;
      std::uint64_t worst = 0;
      for (std::uint64_t o = 0; o < m; ++o) {
        for (std::uint64_t i = 0; i < n; ++i) {
          std::optional<std::uint64_t> first;
          for (std::uint64_t r = 0; r < period && !first; ++r) {
            if ((o + m - r % m) % m < cm && (i + n - r % n) % n < cn) first = r;
          }
          if (!first) return TraversalPrediction::never();
          worst = std::max(worst, *first);
        }
      }
      return TraversalPrediction::after(worst + 1);
    }
  }
  return TraversalPrediction::never();
}

TraversalQuery traversal_query(const ModelArch& arch, std::size_t layer, Scheme scheme,
                               Ratio ratio) {
  const ParamLayerInfo& info = arch.param_layers().at(layer);
  TraversalQuery q;
  q.scheme = scheme;
  q.out_channels = info.out_channels;
  q.in_channels = info.in_channels;
  q.out_partitioned = arch.boundary_partitionable(layer + 1);
  q.in_partitioned = arch.boundary_partitionable(layer);
  q.ratio = ratio;
  q.out_boundary = layer + 1;
  return q;
}

CoverageMask simulate_selection(const ModelArch& arch, Scheme scheme,
                                const std::vector<Ratio>& ratios, std::uint64_t rounds,
                                std::uint64_t seed) {
  if (ratios.empty()) throw std::invalid_argument("simulate_selection: no client ratios");
  const Ratio min_ratio = *std::min_element(ratios.begin(), ratios.end());
  CoverageMask mask(arch);
  for (std::uint64_t r = 0; r < rounds; ++r) {
    std::vector<CoverageEvent> events;
    for (std::size_t c = 0; c < ratios.size(); ++c) {
      Rng rng = make_stream(seed, {c, r});
      const SubModelSpec spec = build_submodel_spec(arch, scheme, ratios[c], min_ratio, r, rng);
      for (const LayerSelection& ls : spec.layers) {
        events.push_back({c, ls.layer, ls, ContributionKind::Primary});
      }
    }
    mask.record(events, r);
  }
  return mask;
}

}  // namespace fedbrb
