#include "fedbrb/gradcheck.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <variant>

namespace fedbrb {
namespace {

double loss_of(const Params& params, const ModelArch& arch, const Tensor& batch,
               std::span<const int> labels) {
  const Tensor logits = forward(params, arch, batch).logits;
  const std::size_t classes = logits.dim(1);
  double total = 0.0;
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const double* z = logits.data().data() + b * classes;
    const double zmax = *std::max_element(z, z + classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
    total += std::log(sum) + zmax - z[labels[b]];
  }
  return total / static_cast<double>(labels.size());
}

// Smallest |input| over all ReLU layers; central differences are only valid
// when no perturbation pushes a pre-activation across zero.
double relu_margin(const ModelArch& arch, const Params& params, const Tensor& batch) {
  const ForwardResult fwd = forward(params, arch, batch);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l < arch.layers().size(); ++l) {
    if (!std::holds_alternative<Relu>(arch.layers()[l])) continue;
    for (double v : fwd.cache.acts[l]) margin = std::min(margin, std::abs(v));
  }
  return margin;
}

}  // namespace

GradCheckReport gradient_check(const ModelArch& arch, const Params& params, const Tensor& batch,
                               std::span<const int> labels, double step,
                               const BackwardOptions& options) {
  const ForwardResult fwd = forward(params, arch, batch);
  const BackwardResult analytic = backward(params, arch, fwd.cache, labels, options);

  GradCheckReport report;
  Params probe = params;
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const std::string layer = "layer" + std::to_string(k) + ":" +
                              layer_name(arch.layers()[arch.param_layers()[k].layer_index]);
    for (int which = 0; which < 2; ++which) {
      Tensor& t = which == 0 ? probe.layers[k].weight : probe.layers[k].bias;
      const Tensor& g = which == 0 ? analytic.grads.layers[k].weight : analytic.grads.layers[k].bias;
      GradCheckEntry entry{layer + (which == 0 ? ".weight" : ".bias"), 0.0};
      for (std::size_t i = 0; i < t.size(); ++i) {
        const double saved = t[i];
        t[i] = saved + step;
        const double up = loss_of(probe, arch, batch, labels);
        t[i] = saved - step;
        const double down = loss_of(probe, arch, batch, labels);
        t[i] = saved;
        const double numeric = (up - down) / (2.0 * step);
        const double denom = std::max({std::abs(g[i]), std::abs(numeric), 1e-6});
        entry.max_rel_error = std::max(entry.max_rel_error, std::abs(g[i] - numeric) / denom);
      }
      if (entry.max_rel_error >= report.worst) {
        report.worst = entry.max_rel_error;
        report.worst_tensor = entry.tensor;
      }
      report.entries.push_back(std::move(entry));
    }
  }
  return report;
}

ModelArch random_tiny_arch(Rng& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return lo + static_cast<std::size_t>(uniform_below(rng, hi - lo + 1));
  };
  const std::size_t in_c = pick(1, 2);
  const std::size_t hw = pick(6, 8);
  const std::size_t c1 = pick(2, 4);
  const std::size_t c2 = pick(2, 3);
  const std::size_t k1 = pick(2, 3);
  const std::size_t stride1 = pick(1, 2);
  const std::size_t pad1 = pick(0, 1);
  const std::size_t hidden = pick(3, 6);
  const std::size_t classes = pick(2, 4);
  const Ratio ratio = Ratio::from_log2_denominator(static_cast<int>(pick(0, 2)));

  std::vector<Layer> layers{Conv{c1, in_c, k1, stride1, pad1}, Relu{}, Scaler{ratio}};
  std::size_t h = (hw + 2 * pad1 - k1) / stride1 + 1;
  if (h >= 4) {
    layers.push_back(AvgPool{2});
    h /= 2;
  }
  layers.push_back(Conv{c2, c1, 3, 1, 1});
  layers.push_back(Relu{});
  layers.push_back(Flatten{});
  layers.push_back(Dense{hidden, c2 * h * h});
  layers.push_back(Relu{});
  layers.push_back(Scaler{ratio});
  layers.push_back(Dense{classes, hidden});
  return ModelArch::create({in_c, hw, hw}, std::move(layers));
}

GradCheckReport gradcheck_suite(std::uint64_t seed, int trials, const BackwardOptions& options) {
  GradCheckReport total;
  for (int t = 0; t < trials; ++t) {
    Rng rng = make_stream(seed, {static_cast<std::uint64_t>(t)});
    const ModelArch arch = random_tiny_arch(rng);
    const Params params = init_params(arch, rng);
    const std::size_t batch = 3;
    Shape shape{batch};
    shape.insert(shape.end(), arch.input_shape().begin(), arch.input_shape().end());
    Tensor x(shape);
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (double& v : x.data()) v = standard_normal(rng);
      if (relu_margin(arch, params, x) > 1e-3) break;
    }
    std::vector<int> labels(batch);
    for (int& y : labels) y = static_cast<int>(uniform_below(rng, arch.class_count()));

    GradCheckReport r = gradient_check(arch, params, x, labels, 1e-5, options);
    for (auto& e : r.entries) {
      e.tensor = "trial" + std::to_string(t) + "/" + e.tensor;
      if (e.max_rel_error >= total.worst) {
        total.worst = e.max_rel_error;
        total.worst_tensor = e.tensor;
      }
      total.entries.push_back(std::move(e));
    }
  }
  return total;
}

}  // namespace fedbrb
