#include "fedbrb/model.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fedbrb {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::size_t conv_out_dim(std::size_t in, std::size_t kernel, std::size_t stride,
                         std::size_t padding) {
  if (in + 2 * padding < kernel) return 0;
  return (in + 2 * padding - kernel) / stride + 1;
}

// Output positions x whose input column x*stride + k - padding lies in [0, in).
std::pair<std::size_t, std::size_t> valid_range(std::size_t out, std::size_t in, std::size_t k,
                                                std::size_t stride, std::size_t padding) {
  const long s = static_cast<long>(stride);
  const long offset = static_cast<long>(k) - static_cast<long>(padding);
  long lo = 0;
  if (offset < 0) lo = (-offset + s - 1) / s;
  long hi_incl = (static_cast<long>(in) - 1 - offset);
  if (hi_incl < 0) return {0, 0};
  hi_incl /= s;
  long hi = std::min<long>(hi_incl + 1, static_cast<long>(out));
  if (lo >= hi) return {0, 0};
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

struct ConvGeometry {
  std::size_t in_c, in_h, in_w, out_c, out_h, out_w, k, stride, pad;
};

void conv_forward(const ConvGeometry& g, const double* in, const double* w, const double* bias,
                  double* out) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t o = 0; o < g.out_c; ++o) {
    double* out_plane = out + o * plane;
    std::fill(out_plane, out_plane + plane, bias[o]);
    for (std::size_t i = 0; i < g.in_c; ++i) {
      const double* in_plane = in + i * g.in_h * g.in_w;
      for (std::size_t kh = 0; kh < g.k; ++kh) {
        const auto [y0, y1] = valid_range(g.out_h, g.in_h, kh, g.stride, g.pad);
        for (std::size_t kw = 0; kw < g.k; ++kw) {
          const double wv = w[((o * g.in_c + i) * g.k + kh) * g.k + kw];
          const auto [x0, x1] = valid_range(g.out_w, g.in_w, kw, g.stride, g.pad);
          for (std::size_t y = y0; y < y1; ++y) {
            const std::size_t iy = y * g.stride + kh - g.pad;
            const double* row = in_plane + iy * g.in_w;
            double* orow = out_plane + y * g.out_w;
            if (g.stride == 1) {
              const double* shifted = row + (x0 + kw - g.pad);
              for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * shifted[x - x0];
            } else {
              for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * row[x * g.stride + kw - g.pad];
            }
          }
        }
      }
    }
  }
}

void conv_backward(const ConvGeometry& g, const double* in, const double* w, const double* dout,
                   double* din, double* dw, double* db) {
  const std::size_t plane = g.out_h * g.out_w;
  for (std::size_t o = 0; o < g.out_c; ++o) {
    const double* dplane = dout + o * plane;
    double sum = 0.0;
    for (std::size_t j = 0; j < plane; ++j) sum += dplane[j];
    db[o] += sum;
    for (std::size_t i = 0; i < g.in_c; ++i) {
      const double* in_plane = in + i * g.in_h * g.in_w;
      double* din_plane = din ? din + i * g.in_h * g.in_w : nullptr;
      for (std::size_t kh = 0; kh < g.k; ++kh) {
        const auto [y0, y1] = valid_range(g.out_h, g.in_h, kh, g.stride, g.pad);
        for (std::size_t kw = 0; kw < g.k; ++kw) {
          const std::size_t widx = ((o * g.in_c + i) * g.k + kh) * g.k + kw;
          const double wv = w[widx];
          const auto [x0, x1] = valid_range(g.out_w, g.in_w, kw, g.stride, g.pad);
          double acc = 0.0;
          for (std::size_t y = y0; y < y1; ++y) {
            const std::size_t iy = y * g.stride + kh - g.pad;
            const double* drow = dplane + y * g.out_w;
            const double* row = in_plane + iy * g.in_w;
            for (std::size_t x = x0; x < x1; ++x) acc += drow[x] * row[x * g.stride + kw - g.pad];
            if (din_plane) {
              double* dirow = din_plane + iy * g.in_w;
              for (std::size_t x = x0; x < x1; ++x) dirow[x * g.stride + kw - g.pad] += wv * drow[x];
            }
          }
          dw[widx] += acc;
        }
      }
    }
  }
}

ConvGeometry conv_geometry(const Conv& c, const Shape& in_shape) {
  return ConvGeometry{in_shape[0],
                      in_shape[1],
                      in_shape[2],
                      c.out_channels,
                      conv_out_dim(in_shape[1], c.kernel, c.stride, c.padding),
                      conv_out_dim(in_shape[2], c.kernel, c.stride, c.padding),
                      c.kernel,
                      c.stride,
                      c.padding};
}

Shape output_shape(const Layer& layer, const Shape& in) {
  return std::visit(
      Overloaded{
          [&](const Conv& c) -> Shape {
            return {c.out_channels, conv_out_dim(in[1], c.kernel, c.stride, c.padding),
                    conv_out_dim(in[2], c.kernel, c.stride, c.padding)};
          },
          [&](const Dense& d) -> Shape { return {d.out_features}; },
          [&](const AvgPool& p) -> Shape { return {in[0], in[1] / p.window, in[2] / p.window}; },
          [&](const Flatten&) -> Shape { return {shape_size(in)}; },
          [&](const auto&) -> Shape { return in; },
      },
      layer);
}

}  // namespace

std::string layer_name(const Layer& layer) {
  return std::visit(
      Overloaded{
          [](const Conv& c) {
            return "Conv(" + std::to_string(c.out_channels) + "," + std::to_string(c.in_channels) +
                   "," + std::to_string(c.kernel) + ")";
          },
          [](const Dense& d) {
            return "Dense(" + std::to_string(d.out_features) + "," +
                   std::to_string(d.in_features) + ")";
          },
          [](const Relu&) { return std::string("ReLU"); },
          [](const AvgPool& p) { return "AvgPool(" + std::to_string(p.window) + ")"; },
          [](const Flatten&) { return std::string("Flatten"); },
          [](const Scaler& s) { return "Scaler(" + s.ratio.to_string() + ")"; },
      },
      layer);
}

// ---------------------------------------------------------------------------
// ModelArch

ModelArch ModelArch::create(Shape input_shape, std::vector<Layer> layers) {
  ModelArch arch;
  arch.input_shape_ = std::move(input_shape);
  arch.layers_ = std::move(layers);
  arch.analyze();
  const std::size_t boundaries = arch.boundary_width_.size();
  arch.partitionable_.assign(boundaries, true);
  arch.partitionable_.front() = false;
  arch.partitionable_.back() = false;
  return arch;
}

void ModelArch::analyze() {
  if (input_shape_.size() != 3) {
    throw std::invalid_argument("model input shape must be [channels, height, width]");
  }
  for (std::size_t d : input_shape_) {
    if (d == 0) throw std::invalid_argument("model input dims must be >= 1");
  }
  params_.clear();
  boundary_width_.assign(1, input_shape_[0]);

  Shape cur = input_shape_;
  std::size_t flat_channels = 0;
  std::size_t flat_group = 1;
  bool flattened_now = false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const Layer& layer = layers_[l];
    const std::string where = "layer " + std::to_string(l) + " " + layer_name(layer);
    if (const auto* c = std::get_if<Conv>(&layer)) {
      if (cur.size() != 3) throw std::invalid_argument(where + ": conv needs a [C,H,W] input");
      if (c->in_channels != cur[0]) {
        throw std::invalid_argument(where + ": expects " + std::to_string(c->in_channels) +
                                    " input channels, got " + std::to_string(cur[0]));
      }
      if (c->out_channels == 0 || c->kernel == 0 || c->stride == 0) {
        throw std::invalid_argument(where + ": zero-sized conv");
      }
      if (conv_out_dim(cur[1], c->kernel, c->stride, c->padding) == 0 ||
          conv_out_dim(cur[2], c->kernel, c->stride, c->padding) == 0) {
        throw std::invalid_argument(where + ": kernel larger than padded input");
      }
      ParamLayerInfo info;
      info.layer_index = l;
      info.is_conv = true;
      info.out_channels = c->out_channels;
      info.in_channels = c->in_channels;
      info.kernel = c->kernel;
      info.weight_shape = {c->out_channels, c->in_channels, c->kernel, c->kernel};
      info.bias_shape = {c->out_channels};
      params_.push_back(info);
      boundary_width_.push_back(c->out_channels);
    } else if (const auto* d = std::get_if<Dense>(&layer)) {
      if (cur.size() != 1) throw std::invalid_argument(where + ": dense needs a flat input");
      if (d->in_features != cur[0]) {
        throw std::invalid_argument(where + ": expects " + std::to_string(d->in_features) +
                                    " features, got " + std::to_string(cur[0]));
      }
      if (d->out_features == 0) throw std::invalid_argument(where + ": zero-sized dense");
      ParamLayerInfo info;
      info.layer_index = l;
      info.is_conv = false;
      info.out_channels = d->out_features;
      if (flattened_now) {
        info.in_channels = flat_channels;
        info.in_group = flat_group;
      } else {
        info.in_channels = d->in_features;
        info.in_group = 1;
      }
      if (info.in_channels != boundary_width_.back()) {
        throw std::invalid_argument(where + ": input channels do not match the previous layer");
      }
      info.weight_shape = {d->out_features, d->in_features};
      info.bias_shape = {d->out_features};
      params_.push_back(info);
      boundary_width_.push_back(d->out_features);
      flattened_now = false;
    } else if (std::holds_alternative<AvgPool>(layer)) {
      const auto& p = std::get<AvgPool>(layer);
      if (cur.size() != 3 || p.window == 0 || cur[1] < p.window || cur[2] < p.window) {
        throw std::invalid_argument(where + ": invalid pooling window");
      }
    } else if (std::holds_alternative<Flatten>(layer)) {
      if (cur.size() != 3) throw std::invalid_argument(where + ": flatten needs [C,H,W]");
      flat_channels = cur[0];
      flat_group = cur[1] * cur[2];
      flattened_now = true;
    }
    cur = output_shape(layer, cur);
  }
  if (params_.empty() || params_.back().is_conv ||
      params_.back().layer_index + 1 != layers_.size()) {
    throw std::invalid_argument("model must end with the output Dense layer");
  }
}

std::size_t ModelArch::class_count() const { return params_.back().out_channels; }

void ModelArch::set_boundary_partitionable(std::size_t b, bool value) {
  partitionable_.at(b) = value;
}

void ModelArch::check_divisible(Ratio ratio) const {
  for (std::size_t b = 0; b < boundary_width_.size(); ++b) {
    if (partitionable_[b] && boundary_width_[b] % ratio.denominator() != 0) {
      throw std::invalid_argument("partitionable width " + std::to_string(boundary_width_[b]) +
                                  " at boundary " + std::to_string(b) +
                                  " is not divisible by " + std::to_string(ratio.denominator()));
    }
  }
}

std::size_t ModelArch::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += shape_size(p.weight_shape) + shape_size(p.bias_shape);
  return n;
}

bool ModelArch::operator==(const ModelArch& other) const {
  if (input_shape_ != other.input_shape_ || partitionable_ != other.partitionable_ ||
      layers_.size() != other.layers_.size()) {
    return false;
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layer_name(layers_[l]) != layer_name(other.layers_[l])) return false;
    const auto* a = std::get_if<Conv>(&layers_[l]);
    const auto* b = std::get_if<Conv>(&other.layers_[l]);
    if (a && b && (a->stride != b->stride || a->padding != b->padding)) return false;
  }
  return true;
}

ModelArch shrink_arch(const ModelArch& arch, Ratio ratio) {
  arch.check_divisible(ratio);
  std::vector<std::size_t> width(arch.boundary_count());
  for (std::size_t b = 0; b < width.size(); ++b) {
    width[b] = arch.boundary_partitionable(b) ? scale_width(arch.boundary_width(b), ratio)
                                              : arch.boundary_width(b);
  }
  std::vector<Layer> layers = arch.layers();
  for (std::size_t k = 0; k < arch.param_layer_count(); ++k) {
    const ParamLayerInfo& info = arch.param_layers()[k];
    Layer& layer = layers[info.layer_index];
    if (auto* c = std::get_if<Conv>(&layer)) {
      c->in_channels = width[k];
      c->out_channels = width[k + 1];
    } else if (auto* d = std::get_if<Dense>(&layer)) {
      d->in_features = width[k] * info.in_group;
      d->out_features = width[k + 1];
    }
  }
  for (Layer& layer : layers) {
    if (auto* s = std::get_if<Scaler>(&layer)) s->ratio = ratio;
  }
  ModelArch shrunk = ModelArch::create(arch.input_shape(), std::move(layers));
  for (std::size_t b = 0; b < width.size(); ++b) {
    shrunk.set_boundary_partitionable(b, arch.boundary_partitionable(b));
  }
  return shrunk;
}

ModelArch make_cnn(std::size_t in_channels, std::size_t height, std::size_t width,
                   std::size_t width0, std::size_t width1, std::size_t classes) {
  const std::size_t h = height / 2 / 2;
  const std::size_t w = width / 2 / 2;
  return ModelArch::create({in_channels, height, width},
                           {Conv{width0, in_channels, 3, 1, 1}, Relu{}, Scaler{}, AvgPool{2},
                            Conv{width1, width0, 3, 1, 1}, Relu{}, Scaler{}, AvgPool{2},
                            Flatten{}, Dense{classes, width1 * h * w}});
}

ModelArch make_mlp(std::size_t in_features, const std::vector<std::size_t>& hidden,
                   std::size_t classes) {
  std::vector<Layer> layers{Flatten{}};
  std::size_t prev = in_features;
  for (std::size_t h : hidden) {
    layers.push_back(Dense{h, prev});
    layers.push_back(Relu{});
    layers.push_back(Scaler{});
    prev = h;
  }
  layers.push_back(Dense{classes, prev});
  return ModelArch::create({in_features, 1, 1}, std::move(layers));
}

// ---------------------------------------------------------------------------
// Params

std::size_t Params::size() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weight.size() + l.bias.size();
  return n;
}

Params zero_params(const ModelArch& arch) {
  Params p;
  for (const auto& info : arch.param_layers()) {
    p.layers.push_back({Tensor(info.weight_shape), Tensor(info.bias_shape)});
  }
  return p;
}

Params init_params(const ModelArch& arch, Rng& rng) {
  Params p = zero_params(arch);
  for (std::size_t k = 0; k < p.layers.size(); ++k) {
    const auto& shape = arch.param_layers()[k].weight_shape;
    const double fan_in = static_cast<double>(shape_size(shape) / shape[0]);
    const double bound = 1.0 / std::sqrt(fan_in);
    for (double& v : p.layers[k].weight.data()) v = uniform(rng, -bound, bound);
    for (double& v : p.layers[k].bias.data()) v = uniform(rng, -bound, bound);
  }
  return p;
}

void check_params(const ModelArch& arch, const Params& params) {
  if (params.layers.size() != arch.param_layer_count()) {
    throw std::invalid_argument("params have " + std::to_string(params.layers.size()) +
                                " layers, arch has " + std::to_string(arch.param_layer_count()));
  }
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    const auto& info = arch.param_layers()[k];
    if (params.layers[k].weight.shape() != info.weight_shape ||
        params.layers[k].bias.shape() != info.bias_shape) {
      throw std::invalid_argument("param shapes of weight layer " + std::to_string(k) +
                                  " do not match the architecture");
    }
  }
}

bool all_finite(const Params& params) {
  return std::all_of(params.layers.begin(), params.layers.end(), [](const LayerParams& l) {
    return all_finite(l.weight) && all_finite(l.bias);
  });
}

// ---------------------------------------------------------------------------
// Forward / backward

ForwardResult forward(const Params& params, const ModelArch& arch, const Tensor& batch) {
  check_params(arch, params);
  if (batch.rank() != 4 || Shape(batch.shape().begin() + 1, batch.shape().end()) !=
                               arch.input_shape()) {
    throw std::invalid_argument("forward: batch shape does not match the model input");
  }
  const std::size_t n = batch.dim(0);
  ForwardCache cache;
  cache.batch = n;
  cache.acts.reserve(arch.layers().size() + 1);
  cache.acts.emplace_back(batch.values());
  cache.shapes.push_back(arch.input_shape());

  std::size_t param_k = 0;
  for (const Layer& layer : arch.layers()) {
    const Shape& in_shape = cache.shapes.back();
    const Shape out_shape = output_shape(layer, in_shape);
    const std::size_t in_size = shape_size(in_shape);
    const std::size_t out_size = shape_size(out_shape);
    const std::vector<double>& in = cache.acts.back();
    std::vector<double> out(n * out_size, 0.0);

    std::visit(
        Overloaded{
            [&](const Conv& c) {
              const ConvGeometry g = conv_geometry(c, in_shape);
              const auto& lp = params.layers[param_k++];
              for (std::size_t b = 0; b < n; ++b) {
                conv_forward(g, in.data() + b * in_size, lp.weight.data().data(),
                             lp.bias.data().data(), out.data() + b * out_size);
              }
            },
            [&](const Dense& d) {
              const auto& lp = params.layers[param_k++];
              const double* w = lp.weight.data().data();
              for (std::size_t b = 0; b < n; ++b) {
                const double* x = in.data() + b * in_size;
                for (std::size_t o = 0; o < d.out_features; ++o) {
                  const double* row = w + o * d.in_features;
                  double acc = lp.bias[o];
                  for (std::size_t i = 0; i < d.in_features; ++i) acc += row[i] * x[i];
                  out[b * out_size + o] = acc;
                }
              }
            },
            [&](const Relu&) {
              for (std::size_t j = 0; j < out.size(); ++j) out[j] = in[j] > 0.0 ? in[j] : 0.0;
            },
            [&](const AvgPool& p) {
              const std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
              const std::size_t oh = out_shape[1], ow = out_shape[2];
              const double inv = 1.0 / static_cast<double>(p.window * p.window);
              for (std::size_t b = 0; b < n; ++b) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                  const double* src = in.data() + b * in_size + ch * h * w;
                  double* dst = out.data() + b * out_size + ch * oh * ow;
                  for (std::size_t y = 0; y < oh; ++y) {
                    for (std::size_t x = 0; x < ow; ++x) {
                      double acc = 0.0;
                      for (std::size_t dy = 0; dy < p.window; ++dy) {
                        const double* row = src + (y * p.window + dy) * w + x * p.window;
                        for (std::size_t dx = 0; dx < p.window; ++dx) acc += row[dx];
                      }
                      dst[y * ow + x] = acc * inv;
                    }
                  }
                }
              }
            },
            [&](const Flatten&) { out = in; },
            [&](const Scaler& s) {
              const double factor = 1.0 / s.ratio.value();
              for (std::size_t j = 0; j < out.size(); ++j) out[j] = in[j] * factor;
            },
        },
        layer);
    cache.acts.push_back(std::move(out));
    cache.shapes.push_back(out_shape);
  }

  ForwardResult result;
  result.logits = Tensor({n, arch.class_count()}, cache.acts.back());
  result.cache = std::move(cache);
  return result;
}

BackwardResult backward(const Params& params, const ModelArch& arch, const ForwardCache& cache,
                        std::span<const int> labels, const BackwardOptions& options) {
  check_params(arch, params);
  const std::size_t n = cache.batch;
  if (labels.size() != n || n == 0) {
    throw std::invalid_argument("backward: label count does not match the batch");
  }
  if (cache.acts.size() != arch.layers().size() + 1) {
    throw std::invalid_argument("backward: cache does not belong to this architecture");
  }
  const std::size_t classes = arch.class_count();
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::out_of_range("label " + std::to_string(y) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }

  BackwardResult result;
  result.grads = zero_params(arch);

  // Softmax cross-entropy, mean over the batch.
  const std::vector<double>& logits = cache.acts.back();
  std::vector<double> grad(n * classes);
  double loss = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const double* z = logits.data() + b * classes;
    const double zmax = *std::max_element(z, z + classes);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
    const double log_sum = std::log(sum) + zmax;
    loss += log_sum - z[labels[b]];
    for (std::size_t c = 0; c < classes; ++c) {
      grad[b * classes + c] = std::exp(z[c] - log_sum) / static_cast<double>(n);
    }
    grad[b * classes + static_cast<std::size_t>(labels[b])] -= 1.0 / static_cast<double>(n);
  }
  result.loss = loss / static_cast<double>(n);

  std::size_t param_k = arch.param_layer_count();
  for (std::size_t li = arch.layers().size(); li-- > 0;) {
    const Layer& layer = arch.layers()[li];
    const Shape& in_shape = cache.shapes[li];
    const Shape& out_shape = cache.shapes[li + 1];
    const std::size_t in_size = shape_size(in_shape);
    const std::size_t out_size = shape_size(out_shape);
    const std::vector<double>& in = cache.acts[li];
    // The first layer's input gradient is never needed.
    const bool need_input_grad = li > 0;
    std::vector<double> din(need_input_grad ? n * in_size : 0, 0.0);

    std::visit(
        Overloaded{
            [&](const Conv& c) {
              const ConvGeometry g = conv_geometry(c, in_shape);
              --param_k;
              const auto& lp = params.layers[param_k];
              auto& gp = result.grads.layers[param_k];
              for (std::size_t b = 0; b < n; ++b) {
                conv_backward(g, in.data() + b * in_size, lp.weight.data().data(),
                              grad.data() + b * out_size,
                              need_input_grad ? din.data() + b * in_size : nullptr,
                              gp.weight.data().data(), gp.bias.data().data());
              }
              if (options.conv_weight_grad_scale != 1.0) {
                for (double& v : gp.weight.data()) v *= options.conv_weight_grad_scale;
              }
            },
            [&](const Dense& d) {
              --param_k;
              const auto& lp = params.layers[param_k];
              auto& gp = result.grads.layers[param_k];
              const double* w = lp.weight.data().data();
              double* gw = gp.weight.data().data();
              for (std::size_t b = 0; b < n; ++b) {
                const double* x = in.data() + b * in_size;
                const double* g = grad.data() + b * out_size;
                double* dx = need_input_grad ? din.data() + b * in_size : nullptr;
                for (std::size_t o = 0; o < d.out_features; ++o) {
                  const double go = g[o];
                  gp.bias[o] += go;
                  double* grow = gw + o * d.in_features;
                  const double* wrow = w + o * d.in_features;
                  for (std::size_t i = 0; i < d.in_features; ++i) grow[i] += go * x[i];
                  if (dx) {
                    for (std::size_t i = 0; i < d.in_features; ++i) dx[i] += go * wrow[i];
                  }
                }
              }
            },
            [&](const Relu&) {
              for (std::size_t j = 0; j < din.size(); ++j) din[j] = in[j] > 0.0 ? grad[j] : 0.0;
            },
            [&](const AvgPool& p) {
              const std::size_t c = in_shape[0], h = in_shape[1], w = in_shape[2];
              const std::size_t oh = out_shape[1], ow = out_shape[2];
              const double inv = 1.0 / static_cast<double>(p.window * p.window);
              for (std::size_t b = 0; b < n && need_input_grad; ++b) {
                for (std::size_t ch = 0; ch < c; ++ch) {
                  const double* g = grad.data() + b * out_size + ch * oh * ow;
                  double* dst = din.data() + b * in_size + ch * h * w;
                  for (std::size_t y = 0; y < oh; ++y) {
                    for (std::size_t x = 0; x < ow; ++x) {
                      const double v = g[y * ow + x] * inv;
                      for (std::size_t dy = 0; dy < p.window; ++dy) {
                        double* row = dst + (y * p.window + dy) * w + x * p.window;
                        for (std::size_t dx = 0; dx < p.window; ++dx) row[dx] += v;
                      }
                    }
                  }
                }
              }
            },
            [&](const Flatten&) { din = grad; },
            [&](const Scaler& s) {
              const double factor = 1.0 / s.ratio.value();
              for (std::size_t j = 0; j < din.size(); ++j) din[j] = grad[j] * factor;
            },
        },
        layer);
    grad = std::move(din);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must be in [0,1)");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be >= 0");
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
}

void sgd_step(Params& params, const Params& grads, Params& momentum, const TrainConfig& cfg) {
  if (params.layers.size() != grads.layers.size() ||
      params.layers.size() != momentum.layers.size()) {
    throw std::invalid_argument("sgd_step: layer count mismatch");
  }
  auto update = [&](Tensor& p, const Tensor& g, Tensor& v) {
    if (p.shape() != g.shape() || p.shape() != v.shape()) {
      throw std::invalid_argument("sgd_step: shape mismatch");
    }
    auto pd = p.data();
    const auto gd = g.data();
    auto vd = v.data();
    for (std::size_t i = 0; i < pd.size(); ++i) {
      vd[i] = cfg.momentum * vd[i] + gd[i] + cfg.weight_decay * pd[i];
      pd[i] -= cfg.lr * vd[i];
    }
  };
  for (std::size_t k = 0; k < params.layers.size(); ++k) {
    update(params.layers[k].weight, grads.layers[k].weight, momentum.layers[k].weight);
    update(params.layers[k].bias, grads.layers[k].bias, momentum.layers[k].bias);
  }
}

Tensor gather_rows(const Dataset& dataset, std::span<const std::size_t> rows) {
  const std::size_t row_size = dataset.example_size();
  Shape shape = dataset.images.shape();
  shape[0] = rows.size();
  std::vector<double> data(rows.size() * row_size);
  const auto src = dataset.images.data();
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= dataset.count()) throw std::out_of_range("dataset row out of range");
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(rows[r] * row_size), row_size,
                data.begin() + static_cast<std::ptrdiff_t>(r * row_size));
  }
  return Tensor(std::move(shape), std::move(data));
}

LocalTrainResult local_train(const Params& params, const ModelArch& arch,
                             const DatasetShard& shard, const TrainConfig& cfg, Rng& rng) {
  cfg.validate();
  if (shard.dataset == nullptr || shard.empty()) {
    throw std::invalid_argument("local_train: empty shard");
  }
  check_params(arch, params);
  LocalTrainResult result{params, 0.0, 0};
  Params momentum = zero_params(arch);
  std::vector<std::size_t> order = shard.indices;
  std::vector<int> labels;
  double loss_sum = 0.0;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      labels.clear();
      for (std::size_t r : rows) labels.push_back(shard.dataset->labels[r]);
      const Tensor batch = gather_rows(*shard.dataset, rows);
      const ForwardResult fwd = forward(result.params, arch, batch);
      const BackwardResult bwd = backward(result.params, arch, fwd.cache, labels);
      sgd_step(result.params, bwd.grads, momentum, cfg);
      loss_sum += bwd.loss;
      ++result.steps;
    }
  }
  if (!all_finite(result.params)) throw std::domain_error("local_train diverged (non-finite params)");
  if (result.steps > 0) result.mean_loss = loss_sum / static_cast<double>(result.steps);
  return result;
}

EvalResult evaluate(const Params& params, const ModelArch& arch, const Dataset& testset,
                    std::size_t batch_size) {
  if (testset.count() == 0) throw std::invalid_argument("evaluate: empty test set");
  if (batch_size == 0) batch_size = 256;
  std::size_t correct = 0;
  double loss = 0.0;
  std::vector<std::size_t> rows;
  const std::size_t classes = arch.class_count();
  for (std::size_t start = 0; start < testset.count(); start += batch_size) {
    const std::size_t end = std::min(testset.count(), start + batch_size);
    rows.resize(end - start);
    std::iota(rows.begin(), rows.end(), start);
    const ForwardResult fwd = forward(params, arch, gather_rows(testset, rows));
    const auto z = fwd.logits.data();
    for (std::size_t b = 0; b < rows.size(); ++b) {
      const double* row = z.data() + b * classes;
      const std::size_t best =
          static_cast<std::size_t>(std::max_element(row, row + classes) - row);
      const int label = testset.labels[rows[b]];
      if (best == static_cast<std::size_t>(label)) ++correct;
      const double zmax = row[best];
      double sum = 0.0;
      for (std::size_t c = 0; c < classes; ++c) sum += std::exp(row[c] - zmax);
      loss += std::log(sum) + zmax - row[label];
    }
  }
  const double count = static_cast<double>(testset.count());
  return {static_cast<double>(correct) / count, loss / count};
}

}  // namespace fedbrb
