#pragma once

#include <cstddef>
#include <string>
#include <variant>
#include <vector>

#include "fedbrb/data.h"
#include "fedbrb/ratio.h"
#include "fedbrb/rng.h"
#include "fedbrb/tensor.h"

namespace fedbrb {

struct Conv {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

struct Dense {
  std::size_t out_features = 0;
  std::size_t in_features = 0;
};

struct Relu {};

// Non-overlapping average pooling (stride = window); trailing rows/cols that
// do not fill a window are dropped.
struct AvgPool {
  std::size_t window = 2;
};

struct Flatten {};

// Multiplies activations by 1 / ratio to compensate for a narrower layer.
struct Scaler {
  Ratio ratio;
};

using Layer = std::variant<Conv, Dense, Relu, AvgPool, Flatten, Scaler>;

std::string layer_name(const Layer& layer);

// Geometry of one weight-bearing layer. Feature boundaries are numbered
// 0..P for P weight layers: boundary 0 is the input channel dim, boundary
// k + 1 is the output dim of weight layer k.
struct ParamLayerInfo {
  std::size_t layer_index = 0;  // position in ModelArch::layers()
  bool is_conv = false;
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  // Consecutive dim-1 columns fed by one input channel: H*W for a Dense
  // layer after Flatten, otherwise 1.
  std::size_t in_group = 1;
  std::size_t kernel = 1;
  Shape weight_shape;
  Shape bias_shape;
};

class ModelArch {
 public:
  ModelArch() = default;

  // Validates channel consistency through the layer stack. The last weight
  // layer must be Dense; its out_features is the class count. Boundaries
  // 0 (raw input) and P (classes) are not partitionable, all others are.
  static ModelArch create(Shape input_shape, std::vector<Layer> layers);

  const Shape& input_shape() const { return input_shape_; }
  const std::vector<Layer>& layers() const { return layers_; }
  const std::vector<ParamLayerInfo>& param_layers() const { return params_; }
  std::size_t param_layer_count() const { return params_.size(); }
  std::size_t class_count() const;

  std::size_t boundary_count() const { return boundary_width_.size(); }
  std::size_t boundary_width(std::size_t b) const { return boundary_width_.at(b); }
  bool boundary_partitionable(std::size_t b) const { return partitionable_.at(b); }
  void set_boundary_partitionable(std::size_t b, bool value);

  // Throws std::invalid_argument if a partitionable width is not divisible
  // by ratio's denominator.
  void check_divisible(Ratio ratio) const;

  std::size_t parameter_count() const;

  bool operator==(const ModelArch& other) const;

 private:
  void analyze();

  Shape input_shape_;
  std::vector<Layer> layers_;
  std::vector<ParamLayerInfo> params_;
  std::vector<std::size_t> boundary_width_;
  std::vector<bool> partitionable_;
};

// Scales every partitionable width by ratio and sets every Scaler to ratio.
ModelArch shrink_arch(const ModelArch& arch, Ratio ratio);

// Conv(w0,C,3,pad 1)-ReLU-Scaler-AvgPool(2)-Conv(w1,w0,3,pad 1)-ReLU-Scaler-
// AvgPool(2)-Flatten-Dense(classes, w1*H/4*W/4).
ModelArch make_cnn(std::size_t in_channels, std::size_t height, std::size_t width,
                   std::size_t width0, std::size_t width1, std::size_t classes);

// Dense(h0,in)-ReLU-Scaler-...-Dense(classes,h_last) over [in,1,1] inputs.
ModelArch make_mlp(std::size_t in_features, const std::vector<std::size_t>& hidden,
                   std::size_t classes);

struct LayerParams {
  Tensor weight;
  Tensor bias;

  bool operator==(const LayerParams& other) const = default;
};

// One entry per weight layer, in order. Also used for gradients, deltas and
// momentum buffers.
struct Params {
  std::vector<LayerParams> layers;

  std::size_t size() const;
  bool operator==(const Params& other) const = default;
};

Params zero_params(const ModelArch& arch);

// Fan-in scaled uniform U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
Params init_params(const ModelArch& arch, Rng& rng);

// Throws std::invalid_argument unless shapes match arch.
void check_params(const ModelArch& arch, const Params& params);

bool all_finite(const Params& params);

// Activations kept for backward: acts[l] is the input of layer l, acts.back()
// the logits. Each entry is [batch, per-example shape].
struct ForwardCache {
  std::size_t batch = 0;
  std::vector<std::vector<double>> acts;
  std::vector<Shape> shapes;  // per-example shape of acts[l]
};

struct ForwardResult {
  Tensor logits;  // [batch, classes]
  ForwardCache cache;
};

// batch: [B, input_shape...].
ForwardResult forward(const Params& params, const ModelArch& arch, const Tensor& batch);

// Test hook for the gradient checker's mutation test.
struct BackwardOptions {
  double conv_weight_grad_scale = 1.0;
};

struct BackwardResult {
  double loss = 0.0;  // mean softmax cross-entropy
  Params grads;
};

BackwardResult backward(const Params& params, const ModelArch& arch, const ForwardCache& cache,
                        std::span<const int> labels, const BackwardOptions& options = {});

struct TrainConfig {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t batch_size = 64;
  std::size_t local_epochs = 5;

  void validate() const;
};

// Classical momentum with coupled weight decay:
//   v <- m v + g + wd p;  p <- p - lr v
void sgd_step(Params& params, const Params& grads, Params& momentum, const TrainConfig& cfg);

struct LocalTrainResult {
  Params params;
  double mean_loss = 0.0;  // mean of the mini-batch losses; 0 if no step ran
  std::size_t steps = 0;
};

// cfg.local_epochs passes of shuffled mini-batch SGD with fresh momentum.
LocalTrainResult local_train(const Params& params, const ModelArch& arch,
                             const DatasetShard& shard, const TrainConfig& cfg, Rng& rng);

// Copies the given dataset rows into a [n, example shape...] tensor.
Tensor gather_rows(const Dataset& dataset, std::span<const std::size_t> rows);

struct EvalResult {
  double accuracy = 0.0;
  double loss = 0.0;
};

EvalResult evaluate(const Params& params, const ModelArch& arch, const Dataset& testset,
                    std::size_t batch_size = 256);

}  // namespace fedbrb
