#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opom/subspace.hpp"
#include "opom/tensor.hpp"

namespace opom {

enum class LayerKind {
  Conv3x3,
  Relu,
  AvgPool2x2,
  GlobalAvgPool,
  FullyConnected,
  L2Normalize,
  FeatureDropout,
};

std::string_view to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::Relu;
  /// Conv3x3: input/output channels. FullyConnected: input features / output dim.
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  /// FeatureDropout: Bernoulli keep-probability p_d.
  double keep_prob = 0.9;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Knobs for the default conv stack:
/// conv(3→w1) relu drop pool conv(w1→w2) relu drop pool… fc l2.
struct ArchitectureSpec {
  Shape input{3, 32, 32};
  std::size_t conv1_channels = 8;
  std::size_t conv2_channels = 16;
  /// Side of the pooled map flattened into the fc layer; 1 uses global average pooling.
  std::size_t head_grid = 4;
  std::size_t embedding_dim = 64;
  bool dropout_layers = true;
  double keep_prob = 0.9;
};

/// Layered feature extractor: ImageTensor in [0,255] → unit-norm embedding.
/// Weights are stored as 32-bit floats in one flat buffer; parameter blocks are laid
/// out in layer order (weights then bias for every conv/fc layer).
class FeatureExtractor {
 public:
  FeatureExtractor() = default;
  FeatureExtractor(Shape input, std::vector<LayerSpec> layers, std::uint64_t seed);

  const Shape& input_shape() const { return input_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  std::size_t embedding_dim() const { return embedding_dim_; }
  std::uint64_t seed() const { return seed_; }

  /// Fixed input normalization applied before the first layer: (x − offset) · scale.
  float input_offset() const { return input_offset_; }
  float input_scale() const { return input_scale_; }
  void set_input_normalization(float offset, float scale) {
    input_offset_ = offset;
    input_scale_ = scale;
  }

  std::vector<float>& weights() { return weights_; }
  const std::vector<float>& weights() const { return weights_; }
  /// Offset of each layer's parameter block in weights() (equal to the next block for
  /// parameterless layers).
  const std::vector<std::size_t>& param_offsets() const { return param_offsets_; }
  /// Output shape of every layer.
  const std::vector<Shape>& layer_shapes() const { return layer_shapes_; }

  /// He-style initialization drawn from seed().
  void initialize_weights();

  friend bool operator==(const FeatureExtractor&, const FeatureExtractor&) = default;

 private:
  Shape input_;
  std::vector<LayerSpec> layers_;
  std::uint64_t seed_ = 0;
  std::size_t embedding_dim_ = 0;
  float input_offset_ = 127.5f;
  float input_scale_ = 1.0f / 64.0f;
  std::vector<float> weights_;
  std::vector<std::size_t> param_offsets_;
  std::vector<Shape> layer_shapes_;
};

FeatureExtractor make_extractor(const ArchitectureSpec& arch, std::uint64_t seed);

/// Identifies one draw of Bernoulli masks for the feature-dropout layers. Masks are a pure
/// function of (seed, stream, layer, element), so two calls with equal states draw equal masks.
struct DropoutState {
  std::uint64_t seed = 0;
  std::uint64_t stream = 0;
  /// Overrides every layer's keep_prob when set.
  std::optional<double> keep_prob;

  friend bool operator==(const DropoutState&, const DropoutState&) = default;
};

/// Everything the backward pass needs from one forward call.
struct ForwardTrace {
  Embedding embedding;
  /// Pre-normalization feature was exactly zero; embedding is then all zeros.
  bool degenerate = false;
  /// activations[0] is the normalized input; activations[j + 1] is layer j's output.
  std::vector<Tensor> activations;
  /// Bernoulli masks drawn for each feature-dropout layer (empty tensors elsewhere).
  std::vector<Tensor> dropout_masks;
  std::optional<DropoutState> dropout;
};

/// Returns the embedding together with the per-layer activations.
ForwardTrace forward(const FeatureExtractor& model, const Tensor& x,
                     const DropoutState* dropout = nullptr);

/// Same network math in 64-bit; used by finite-difference checks.
Embedding forward_f64(const FeatureExtractor& model, const TensorD& x,
                      const DropoutState* dropout = nullptr);
/// Per-layer outputs of the 64-bit forward pass (index j is layer j's output).
std::vector<TensorD> layer_outputs_f64(const FeatureExtractor& model, const TensorD& x,
                                       const DropoutState* dropout = nullptr);

/// Extra gradient injected at the output of a given layer during backward().
struct LayerGradient {
  std::size_t layer = 0;
  Tensor grad;
};

/// Reverse-mode pass over a trace: ∂(upstreamᵀ·f(x) + Σ injectedᵀ·l_j(x))/∂x.
/// `dropout` must equal the state the trace was recorded with.
Tensor backward(const FeatureExtractor& model, const ForwardTrace& trace,
                std::span<const double> upstream, const DropoutState* dropout = nullptr,
                std::span<const LayerGradient> injected = {},
                std::vector<float>* weight_grads = nullptr);

/// ∂(upstreamᵀ·f(x))/∂x. Runs its own forward pass with the given dropout state.
Tensor input_gradient(const FeatureExtractor& model, const Tensor& x,
                      std::span<const double> upstream, const DropoutState* dropout = nullptr);

enum class LossKind { Softmax, MarginSoftmax };

std::string_view to_string(LossKind kind);
LossKind parse_loss_kind(std::string_view name);

struct TrainConfig {
  LossKind loss = LossKind::Softmax;
  int epochs = 12;
  std::size_t batch_size = 32;
  double learning_rate = 2e-3;
  std::uint64_t seed = 1;
  /// margin_softmax cosine margin and logit scale.
  double margin = 0.2;
  double scale = 16.0;
  /// Images per identity kept out of training to measure held-out accuracy.
  std::size_t holdout_per_identity = 1;
};

struct LabeledImage {
  std::size_t label = 0;
  const Tensor* image = nullptr;
};

struct TrainResult {
  FeatureExtractor model;
  /// Classifier-head Top-1 accuracy on the held-out images.
  double heldout_accuracy = 0.0;
  std::vector<double> epoch_loss;
};

/// Trains the extractor with a cosine classifier head on labeled images (Adam).
/// The head is discarded; only the extractor is returned.
TrainResult train(const FeatureExtractor& model, std::span<const LabeledImage> dataset,
                  const TrainConfig& cfg);

}  // namespace opom
