#include "opom/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

#include "opom/error.hpp"
#include "opom/random.hpp"

namespace opom {

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv3x3: return "conv3x3";
    case LayerKind::Relu: return "relu";
    case LayerKind::AvgPool2x2: return "avgpool2x2";
    case LayerKind::GlobalAvgPool: return "global_avgpool";
    case LayerKind::FullyConnected: return "fully_connected";
    case LayerKind::L2Normalize: return "l2_normalize";
    case LayerKind::FeatureDropout: return "feature_dropout";
  }
  return "unknown";
}

LayerKind parse_layer_kind(std::string_view name) {
  for (LayerKind k : {LayerKind::Conv3x3, LayerKind::Relu, LayerKind::AvgPool2x2,
                      LayerKind::GlobalAvgPool, LayerKind::FullyConnected, LayerKind::L2Normalize,
                      LayerKind::FeatureDropout})
    if (to_string(k) == name) return k;
  fail(ErrorCode::InvalidInput, "unknown layer kind '" + std::string(name) + "'");
}

std::string_view to_string(LossKind kind) {
  return kind == LossKind::Softmax ? "softmax" : "margin_softmax";
}

LossKind parse_loss_kind(std::string_view name) {
  if (name == "softmax") return LossKind::Softmax;
  if (name == "margin_softmax") return LossKind::MarginSoftmax;
  fail(ErrorCode::InvalidInput, "unknown loss '" + std::string(name) + "'");
}

FeatureExtractor::FeatureExtractor(Shape input, std::vector<LayerSpec> layers, std::uint64_t seed)
    : input_(input), layers_(std::move(layers)), seed_(seed) {
  require(input_.count() > 0, "extractor input shape is empty");
  require(!layers_.empty() && layers_.back().kind == LayerKind::L2Normalize,
          "layer chain must end with l2_normalize");
  Shape cur = input_;
  std::size_t params = 0;
  for (const LayerSpec& l : layers_) {
    param_offsets_.push_back(params);
    switch (l.kind) {
      case LayerKind::Conv3x3:
        require(l.in_channels == cur.channels, "conv3x3 input channels do not match the chain");
        require(l.out_channels > 0, "conv3x3 needs output channels");
        params += l.out_channels * l.in_channels * 9 + l.out_channels;
        cur.channels = l.out_channels;
        break;
      case LayerKind::Relu:
      case LayerKind::L2Normalize:
        break;
      case LayerKind::FeatureDropout:
        require(l.keep_prob >= 0.0 && l.keep_prob <= 1.0, "dropout keep_prob must lie in [0,1]");
        break;
      case LayerKind::AvgPool2x2:
        require(cur.height % 2 == 0 && cur.width % 2 == 0, "avgpool2x2 needs even spatial size");
        cur.height /= 2;
        cur.width /= 2;
        break;
      case LayerKind::GlobalAvgPool:
        cur = Shape{cur.channels, 1, 1};
        break;
      case LayerKind::FullyConnected:
        require(l.in_channels == cur.count(), "fully_connected input size does not match the chain");
        require(l.out_channels > 0, "fully_connected needs an output size");
        params += l.out_channels * l.in_channels + l.out_channels;
        cur = Shape{l.out_channels, 1, 1};
        break;
    }
    layer_shapes_.push_back(cur);
  }
  require(cur.height == 1 && cur.width == 1, "final feature must be a flat vector");
  embedding_dim_ = cur.channels;
  weights_.assign(params, 0.0f);
  initialize_weights();
}

void FeatureExtractor::initialize_weights() {
  std::mt19937_64 rng(seed_);
  for (std::size_t j = 0; j < layers_.size(); ++j) {
    const LayerSpec& l = layers_[j];
    std::size_t fan_in = 0, n_weights = 0;
    if (l.kind == LayerKind::Conv3x3) {
      fan_in = l.in_channels * 9;
      n_weights = l.out_channels * fan_in;
    } else if (l.kind == LayerKind::FullyConnected) {
      fan_in = l.in_channels;
      n_weights = l.out_channels * fan_in;
    } else {
      continue;
    }
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    float* w = weights_.data() + param_offsets_[j];
    for (std::size_t i = 0; i < n_weights; ++i) w[i] = static_cast<float>(normal(rng));
    std::fill(w + n_weights, w + n_weights + l.out_channels, 0.0f);
  }
}

FeatureExtractor make_extractor(const ArchitectureSpec& arch, std::uint64_t seed) {
  std::vector<LayerSpec> layers;
  auto dropout = [&] {
    if (arch.dropout_layers)
      layers.push_back({LayerKind::FeatureDropout, 0, 0, arch.keep_prob});
  };
  layers.push_back({LayerKind::Conv3x3, arch.input.channels, arch.conv1_channels});
  layers.push_back({LayerKind::Relu});
  dropout();
  layers.push_back({LayerKind::AvgPool2x2});
  layers.push_back({LayerKind::Conv3x3, arch.conv1_channels, arch.conv2_channels});
  layers.push_back({LayerKind::Relu});
  dropout();
  require(arch.head_grid >= 1, "head_grid must be at least 1");
  std::size_t side = arch.input.height / 2;
  if (arch.head_grid == 1) {
    layers.push_back({LayerKind::GlobalAvgPool});
  } else {
    require(arch.input.height == arch.input.width, "pooled heads need square inputs");
    while (side > arch.head_grid) {
      require(side % 2 == 0, "head_grid must divide the feature map by powers of two");
      layers.push_back({LayerKind::AvgPool2x2});
      side /= 2;
    }
    require(side == arch.head_grid, "head_grid must divide the feature map by powers of two");
  }
  const std::size_t grid = arch.head_grid == 1 ? 1 : side;
  layers.push_back({LayerKind::FullyConnected, arch.conv2_channels * grid * grid, arch.embedding_dim});
  layers.push_back({LayerKind::L2Normalize});
  return FeatureExtractor(arch.input, std::move(layers), seed);
}

namespace {

template <class T>
BasicTensor<T> pad1(const BasicTensor<T>& in) {
  const Shape s = in.shape();
  BasicTensor<T> p(Shape{s.channels, s.height + 2, s.width + 2});
  for (std::size_t c = 0; c < s.channels; ++c)
    for (std::size_t y = 0; y < s.height; ++y)
      std::copy_n(&in.at(c, y, 0), s.width, &p.at(c, y + 1, 1));
  return p;
}

template <class T>
BasicTensor<T> conv_forward(const BasicTensor<T>& in, const float* w, std::size_t cout) {
  const Shape s = in.shape();
  const std::size_t cin = s.channels, h = s.height, wd = s.width;
  const BasicTensor<T> p = pad1(in);
  const float* bias = w + cout * cin * 9;
  BasicTensor<T> out(Shape{cout, h, wd});
  for (std::size_t o = 0; o < cout; ++o) {
    T* plane = &out.at(o, 0, 0);
    std::fill(plane, plane + h * wd, static_cast<T>(bias[o]));
    for (std::size_t i = 0; i < cin; ++i)
      for (std::size_t ky = 0; ky < 3; ++ky)
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const T wv = static_cast<T>(w[((o * cin + i) * 3 + ky) * 3 + kx]);
          for (std::size_t y = 0; y < h; ++y) {
            T* orow = plane + y * wd;
            const T* prow = &p.at(i, y + ky, kx);
            for (std::size_t x = 0; x < wd; ++x) orow[x] += wv * prow[x];
          }
        }
  }
  return out;
}

template <class T>
BasicTensor<T> conv_backward(const BasicTensor<T>& in, const BasicTensor<T>& gout, const float* w,
                             std::size_t cout, float* gw) {
  const Shape s = in.shape();
  const std::size_t cin = s.channels, h = s.height, wd = s.width;
  BasicTensor<T> gp(Shape{cin, h + 2, wd + 2});
  BasicTensor<T> p;
  if (gw) p = pad1(in);
  for (std::size_t o = 0; o < cout; ++o) {
    const T* gplane = &gout.at(o, 0, 0);
    for (std::size_t i = 0; i < cin; ++i)
      for (std::size_t ky = 0; ky < 3; ++ky)
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const std::size_t widx = ((o * cin + i) * 3 + ky) * 3 + kx;
          const T wv = static_cast<T>(w[widx]);
          double acc = 0.0;
          for (std::size_t y = 0; y < h; ++y) {
            T* grow = &gp.at(i, y + ky, kx);
            const T* gorow = gplane + y * wd;
            for (std::size_t x = 0; x < wd; ++x) grow[x] += wv * gorow[x];
            if (gw) {
              const T* prow = &p.at(i, y + ky, kx);
              T row_acc = 0;
              for (std::size_t x = 0; x < wd; ++x) row_acc += gorow[x] * prow[x];
              acc += row_acc;
            }
          }
          if (gw) gw[widx] += static_cast<float>(acc);
        }
    if (gw) {
      double acc = 0.0;
      for (std::size_t k = 0; k < h * wd; ++k) acc += gplane[k];
      gw[cout * cin * 9 + o] += static_cast<float>(acc);
    }
  }
  BasicTensor<T> gin(s);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t y = 0; y < h; ++y) std::copy_n(&gp.at(c, y + 1, 1), wd, &gin.at(c, y, 0));
  return gin;
}

template <class T>
BasicTensor<T> fc_forward(const BasicTensor<T>& in, const float* w, std::size_t nin, std::size_t nout) {
  BasicTensor<T> out(Shape{nout, 1, 1});
  const float* bias = w + nout * nin;
  for (std::size_t o = 0; o < nout; ++o) {
    double acc = bias[o];
    const float* row = w + o * nin;
    for (std::size_t i = 0; i < nin; ++i) acc += static_cast<double>(row[i]) * in[i];
    out[o] = static_cast<T>(acc);
  }
  return out;
}

template <class T>
BasicTensor<T> fc_backward(const BasicTensor<T>& in, const BasicTensor<T>& gout, const float* w,
                           std::size_t nin, std::size_t nout, float* gw) {
  std::vector<double> acc(nin, 0.0);
  for (std::size_t o = 0; o < nout; ++o) {
    const double g = gout[o];
    const float* row = w + o * nin;
    for (std::size_t i = 0; i < nin; ++i) acc[i] += static_cast<double>(row[i]) * g;
    if (gw) {
      float* grow = gw + o * nin;
      for (std::size_t i = 0; i < nin; ++i) grow[i] += static_cast<float>(g * in[i]);
      gw[nout * nin + o] += static_cast<float>(g);
    }
  }
  BasicTensor<T> gin(in.shape());
  for (std::size_t i = 0; i < nin; ++i) gin[i] = static_cast<T>(acc[i]);
  return gin;
}

Tensor draw_dropout_mask(const Shape& shape, double keep, const DropoutState& state, std::size_t layer) {
  Tensor mask(shape);
  const std::uint64_t base = mix_seed(mix_seed(state.seed, state.stream), layer);
  for (std::size_t i = 0; i < mask.size(); ++i)
    mask[i] = unit_interval(mix_seed(base, i)) < keep ? 1.0f : 0.0f;
  return mask;
}

template <class T>
bool run_forward(const FeatureExtractor& model, const BasicTensor<T>& x, const DropoutState* dropout,
                 std::vector<BasicTensor<T>>& acts, std::vector<Tensor>* masks) {
  if (!(x.shape() == model.input_shape()))
    fail(ErrorCode::InvalidInput, "input shape " + x.shape().str() + " does not match model input " +
                                      model.input_shape().str());
  const auto& layers = model.layers();
  acts.clear();
  acts.reserve(layers.size() + 1);
  BasicTensor<T> in(x.shape());
  const T offset = static_cast<T>(model.input_offset());
  const T scale = static_cast<T>(model.input_scale());
  for (std::size_t i = 0; i < x.size(); ++i) in[i] = (x[i] - offset) * scale;
  acts.push_back(std::move(in));
  if (masks) masks->assign(layers.size(), Tensor{});

  bool degenerate = false;
  for (std::size_t j = 0; j < layers.size(); ++j) {
    const LayerSpec& l = layers[j];
    const BasicTensor<T>& cur = acts.back();
    const float* w = model.weights().data() + model.param_offsets()[j];
    BasicTensor<T> out;
    switch (l.kind) {
      case LayerKind::Conv3x3:
        out = conv_forward(cur, w, l.out_channels);
        break;
      case LayerKind::Relu:
        out = cur;
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > T(0) ? out[i] : T(0);
        break;
      case LayerKind::AvgPool2x2: {
        const Shape s = cur.shape();
        out = BasicTensor<T>(Shape{s.channels, s.height / 2, s.width / 2});
        for (std::size_t c = 0; c < s.channels; ++c)
          for (std::size_t y = 0; y < s.height / 2; ++y)
            for (std::size_t xx = 0; xx < s.width / 2; ++xx)
              out.at(c, y, xx) = T(0.25) * (cur.at(c, 2 * y, 2 * xx) + cur.at(c, 2 * y, 2 * xx + 1) +
                                            cur.at(c, 2 * y + 1, 2 * xx) + cur.at(c, 2 * y + 1, 2 * xx + 1));
        break;
      }
      case LayerKind::GlobalAvgPool: {
        const Shape s = cur.shape();
        const std::size_t plane = s.height * s.width;
        out = BasicTensor<T>(Shape{s.channels, 1, 1});
        for (std::size_t c = 0; c < s.channels; ++c) {
          double acc = 0.0;
          const T* p = &cur.at(c, 0, 0);
          for (std::size_t k = 0; k < plane; ++k) acc += p[k];
          out[c] = static_cast<T>(acc / static_cast<double>(plane));
        }
        break;
      }
      case LayerKind::FullyConnected:
        out = fc_forward(cur, w, l.in_channels, l.out_channels);
        break;
      case LayerKind::L2Normalize: {
        double nn = 0.0;
        for (std::size_t i = 0; i < cur.size(); ++i) nn += static_cast<double>(cur[i]) * cur[i];
        out = BasicTensor<T>(cur.shape());
        if (nn > 0.0) {
          const double n = std::sqrt(nn);
          for (std::size_t i = 0; i < cur.size(); ++i) out[i] = static_cast<T>(cur[i] / n);
        } else {
          degenerate = true;
        }
        break;
      }
      case LayerKind::FeatureDropout: {
        out = cur;
        if (dropout) {
          const double keep = dropout->keep_prob.value_or(l.keep_prob);
          Tensor mask = draw_dropout_mask(cur.shape(), keep, *dropout, j);
          for (std::size_t i = 0; i < out.size(); ++i) out[i] *= static_cast<T>(mask[i]);
          if (masks) (*masks)[j] = std::move(mask);
        }
        break;
      }
    }
    acts.push_back(std::move(out));
  }
  return degenerate;
}

}  // namespace

ForwardTrace forward(const FeatureExtractor& model, const Tensor& x, const DropoutState* dropout) {
  ForwardTrace trace;
  trace.degenerate = run_forward(model, x, dropout, trace.activations, &trace.dropout_masks);
  if (dropout) trace.dropout = *dropout;
  const Tensor& out = trace.activations.back();
  trace.embedding.assign(out.values().begin(), out.values().end());
  return trace;
}

Embedding forward_f64(const FeatureExtractor& model, const TensorD& x, const DropoutState* dropout) {
  std::vector<TensorD> acts;
  run_forward(model, x, dropout, acts, nullptr);
  return acts.back().storage();
}

std::vector<TensorD> layer_outputs_f64(const FeatureExtractor& model, const TensorD& x,
                                       const DropoutState* dropout) {
  std::vector<TensorD> acts;
  run_forward(model, x, dropout, acts, nullptr);
  acts.erase(acts.begin());
  return acts;
}

Tensor backward(const FeatureExtractor& model, const ForwardTrace& trace,
                std::span<const double> upstream, const DropoutState* dropout,
                std::span<const LayerGradient> injected, std::vector<float>* weight_grads) {
  const std::optional<DropoutState> expected = dropout ? std::optional<DropoutState>(*dropout) : std::nullopt;
  if (trace.dropout != expected)
    fail(ErrorCode::InternalError, "dropout state differs from the one used in the forward pass");
  const auto& layers = model.layers();
  require(trace.activations.size() == layers.size() + 1, "trace does not belong to this model");
  require(upstream.size() == model.embedding_dim(), "upstream gradient has wrong dimension");
  if (weight_grads && weight_grads->size() != model.weights().size())
    weight_grads->assign(model.weights().size(), 0.0f);

  Tensor grad(trace.activations.back().shape());
  for (std::size_t i = 0; i < upstream.size(); ++i) grad[i] = static_cast<float>(upstream[i]);

  for (std::size_t j = layers.size(); j-- > 0;) {
    for (const LayerGradient& lg : injected)
      if (lg.layer == j) {
        require(lg.grad.shape() == grad.shape(), "injected gradient shape mismatch");
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += lg.grad[i];
      }
    const LayerSpec& l = layers[j];
    const Tensor& in = trace.activations[j];
    const Tensor& out = trace.activations[j + 1];
    const float* w = model.weights().data() + model.param_offsets()[j];
    float* gw = weight_grads ? weight_grads->data() + model.param_offsets()[j] : nullptr;
    switch (l.kind) {
      case LayerKind::Conv3x3:
        grad = conv_backward(in, grad, w, l.out_channels, gw);
        break;
      case LayerKind::Relu:
        for (std::size_t i = 0; i < grad.size(); ++i)
          if (!(in[i] > 0.0f)) grad[i] = 0.0f;
        break;
      case LayerKind::AvgPool2x2: {
        const Shape s = in.shape();
        Tensor g(s);
        for (std::size_t c = 0; c < s.channels; ++c)
          for (std::size_t y = 0; y < s.height; ++y)
            for (std::size_t x = 0; x < s.width; ++x) g.at(c, y, x) = 0.25f * grad.at(c, y / 2, x / 2);
        grad = std::move(g);
        break;
      }
      case LayerKind::GlobalAvgPool: {
        const Shape s = in.shape();
        Tensor g(s);
        const float inv = 1.0f / static_cast<float>(s.height * s.width);
        for (std::size_t c = 0; c < s.channels; ++c) {
          float* p = &g.at(c, 0, 0);
          std::fill(p, p + s.height * s.width, grad[c] * inv);
        }
        grad = std::move(g);
        break;
      }
      case LayerKind::FullyConnected:
        grad = fc_backward(in, grad, w, l.in_channels, l.out_channels, gw);
        break;
      case LayerKind::L2Normalize: {
        double nn = 0.0, yg = 0.0;
        for (std::size_t i = 0; i < in.size(); ++i) {
          nn += static_cast<double>(in[i]) * in[i];
          yg += static_cast<double>(out[i]) * grad[i];
        }
        if (nn > 0.0) {
          const double n = std::sqrt(nn);
          for (std::size_t i = 0; i < grad.size(); ++i)
            grad[i] = static_cast<float>((grad[i] - out[i] * yg) / n);
        } else {
          grad.fill(0.0f);
        }
        break;
      }
      case LayerKind::FeatureDropout: {
        const Tensor& mask = trace.dropout_masks[j];
        if (!mask.empty())
          for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= mask[i];
        break;
      }
    }
  }
  const float scale = model.input_scale();
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= scale;
  return grad;
}

Tensor input_gradient(const FeatureExtractor& model, const Tensor& x, std::span<const double> upstream,
                      const DropoutState* dropout) {
  const ForwardTrace trace = forward(model, x, dropout);
  return backward(model, trace, upstream, dropout);
}

namespace {

struct Adam {
  explicit Adam(std::size_t n) : m(n, 0.0), v(n, 0.0) {}
  void step(std::span<float> params, std::span<const double> grads, double lr) {
    ++t;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * grads[i];
      v[i] = b2 * v[i] + (1 - b2) * grads[i] * grads[i];
      params[i] -= static_cast<float>(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps));
    }
  }
  std::vector<double> m, v;
  int t = 0;
};

// Classifier head on top of the unit embedding.
struct Head {
  Head(std::size_t classes, std::size_t dim, LossKind loss, std::uint64_t seed)
      : classes(classes), dim(dim), loss(loss), params(classes * dim + classes, 0.0f) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < classes * dim; ++i) params[i] = static_cast<float>(normal(rng));
  }

  std::vector<double> logits(std::span<const double> f, std::size_t label, const TrainConfig& cfg,
                             std::vector<double>* cosines) const {
    std::vector<double> z(classes);
    if (cosines) cosines->assign(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      const float* w = params.data() + c * dim;
      double wf = 0.0, ww = 0.0;
      for (std::size_t i = 0; i < dim; ++i) {
        wf += w[i] * f[i];
        ww += static_cast<double>(w[i]) * w[i];
      }
      if (loss == LossKind::Softmax) {
        z[c] = wf + params[classes * dim + c];
      } else {
        const double cosine = ww > 0.0 ? wf / std::sqrt(ww) : 0.0;
        if (cosines) (*cosines)[c] = cosine;
        z[c] = cfg.scale * (cosine - (c == label ? cfg.margin : 0.0));
      }
    }
    return z;
  }

  std::size_t classes, dim;
  LossKind loss;
  std::vector<float> params;
};

std::vector<double> softmax(std::span<const double> z) {
  const double zmax = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double total = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) total += (p[i] = std::exp(z[i] - zmax));
  for (double& v : p) v /= total;
  return p;
}

}  // namespace

TrainResult train(const FeatureExtractor& model, std::span<const LabeledImage> dataset,
                  const TrainConfig& cfg) {
  require(cfg.learning_rate > 0.0, "learning rate must be positive");
  require(cfg.batch_size > 0, "batch size must be positive");
  std::size_t classes = 0;
  for (const LabeledImage& li : dataset) {
    require(li.image != nullptr, "training image missing");
    classes = std::max(classes, li.label + 1);
  }
  std::vector<std::vector<std::size_t>> by_label(classes);
  for (std::size_t i = 0; i < dataset.size(); ++i) by_label[dataset[i].label].push_back(i);
  std::size_t populated = 0;
  for (const auto& idx : by_label) {
    if (idx.empty()) continue;
    require(idx.size() >= 2, "every identity needs at least two images");
    ++populated;
  }
  require(populated >= 2, "training needs at least two identities");

  std::vector<std::size_t> train_idx, holdout_idx;
  for (const auto& idx : by_label) {
    const std::size_t hold = std::min(cfg.holdout_per_identity, idx.size() - 1);
    for (std::size_t k = 0; k < idx.size(); ++k)
      (k + hold >= idx.size() ? holdout_idx : train_idx).push_back(idx[k]);
  }

  TrainResult result{model, 0.0, {}};
  FeatureExtractor& net = result.model;
  const std::size_t dim = net.embedding_dim();
  Head head(classes, dim, cfg.loss, mix_seed(cfg.seed, 0x4eadULL));
  Adam net_opt(net.weights().size());
  Adam head_opt(head.params.size());
  std::mt19937_64 rng(cfg.seed);

  std::vector<float> wgrad;
  std::vector<double> net_grad(net.weights().size());
  std::vector<double> head_grad(head.params.size());
  const std::size_t steps_per_epoch = (train_idx.size() + cfg.batch_size - 1) / cfg.batch_size;
  const double total_steps = static_cast<double>(std::max<std::size_t>(1, steps_per_epoch * cfg.epochs));
  std::size_t step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(train_idx.begin(), train_idx.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < train_idx.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(train_idx.size(), start + cfg.batch_size);
      std::fill(net_grad.begin(), net_grad.end(), 0.0);
      std::fill(head_grad.begin(), head_grad.end(), 0.0);
      for (std::size_t b = start; b < end; ++b) {
        const LabeledImage& sample = dataset[train_idx[b]];
        const ForwardTrace trace = forward(net, *sample.image);
        const Embedding& f = trace.embedding;
        std::vector<double> cosines;
        const std::vector<double> z = head.logits(f, sample.label, cfg, &cosines);
        const std::vector<double> p = softmax(z);
        epoch_loss += -std::log(std::max(p[sample.label], 1e-300));

        std::vector<double> df(dim, 0.0);
        for (std::size_t c = 0; c < classes; ++c) {
          const double g = p[c] - (c == sample.label ? 1.0 : 0.0);
          const float* w = head.params.data() + c * dim;
          double* gw = head_grad.data() + c * dim;
          if (cfg.loss == LossKind::Softmax) {
            for (std::size_t i = 0; i < dim; ++i) {
              df[i] += g * w[i];
              gw[i] += g * f[i];
            }
            head_grad[classes * dim + c] += g;
          } else {
            double ww = 0.0;
            for (std::size_t i = 0; i < dim; ++i) ww += static_cast<double>(w[i]) * w[i];
            const double wn = std::sqrt(ww);
            if (wn == 0.0) continue;
            const double gc = cfg.scale * g;
            for (std::size_t i = 0; i < dim; ++i) {
              const double what = w[i] / wn;
              df[i] += gc * what;
              gw[i] += gc * (f[i] - cosines[c] * what) / wn;
            }
          }
        }
        wgrad.assign(net.weights().size(), 0.0f);
        backward(net, trace, df, nullptr, {}, &wgrad);
        for (std::size_t i = 0; i < wgrad.size(); ++i) net_grad[i] += wgrad[i];
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (double& g : net_grad) g *= inv;
      for (double& g : head_grad) g *= inv;
      const double progress = static_cast<double>(step++) / total_steps;
      const double lr = cfg.learning_rate * (0.1 + 0.9 * 0.5 * (1.0 + std::cos(progress * 3.141592653589793)));
      net_opt.step(net.weights(), net_grad, lr);
      head_opt.step(head.params, head_grad, lr);
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(std::max<std::size_t>(1, train_idx.size())));
  }

  std::size_t correct = 0;
  for (std::size_t i : holdout_idx) {
    const ForwardTrace trace = forward(net, *dataset[i].image);
    const std::vector<double> z = head.logits(trace.embedding, dataset[i].label, cfg, nullptr);
    // Margin is a training-time device; classify on the plain scores.
    std::vector<double> scores = z;
    if (cfg.loss == LossKind::MarginSoftmax) scores[dataset[i].label] += cfg.scale * cfg.margin;
    const auto best = std::max_element(scores.begin(), scores.end()) - scores.begin();
    if (static_cast<std::size_t>(best) == dataset[i].label) ++correct;
  }
  result.heldout_accuracy =
      holdout_idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(holdout_idx.size());
  return result;
}

}  // namespace opom
