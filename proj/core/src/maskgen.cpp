#include "opom/maskgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "opom/error.hpp"
#include "opom/random.hpp"

namespace opom {

std::string_view to_string(Objective objective) {
  switch (objective) {
    case Objective::AffineHull: return "affine_hull";
    case Objective::ClassCenter: return "class_center";
    case Objective::ConvexHull: return "convex_hull";
    case Objective::FiUap: return "fi_uap";
    case Objective::FiUapPlus: return "fi_uap_plus";
    case Objective::FiUapAll: return "fi_uap_all";
    case Objective::GdUap: return "gd_uap";
  }
  return "unknown";
}

Objective parse_objective(std::string_view name) {
  struct Alias {
    std::string_view name;
    Objective objective;
  };
  static constexpr Alias kAliases[] = {
      {"affine_hull", Objective::AffineHull},   {"affinehull", Objective::AffineHull},
      {"class_center", Objective::ClassCenter}, {"classcenter", Objective::ClassCenter},
      {"convex_hull", Objective::ConvexHull},   {"convexhull", Objective::ConvexHull},
      {"fi_uap", Objective::FiUap},             {"fiuap", Objective::FiUap},
      {"fi_uap_plus", Objective::FiUapPlus},    {"fiuap+", Objective::FiUapPlus},
      {"fiuap-plus", Objective::FiUapPlus},     {"fi_uap_all", Objective::FiUapAll},
      {"fiuap-all", Objective::FiUapAll},       {"gd_uap", Objective::GdUap},
      {"gduap", Objective::GdUap},
  };
  for (const Alias& a : kAliases)
    if (a.name == name) return a.objective;
  fail(ErrorCode::InvalidInput, "unknown objective '" + std::string(name) + "'");
}

SubspaceKind subspace_kind_for(Objective objective) {
  switch (objective) {
    case Objective::AffineHull: return SubspaceKind::AffineHull;
    case Objective::ClassCenter: return SubspaceKind::ClassCenter;
    case Objective::ConvexHull: return SubspaceKind::ConvexHull;
    default: return SubspaceKind::SinglePoint;
  }
}

int default_iterations(Objective objective) { return objective == Objective::GdUap ? 10000 : 16; }

Tensor apply_mask(const Tensor& image, const Tensor& delta) {
  require(image.shape() == delta.shape(), "mask shape " + delta.shape().str() +
                                              " does not match image shape " + image.shape().str());
  Tensor out = image;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta[i];
  return out;
}

std::vector<Embedding> clean_embeddings(const FeatureExtractor& model, std::span<const Tensor> batch) {
  std::vector<Embedding> out;
  out.reserve(batch.size());
  for (const Tensor& x : batch) out.push_back(forward(model, x).embedding);
  return out;
}

namespace {

// Layers whose outputs enter the GD-UAP activation objective: every conv3x3 (read after
// its ReLU when one follows) and every fully_connected layer.
std::vector<std::size_t> activation_layers(const FeatureExtractor& model) {
  const auto& layers = model.layers();
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < layers.size(); ++j) {
    if (layers[j].kind == LayerKind::Conv3x3)
      out.push_back(j + 1 < layers.size() && layers[j + 1].kind == LayerKind::Relu ? j + 1 : j);
    else if (layers[j].kind == LayerKind::FullyConnected)
      out.push_back(j);
  }
  return out;
}

void check_inputs(Objective objective, const FeatureExtractor& model, const IdentitySubspace& subspace,
                  std::span<const Tensor> batch, const Shape& delta_shape) {
  require(!batch.empty(), "objective needs a nonempty batch");
  require(delta_shape == model.input_shape(), "mask shape does not match the model input");
  for (const Tensor& x : batch) require(x.shape() == model.input_shape(), "image shape does not match the model input");
  if (objective == Objective::GdUap) return;
  if (subspace.kind() != subspace_kind_for(objective))
    fail(ErrorCode::InvalidInput, std::string("objective ") + std::string(to_string(objective)) +
                                      " cannot use a " + std::string(to_string(subspace.kind())) + " subspace");
  require(subspace.dim() == model.embedding_dim(), "subspace dimension does not match the model embedding");
  if (objective == Objective::FiUap || objective == Objective::FiUapAll)
    require(subspace.size() == batch.size(), "single-point objectives need one anchor per image");
}

std::optional<DropoutState> dropout_for(const DropoutPlan* plan, std::size_t i) {
  if (!plan) return std::nullopt;
  return DropoutState{plan->seed, plan->stream_base + i, plan->keep_prob};
}

// Distance part of the objective for one masked embedding: adds to `value` and `upstream`.
void distance_term(Objective objective, const IdentitySubspace& subspace, std::span<const double> emb,
                   std::size_t i, double& value, std::vector<double>& upstream) {
  auto accumulate = [&](const DistanceResult& r) {
    value += r.distance;
    for (std::size_t k = 0; k < upstream.size(); ++k) upstream[k] += r.grad_query[k];
  };
  switch (objective) {
    case Objective::AffineHull:
    case Objective::ClassCenter:
    case Objective::ConvexHull:
      accumulate(distance_to(subspace, emb));
      break;
    case Objective::FiUap:
    case Objective::FiUapAll:
      accumulate(distance_to(subspace, emb, i));
      break;
    case Objective::FiUapPlus:
      for (std::size_t a = 0; a < subspace.size(); ++a) accumulate(distance_to(subspace, emb, a));
      break;
    case Objective::GdUap:
      break;
  }
}

template <class T>
double activation_norm(const BasicTensor<T>& t) {
  double acc = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) acc += static_cast<double>(t[i]) * t[i];
  return std::sqrt(acc);
}

constexpr double kMinActivationNorm = 1e-12;

struct Evaluation {
  double objective = 0.0;   // value as written
  double repulsion = 0.0;   // diversity term (ascent direction)
  TensorD ascent_grad;      // gradient of ascent_sign·objective + repulsion
  TensorD objective_grad;   // gradient of the objective as written
};

Evaluation evaluate(Objective objective, const FeatureExtractor& model, const IdentitySubspace& subspace,
                    std::span<const Tensor> batch, const Tensor& delta, const DropoutPlan* plan,
                    const Repulsion* repulsion, bool want_grad) {
  check_inputs(objective, model, subspace, batch, delta.shape());
  const int sign = objective == Objective::GdUap ? -1 : 1;
  const std::vector<std::size_t> act_layers =
      objective == Objective::GdUap ? activation_layers(model) : std::vector<std::size_t>{};
  Evaluation ev;
  if (want_grad) {
    ev.ascent_grad = TensorD(delta.shape());
    ev.objective_grad = TensorD(delta.shape());
  }
  const std::size_t d = model.embedding_dim();
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::optional<DropoutState> ds = dropout_for(plan, i);
    const DropoutState* dsp = ds ? &*ds : nullptr;
    const Tensor x = apply_mask(batch[i], delta);
    const ForwardTrace trace = forward(model, x, dsp);
    std::vector<double> upstream(d, 0.0);
    std::vector<LayerGradient> injected;

    double value = 0.0;
    if (objective == Objective::GdUap) {
      for (std::size_t j : act_layers) {
        const Tensor& act = trace.activations[j + 1];
        const double n = std::max(activation_norm(act), kMinActivationNorm);
        value -= std::log(n);
        if (want_grad) {
          LayerGradient lg{j, Tensor(act.shape())};
          for (std::size_t k = 0; k < act.size(); ++k) lg.grad[k] = static_cast<float>(-act[k] / (n * n));
          injected.push_back(std::move(lg));
        }
      }
    } else {
      distance_term(objective, subspace, trace.embedding, i, value, upstream);
    }
    ev.objective += value;

    std::vector<double> rep_upstream;
    if (repulsion) {
      rep_upstream.assign(d, 0.0);
      for (const auto& earlier : repulsion->repelled_from) {
        require(earlier.size() == batch.size(), "repulsion features do not match the batch");
        const Vector diff = subtract(trace.embedding, earlier[i]);
        const double dist = norm2(diff);
        ev.repulsion += repulsion->weight * std::min(dist, repulsion->threshold);
        if (dist > 0.0 && dist < repulsion->threshold)
          for (std::size_t k = 0; k < d; ++k) rep_upstream[k] += repulsion->weight * diff[k] / dist;
      }
    }
    if (!want_grad) continue;

    const Tensor g = backward(model, trace, upstream, dsp, injected);
    for (std::size_t k = 0; k < g.size(); ++k) {
      ev.objective_grad[k] += g[k];
      ev.ascent_grad[k] += sign * static_cast<double>(g[k]);
    }
    if (repulsion) {
      const Tensor gr = backward(model, trace, rep_upstream, dsp);
      for (std::size_t k = 0; k < gr.size(); ++k) ev.ascent_grad[k] += gr[k];
    }
  }
  return ev;
}

}  // namespace

ObjectiveValue objective_grad(Objective objective, const FeatureExtractor& model,
                              const IdentitySubspace& subspace, std::span<const Tensor> batch,
                              const Tensor& delta, const DropoutPlan* dropout) {
  Evaluation ev = evaluate(objective, model, subspace, batch, delta, dropout, nullptr, true);
  return ObjectiveValue{ev.objective, std::move(ev.objective_grad), objective == Objective::GdUap ? -1 : 1};
}

double objective_value_f64(Objective objective, const FeatureExtractor& model,
                           const IdentitySubspace& subspace, std::span<const Tensor> batch,
                           const TensorD& delta, const DropoutPlan* dropout) {
  check_inputs(objective, model, subspace, batch, delta.shape());
  const std::vector<std::size_t> act_layers =
      objective == Objective::GdUap ? activation_layers(model) : std::vector<std::size_t>{};
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::optional<DropoutState> ds = dropout_for(dropout, i);
    TensorD x(delta.shape());
    for (std::size_t k = 0; k < x.size(); ++k) x[k] = static_cast<double>(batch[i][k]) + delta[k];
    if (objective == Objective::GdUap) {
      const std::vector<TensorD> outs = layer_outputs_f64(model, x, ds ? &*ds : nullptr);
      for (std::size_t j : act_layers) total -= std::log(std::max(activation_norm(outs[j]), kMinActivationNorm));
    } else {
      const Embedding emb = forward_f64(model, x, ds ? &*ds : nullptr);
      std::vector<double> unused(emb.size(), 0.0);
      distance_term(objective, subspace, emb, i, total, unused);
    }
  }
  return total;
}

Mask generate_mask(const FeatureExtractor& model, std::span<const Tensor> images, const AttackConfig& cfg,
                   std::string identity, const StepObserver& observer, const Repulsion* repulsion) {
  require(cfg.epsilon > 0.0, "epsilon must be positive");
  require(cfg.max_iters >= 1, "max_iters must be at least 1");
  require(cfg.momentum_decay >= 0.0, "momentum decay must be non-negative");
  if (cfg.dropout_keep)
    require(*cfg.dropout_keep >= 0.0 && *cfg.dropout_keep <= 1.0, "dropout keep-probability must lie in [0,1]");
  require(!images.empty(), "mask generation needs at least one image");
  for (const Tensor& x : images)
    if (!(x.shape() == model.input_shape()))
      fail(ErrorCode::InvalidInput, "image shape " + x.shape().str() + " does not match model input " +
                                        model.input_shape().str());

  // Anchors and hull come from the clean images, once per run.
  const std::vector<Embedding> anchors = clean_embeddings(model, images);
  const IdentitySubspace subspace = fit_subspace(anchors, subspace_kind_for(cfg.objective));

  // Largest float not exceeding epsilon, so the clamp is exact in float storage.
  float bound = static_cast<float>(cfg.epsilon);
  if (static_cast<double>(bound) > cfg.epsilon) bound = std::nextafter(bound, 0.0f);

  Mask mask;
  mask.identity = std::move(identity);
  mask.config = cfg;
  mask.delta = Tensor(model.input_shape());
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> init(-cfg.epsilon, cfg.epsilon);
  for (float& v : mask.delta.values()) v = std::clamp(static_cast<float>(init(rng)), -bound, bound);
  if (observer) observer(0, mask.delta);

  const std::uint64_t dropout_seed = mix_seed(cfg.seed, "feature-dropout");
  auto plan_for = [&](int step) -> std::optional<DropoutPlan> {
    if (!cfg.dropout_keep) return std::nullopt;
    return DropoutPlan{dropout_seed, static_cast<std::uint64_t>(step) * images.size(), *cfg.dropout_keep};
  };
  const int sign = cfg.objective == Objective::GdUap ? -1 : 1;

  TensorD momentum(model.input_shape());
  for (int step = 0; step < cfg.max_iters; ++step) {
    const std::optional<DropoutPlan> plan = plan_for(step);
    const Evaluation ev = evaluate(cfg.objective, model, subspace, images, mask.delta,
                                   plan ? &*plan : nullptr, repulsion, true);
    mask.objective_log.push_back(sign * ev.objective + ev.repulsion);

    double l1 = 0.0;
    for (double g : ev.ascent_grad.values()) l1 += std::abs(g);
    if (!(l1 > 0.0) || !std::isfinite(l1)) {
      ++mask.frozen_steps;
      if (observer) observer(step + 1, mask.delta);
      continue;
    }
    for (std::size_t k = 0; k < momentum.size(); ++k) {
      momentum[k] = cfg.momentum_decay * momentum[k] + ev.ascent_grad[k] / l1;
      const double g = momentum[k];
      const float s = g > 0.0 ? 1.0f : (g < 0.0 ? -1.0f : 0.0f);
      mask.delta[k] = std::min(bound, std::max(-bound, mask.delta[k] + s));
    }
    if (observer) observer(step + 1, mask.delta);
  }
  const std::optional<DropoutPlan> plan = plan_for(cfg.max_iters);
  const Evaluation last = evaluate(cfg.objective, model, subspace, images, mask.delta,
                                   plan ? &*plan : nullptr, repulsion, false);
  mask.objective_log.push_back(sign * last.objective + last.repulsion);
  return mask;
}

double DiverseMasks::PairDistances::mean() const {
  if (distances.empty()) return 0.0;
  double acc = 0.0;
  for (double d : distances) acc += d;
  return acc / static_cast<double>(distances.size());
}

double DiverseMasks::mean_pairwise_distance() const {
  if (pairwise.empty()) return 0.0;
  double acc = 0.0;
  for (const auto& p : pairwise) acc += p.mean();
  return acc / static_cast<double>(pairwise.size());
}

std::uint64_t diverse_mask_seed(std::uint64_t seed, std::size_t index) {
  return index == 0 ? seed : mix_seed(seed, static_cast<std::uint64_t>(index));
}

namespace {

std::vector<Embedding> masked_embeddings(const FeatureExtractor& model, std::span<const Tensor> images,
                                         const Tensor& delta) {
  std::vector<Embedding> out;
  out.reserve(images.size());
  for (const Tensor& x : images) out.push_back(forward(model, apply_mask(x, delta)).embedding);
  return out;
}

}  // namespace

std::vector<DiverseMasks::PairDistances> pairwise_mask_distances(const FeatureExtractor& model,
                                                                 std::span<const Tensor> images,
                                                                 std::span<const Mask> masks) {
  std::vector<std::vector<Embedding>> feats;
  for (const Mask& m : masks) feats.push_back(masked_embeddings(model, images, m.delta));
  std::vector<DiverseMasks::PairDistances> out;
  for (std::size_t a = 0; a < masks.size(); ++a)
    for (std::size_t b = a + 1; b < masks.size(); ++b) {
      DiverseMasks::PairDistances p{a, b, {}};
      for (std::size_t i = 0; i < images.size(); ++i) p.distances.push_back(norm2(subtract(feats[a][i], feats[b][i])));
      out.push_back(std::move(p));
    }
  return out;
}

DiverseMasks generate_diverse_masks(const FeatureExtractor& model, std::span<const Tensor> images,
                                    const AttackConfig& cfg, const DiversityConfig& div, std::string identity) {
  require(div.num_masks >= 1, "diversity needs at least one mask");
  require(div.separation_threshold >= 0.0, "separation threshold must be non-negative");
  DiverseMasks out;
  Repulsion repulsion;
  repulsion.weight = div.separation_weight;
  repulsion.threshold = div.separation_threshold;
  for (std::size_t j = 0; j < div.num_masks; ++j) {
    AttackConfig cj = cfg;
    cj.seed = diverse_mask_seed(cfg.seed, j);
    const bool repel = j > 0 && div.separation_weight != 0.0;
    out.masks.push_back(generate_mask(model, images, cj, identity, {}, repel ? &repulsion : nullptr));
    if (div.separation_weight != 0.0)
      repulsion.repelled_from.push_back(masked_embeddings(model, images, out.masks.back().delta));
  }
  out.pairwise = pairwise_mask_distances(model, images, out.masks);
  return out;
}

}  // namespace opom
