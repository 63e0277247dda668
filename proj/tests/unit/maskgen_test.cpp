#include <gtest/gtest.h>

#include <cmath>

#include "generators.hpp"
#include "opom/error.hpp"
#include "opom/maskgen.hpp"

namespace opom {
namespace {

using testing::Gen;

const Shape kSmall{3, 8, 8};

FeatureExtractor small_model(std::uint64_t seed) {
  ArchitectureSpec a;
  a.input = kSmall;
  a.conv1_channels = 4;
  a.conv2_channels = 6;
  a.embedding_dim = 12;
  a.head_grid = 2;
  return make_extractor(a, seed);
}

std::vector<Tensor> images(Gen& g, std::size_t n, Shape s = kSmall) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(g.image(s, 20.0, 235.0));
  return out;
}

IdentitySubspace subspace_for(Objective o, const FeatureExtractor& m, std::span<const Tensor> batch) {
  return fit_subspace(clean_embeddings(m, batch), subspace_kind_for(o));
}

Tensor random_delta(Gen& g, Shape s, double eps = 8.0) {
  Tensor d(s);
  for (float& v : d.values()) v = static_cast<float>(g.uniform(-eps, eps));
  return d;
}

constexpr Objective kAll[] = {Objective::AffineHull, Objective::ClassCenter, Objective::ConvexHull, Objective::FiUap,
                              Objective::FiUapPlus,  Objective::FiUapAll,    Objective::GdUap};
constexpr Objective kCollapsing[] = {Objective::AffineHull, Objective::ClassCenter, Objective::ConvexHull,
                                     Objective::FiUap};

TEST(ObjectiveNames, ParseCanonicalAndCliSpellings) {
  for (Objective o : kAll) EXPECT_EQ(parse_objective(to_string(o)), o);
  EXPECT_EQ(parse_objective("convexhull"), Objective::ConvexHull);
  EXPECT_EQ(parse_objective("fiuap+"), Objective::FiUapPlus);
  EXPECT_EQ(parse_objective("fiuap"), Objective::FiUap);
  EXPECT_THROW(parse_objective("gap"), Error);
  EXPECT_EQ(default_iterations(Objective::GdUap), 10000);
  EXPECT_EQ(default_iterations(Objective::ConvexHull), 16);
}

TEST(ObjectiveGrad, ConvexHullIsZeroAtZeroMask) {
  Gen g(1);
  const FeatureExtractor m = small_model(1);
  const auto batch = images(g, 5);
  const auto ov = objective_grad(Objective::ConvexHull, m, subspace_for(Objective::ConvexHull, m, batch), batch,
                                 Tensor(kSmall));
  EXPECT_LE(ov.value, 1e-6);
}

TEST(ObjectiveGrad, SingleImageVariantsAgree) {
  Gen g(2);
  const FeatureExtractor m = small_model(2);
  const auto batch = images(g, 1);
  const Tensor delta = random_delta(g, kSmall);
  const ObjectiveValue ref =
      objective_grad(Objective::FiUap, m, subspace_for(Objective::FiUap, m, batch), batch, delta);
  for (Objective o : kCollapsing) {
    const ObjectiveValue ov = objective_grad(o, m, subspace_for(o, m, batch), batch, delta);
    EXPECT_EQ(ov.value, ref.value) << to_string(o);
    EXPECT_EQ(ov.grad, ref.grad) << to_string(o);
  }
}

// Central-difference step in pixel levels; wider steps straddle ReLU kinks.
constexpr double kFdStep = 1e-3;

double fd_relative_error(Objective o, const FeatureExtractor& m, std::span<const Tensor> batch, const Tensor& delta,
                         const DropoutPlan* plan, Gen& g) {
  const IdentitySubspace s = subspace_for(o, m, batch);
  const ObjectiveValue ov = objective_grad(o, m, s, batch, delta, plan);
  TensorD base(delta.shape());
  for (std::size_t i = 0; i < delta.size(); ++i) base[i] = delta[i];
  Vector analytic, numeric;
  for (int k = 0; k < 20; ++k) {
    const std::size_t i = g.index(delta.size());
    TensorD hi = base, lo = base;
    hi[i] += kFdStep;
    lo[i] -= kFdStep;
    numeric.push_back((objective_value_f64(o, m, s, batch, hi, plan) - objective_value_f64(o, m, s, batch, lo, plan)) /
                      (2 * kFdStep));
    analytic.push_back(ov.grad[i]);
  }
  return norm2(subtract(analytic, numeric)) / norm2(numeric);
}

TEST(ObjectiveGrad, MatchesCentralDifferencesForEveryObjective) {
  Gen g(3);
  const FeatureExtractor m = small_model(3);
  const auto batch = images(g, 4);
  const Tensor delta = random_delta(g, kSmall);
  const DropoutPlan plan{5, 0, 0.9};
  for (Objective o : kAll) {
    EXPECT_LE(fd_relative_error(o, m, batch, delta, nullptr, g), 1e-3) << to_string(o);
    EXPECT_LE(fd_relative_error(o, m, batch, delta, &plan, g), 1e-3) << to_string(o) << " with dropout";
  }
}

TEST(ObjectiveGrad, FloatAndDoubleValuesAgree) {
  Gen g(4);
  const FeatureExtractor m = small_model(4);
  const auto batch = images(g, 3);
  const Tensor delta = random_delta(g, kSmall);
  TensorD dd(kSmall);
  for (std::size_t i = 0; i < delta.size(); ++i) dd[i] = delta[i];
  for (Objective o : kAll) {
    const IdentitySubspace s = subspace_for(o, m, batch);
    EXPECT_NEAR(objective_grad(o, m, s, batch, delta).value, objective_value_f64(o, m, s, batch, dd),
                1e-4 * batch.size())
        << to_string(o);
  }
}

TEST(ObjectiveGrad, FiUapEqualsConvexHullWithFrozenUnitWitness) {
  Gen g(5);
  const FeatureExtractor m = small_model(5);
  const auto batch = images(g, 4);
  const Tensor delta = random_delta(g, kSmall);
  const std::vector<Embedding> clean = clean_embeddings(m, batch);
  const IdentitySubspace hull = fit_subspace(clean, SubspaceKind::ConvexHull);
  // ConvexHull objective term with A_i = e_i: ‖F·e_i − f(X_i + ΔX)‖.
  double frozen = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Vector fi = hull.features().column(i);
    frozen += norm2(subtract(fi, forward(m, apply_mask(batch[i], delta)).embedding));
  }
  const double fi_uap =
      objective_grad(Objective::FiUap, m, subspace_for(Objective::FiUap, m, batch), batch, delta).value;
  EXPECT_NEAR(fi_uap, frozen, 1e-12);
  // The free witness can only do better.
  EXPECT_LE(objective_grad(Objective::ConvexHull, m, hull, batch, delta).value, frozen + 1e-9);
}

TEST(ObjectiveGrad, MismatchedSubspaceIsInvalidInput) {
  Gen g(6);
  const FeatureExtractor m = small_model(6);
  const auto batch = images(g, 3);
  const IdentitySubspace hull = subspace_for(Objective::ConvexHull, m, batch);
  try {
    objective_grad(Objective::FiUap, m, hull, batch, Tensor(kSmall));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InvalidInput);
  }
  EXPECT_THROW(objective_grad(Objective::ConvexHull, m, hull, batch, Tensor(Shape{3, 4, 4})), Error);
}

TEST(GenerateMask, EveryIterateRespectsTheClamp) {
  Gen g(7);
  const FeatureExtractor m = small_model(7);
  const auto batch = images(g, 3);
  for (Objective o : kAll) {
    AttackConfig cfg;
    cfg.objective = o;
    cfg.max_iters = o == Objective::GdUap ? 40 : 16;
    cfg.seed = 3;
    int calls = 0;
    const Mask mask = generate_mask(m, batch, cfg, "x", [&](int, const Tensor& d) {
      ++calls;
      EXPECT_LE(max_abs(d), 8.0);
    });
    EXPECT_EQ(calls, cfg.max_iters + 1);
    EXPECT_EQ(mask.objective_log.size(), static_cast<std::size_t>(cfg.max_iters + 1));
    EXPECT_LE(max_abs(mask.delta), 8.0);
  }
}

TEST(GenerateMask, NonRepresentableEpsilonClampsBelowTheBudget) {
  Gen g(8);
  const FeatureExtractor m = small_model(8);
  const auto batch = images(g, 2);
  AttackConfig cfg;
  cfg.epsilon = 0.1;
  cfg.max_iters = 4;
  generate_mask(m, batch, cfg, "x", [&](int, const Tensor& d) {
    for (float v : d.values()) EXPECT_LE(std::abs(static_cast<double>(v)), 0.1);
  });
}

TEST(GenerateMask, ZeroMomentumMatchesPlainSignAscent) {
  Gen g(9);
  const FeatureExtractor m = small_model(9);
  const auto batch = images(g, 4);
  AttackConfig cfg;
  cfg.seed = 21;
  cfg.momentum_decay = 0.0;
  const Mask mask = generate_mask(m, batch, cfg);

  // Independent loop: ΔX_{N+1} = clamp(ΔX_N + sign(∇J)).
  const IdentitySubspace s = subspace_for(cfg.objective, m, batch);
  Tensor delta(kSmall);
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> init(-8.0, 8.0);
  for (float& v : delta.values()) v = static_cast<float>(init(rng));
  for (int step = 0; step < cfg.max_iters; ++step) {
    const ObjectiveValue ov = objective_grad(cfg.objective, m, s, batch, delta);
    for (std::size_t k = 0; k < delta.size(); ++k) {
      const float sgn = ov.grad[k] > 0 ? 1.0f : (ov.grad[k] < 0 ? -1.0f : 0.0f);
      delta[k] = std::min(8.0f, std::max(-8.0f, delta[k] + sgn));
    }
  }
  EXPECT_EQ(mask.delta, delta);
}

TEST(GenerateMask, MomentumChangesTheTrajectory) {
  Gen g(10);
  const FeatureExtractor m = small_model(10);
  const auto batch = images(g, 4);
  AttackConfig cfg;
  cfg.seed = 4;
  AttackConfig mom = cfg;
  mom.momentum_decay = 1.0;
  EXPECT_NE(generate_mask(m, batch, cfg).delta, generate_mask(m, batch, mom).delta);
}

TEST(GenerateMask, HullDistancesGrowOnTrainingImages) {
  Gen g(11);
  const FeatureExtractor m = small_model(11);
  const auto batch = images(g, 5);
  const std::vector<Embedding> clean = clean_embeddings(m, batch);
  for (Objective o : {Objective::AffineHull, Objective::ClassCenter, Objective::ConvexHull}) {
    AttackConfig cfg;
    cfg.objective = o;
    cfg.seed = 5;
    const Mask mask = generate_mask(m, batch, cfg);
    // Direct re-evaluation of the mean hull distance.
    const IdentitySubspace s = fit_subspace(clean, subspace_kind_for(o));
    double before = 0.0, after = 0.0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      before += distance_to(s, clean[i]).distance;
      after += distance_to(s, forward(m, apply_mask(batch[i], mask.delta)).embedding).distance;
    }
    EXPECT_GT(after, before) << to_string(o);
  }
}

TEST(GenerateMask, PropertyAscentOverRandomIdentities) {
  Gen g(12);
  const FeatureExtractor m = small_model(12);
  int rose = 0;
  const int trials = 100;
  for (int t = 0; t < trials; ++t) {
    const auto batch = images(g, 3);
    AttackConfig cfg;
    cfg.seed = static_cast<std::uint64_t>(t);
    cfg.objective = kCollapsing[t % 4];
    const Mask mask = generate_mask(m, batch, cfg);
    rose += mask.objective_log.back() >= mask.objective_log.front();
  }
  EXPECT_GE(rose, 95);
}

TEST(GenerateMask, SingleImageObjectivesProduceIdenticalMasks) {
  Gen g(13);
  const FeatureExtractor m = small_model(13);
  const auto batch = images(g, 1);
  AttackConfig cfg;
  cfg.seed = 8;
  cfg.objective = Objective::FiUap;
  const Mask ref = generate_mask(m, batch, cfg);
  for (Objective o : kCollapsing) {
    cfg.objective = o;
    EXPECT_EQ(generate_mask(m, batch, cfg).delta, ref.delta) << to_string(o);
  }
}

TEST(GenerateMask, DeterministicIncludingDropoutDraws) {
  Gen g(14);
  const FeatureExtractor m = small_model(14);
  const auto batch = images(g, 3);
  AttackConfig cfg;
  cfg.seed = 6;
  cfg.dropout_keep = 0.7;
  const Mask a = generate_mask(m, batch, cfg), b = generate_mask(m, batch, cfg);
  EXPECT_EQ(a, b);
  AttackConfig other = cfg;
  other.seed = 7;
  EXPECT_NE(generate_mask(m, batch, other).delta, a.delta);
  AttackConfig no_drop = cfg;
  no_drop.dropout_keep.reset();
  EXPECT_NE(generate_mask(m, batch, no_drop).delta, a.delta);
}

TEST(GenerateMask, GdUapLogIsAnAscentLog) {
  Gen g(15);
  const FeatureExtractor m = small_model(15);
  const auto batch = images(g, 2);
  AttackConfig cfg;
  cfg.objective = Objective::GdUap;
  cfg.max_iters = 30;
  const Mask mask = generate_mask(m, batch, cfg);
  const IdentitySubspace unused = subspace_for(Objective::GdUap, m, batch);
  const double final_value = objective_grad(Objective::GdUap, m, unused, batch, mask.delta).value;
  EXPECT_DOUBLE_EQ(mask.objective_log.back(), -final_value);
  EXPECT_GT(mask.objective_log.back(), mask.objective_log.front());
}

TEST(GenerateMask, ZeroGradientFreezesTheMask) {
  const Shape s{1, 2, 2};
  FeatureExtractor m(s, {{LayerKind::FullyConnected, 4, 3}, {LayerKind::L2Normalize}}, 1);
  std::fill(m.weights().begin(), m.weights().end(), 0.0f);
  m.weights()[12] = 1.0f;  // bias only: constant embedding
  Gen g(16);
  const std::vector<Tensor> batch{g.image(s), g.image(s)};
  AttackConfig cfg;
  cfg.objective = Objective::FiUap;
  cfg.max_iters = 5;
  Tensor first;
  const Mask mask = generate_mask(m, batch, cfg, "x", [&](int step, const Tensor& d) {
    if (step == 0) first = d;
  });
  EXPECT_EQ(mask.frozen_steps, 5);
  EXPECT_EQ(mask.delta, first);
}

TEST(GenerateMask, RejectsBadConfigsAndShapes) {
  Gen g(17);
  const FeatureExtractor m = small_model(17);
  const auto batch = images(g, 2);
  AttackConfig bad;
  bad.epsilon = 0.0;
  EXPECT_THROW(generate_mask(m, batch, bad), Error);
  bad = {};
  bad.max_iters = 0;
  EXPECT_THROW(generate_mask(m, batch, bad), Error);
  EXPECT_THROW(generate_mask(m, std::vector<Tensor>{}, {}), Error);
  EXPECT_THROW(generate_mask(m, std::vector<Tensor>{Tensor(Shape{3, 4, 4})}, {}), Error);
}

TEST(DiverseMasks, SingleMaskEqualsGenerateMask) {
  Gen g(18);
  const FeatureExtractor m = small_model(18);
  const auto batch = images(g, 3);
  AttackConfig cfg;
  cfg.seed = 9;
  const DiverseMasks d = generate_diverse_masks(m, batch, cfg, {});
  ASSERT_EQ(d.masks.size(), 1u);
  EXPECT_EQ(d.masks[0], generate_mask(m, batch, cfg));
  EXPECT_TRUE(d.pairwise.empty());
}

TEST(DiverseMasks, ZeroWeightRunsAreIndependent) {
  Gen g(19);
  const FeatureExtractor m = small_model(19);
  const auto batch = images(g, 3);
  AttackConfig cfg;
  cfg.seed = 10;
  DiversityConfig div;
  div.num_masks = 2;
  div.separation_weight = 0.0;
  const DiverseMasks d = generate_diverse_masks(m, batch, cfg, div);
  for (std::size_t j = 0; j < 2; ++j) {
    AttackConfig c = cfg;
    c.seed = diverse_mask_seed(cfg.seed, j);
    EXPECT_EQ(d.masks[j].delta, generate_mask(m, batch, c).delta);
  }
  EXPECT_NE(d.masks[0].delta, d.masks[1].delta);
}

TEST(DiverseMasks, RepulsionSpreadsMaskedFeatures) {
  Gen g(20);
  const FeatureExtractor m = small_model(20);
  const auto batch = images(g, 4);
  AttackConfig cfg;
  cfg.seed = 11;
  DiversityConfig div;
  div.num_masks = 5;
  div.separation_weight = 2.0;
  const DiverseMasks repelled = generate_diverse_masks(m, batch, cfg, div);
  div.separation_weight = 0.0;
  const DiverseMasks baseline = generate_diverse_masks(m, batch, cfg, div);
  EXPECT_EQ(repelled.pairwise.size(), 10u);
  EXPECT_GT(repelled.mean_pairwise_distance(), baseline.mean_pairwise_distance());
  for (const Mask& mk : repelled.masks) EXPECT_LE(max_abs(mk.delta), 8.0);

  // The pairwise log matches a recomputation from the masks.
  const auto recomputed = pairwise_mask_distances(m, batch, repelled.masks);
  ASSERT_EQ(recomputed.size(), repelled.pairwise.size());
  for (std::size_t p = 0; p < recomputed.size(); ++p) {
    const auto& r = repelled.pairwise[p];
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Embedding a = forward(m, apply_mask(batch[i], repelled.masks[r.first].delta)).embedding;
      const Embedding b = forward(m, apply_mask(batch[i], repelled.masks[r.second].delta)).embedding;
      EXPECT_NEAR(r.distances[i], norm2(subtract(a, b)), 1e-12);
    }
  }
}

TEST(DiverseMasks, RejectsEmptySets) {
  Gen g(21);
  const FeatureExtractor m = small_model(21);
  DiversityConfig div;
  div.num_masks = 0;
  EXPECT_THROW(generate_diverse_masks(m, images(g, 2), {}, div), Error);
}

}  // namespace
}  // namespace opom
