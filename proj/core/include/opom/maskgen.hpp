#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opom/subspace.hpp"
#include "opom/surrogate.hpp"
#include "opom/tensor.hpp"

namespace opom {

enum class Objective { AffineHull, ClassCenter, ConvexHull, FiUap, FiUapPlus, FiUapAll, GdUap };

std::string_view to_string(Objective objective);
/// Accepts the canonical names ("convex_hull") and the CLI spellings ("convexhull", "fiuap+").
Objective parse_objective(std::string_view name);
/// Subspace model an objective is evaluated against.
SubspaceKind subspace_kind_for(Objective objective);
/// Default iteration counts: 16 for the feature-level methods, 10,000 for GD-UAP.
int default_iterations(Objective objective);

struct AttackConfig {
  double epsilon = 8.0;
  int max_iters = 16;
  Objective objective = Objective::ConvexHull;
  /// μ of the momentum accumulator; 0 disables accumulation (g = ∇J/‖∇J‖₁).
  double momentum_decay = 0.0;
  /// Bernoulli keep-probability for the feature-dropout layers; unset = no dropout.
  std::optional<double> dropout_keep;
  std::uint64_t seed = 0;

  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

struct Mask {
  std::string identity;
  Tensor delta;
  AttackConfig config;
  /// Objective value at every iterate ΔX_0 … ΔX_N (length N_max + 1). For GD-UAP this is
  /// the negated minimization objective so the log is an ascent log for every method.
  std::vector<double> objective_log;
  /// Steps skipped because the gradient was identically zero.
  int frozen_steps = 0;

  friend bool operator==(const Mask&, const Mask&) = default;
};

struct ObjectiveValue {
  /// Value of the objective as written (GD-UAP: the quantity to minimize).
  double value = 0.0;
  /// ∂value/∂ΔX.
  TensorD grad;
  /// +1 when the engine ascends `value`, −1 when it descends (GD-UAP).
  int ascent_sign = 1;
};

/// Dropout streams for one objective evaluation; image i of the batch uses stream
/// `stream_base + i`.
struct DropoutPlan {
  std::uint64_t seed = 0;
  std::uint64_t stream_base = 0;
  double keep_prob = 1.0;
};

/// Evaluates one objective at ΔX on a batch of clean images. The subspace must be the one
/// fitted on the clean embeddings of the same batch for the kind returned by
/// subspace_kind_for(objective); GD-UAP ignores it.
ObjectiveValue objective_grad(Objective objective, const FeatureExtractor& model,
                              const IdentitySubspace& subspace, std::span<const Tensor> batch,
                              const Tensor& delta, const DropoutPlan* dropout = nullptr);

/// The objective value only, evaluated with the 64-bit forward pass (finite-difference oracle).
double objective_value_f64(Objective objective, const FeatureExtractor& model,
                           const IdentitySubspace& subspace, std::span<const Tensor> batch,
                           const TensorD& delta, const DropoutPlan* dropout = nullptr);

/// Clean embeddings of a batch (no dropout).
std::vector<Embedding> clean_embeddings(const FeatureExtractor& model, std::span<const Tensor> batch);

/// Extra term added to the ascent objective when minting diverse masks: rewards distance
/// between the new masked features and features of previously generated masks.
struct Repulsion {
  /// repelled_from[m][i]: f(X_i + ΔX_m) for an earlier mask m.
  std::vector<std::vector<Embedding>> repelled_from;
  double weight = 1.0;
  /// Per-pair contribution is capped at this distance.
  double threshold = std::numeric_limits<double>::infinity();
};

/// Called with (step, ΔX_step) for the initial mask and after every update.
using StepObserver = std::function<void(int, const Tensor&)>;

/// Iterative signed-gradient ascent of one objective under the L∞ budget.
Mask generate_mask(const FeatureExtractor& model, std::span<const Tensor> images,
                   const AttackConfig& cfg, std::string identity = {},
                   const StepObserver& observer = {}, const Repulsion* repulsion = nullptr);

struct DiversityConfig {
  std::size_t num_masks = 1;
  double separation_threshold = std::numeric_limits<double>::infinity();
  double separation_weight = 1.0;
};

struct DiverseMasks {
  std::vector<Mask> masks;
  /// pairwise[p] = {j1, j2, per-image distances D(f(X_i+ΔX_j1), f(X_i+ΔX_j2))}.
  struct PairDistances {
    std::size_t first = 0;
    std::size_t second = 0;
    std::vector<double> distances;
    double mean() const;
  };
  std::vector<PairDistances> pairwise;
  double mean_pairwise_distance() const;
};

/// Seed of the j-th mask in a diverse set (j = 0 keeps cfg.seed).
std::uint64_t diverse_mask_seed(std::uint64_t seed, std::size_t index);

/// Mints masks sequentially; mask j is repelled from masks 0..j−1.
DiverseMasks generate_diverse_masks(const FeatureExtractor& model, std::span<const Tensor> images,
                                    const AttackConfig& cfg, const DiversityConfig& div,
                                    std::string identity = {});

/// Pairwise masked-feature distances for an existing set of masks.
std::vector<DiverseMasks::PairDistances> pairwise_mask_distances(const FeatureExtractor& model,
                                                                 std::span<const Tensor> images,
                                                                 std::span<const Mask> masks);

/// x + ΔX (not clipped or quantized).
Tensor apply_mask(const Tensor& image, const Tensor& delta);

}  // namespace opom
