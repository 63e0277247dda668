#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string_view>

#include "opom/numerics.hpp"

namespace opom {

/// Normalized deep feature of one image.
using Embedding = Vector;

enum class SubspaceKind { SinglePoint, ClassCenter, AffineHull, ConvexHull };

std::string_view to_string(SubspaceKind kind);
SubspaceKind parse_subspace_kind(std::string_view name);

/// Model of one identity's feature region, fitted from its clean training embeddings.
/// Immutable after fit_subspace().
class IdentitySubspace {
 public:
  SubspaceKind kind() const { return kind_; }
  std::size_t dim() const { return features_.rows(); }
  std::size_t size() const { return features_.cols(); }

  /// d x n_k matrix whose columns are the training embeddings.
  const Matrix& features() const { return features_; }
  /// Arithmetic mean of the training embeddings (not re-normalized).
  const Vector& center() const { return center_; }
  /// Orthonormal basis of the centered span; empty unless kind() == AffineHull.
  const Matrix& basis() const { return basis_; }

 private:
  friend IdentitySubspace fit_subspace(std::span<const Embedding>, SubspaceKind, double);

  SubspaceKind kind_ = SubspaceKind::SinglePoint;
  Matrix features_;
  Vector center_;
  Matrix basis_;
};

IdentitySubspace fit_subspace(std::span<const Embedding> embeddings, SubspaceKind kind,
                              double rank_tolerance = kDefaultRankTolerance);

struct DistanceResult {
  double distance = 0.0;
  /// Affine-hull coordinates V*, convex-hull coefficients A*, or the point weights.
  Vector witness;
  /// Closest point of the subspace to the query.
  Vector reconstruction;
  /// ∂distance/∂query; zero when the distance is zero (see degenerate).
  Vector grad_query;
  /// ∂distance²/∂query = 2·(query − reconstruction).
  Vector grad_squared;
  bool degenerate = false;
};

/// Shortest Euclidean distance from `query` to the subspace. SinglePoint requires `anchor`
/// unless the subspace holds a single embedding.
DistanceResult distance_to(const IdentitySubspace& subspace, std::span<const double> query,
                           std::optional<std::size_t> anchor = std::nullopt);

}  // namespace opom
