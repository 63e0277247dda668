#include "opom/subspace.hpp"

#include <cmath>
#include <string>

#include "opom/error.hpp"

namespace opom {

std::string_view to_string(SubspaceKind kind) {
  switch (kind) {
    case SubspaceKind::SinglePoint: return "single_point";
    case SubspaceKind::ClassCenter: return "class_center";
    case SubspaceKind::AffineHull: return "affine_hull";
    case SubspaceKind::ConvexHull: return "convex_hull";
  }
  return "unknown";
}

SubspaceKind parse_subspace_kind(std::string_view name) {
  if (name == "single_point") return SubspaceKind::SinglePoint;
  if (name == "class_center") return SubspaceKind::ClassCenter;
  if (name == "affine_hull") return SubspaceKind::AffineHull;
  if (name == "convex_hull") return SubspaceKind::ConvexHull;
  fail(ErrorCode::InvalidInput, "unknown subspace kind '" + std::string(name) + "'");
}

IdentitySubspace fit_subspace(std::span<const Embedding> embeddings, SubspaceKind kind,
                              double rank_tolerance) {
  require(!embeddings.empty(), "fit_subspace: no embeddings");
  if (kind == SubspaceKind::AffineHull || kind == SubspaceKind::ConvexHull)
    require(embeddings.size() <= 64, "fit_subspace: hull models take at most 64 embeddings");
  const std::size_t d = embeddings.front().size();
  require(d > 0, "fit_subspace: zero-dimensional embeddings");
  for (const Embedding& e : embeddings) {
    require(e.size() == d, "fit_subspace: embeddings have different dimensions");
    require(std::abs(norm2(e) - 1.0) <= 1e-5, "fit_subspace: embeddings must be unit-norm");
  }

  IdentitySubspace s;
  s.kind_ = kind;
  s.features_ = Matrix::from_columns(embeddings);

  const std::size_t n = embeddings.size();
  s.center_.assign(d, 0.0);
  for (const Embedding& e : embeddings)
    for (std::size_t i = 0; i < d; ++i) s.center_[i] += e[i];
  for (double& v : s.center_) v /= static_cast<double>(n);

  if (kind == SubspaceKind::AffineHull) {
    Matrix centered(d, n);
    for (std::size_t c = 0; c < n; ++c)
      for (std::size_t r = 0; r < d; ++r) centered(r, c) = embeddings[c][r] - s.center_[r];
    s.basis_ = thin_svd(centered, rank_tolerance).u;
  }
  return s;
}

namespace {

DistanceResult finish(std::span<const double> query, Vector reconstruction, Vector witness) {
  DistanceResult out;
  const Vector residual = subtract(query, reconstruction);
  out.distance = norm2(residual);
  out.witness = std::move(witness);
  out.reconstruction = std::move(reconstruction);
  out.grad_squared.resize(residual.size());
  out.grad_query.assign(residual.size(), 0.0);
  for (std::size_t i = 0; i < residual.size(); ++i) out.grad_squared[i] = 2.0 * residual[i];
  if (out.distance > 0.0) {
    for (std::size_t i = 0; i < residual.size(); ++i) out.grad_query[i] = residual[i] / out.distance;
  } else {
    out.degenerate = true;
  }
  return out;
}

}  // namespace

DistanceResult distance_to(const IdentitySubspace& subspace, std::span<const double> query,
                           std::optional<std::size_t> anchor) {
  require(query.size() == subspace.dim(), "distance_to: query dimension mismatch");
  const std::size_t n = subspace.size();
  const std::size_t d = subspace.dim();

  switch (subspace.kind()) {
    case SubspaceKind::SinglePoint: {
      if (!anchor && n == 1) anchor = 0;
      require(anchor.has_value(), "distance_to: single-point subspace needs an anchor index");
      require(*anchor < n, "distance_to: anchor index out of range");
      Vector witness(n, 0.0);
      witness[*anchor] = 1.0;
      return finish(query, subspace.features().column(*anchor), std::move(witness));
    }
    case SubspaceKind::ClassCenter:
      return finish(query, subspace.center(), Vector(n, 1.0 / static_cast<double>(n)));
    case SubspaceKind::AffineHull: {
      const Matrix& basis = subspace.basis();
      const Vector centered = subtract(query, subspace.center());
      Vector coords = least_squares(basis, centered);
      Vector recon = subspace.center();
      for (std::size_t r = 0; r < d; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < coords.size(); ++c) acc += basis(r, c) * coords[c];
        recon[r] += acc;
      }
      return finish(query, std::move(recon), std::move(coords));
    }
    case SubspaceKind::ConvexHull: {
      const Matrix& f = subspace.features();
      Vector coeffs = simplex_constrained_lsq(f, query);
      Vector recon(d, 0.0);
      for (std::size_t r = 0; r < d; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < n; ++c) acc += f(r, c) * coeffs[c];
        recon[r] = acc;
      }
      return finish(query, std::move(recon), std::move(coeffs));
    }
  }
  fail(ErrorCode::InternalError, "distance_to: unhandled subspace kind");
}

}  // namespace opom
