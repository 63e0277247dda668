#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "opom/maskgen.hpp"
#include "opom/subspace.hpp"
#include "opom/surrogate.hpp"
#include "opom/tensor.hpp"

namespace opom {

struct GalleryEntry {
  std::string identity;
  Embedding embedding;
};

struct RankedMatch {
  std::string identity;
  double similarity = 0.0;
  std::size_t gallery_index = 0;
};

struct IdentifyResult {
  std::vector<RankedMatch> ranked;
  /// k exceeded the gallery size; `ranked` holds the whole gallery.
  bool truncated = false;
};

double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Top-k gallery entries by cosine similarity. Ties are broken by a digest of the
/// embedding bytes, so the ranking does not depend on gallery order.
IdentifyResult identify(std::span<const double> probe, std::span<const GalleryEntry> gallery, std::size_t k);

/// Simulates saving a protected photo: round(clamp(x + ΔX, 0, 255)).
Tensor quantize_masked(const Tensor& image, const Tensor* delta);

enum class GalleryMode { Clean, Masked };

std::string_view to_string(GalleryMode mode);
GalleryMode parse_gallery_mode(std::string_view name);

struct ProbeIdentity {
  std::string id;
  std::vector<Tensor> test_images;
};

struct DistractorImage {
  std::string identity;
  Tensor image;
};

struct EvalProtocol {
  std::vector<ProbeIdentity> probes;
  std::vector<DistractorImage> distractors;
  std::vector<std::size_t> top_k{1, 5};
  GalleryMode gallery_mode = GalleryMode::Clean;
  /// Masked mode: index of the mask applied to the enrolled gallery image.
  std::size_t gallery_mask_index = 0;
};

/// Masks per probe identity. A test uses mask (test_number mod n_M) in clean mode; in
/// masked mode the probe cycles over indices different from gallery_mask_index (or reuses
/// it when the identity has a single mask).
using MaskSets = std::map<std::string, std::vector<Mask>>;

struct NamedModel {
  std::string name;
  const FeatureExtractor* model = nullptr;
};

struct IdentityBreakdown {
  std::string identity;
  std::size_t tests = 0;
  std::map<std::size_t, std::size_t> protected_at;  // k → protected tests
};

struct ModelResult {
  std::string model;
  std::string method;
  std::size_t tests = 0;
  std::map<std::size_t, std::size_t> protected_at;
  std::map<std::size_t, double> rate;  // k → protection success rate
  std::vector<IdentityBreakdown> identities;
};

struct ProtectionReport {
  std::string config_digest;
  std::string gallery_mode;
  std::vector<ModelResult> results;

  const ModelResult* find(std::string_view model, std::string_view method) const;
};

/// 1:N identification protocol: every test image of an identity is enrolled in turn with
/// the distractors, and each of the other M−1 (masked) images is used as a probe. A test is
/// protected at k when the enrolled image is absent from the top-k. `masks == nullptr`
/// evaluates unmasked probes.
ProtectionReport run_protocol(std::span<const NamedModel> models, const MaskSets* masks,
                              const EvalProtocol& protocol, std::string method, std::size_t workers = 1);

/// Appends the results of `other` to `into` (same digest rules are the caller's business).
void merge_reports(ProtectionReport& into, const ProtectionReport& other);

struct VerificationPair {
  const Tensor* first = nullptr;
  const Tensor* second = nullptr;
  /// Mask applied to `first` in the masked column (nullptr = none).
  const Tensor* first_mask = nullptr;
  const Tensor* second_mask = nullptr;
};

struct VerificationConfig {
  double threshold = 0.5;
  std::vector<VerificationPair> pairs;
};

struct VerificationRow {
  double clean_similarity = 0.0;
  double masked_similarity = 0.0;
  bool clean_match = false;
  bool masked_match = false;
};

struct VerificationTable {
  std::vector<VerificationRow> rows;
  double mean_clean = 0.0;
  double mean_masked = 0.0;
};

VerificationTable verification_scores(const FeatureExtractor& model, const VerificationConfig& cfg);

}  // namespace opom
