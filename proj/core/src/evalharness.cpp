#include "opom/evalharness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "opom/digest.hpp"
#include "opom/error.hpp"
#include "opom/parallel.hpp"

namespace opom {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
  const double na = norm2(a), nb = norm2(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

IdentifyResult identify(std::span<const double> probe, std::span<const GalleryEntry> gallery, std::size_t k) {
  require(!gallery.empty(), "identify: empty gallery");
  struct Scored {
    double similarity;
    std::uint64_t digest;
    std::size_t index;
  };
  std::vector<Scored> scored;
  scored.reserve(gallery.size());
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    require(gallery[i].embedding.size() == probe.size(), "identify: embedding dimension mismatch");
    Digest d;
    d.update(std::span<const double>(gallery[i].embedding));
    scored.push_back({cosine_similarity(probe, gallery[i].embedding), d.value(), i});
  }
  IdentifyResult out;
  out.truncated = k > gallery.size();
  const std::size_t take = std::min(k, gallery.size());
  auto better = [](const Scored& a, const Scored& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    if (a.digest != b.digest) return a.digest < b.digest;
    return a.index < b.index;
  };
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(), better);
  for (std::size_t r = 0; r < take; ++r)
    out.ranked.push_back({gallery[scored[r].index].identity, scored[r].similarity, scored[r].index});
  return out;
}

Tensor quantize_masked(const Tensor& image, const Tensor* delta) {
  Tensor out = delta ? apply_mask(image, *delta) : image;
  for (float& v : out.values()) v = std::nearbyint(std::clamp(v, 0.0f, 255.0f));
  return out;
}

std::string_view to_string(GalleryMode mode) { return mode == GalleryMode::Clean ? "clean" : "masked"; }

GalleryMode parse_gallery_mode(std::string_view name) {
  if (name == "clean") return GalleryMode::Clean;
  if (name == "masked") return GalleryMode::Masked;
  fail(ErrorCode::InvalidInput, "unknown gallery mode '" + std::string(name) + "'");
}

const ModelResult* ProtectionReport::find(std::string_view model, std::string_view method) const {
  for (const ModelResult& r : results)
    if (r.model == model && r.method == method) return &r;
  return nullptr;
}

namespace {

std::vector<Embedding> embed_all(const FeatureExtractor& model, std::span<const Tensor> images, const Tensor* delta) {
  std::vector<Embedding> out;
  out.reserve(images.size());
  for (const Tensor& x : images) out.push_back(forward(model, quantize_masked(x, delta)).embedding);
  return out;
}

std::size_t probe_mask_index(const EvalProtocol& protocol, std::size_t n_masks, std::size_t test_number) {
  if (n_masks <= 1) return 0;
  if (protocol.gallery_mode == GalleryMode::Clean) return test_number % n_masks;
  const std::size_t gallery = protocol.gallery_mask_index;
  const std::size_t slot = test_number % (n_masks - 1);
  return slot < gallery ? slot : slot + 1;
}

std::string protocol_digest(std::span<const NamedModel> models, const MaskSets* masks,
                            const EvalProtocol& protocol, const std::string& method) {
  Digest d;
  d.update(method);
  d.update(to_string(protocol.gallery_mode));
  d.update_value(protocol.gallery_mask_index);
  for (std::size_t k : protocol.top_k) d.update_value(k);
  for (const NamedModel& m : models) {
    d.update(m.name);
    d.update(std::span<const float>(m.model->weights()));
  }
  for (const ProbeIdentity& p : protocol.probes) {
    d.update(p.id);
    for (const Tensor& t : p.test_images) d.update(t.values());
    if (masks) {
      auto it = masks->find(p.id);
      if (it != masks->end())
        for (const Mask& m : it->second) d.update(m.delta.values());
    }
  }
  for (const DistractorImage& x : protocol.distractors) {
    d.update(x.identity);
    d.update(x.image.values());
  }
  return d.hex();
}

}  // namespace

ProtectionReport run_protocol(std::span<const NamedModel> models, const MaskSets* masks,
                              const EvalProtocol& protocol, std::string method, std::size_t workers) {
  require(!models.empty(), "run_protocol: no models");
  require(!protocol.top_k.empty(), "run_protocol: no top-k values");
  require(protocol.gallery_mode == GalleryMode::Clean || masks != nullptr,
          "masked-gallery mode needs masks");
  for (const ProbeIdentity& p : protocol.probes) {
    require(p.test_images.size() >= 2, "identity " + p.id + " needs at least two test images");
    for (const DistractorImage& x : protocol.distractors)
      require(x.identity != p.id, "distractor identity " + p.id + " is also a probe identity");
    if (!masks) continue;
    auto it = masks->find(p.id);
    if (it == masks->end() || it->second.empty()) fail(ErrorCode::InvalidInput, "no mask for identity " + p.id);
    if (protocol.gallery_mode == GalleryMode::Masked)
      require(protocol.gallery_mask_index < it->second.size(),
              "gallery mask index out of range for identity " + p.id);
  }
  const std::size_t max_k = *std::max_element(protocol.top_k.begin(), protocol.top_k.end());

  ProtectionReport report;
  report.config_digest = protocol_digest(models, masks, protocol, method);
  report.gallery_mode = std::string(to_string(protocol.gallery_mode));

  for (const NamedModel& nm : models) {
    require(nm.model != nullptr, "run_protocol: null model " + nm.name);
    const FeatureExtractor& model = *nm.model;

    std::vector<GalleryEntry> base(protocol.distractors.size());
    parallel_for(protocol.distractors.size(), workers, [&](std::size_t i) {
      const DistractorImage& x = protocol.distractors[i];
      base[i] = {x.identity, forward(model, quantize_masked(x.image, nullptr)).embedding};
    });

    std::vector<IdentityBreakdown> per_identity(protocol.probes.size());
    parallel_for(protocol.probes.size(), workers, [&](std::size_t pi) {
      const ProbeIdentity& probe = protocol.probes[pi];
      const std::vector<Mask>* identity_masks = masks ? &masks->at(probe.id) : nullptr;
      const std::size_t n_masks = identity_masks ? identity_masks->size() : 0;

      const std::vector<Embedding> clean = embed_all(model, probe.test_images, nullptr);
      std::vector<std::vector<Embedding>> masked;
      for (std::size_t j = 0; j < n_masks; ++j)
        masked.push_back(embed_all(model, probe.test_images, &(*identity_masks)[j].delta));

      IdentityBreakdown breakdown{probe.id, 0, {}};
      for (std::size_t k : protocol.top_k) breakdown.protected_at[k] = 0;

      std::vector<GalleryEntry> gallery = base;
      gallery.push_back({probe.id, {}});
      const std::size_t m = probe.test_images.size();
      std::size_t test_number = 0;
      for (std::size_t g = 0; g < m; ++g) {
        gallery.back().embedding = protocol.gallery_mode == GalleryMode::Masked
                                       ? masked[protocol.gallery_mask_index][g]
                                       : clean[g];
        for (std::size_t p = 0; p < m; ++p) {
          if (p == g) continue;
          const Embedding& query =
              n_masks == 0 ? clean[p] : masked[probe_mask_index(protocol, n_masks, test_number)][p];
          ++test_number;
          const IdentifyResult ranked = identify(query, gallery, max_k);
          ++breakdown.tests;
          for (std::size_t k : protocol.top_k) {
            const std::size_t upto = std::min(k, ranked.ranked.size());
            bool found = false;
            for (std::size_t r = 0; r < upto; ++r) found = found || ranked.ranked[r].identity == probe.id;
            if (!found) ++breakdown.protected_at[k];
          }
        }
      }
      per_identity[pi] = std::move(breakdown);
    });

    ModelResult result;
    result.model = nm.name;
    result.method = method;
    for (std::size_t k : protocol.top_k) result.protected_at[k] = 0;
    for (const IdentityBreakdown& b : per_identity) {
      result.tests += b.tests;
      for (const auto& [k, n] : b.protected_at) result.protected_at[k] += n;
    }
    for (const auto& [k, n] : result.protected_at)
      result.rate[k] = result.tests == 0 ? 0.0 : static_cast<double>(n) / static_cast<double>(result.tests);
    result.identities = std::move(per_identity);
    report.results.push_back(std::move(result));
  }
  return report;
}

void merge_reports(ProtectionReport& into, const ProtectionReport& other) {
  if (into.config_digest.empty()) {
    into.config_digest = other.config_digest;
  } else if (!other.config_digest.empty()) {
    Digest d;
    d.update(into.config_digest);
    d.update(other.config_digest);
    into.config_digest = d.hex();
  }
  if (into.gallery_mode.empty()) into.gallery_mode = other.gallery_mode;
  into.results.insert(into.results.end(), other.results.begin(), other.results.end());
}

VerificationTable verification_scores(const FeatureExtractor& model, const VerificationConfig& cfg) {
  require(cfg.threshold >= -1.0 && cfg.threshold <= 1.0, "verification threshold must lie in [-1, 1]");
  VerificationTable table;
  for (const VerificationPair& pair : cfg.pairs) {
    require(pair.first && pair.second, "verification pair references a missing image");
    const Embedding a = forward(model, quantize_masked(*pair.first, nullptr)).embedding;
    const Embedding b = forward(model, quantize_masked(*pair.second, nullptr)).embedding;
    const Embedding am = forward(model, quantize_masked(*pair.first, pair.first_mask)).embedding;
    const Embedding bm = forward(model, quantize_masked(*pair.second, pair.second_mask)).embedding;
    VerificationRow row;
    row.clean_similarity = cosine_similarity(a, b);
    row.masked_similarity = cosine_similarity(am, bm);
    row.clean_match = row.clean_similarity >= cfg.threshold;
    row.masked_match = row.masked_similarity >= cfg.threshold;
    table.mean_clean += row.clean_similarity;
    table.mean_masked += row.masked_similarity;
    table.rows.push_back(row);
  }
  if (!table.rows.empty()) {
    table.mean_clean /= static_cast<double>(table.rows.size());
    table.mean_masked /= static_cast<double>(table.rows.size());
  }
  return table;
}

}  // namespace opom
