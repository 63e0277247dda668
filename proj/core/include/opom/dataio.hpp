#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "opom/evalharness.hpp"
#include "opom/maskgen.hpp"
#include "opom/surrogate.hpp"
#include "opom/tensor.hpp"

namespace opom {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------------------
// Tensor container: "OPOMTNS1" | u64 LE header length | JSON header (space padded so the
// payload is 16-byte aligned) | little-endian float32 payload.

enum class TensorKind { Image, Mask, Embedding, Model };

std::string_view to_string(TensorKind kind);

struct TensorFile {
  TensorKind kind = TensorKind::Image;
  Tensor tensor;
  /// Free-form metadata carried in the header under "meta".
  Json meta = Json::object();
};

std::string encode_tensor_file(const TensorFile& file);
/// Validates the header before touching the payload. `expected` guards the kind.
TensorFile decode_tensor_file(std::string_view bytes, std::optional<TensorKind> expected = std::nullopt);

std::string read_file(const std::filesystem::path& path);
/// Writes atomically (temp file + rename); creates parent directories.
void write_file(const std::filesystem::path& path, std::string_view bytes);

// ---------------------------------------------------------------------------------------
// Models

struct ModelFile {
  FeatureExtractor model;
  Json meta = Json::object();
};

std::string encode_model(const FeatureExtractor& model, const Json& meta = Json::object());
ModelFile decode_model(std::string_view bytes);
/// Digest of the weight file bytes of a model (with empty metadata).
std::string model_digest(const FeatureExtractor& model);

// ---------------------------------------------------------------------------------------
// Masks

Json attack_config_to_json(const AttackConfig& cfg);
AttackConfig attack_config_from_json(const Json& j);

std::string encode_mask(const Mask& mask, const Json& extra = Json::object());
/// Rejects masks whose payload exceeds the declared epsilon (IntegrityError).
Mask decode_mask(std::string_view bytes, Json* extra = nullptr);

// ---------------------------------------------------------------------------------------
// Reports

std::string encode_report(const ProtectionReport& report, const Json& inputs = Json::object(),
                          std::string_view generated_at = {});
ProtectionReport decode_report(std::string_view text, Json* inputs = nullptr);
/// "method,model,k,rate" rows for external plotting.
std::string report_csv(std::span<const ProtectionReport> reports);

// ---------------------------------------------------------------------------------------
// Datasets

enum class SplitTag { TrainSurrogate, MaskTrain, MaskTest, Distractor };

std::string_view to_string(SplitTag tag);
SplitTag parse_split_tag(std::string_view name);

struct ImageEntry {
  std::string file;  ///< relative to the dataset root
  SplitTag split = SplitTag::TrainSurrogate;
};

struct IdentityEntry {
  std::string id;
  std::vector<ImageEntry> images;

  bool has(SplitTag tag) const;
  std::size_t count(SplitTag tag) const;
};

struct DatasetManifest {
  Shape image_shape{3, 32, 32};
  double pixel_min = 0.0;
  double pixel_max = 255.0;
  std::optional<std::uint64_t> seed;
  Json generator = Json::object();
  std::vector<IdentityEntry> identities;
};

inline constexpr std::size_t kMaxMaskTrainImages = 10;
inline constexpr std::size_t kMinMaskTestImages = 2;

/// Throws InvalidInput on duplicate files or identities, probe/distractor overlap, or
/// per-identity mask-train/mask-test counts outside [.., 10] / [2, ..].
void validate_manifest(const DatasetManifest& manifest);
std::string encode_manifest(const DatasetManifest& manifest);
DatasetManifest decode_manifest(std::string_view text);

struct VariationSpec {
  /// Amplitude (pixels) of the smooth displacement field.
  double pose = 1.5;
  /// Per-image brightness offset drawn from U(−b, b).
  double brightness = 8.0;
  /// Standard deviation of i.i.d. pixel noise.
  double noise = 3.0;
  /// Per-image perturbation of the identity latent, relative to its unit scale.
  double latent_jitter = 0.35;

  bool is_zero() const { return pose == 0 && brightness == 0 && noise == 0 && latent_jitter == 0; }
};

struct SynthGroup {
  SplitTag role = SplitTag::TrainSurrogate;  ///< MaskTrain means a probe identity
  std::size_t identities = 0;
  std::size_t images_per_identity = 0;
  /// Probe identities only: how many of their images are mask-train (rest are mask-test).
  std::size_t mask_train = 10;
};

struct SynthSpec {
  std::vector<SynthGroup> groups;
  VariationSpec variation;
  std::uint64_t seed = 0;
  /// Seeds the face decoder shared by every identity; `seed` draws the identities and photos.
  std::uint64_t decoder_seed = 0;
  Shape image_shape{3, 32, 32};
  /// Four latent coordinates per facial part.
  std::size_t latent_dim = 32;
  /// Peak colour amplitude of a part, in pixel levels.
  double pattern_amplitude = 40.0;
  /// Pixels a part moves per unit of its position latents.
  double part_geometry = 2.0;
};

/// Convenience spec: `identities` probe identities with `per_id` images each, of which
/// min(10, per_id − 2) are mask-train.
SynthSpec probe_only_spec(std::size_t identities, std::size_t per_id, const VariationSpec& variation,
                          std::uint64_t seed);

struct Dataset {
  DatasetManifest manifest;
  /// images[i][j] belongs to manifest.identities[i].images[j].
  std::vector<std::vector<Tensor>> images;

  std::vector<Tensor> select(std::size_t identity, SplitTag tag) const;
  std::vector<std::size_t> identities_with(SplitTag tag) const;
};

/// Deterministic synthetic identities: a fixed random decoder maps each identity latent to
/// an image; every photo adds latent jitter, a smooth displacement field, a brightness shift
/// and pixel noise, then clips to [0, 255].
Dataset synth_dataset(const SynthSpec& spec);

/// Writes `root/manifest.json` and `root/identities/<id>/<index>.tensor`.
void store_dataset(const Dataset& dataset, const std::filesystem::path& root);
Dataset load_dataset(const std::filesystem::path& root);

/// Labeled training view over every train-surrogate image of a dataset.
std::vector<LabeledImage> surrogate_training_set(const Dataset& dataset);

}  // namespace opom
