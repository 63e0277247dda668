#include "opom/dataio.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "opom/digest.hpp"
#include "opom/error.hpp"
#include "opom/random.hpp"

namespace opom {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kMagic = "OPOMTNS1";
constexpr std::size_t kPrefix = 16;  // magic + u64 header length
constexpr std::size_t kAlign = 16;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(std::string_view in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return v;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

Json shape_json(const Shape& s) { return Json::array({s.channels, s.height, s.width}); }

Shape shape_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 3) fail(ErrorCode::MalformedHeader, "shape must be a 3-element array");
  for (const Json& v : j)
    if (!v.is_number_unsigned()) fail(ErrorCode::MalformedHeader, "shape entries must be non-negative integers");
  return Shape{j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

TensorKind parse_tensor_kind(std::string_view name) {
  for (TensorKind k : {TensorKind::Image, TensorKind::Mask, TensorKind::Embedding, TensorKind::Model})
    if (to_string(k) == name) return k;
  fail(ErrorCode::MalformedHeader, "unknown tensor kind '" + std::string(name) + "'");
}

template <class T>
T header_field(const Json& header, const char* key) {
  if (!header.contains(key)) fail(ErrorCode::MalformedHeader, std::string("header is missing '") + key + "'");
  try {
    return header.at(key).get<T>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("header field '") + key + "': " + e.what());
  }
}

}  // namespace

std::string_view to_string(TensorKind kind) {
  switch (kind) {
    case TensorKind::Image: return "image";
    case TensorKind::Mask: return "mask";
    case TensorKind::Embedding: return "embedding";
    case TensorKind::Model: return "model";
  }
  return "unknown";
}

std::string encode_tensor_file(const TensorFile& file) {
  const Tensor& t = file.tensor;
  if (!all_finite(t)) fail(ErrorCode::InvalidInput, "tensor has non-finite entries");
  Json header = {
      {"format", "opom-tensor"},
      {"version", 1},
      {"kind", std::string(to_string(file.kind))},
      {"shape", shape_json(t.shape())},
      {"dtype", "float32"},
      {"byte_order", "little"},
      {"payload_bytes", t.size() * 4},
      {"meta", file.meta},
  };
  std::size_t offset = 0;
  std::string text;
  for (int attempt = 0; attempt < 8; ++attempt) {
    header["payload_offset"] = offset;
    text = header.dump();
    const std::size_t needed = (kPrefix + text.size() + kAlign - 1) / kAlign * kAlign;
    if (needed == offset) break;
    offset = needed;
  }
  text.resize(offset - kPrefix, ' ');

  std::string out;
  out.reserve(offset + t.size() * 4);
  out.append(kMagic);
  put_u64(out, text.size());
  out.append(text);
  for (float v : t.values()) {
    const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(v));
    char buf[4];
    std::memcpy(buf, &bits, 4);
    out.append(buf, 4);
  }
  return out;
}

TensorFile decode_tensor_file(std::string_view bytes, std::optional<TensorKind> expected) {
  if (bytes.size() < kPrefix || bytes.substr(0, kMagic.size()) != kMagic)
    fail(ErrorCode::MalformedHeader, "not a tensor file (bad magic)");
  const std::uint64_t header_len = get_u64(bytes.substr(8, 8));
  if (header_len > bytes.size() - kPrefix) fail(ErrorCode::MalformedHeader, "header length exceeds file size");
  Json header;
  try {
    header = Json::parse(bytes.substr(kPrefix, header_len));
  } catch (const Json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("format", "") != "opom-tensor")
    fail(ErrorCode::MalformedHeader, "header format is not opom-tensor");
  if (header_field<std::string>(header, "dtype") != "float32" ||
      header_field<std::string>(header, "byte_order") != "little")
    fail(ErrorCode::MalformedHeader, "only little-endian float32 payloads are supported");
  TensorFile file;
  file.kind = parse_tensor_kind(header_field<std::string>(header, "kind"));
  if (expected && *expected != file.kind)
    fail(ErrorCode::KindMismatch, "expected a " + std::string(to_string(*expected)) + " file, found " +
                                      std::string(to_string(file.kind)));
  const Shape shape = shape_from_json(header.at("shape"));
  const auto offset = header_field<std::uint64_t>(header, "payload_offset");
  const auto payload_bytes = header_field<std::uint64_t>(header, "payload_bytes");
  if (payload_bytes != shape.count() * 4) fail(ErrorCode::ShapeMismatch, "payload length does not match shape");
  if (offset != kPrefix + header_len) fail(ErrorCode::MalformedHeader, "payload offset does not follow the header");
  if (bytes.size() < offset + payload_bytes)
    fail(ErrorCode::TruncatedPayload, "payload holds " + std::to_string(bytes.size() - offset) + " of " +
                                          std::to_string(payload_bytes) + " bytes");
  if (bytes.size() > offset + payload_bytes) fail(ErrorCode::MalformedHeader, "trailing bytes after payload");
  if (header.contains("meta")) file.meta = header.at("meta");

  std::vector<float> data(shape.count());
  const char* p = bytes.data() + offset;
  for (std::size_t i = 0; i < data.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, p + 4 * i, 4);
    data[i] = std::bit_cast<float>(to_le(bits));
  }
  file.tensor = Tensor(shape, std::move(data));
  if (!all_finite(file.tensor)) fail(ErrorCode::IntegrityError, "payload has non-finite entries");
  return file;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return std::move(ss).str();
}

void write_file(const fs::path& path, std::string_view bytes) {
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
    if (ec) fail(ErrorCode::IoError, "cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoError, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::IoError, "short write to " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::IoError, "cannot rename " + tmp.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------------------

std::string encode_model(const FeatureExtractor& model, const Json& meta) {
  Json layers = Json::array();
  for (std::size_t j = 0; j < model.layers().size(); ++j) {
    const LayerSpec& l = model.layers()[j];
    const std::size_t end = j + 1 < model.layers().size() ? model.param_offsets()[j + 1] : model.weights().size();
    layers.push_back({{"kind", std::string(to_string(l.kind))},
                      {"in", l.in_channels},
                      {"out", l.out_channels},
                      {"keep_prob", l.keep_prob},
                      {"param_offset", model.param_offsets()[j]},
                      {"param_count", end - model.param_offsets()[j]}});
  }
  TensorFile file;
  file.kind = TensorKind::Model;
  file.tensor = Tensor(Shape{model.weights().size(), 1, 1}, model.weights());
  file.meta = {{"input_shape", shape_json(model.input_shape())},
               {"layers", layers},
               {"seed", model.seed()},
               {"embedding_dim", model.embedding_dim()},
               {"input_offset", model.input_offset()},
               {"input_scale", model.input_scale()},
               {"info", meta}};
  return encode_tensor_file(file);
}

ModelFile decode_model(std::string_view bytes) {
  TensorFile file = decode_tensor_file(bytes, TensorKind::Model);
  const Json& m = file.meta;
  std::vector<LayerSpec> layers;
  try {
    for (const Json& l : m.at("layers"))
      layers.push_back({parse_layer_kind(l.at("kind").get<std::string>()), l.at("in").get<std::size_t>(),
                        l.at("out").get<std::size_t>(), l.at("keep_prob").get<double>()});
  } catch (const Json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("model layer list: ") + e.what());
  } catch (const Error& e) {
    fail(ErrorCode::MalformedHeader, e.what());
  }
  ModelFile out;
  try {
    out.model = FeatureExtractor(shape_from_json(m.at("input_shape")), std::move(layers),
                                 m.at("seed").get<std::uint64_t>());
    out.model.set_input_normalization(m.at("input_offset").get<float>(), m.at("input_scale").get<float>());
  } catch (const Json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("model header: ") + e.what());
  }
  if (out.model.weights().size() != file.tensor.size())
    fail(ErrorCode::ShapeMismatch, "weight payload does not match the layer list");
  for (std::size_t j = 0; j < out.model.layers().size(); ++j)
    if (m["layers"][j].value("param_offset", std::size_t{0}) != out.model.param_offsets()[j])
      fail(ErrorCode::MalformedHeader, "parameter offsets disagree with the layer list");
  out.model.weights() = file.tensor.storage();
  out.meta = m.value("info", Json::object());
  return out;
}

std::string model_digest(const FeatureExtractor& model) { return digest_hex(encode_model(model)); }

// ---------------------------------------------------------------------------------------

Json attack_config_to_json(const AttackConfig& cfg) {
  Json j = {{"epsilon", cfg.epsilon},
            {"max_iters", cfg.max_iters},
            {"objective", std::string(to_string(cfg.objective))},
            {"momentum_decay", cfg.momentum_decay},
            {"seed", cfg.seed}};
  j["dropout_keep"] = cfg.dropout_keep ? Json(*cfg.dropout_keep) : Json(nullptr);
  return j;
}

AttackConfig attack_config_from_json(const Json& j) {
  AttackConfig cfg;
  try {
    cfg.epsilon = j.at("epsilon").get<double>();
    cfg.max_iters = j.at("max_iters").get<int>();
    cfg.objective = parse_objective(j.at("objective").get<std::string>());
    cfg.momentum_decay = j.at("momentum_decay").get<double>();
    cfg.seed = j.at("seed").get<std::uint64_t>();
    if (!j.at("dropout_keep").is_null()) cfg.dropout_keep = j.at("dropout_keep").get<double>();
  } catch (const Json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("attack config: ") + e.what());
  }
  return cfg;
}

std::string encode_mask(const Mask& mask, const Json& extra) {
  if (max_abs(mask.delta) > mask.config.epsilon)
    fail(ErrorCode::IntegrityError, "mask exceeds its epsilon budget");
  TensorFile file;
  file.kind = TensorKind::Mask;
  file.tensor = mask.delta;
  file.meta = {{"identity", mask.identity},
               {"epsilon", mask.config.epsilon},
               {"config", attack_config_to_json(mask.config)},
               {"objective_log", mask.objective_log},
               {"frozen_steps", mask.frozen_steps},
               {"extra", extra}};
  return encode_tensor_file(file);
}

Mask decode_mask(std::string_view bytes, Json* extra) {
  TensorFile file = decode_tensor_file(bytes, TensorKind::Mask);
  Mask mask;
  try {
    mask.identity = file.meta.at("identity").get<std::string>();
    mask.config = attack_config_from_json(file.meta.at("config"));
    mask.objective_log = file.meta.at("objective_log").get<std::vector<double>>();
    mask.frozen_steps = file.meta.at("frozen_steps").get<int>();
    const double declared = file.meta.at("epsilon").get<double>();
    if (declared != mask.config.epsilon) fail(ErrorCode::IntegrityError, "declared epsilon disagrees with config");
  } catch (const Json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("mask header: ") + e.what());
  }
  mask.delta = std::move(file.tensor);
  const double peak = max_abs(mask.delta);
  if (peak > mask.config.epsilon)
    fail(ErrorCode::IntegrityError, "mask max-abs " + std::to_string(peak) + " exceeds epsilon " +
                                        std::to_string(mask.config.epsilon));
  if (extra) *extra = file.meta.value("extra", Json::object());
  return mask;
}

// ---------------------------------------------------------------------------------------

namespace {

Json counts_json(const std::map<std::size_t, std::size_t>& m) {
  Json j = Json::object();
  for (const auto& [k, v] : m) j[std::to_string(k)] = v;
  return j;
}

std::map<std::size_t, std::size_t> counts_from_json(const Json& j) {
  std::map<std::size_t, std::size_t> m;
  for (const auto& [k, v] : j.items()) m[std::stoul(k)] = v.get<std::size_t>();
  return m;
}

}  // namespace

std::string encode_report(const ProtectionReport& report, const Json& inputs, std::string_view generated_at) {
  Json results = Json::array();
  for (const ModelResult& r : report.results) {
    Json rates = Json::object();
    for (const auto& [k, v] : r.rate) rates[std::to_string(k)] = v;
    Json identities = Json::array();
    for (const IdentityBreakdown& b : r.identities)
      identities.push_back({{"identity", b.identity}, {"tests", b.tests}, {"protected", counts_json(b.protected_at)}});
    results.push_back({{"model", r.model},
                       {"method", r.method},
                       {"tests", r.tests},
                       {"protected", counts_json(r.protected_at)},
                       {"rate", rates},
                       {"identities", identities}});
  }
  Json j = {{"format", "opom-report"},
            {"version", 1},
            {"config_digest", report.config_digest},
            {"gallery_mode", report.gallery_mode},
            {"generated_at", std::string(generated_at)},
            {"inputs", inputs},
            {"results", results}};
  return j.dump(2) + "\n";
}

ProtectionReport decode_report(std::string_view text, Json* inputs) {
  ProtectionReport report;
  try {
    const Json j = Json::parse(text);
    if (j.value("format", "") != "opom-report") fail(ErrorCode::MalformedHeader, "not an opom report");
    report.config_digest = j.at("config_digest").get<std::string>();
    report.gallery_mode = j.at("gallery_mode").get<std::string>();
    for (const Json& r : j.at("results")) {
      ModelResult mr;
      mr.model = r.at("model").get<std::string>();
      mr.method = r.at("method").get<std::string>();
      mr.tests = r.at("tests").get<std::size_t>();
      mr.protected_at = counts_from_json(r.at("protected"));
      for (const auto& [k, v] : r.at("rate").items()) mr.rate[std::stoul(k)] = v.get<double>();
      for (const Json& b : r.at("identities"))
        mr.identities.push_back({b.at("identity").get<std::string>(), b.at("tests").get<std::size_t>(),
                                 counts_from_json(b.at("protected"))});
      report.results.push_back(std::move(mr));
    }
    if (inputs) *inputs = j.value("inputs", Json::object());
  } catch (const Json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("report: ") + e.what());
  }
  return report;
}

std::string report_csv(std::span<const ProtectionReport> reports) {
  std::ostringstream out;
  out << "method,model,k,rate\n";
  for (const ProtectionReport& report : reports)
    for (const ModelResult& r : report.results)
      for (const auto& [k, rate] : r.rate) {
        char buf[32];
        const auto end = std::to_chars(buf, buf + sizeof buf, rate).ptr;
        out << r.method << ',' << r.model << ',' << k << ',' << std::string_view(buf, end - buf) << '\n';
      }
  return out.str();
}

// ---------------------------------------------------------------------------------------

std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::TrainSurrogate: return "train-surrogate";
    case SplitTag::MaskTrain: return "mask-train";
    case SplitTag::MaskTest: return "mask-test";
    case SplitTag::Distractor: return "distractor";
  }
  return "unknown";
}

SplitTag parse_split_tag(std::string_view name) {
  for (SplitTag t : {SplitTag::TrainSurrogate, SplitTag::MaskTrain, SplitTag::MaskTest, SplitTag::Distractor})
    if (to_string(t) == name) return t;
  fail(ErrorCode::InvalidInput, "unknown split tag '" + std::string(name) + "'");
}

bool IdentityEntry::has(SplitTag tag) const { return count(tag) > 0; }

std::size_t IdentityEntry::count(SplitTag tag) const {
  std::size_t n = 0;
  for (const ImageEntry& e : images) n += e.split == tag;
  return n;
}

void validate_manifest(const DatasetManifest& manifest) {
  std::set<std::string> ids, files;
  for (const IdentityEntry& id : manifest.identities) {
    require(!id.id.empty(), "manifest identity with empty id");
    require(ids.insert(id.id).second, "identity " + id.id + " listed twice");
    for (const ImageEntry& e : id.images) require(files.insert(e.file).second, "file " + e.file + " listed twice");
    const bool probe = id.has(SplitTag::MaskTrain) || id.has(SplitTag::MaskTest);
    if (probe && id.has(SplitTag::Distractor))
      fail(ErrorCode::InvalidInput, "identity " + id.id + " is both a probe and a distractor");
    if (!probe) continue;
    if (id.count(SplitTag::MaskTrain) > kMaxMaskTrainImages)
      fail(ErrorCode::InvalidInput, "identity " + id.id + " has more than 10 mask-train images");
    if (id.count(SplitTag::MaskTest) < kMinMaskTestImages)
      fail(ErrorCode::InvalidInput, "identity " + id.id + " has fewer than 2 mask-test images");
  }
}

std::string encode_manifest(const DatasetManifest& manifest) {
  validate_manifest(manifest);
  Json identities = Json::array();
  for (const IdentityEntry& id : manifest.identities) {
    Json images = Json::array();
    for (const ImageEntry& e : id.images) images.push_back({{"file", e.file}, {"split", std::string(to_string(e.split))}});
    identities.push_back({{"id", id.id}, {"images", images}});
  }
  Json j = {{"format", "opom-manifest"},
            {"version", 1},
            {"image_shape", shape_json(manifest.image_shape)},
            {"pixel_range", Json::array({manifest.pixel_min, manifest.pixel_max})},
            {"generator", manifest.generator},
            {"identities", identities}};
  j["seed"] = manifest.seed ? Json(*manifest.seed) : Json(nullptr);
  return j.dump(2) + "\n";
}

DatasetManifest decode_manifest(std::string_view text) {
  DatasetManifest m;
  try {
    const Json j = Json::parse(text);
    if (j.value("format", "") != "opom-manifest") fail(ErrorCode::MalformedHeader, "not an opom manifest");
    m.image_shape = shape_from_json(j.at("image_shape"));
    m.pixel_min = j.at("pixel_range").at(0).get<double>();
    m.pixel_max = j.at("pixel_range").at(1).get<double>();
    if (!j.at("seed").is_null()) m.seed = j.at("seed").get<std::uint64_t>();
    m.generator = j.value("generator", Json::object());
    for (const Json& id : j.at("identities")) {
      IdentityEntry e{id.at("id").get<std::string>(), {}};
      for (const Json& img : id.at("images"))
        e.images.push_back({img.at("file").get<std::string>(), parse_split_tag(img.at("split").get<std::string>())});
      m.identities.push_back(std::move(e));
    }
  } catch (const Json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("manifest: ") + e.what());
  }
  validate_manifest(m);
  return m;
}

// ---------------------------------------------------------------------------------------

SynthSpec probe_only_spec(std::size_t identities, std::size_t per_id, const VariationSpec& variation,
                          std::uint64_t seed) {
  require(per_id >= 2 + 1, "probe identities need at least 3 images (1 mask-train, 2 mask-test)");
  SynthSpec spec;
  spec.groups.push_back({SplitTag::MaskTrain, identities, per_id, std::min<std::size_t>(10, per_id - 2)});
  spec.variation = variation;
  spec.seed = seed;
  return spec;
}

namespace {

struct Blob {
  double cy, cx, sigma;
  double color[3];
};

// Fixed random decoder: a shared base face plus one part per four latent coordinates. A
// part's latents move it (two), scale its contrast (one) and its size (one), so identity
// lives in geometry as well as in intensity.
struct Decoder {
  Decoder(std::uint64_t seed, const SynthSpec& spec) : shape(spec.image_shape), geometry(spec.part_geometry) {
    std::mt19937_64 rng(seed);
    const double h = static_cast<double>(shape.height), w = static_cast<double>(shape.width);
    std::normal_distribution<double> normal(0.0, 1.0);
    auto make_blob = [&](double lo, double hi, double s_lo, double s_hi, double amplitude) {
      std::uniform_real_distribution<double> cy(lo * h, hi * h), cx(lo * w, hi * w), sigma(s_lo * w, s_hi * w);
      Blob b{cy(rng), cx(rng), sigma(rng), {}};
      const double shared = normal(rng);
      for (double& c : b.color) c = amplitude * (0.7 * shared + 0.5 * normal(rng));
      return b;
    };
    for (int i = 0; i < 4; ++i) base.push_back(make_blob(0.3, 0.7, 0.15, 0.3, 25.0));
    for (std::size_t p = 0; p < spec.latent_dim / 4; ++p)
      parts.push_back(make_blob(0.2, 0.8, 0.05, 0.1, spec.pattern_amplitude));
  }

  static double blob_at(double cy, double cx, double inv_two_sigma2, double y, double x) {
    const double dy = y - cy, dx = x - cx;
    return std::exp(-(dy * dy + dx * dx) * inv_two_sigma2);
  }

  // Evaluated at continuous coordinates so displacement fields need no resampling.
  void render(std::span<const double> z, std::span<const double> dy_field, std::span<const double> dx_field,
              double brightness, std::mt19937_64& noise_rng, double noise, Tensor& out) const {
    struct Placed {
      double cy, cx, inv_two_sigma2, gain;
      const double* color;
    };
    std::vector<Placed> placed;
    for (const Blob& b : base) placed.push_back({b.cy, b.cx, 1.0 / (2.0 * b.sigma * b.sigma), 1.0, b.color});
    for (std::size_t p = 0; p < parts.size(); ++p) {
      const Blob& b = parts[p];
      const double sigma = b.sigma * std::exp(0.25 * z[4 * p + 3]);
      placed.push_back({b.cy + geometry * z[4 * p], b.cx + geometry * z[4 * p + 1],
                        1.0 / (2.0 * sigma * sigma), 1.0 + 0.5 * z[4 * p + 2], b.color});
    }
    std::normal_distribution<double> pixel_noise(0.0, 1.0);
    const std::size_t h = shape.height, w = shape.width;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double yy = static_cast<double>(y) + dy_field[y * w + x];
        const double xx = static_cast<double>(x) + dx_field[y * w + x];
        double rgb[3] = {0.0, 0.0, 0.0};
        for (const Placed& b : placed) {
          const double g = b.gain * blob_at(b.cy, b.cx, b.inv_two_sigma2, yy, xx);
          for (int c = 0; c < 3; ++c) rgb[c] += b.color[c] * g;
        }
        for (std::size_t c = 0; c < shape.channels; ++c) {
          const double raw = rgb[c % 3];
          double v = 127.5 + 110.0 * std::tanh(raw / 110.0) + brightness;
          if (noise > 0.0) v += noise * pixel_noise(noise_rng);
          out.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 255.0));
        }
      }
  }

  Shape shape;
  double geometry;
  std::vector<Blob> base;
  std::vector<Blob> parts;
};

std::string identity_prefix(SplitTag role) {
  switch (role) {
    case SplitTag::TrainSurrogate: return "s";
    case SplitTag::Distractor: return "d";
    default: return "p";
  }
}

std::string zero_pad(std::size_t v, int width) {
  std::string s = std::to_string(v);
  return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

}  // namespace

Dataset synth_dataset(const SynthSpec& spec) {
  const VariationSpec& var = spec.variation;
  require(var.pose >= 0 && var.brightness >= 0 && var.noise >= 0 && var.latent_jitter >= 0,
          "variation amplitudes must be non-negative");
  require(var.pose <= static_cast<double>(spec.image_shape.width) / 4.0, "pose amplitude exceeds a quarter of the image");
  require(var.brightness <= 64.0 && var.noise <= 64.0, "brightness/noise beyond 64 pixel levels");
  require(var.latent_jitter <= 2.0, "latent jitter beyond 2 latent units");
  require(spec.image_shape.count() > 0, "empty image shape");
  require(spec.latent_dim >= 4 && spec.latent_dim % 4 == 0, "latent_dim must be a positive multiple of 4");
  require(spec.part_geometry >= 0.0 && spec.part_geometry <= static_cast<double>(spec.image_shape.width) / 4.0,
          "part geometry must lie in [0, width / 4]");
  require(spec.pattern_amplitude > 0.0 && spec.pattern_amplitude <= 128.0, "pattern amplitude must lie in (0, 128]");
  require(!spec.groups.empty(), "synthetic dataset needs at least one identity group");

  const Decoder decoder(mix_seed(spec.decoder_seed, "decoder"), spec);
  Dataset ds;
  ds.manifest.image_shape = spec.image_shape;
  ds.manifest.seed = spec.seed;
  Json groups = Json::array();
  for (const SynthGroup& g : spec.groups)
    groups.push_back({{"role", std::string(to_string(g.role))},
                      {"identities", g.identities},
                      {"images_per_identity", g.images_per_identity},
                      {"mask_train", g.mask_train}});
  ds.manifest.generator = {{"kind", "synthetic-part-decoder"},
                           {"decoder_seed", spec.decoder_seed},
                           {"latent_dim", spec.latent_dim},
                           {"pattern_amplitude", spec.pattern_amplitude},
                           {"part_geometry", spec.part_geometry},
                           {"groups", groups},
                           {"variation",
                            {{"pose", var.pose},
                             {"brightness", var.brightness},
                             {"noise", var.noise},
                             {"latent_jitter", var.latent_jitter}}}};

  const std::size_t h = spec.image_shape.height, w = spec.image_shape.width;
  std::map<SplitTag, std::size_t> next_index;
  std::size_t global = 0;
  for (const SynthGroup& g : spec.groups) {
    require(g.identities >= 1 && g.images_per_identity >= 1, "synthetic group counts must be at least 1");
    const bool probe = g.role == SplitTag::MaskTrain || g.role == SplitTag::MaskTest;
    if (probe)
      require(g.mask_train >= 1 && g.mask_train <= kMaxMaskTrainImages &&
                  g.images_per_identity >= g.mask_train + kMinMaskTestImages,
              "probe identities need 1..10 mask-train images and at least 2 mask-test images");
    const SplitTag role = probe ? SplitTag::MaskTrain : g.role;
    for (std::size_t i = 0; i < g.identities; ++i, ++global) {
      const std::string id = identity_prefix(role) + zero_pad(next_index[role]++, 4);
      std::mt19937_64 latent_rng(mix_seed(spec.seed, "latent:" + std::to_string(global)));
      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<double> latent(spec.latent_dim);
      for (double& v : latent) v = normal(latent_rng);

      IdentityEntry entry{id, {}};
      std::vector<Tensor> images;
      for (std::size_t j = 0; j < g.images_per_identity; ++j) {
        std::mt19937_64 rng(mix_seed(spec.seed, "image:" + std::to_string(global) + ":" + std::to_string(j)));
        std::uniform_real_distribution<double> unit(-1.0, 1.0);
        std::vector<double> z = latent;
        for (double& v : z) v += var.latent_jitter * normal(rng);
        // Smooth displacement: global shift plus one low-frequency wave per axis.
        const double sy = unit(rng), sx = unit(rng), wy = unit(rng), wx = unit(rng);
        const double phase_y = 3.141592653589793 * unit(rng), phase_x = 3.141592653589793 * unit(rng);
        std::vector<double> dy(h * w), dx(h * w);
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const double u = static_cast<double>(x) / static_cast<double>(w);
            const double v = static_cast<double>(y) / static_cast<double>(h);
            dy[y * w + x] = var.pose * (sy + 0.5 * wy * std::sin(2 * 3.141592653589793 * u + phase_y));
            dx[y * w + x] = var.pose * (sx + 0.5 * wx * std::sin(2 * 3.141592653589793 * v + phase_x));
          }
        const double brightness = var.brightness * unit(rng);
        Tensor img(spec.image_shape);
        decoder.render(z, dy, dx, brightness, rng, var.noise, img);

        SplitTag split = role;
        if (probe) split = j < g.mask_train ? SplitTag::MaskTrain : SplitTag::MaskTest;
        entry.images.push_back({"identities/" + id + "/" + zero_pad(j, 3) + ".tensor", split});
        images.push_back(std::move(img));
      }
      ds.manifest.identities.push_back(std::move(entry));
      ds.images.push_back(std::move(images));
    }
  }
  validate_manifest(ds.manifest);
  return ds;
}

std::vector<Tensor> Dataset::select(std::size_t identity, SplitTag tag) const {
  std::vector<Tensor> out;
  const IdentityEntry& e = manifest.identities.at(identity);
  for (std::size_t j = 0; j < e.images.size(); ++j)
    if (e.images[j].split == tag) out.push_back(images.at(identity).at(j));
  return out;
}

std::vector<std::size_t> Dataset::identities_with(SplitTag tag) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < manifest.identities.size(); ++i)
    if (manifest.identities[i].has(tag)) out.push_back(i);
  return out;
}

void store_dataset(const Dataset& dataset, const fs::path& root) {
  require(dataset.images.size() == dataset.manifest.identities.size(), "dataset images do not match manifest");
  for (std::size_t i = 0; i < dataset.manifest.identities.size(); ++i) {
    const IdentityEntry& e = dataset.manifest.identities[i];
    require(dataset.images[i].size() == e.images.size(), "dataset images do not match manifest");
    for (std::size_t j = 0; j < e.images.size(); ++j) {
      TensorFile f{TensorKind::Image, dataset.images[i][j],
                   {{"identity", e.id}, {"split", std::string(to_string(e.images[j].split))}}};
      write_file(root / e.images[j].file, encode_tensor_file(f));
    }
  }
  write_file(root / "manifest.json", encode_manifest(dataset.manifest));
}

Dataset load_dataset(const fs::path& root) {
  Dataset ds;
  ds.manifest = decode_manifest(read_file(root / "manifest.json"));
  for (const IdentityEntry& e : ds.manifest.identities) {
    std::vector<Tensor> images;
    for (const ImageEntry& img : e.images) {
      TensorFile f = decode_tensor_file(read_file(root / img.file), TensorKind::Image);
      if (!(f.tensor.shape() == ds.manifest.image_shape))
        fail(ErrorCode::ShapeMismatch, img.file + " has shape " + f.tensor.shape().str());
      images.push_back(std::move(f.tensor));
    }
    ds.images.push_back(std::move(images));
  }
  return ds;
}

std::vector<LabeledImage> surrogate_training_set(const Dataset& dataset) {
  std::vector<LabeledImage> out;
  std::size_t label = 0;
  for (std::size_t i = 0; i < dataset.manifest.identities.size(); ++i) {
    const IdentityEntry& e = dataset.manifest.identities[i];
    if (!e.has(SplitTag::TrainSurrogate)) continue;
    for (std::size_t j = 0; j < e.images.size(); ++j)
      if (e.images[j].split == SplitTag::TrainSurrogate) out.push_back({label, &dataset.images[i][j]});
    ++label;
  }
  return out;
}

}  // namespace opom
