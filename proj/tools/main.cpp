#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "opom/dataio.hpp"
#include "opom/digest.hpp"
#include "opom/error.hpp"
#include "opom/evalharness.hpp"
#include "opom/maskgen.hpp"
#include "opom/parallel.hpp"
#include "opom/random.hpp"
#include "opom/surrogate.hpp"

namespace fs = std::filesystem;
using namespace opom;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kInternal = 3 };

std::size_t default_workers() {
  if (const char* env = std::getenv("OPOM_WORKERS")) {
    char* end = nullptr;
    const unsigned long v = std::strtoul(env, &end, 10);
    if (end != env && *end == '\0' && v > 0) return v;
    std::cerr << "warning: ignoring OPOM_WORKERS='" << env << "'\n";
  }
  return 1;
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string json_digest(const Json& j) { return digest_hex(j.dump()); }

std::string file_digest(const fs::path& p) { return digest_hex(read_file(p)); }

Json variation_json(const VariationSpec& v) {
  return {{"pose", v.pose}, {"brightness", v.brightness}, {"noise", v.noise}, {"latent_jitter", v.latent_jitter}};
}

// ---------------------------------------------------------------------------------------

struct SynthOptions {
  std::string out;
  std::size_t identities = 20;
  std::size_t per_id = 15;
  std::optional<std::size_t> mask_train;
  std::size_t distractors = 0;
  std::size_t distractor_images = 1;
  std::size_t train_identities = 0;
  std::size_t train_per_id = 10;
  std::uint64_t seed = 0;
  std::uint64_t decoder_seed = 0;
  std::size_t size = 32;
  std::size_t latent_dim = 32;
  double amplitude = 40.0;
  double geometry = 2.0;
  VariationSpec variation;
};

int cmd_synth(const SynthOptions& o) {
  SynthSpec spec;
  spec.seed = o.seed;
  spec.decoder_seed = o.decoder_seed;
  spec.image_shape = Shape{3, o.size, o.size};
  spec.latent_dim = o.latent_dim;
  spec.pattern_amplitude = o.amplitude;
  spec.part_geometry = o.geometry;
  spec.variation = o.variation;
  require(o.per_id >= 3, "--per-id must be at least 3 (1 mask-train, 2 mask-test)");
  const std::size_t mask_train = o.mask_train.value_or(std::min<std::size_t>(10, o.per_id - 2));
  require(mask_train >= 1 && mask_train + 2 <= o.per_id, "--mask-train must leave at least 2 mask-test images");
  if (o.identities > 0) spec.groups.push_back({SplitTag::MaskTrain, o.identities, o.per_id, mask_train});
  if (o.distractors > 0) spec.groups.push_back({SplitTag::Distractor, o.distractors, o.distractor_images, 0});
  if (o.train_identities > 0)
    spec.groups.push_back({SplitTag::TrainSurrogate, o.train_identities, o.train_per_id, 0});
  require(!spec.groups.empty(), "nothing to generate");

  const Json config = {{"identities", o.identities},
                       {"per_id", o.per_id},
                       {"mask_train", mask_train},
                       {"distractors", o.distractors},
                       {"distractor_images", o.distractor_images},
                       {"train_identities", o.train_identities},
                       {"train_per_id", o.train_per_id},
                       {"seed", o.seed},
                       {"decoder_seed", o.decoder_seed},
                       {"size", o.size},
                       {"latent_dim", o.latent_dim},
                       {"amplitude", o.amplitude},
                       {"geometry", o.geometry},
                       {"variation", variation_json(o.variation)}};
  Dataset data = synth_dataset(spec);
  data.manifest.generator["config"] = config;
  data.manifest.generator["config_digest"] = json_digest(config);
  store_dataset(data, o.out);
  std::cout << "wrote " << data.manifest.identities.size() << " identities to " << o.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string out;
  std::string role = "surrogate";
  std::string loss = "softmax";
  int epochs = 12;
  double lr = 2e-3;
  std::size_t batch = 32;
  std::size_t holdout = 1;
  double margin = 0.2;
  double scale = 16.0;
  ArchitectureSpec arch;
  bool no_dropout_layers = false;
  std::uint64_t seed = 0;
};

int cmd_train(const TrainOptions& o) {
  require(o.role == "surrogate" || o.role == "target", "--role must be surrogate or target");
  const fs::path manifest = fs::path(o.data) / "manifest.json";
  const Dataset data = load_dataset(o.data);
  ArchitectureSpec arch = o.arch;
  arch.input = data.manifest.image_shape;
  arch.dropout_layers = !o.no_dropout_layers;

  TrainConfig tc;
  tc.loss = parse_loss_kind(o.loss);
  tc.epochs = o.epochs;
  tc.learning_rate = o.lr;
  tc.batch_size = o.batch;
  tc.holdout_per_identity = o.holdout;
  tc.margin = o.margin;
  tc.scale = o.scale;
  tc.seed = mix_seed(o.seed, "train:" + o.role);
  const std::uint64_t init_seed = mix_seed(o.seed, "init:" + o.role);

  const Json config = {{"role", o.role},
                       {"seed", o.seed},
                       {"init_seed", init_seed},
                       {"train_seed", tc.seed},
                       {"loss", std::string(to_string(tc.loss))},
                       {"epochs", tc.epochs},
                       {"learning_rate", tc.learning_rate},
                       {"batch_size", tc.batch_size},
                       {"holdout_per_identity", tc.holdout_per_identity},
                       {"margin", tc.margin},
                       {"scale", tc.scale},
                       {"conv1_channels", arch.conv1_channels},
                       {"conv2_channels", arch.conv2_channels},
                       {"head_grid", arch.head_grid},
                       {"embedding_dim", arch.embedding_dim},
                       {"dropout_layers", arch.dropout_layers},
                       {"keep_prob", arch.keep_prob}};
  const std::vector<LabeledImage> set = surrogate_training_set(data);
  const TrainResult r = train(make_extractor(arch, init_seed), set, tc);
  const Json meta = {{"config", config},
                     {"config_digest", json_digest(config)},
                     {"inputs", {{"manifest", file_digest(manifest)}}},
                     {"heldout_accuracy", r.heldout_accuracy},
                     {"epoch_loss", r.epoch_loss}};
  write_file(o.out, encode_model(r.model, meta));
  std::cout << o.role << " model: " << set.size() << " training images, held-out accuracy " << r.heldout_accuracy
            << ", digest " << model_digest(r.model) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------------------

struct MaskOptions {
  std::string data;
  std::string model;
  std::string out;
  std::string objective = "convex_hull";
  double epsilon = 8.0;
  std::optional<int> iters;
  bool momentum = false;
  std::optional<double> momentum_decay;
  std::optional<double> dropout_keep;
  std::size_t diverse = 1;
  double separation_weight = 1.0;
  std::optional<double> separation_threshold;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

std::string mask_file_name(const std::string& id, std::size_t j, std::size_t n) {
  return n == 1 ? id + ".mask" : id + "." + std::to_string(j) + ".mask";
}

int cmd_genmask(const MaskOptions& o) {
  const Dataset data = load_dataset(o.data);
  const ModelFile model = decode_model(read_file(o.model));
  require(model.model.input_shape() == data.manifest.image_shape, "model input shape does not match the dataset");
  require(o.diverse >= 1, "--diverse must be at least 1");

  AttackConfig cfg;
  cfg.objective = parse_objective(o.objective);
  cfg.epsilon = o.epsilon;
  cfg.max_iters = o.iters.value_or(default_iterations(cfg.objective));
  cfg.momentum_decay = o.momentum_decay.value_or(o.momentum ? 1.0 : 0.0);
  cfg.dropout_keep = o.dropout_keep;
  cfg.seed = o.seed;
  DiversityConfig div;
  div.num_masks = o.diverse;
  div.separation_weight = o.separation_weight;
  if (o.separation_threshold) div.separation_threshold = *o.separation_threshold;
  require(cfg.objective != Objective::FiUapAll || o.diverse == 1, "fi_uap_all produces a single shared mask");

  const std::vector<std::size_t> probes = data.identities_with(SplitTag::MaskTrain);
  require(!probes.empty(), "dataset has no probe identities");

  Json config = attack_config_to_json(cfg);
  config["diverse"] = div.num_masks;
  config["separation_weight"] = div.separation_weight;
  config["separation_threshold"] = o.separation_threshold ? Json(*o.separation_threshold) : Json(nullptr);
  const Json inputs = {{"manifest", file_digest(fs::path(o.data) / "manifest.json")},
                       {"model", file_digest(o.model)}};
  const std::string digest = json_digest({{"config", config}, {"inputs", inputs}});

  std::vector<DiverseMasks> sets(probes.size());
  if (cfg.objective == Objective::FiUapAll) {
    std::vector<Tensor> pooled;
    for (std::size_t i : probes)
      for (Tensor& t : data.select(i, SplitTag::MaskTrain)) pooled.push_back(std::move(t));
    const Mask shared = generate_mask(model.model, pooled, cfg, "all");
    for (std::size_t p = 0; p < probes.size(); ++p) {
      Mask m = shared;
      m.identity = data.manifest.identities[probes[p]].id;
      sets[p].masks.push_back(std::move(m));
    }
  } else {
    parallel_for(probes.size(), o.workers, [&](std::size_t p) {
      const std::size_t i = probes[p];
      AttackConfig c = cfg;
      c.seed = mix_seed(cfg.seed, p);
      sets[p] = generate_diverse_masks(model.model, data.select(i, SplitTag::MaskTrain), c, div,
                                       data.manifest.identities[i].id);
    });
  }

  Json identities = Json::array();
  for (std::size_t p = 0; p < probes.size(); ++p) {
    const std::string& id = data.manifest.identities[probes[p]].id;
    Json files = Json::array();
    for (std::size_t j = 0; j < sets[p].masks.size(); ++j) {
      const std::string name = mask_file_name(id, j, sets[p].masks.size());
      const Json extra = {{"config_digest", digest}, {"inputs", inputs}, {"diverse_index", j}};
      write_file(fs::path(o.out) / name, encode_mask(sets[p].masks[j], extra));
      files.push_back(name);
    }
    Json pairs = Json::array();
    for (const DiverseMasks::PairDistances& pd : sets[p].pairwise)
      pairs.push_back({{"first", pd.first}, {"second", pd.second}, {"mean", pd.mean()}, {"distances", pd.distances}});
    identities.push_back({{"id", id},
                          {"files", files},
                          {"final_objective", sets[p].masks.front().objective_log.back()},
                          {"pairwise", pairs}});
  }
  const Json index = {{"format", "opom-masks"},
                      {"version", 1},
                      {"method", std::string(to_string(cfg.objective))},
                      {"config", config},
                      {"config_digest", digest},
                      {"inputs", inputs},
                      {"identities", identities}};
  write_file(fs::path(o.out) / "masks.json", index.dump(2) + "\n");
  std::cout << "wrote masks for " << probes.size() << " identities to " << o.out << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------------------

struct EvalOptions {
  std::string data;
  std::string masks;
  bool zero_mask = false;
  std::vector<std::string> targets;
  std::string gallery_mode = "clean";
  std::size_t gallery_mask_index = 0;
  std::vector<std::size_t> top_k{1, 5};
  std::string method;
  std::string out;
  std::string csv;
  std::size_t workers = 1;
};

std::string model_name(const std::string& path) {
  const std::string file = fs::path(path).filename().string();
  return file.substr(0, file.find('.'));
}

int cmd_evaluate(const EvalOptions& o) {
  require(o.masks.empty() || !o.zero_mask, "--masks and --zero-mask are exclusive");
  const Dataset data = load_dataset(o.data);

  EvalProtocol protocol;
  protocol.gallery_mode = parse_gallery_mode(o.gallery_mode);
  protocol.gallery_mask_index = o.gallery_mask_index;
  protocol.top_k = o.top_k;
  for (std::size_t i : data.identities_with(SplitTag::MaskTest))
    protocol.probes.push_back({data.manifest.identities[i].id, data.select(i, SplitTag::MaskTest)});
  for (std::size_t i : data.identities_with(SplitTag::Distractor))
    for (Tensor& t : data.select(i, SplitTag::Distractor))
      protocol.distractors.push_back({data.manifest.identities[i].id, std::move(t)});
  require(!protocol.probes.empty(), "dataset has no mask-test images");

  std::vector<FeatureExtractor> models;
  std::vector<NamedModel> named;
  Json target_digests = Json::object();
  std::set<std::string> names;
  models.reserve(o.targets.size());
  for (const std::string& path : o.targets) {
    const std::string bytes = read_file(path);
    models.push_back(decode_model(bytes).model);
    const std::string name = model_name(path);
    require(names.insert(name).second, "two targets share the name " + name);
    target_digests[name] = digest_hex(bytes);
  }
  for (std::size_t m = 0; m < models.size(); ++m) named.push_back({model_name(o.targets[m]), &models[m]});

  std::optional<MaskSets> masks;
  std::string method = o.method;
  Json mask_inputs = nullptr;
  if (o.zero_mask) {
    masks.emplace();
    for (const ProbeIdentity& p : protocol.probes) {
      Mask m;
      m.identity = p.id;
      m.delta = Tensor(data.manifest.image_shape);
      (*masks)[p.id].push_back(std::move(m));
    }
    if (method.empty()) method = "zero_mask";
  } else if (!o.masks.empty()) {
    const fs::path dir(o.masks);
    const std::string index_text = read_file(dir / "masks.json");
    Json index;
    try {
      index = Json::parse(index_text);
    } catch (const Json::exception& e) {
      fail(ErrorCode::MalformedHeader, std::string("masks.json: ") + e.what());
    }
    if (index.value("format", "") != "opom-masks") fail(ErrorCode::MalformedHeader, "masks.json is not a mask index");
    Digest d;
    d.update(index_text);
    masks.emplace();
    for (const Json& id : index.at("identities")) {
      const std::string name = id.at("id").get<std::string>();
      for (const Json& f : id.at("files")) {
        const std::string bytes = read_file(dir / f.get<std::string>());
        d.update(bytes);
        Mask m = decode_mask(bytes);
        require(m.identity == name, "mask file " + f.get<std::string>() + " belongs to " + m.identity);
        require(m.delta.shape() == data.manifest.image_shape, "mask shape does not match the dataset");
        (*masks)[name].push_back(std::move(m));
      }
    }
    mask_inputs = d.hex();
    if (method.empty()) method = index.value("method", "masks");
  } else if (method.empty()) {
    method = "none";
  }

  const Json config = {{"gallery_mode", o.gallery_mode},
                       {"gallery_mask_index", o.gallery_mask_index},
                       {"top_k", o.top_k},
                       {"method", method},
                       {"zero_mask", o.zero_mask}};
  const Json inputs = {{"manifest", file_digest(fs::path(o.data) / "manifest.json")},
                       {"targets", target_digests},
                       {"masks", mask_inputs},
                       {"config", config},
                       {"run_digest", json_digest(config)}};
  const ProtectionReport report =
      run_protocol(named, masks ? &*masks : nullptr, protocol, method, o.workers);
  write_file(o.out, encode_report(report, inputs, utc_now()));
  if (!o.csv.empty()) write_file(o.csv, report_csv(std::span<const ProtectionReport>(&report, 1)));
  for (const ModelResult& r : report.results)
    for (const auto& [k, rate] : r.rate)
      std::printf("%-12s %-16s top-%zu %.4f (%zu/%zu)\n", r.method.c_str(), r.model.c_str(), k, rate,
                  r.protected_at.at(k), r.tests);
  return kOk;
}

// ---------------------------------------------------------------------------------------

struct ReportOptions {
  std::vector<std::string> inputs;
  std::string csv;
};

int cmd_report(const ReportOptions& o) {
  std::vector<ProtectionReport> reports;
  for (const std::string& path : o.inputs) reports.push_back(decode_report(read_file(path)));
  std::printf("%-14s %-16s %-6s %-8s %s\n", "method", "model", "k", "rate", "protected/tests");
  std::map<std::pair<std::string, std::size_t>, std::vector<double>> by_method;
  for (const ProtectionReport& rep : reports)
    for (const ModelResult& r : rep.results)
      for (const auto& [k, rate] : r.rate) {
        std::printf("%-14s %-16s %-6zu %-8.4f %zu/%zu\n", r.method.c_str(), r.model.c_str(), k, rate,
                    r.protected_at.at(k), r.tests);
        by_method[{r.method, k}].push_back(rate);
      }
  std::printf("\n%-14s %-6s %s\n", "method", "k", "mean rate over models");
  for (const auto& [key, rates] : by_method) {
    double s = 0.0;
    for (double v : rates) s += v;
    std::printf("%-14s %-6zu %.4f\n", key.first.c_str(), key.second, s / static_cast<double>(rates.size()));
  }
  if (!o.csv.empty()) write_file(o.csv, report_csv(reports));
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"opom: person-specific privacy masks against face-embedding models"};
  app.require_subcommand(1);
  const std::size_t workers = default_workers();

  SynthOptions so;
  auto* synth = app.add_subcommand("synth-data", "Generate a synthetic identity dataset");
  synth->add_option("--out", so.out, "Output directory")->required();
  synth->add_option("--identities", so.identities, "Probe identities")->capture_default_str();
  synth->add_option("--per-id", so.per_id, "Images per probe identity")->capture_default_str();
  synth->add_option("--mask-train", so.mask_train, "Mask-train images per probe identity (default min(10, per-id - 2))");
  synth->add_option("--distractors", so.distractors, "Distractor identities")->capture_default_str();
  synth->add_option("--distractor-images", so.distractor_images, "Images per distractor")->capture_default_str();
  synth->add_option("--train-identities", so.train_identities, "Identities for model training")->capture_default_str();
  synth->add_option("--train-per-id", so.train_per_id, "Images per training identity")->capture_default_str();
  synth->add_option("--seed", so.seed, "Identity and photo seed")->capture_default_str();
  synth->add_option("--decoder-seed", so.decoder_seed, "Face decoder seed")->capture_default_str();
  synth->add_option("--size", so.size, "Image side in pixels")->capture_default_str();
  synth->add_option("--latent-dim", so.latent_dim, "Identity latent dimension")->capture_default_str();
  synth->add_option("--amplitude", so.amplitude, "Part colour amplitude")->capture_default_str();
  synth->add_option("--geometry", so.geometry, "Part displacement per latent unit")->capture_default_str();
  synth->add_option("--pose", so.variation.pose, "Displacement field amplitude")->capture_default_str();
  synth->add_option("--brightness", so.variation.brightness, "Brightness jitter")->capture_default_str();
  synth->add_option("--noise", so.variation.noise, "Pixel noise sigma")->capture_default_str();
  synth->add_option("--jitter", so.variation.latent_jitter, "Latent jitter per photo")->capture_default_str();

  TrainOptions to;
  auto* trainc = app.add_subcommand("train-model", "Train a surrogate or target feature extractor");
  trainc->add_option("--data", to.data, "Dataset directory")->required();
  trainc->add_option("--out", to.out, "Model file")->required();
  trainc->add_option("--role", to.role, "surrogate or target")->check(CLI::IsMember({"surrogate", "target"}))->capture_default_str();
  trainc->add_option("--loss", to.loss, "softmax or margin_softmax")->capture_default_str();
  trainc->add_option("--epochs", to.epochs)->capture_default_str();
  trainc->add_option("--lr", to.lr, "Adam learning rate")->capture_default_str();
  trainc->add_option("--batch", to.batch)->capture_default_str();
  trainc->add_option("--holdout", to.holdout, "Held-out images per identity")->capture_default_str();
  trainc->add_option("--margin", to.margin)->capture_default_str();
  trainc->add_option("--scale", to.scale)->capture_default_str();
  trainc->add_option("--conv1", to.arch.conv1_channels)->capture_default_str();
  trainc->add_option("--conv2", to.arch.conv2_channels)->capture_default_str();
  trainc->add_option("--embedding-dim", to.arch.embedding_dim)->capture_default_str();
  trainc->add_option("--head-grid", to.arch.head_grid, "Pooled side fed to the fc layer; 1 = global pooling")->capture_default_str();
  trainc->add_option("--keep-prob", to.arch.keep_prob, "Dropout keep probability used during training")->capture_default_str();
  trainc->add_flag("--no-dropout-layers", to.no_dropout_layers);
  trainc->add_option("--seed", to.seed)->capture_default_str();

  MaskOptions mo;
  mo.workers = workers;
  auto* gen = app.add_subcommand("gen-mask", "Generate privacy masks for every probe identity");
  gen->add_option("--data", mo.data, "Dataset directory")->required();
  gen->add_option("--model", mo.model, "Surrogate model file")->required();
  gen->add_option("--out", mo.out, "Output directory")->required();
  gen->add_option("--objective", mo.objective,
                  "affine_hull, class_center, convex_hull, fi_uap, fi_uap_plus, fi_uap_all, gd_uap")
      ->capture_default_str();
  gen->add_option("--epsilon", mo.epsilon, "L-infinity budget in pixel levels")->capture_default_str();
  gen->add_option("--iters", mo.iters, "Iterations (default 16, 10000 for gd_uap)");
  gen->add_flag("--momentum", mo.momentum, "Enable momentum with decay 1");
  gen->add_option("--momentum-decay", mo.momentum_decay, "Explicit momentum decay");
  gen->add_option("--dropout-keep", mo.dropout_keep, "Feature dropout keep probability");
  gen->add_option("--diverse", mo.diverse, "Masks per identity")->capture_default_str();
  gen->add_option("--separation-weight", mo.separation_weight)->capture_default_str();
  gen->add_option("--separation-threshold", mo.separation_threshold);
  gen->add_option("--seed", mo.seed)->capture_default_str();
  gen->add_option("--workers", mo.workers, "Worker threads (default $OPOM_WORKERS or 1)")->capture_default_str();

  EvalOptions eo;
  eo.workers = workers;
  auto* eval = app.add_subcommand("evaluate", "Run the 1:N identification protocol");
  eval->add_option("--data", eo.data, "Dataset directory")->required();
  eval->add_option("--masks", eo.masks, "Mask directory written by gen-mask");
  eval->add_flag("--zero-mask", eo.zero_mask, "Evaluate all-zero masks (recognizability control)");
  eval->add_option("--target", eo.targets, "Target model file (repeatable)")->required();
  eval->add_option("--gallery-mode", eo.gallery_mode)->check(CLI::IsMember({"clean", "masked"}))->capture_default_str();
  eval->add_option("--gallery-mask-index", eo.gallery_mask_index)->capture_default_str();
  eval->add_option("--top-k", eo.top_k)->delimiter(',')->capture_default_str();
  eval->add_option("--method", eo.method, "Method label (default from the mask index)");
  eval->add_option("--out", eo.out, "Report JSON")->required();
  eval->add_option("--csv", eo.csv, "Plot CSV");
  eval->add_option("--workers", eo.workers, "Worker threads (default $OPOM_WORKERS or 1)")->capture_default_str();

  ReportOptions ro;
  auto* rep = app.add_subcommand("report", "Summarize protection reports");
  rep->add_option("--in", ro.inputs, "Report JSON (repeatable)")->required();
  rep->add_option("--csv", ro.csv, "Combined plot CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*synth) return cmd_synth(so);
    if (*trainc) return cmd_train(to);
    if (*gen) return cmd_genmask(mo);
    if (*eval) return cmd_evaluate(eo);
    if (*rep) return cmd_report(ro);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == ErrorCode::InternalError ? kInternal : kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kInternal;
  }
  return kUsage;
}
