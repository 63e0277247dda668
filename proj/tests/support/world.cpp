#include "world.hpp"

#include "opom/parallel.hpp"
#include "opom/random.hpp"

namespace opom::testing {

std::vector<ModelSpec> default_model_zoo() {
  ArchitectureSpec base;
  ArchitectureSpec wide = base;
  wide.conv1_channels = 12;
  wide.conv2_channels = 24;
  ArchitectureSpec narrow = base;
  narrow.conv1_channels = 6;
  narrow.conv2_channels = 12;
  narrow.embedding_dim = 48;
  return {{"surrogate", base, LossKind::Softmax, 0},
          {"target-a", base, LossKind::MarginSoftmax, 1},
          {"target-b", wide, LossKind::Softmax, 2},
          {"target-c", narrow, LossKind::MarginSoftmax, 3}};
}

std::vector<NamedModel> World::target_models() const {
  std::vector<NamedModel> out;
  for (std::size_t i = 0; i < targets.size(); ++i) out.push_back({target_names[i], &targets[i]});
  return out;
}

World build_world(const WorldConfig& cfg, const std::vector<ModelSpec>& zoo) {
  World w;
  w.config = cfg;
  SynthSpec spec;
  spec.seed = cfg.seed;
  spec.variation = cfg.variation;
  spec.pattern_amplitude = cfg.pattern_amplitude;
  spec.part_geometry = cfg.part_geometry;
  spec.latent_dim = cfg.latent_dim;
  spec.decoder_seed = cfg.decoder_seed;
  spec.groups = {{SplitTag::MaskTrain, cfg.probe_identities, cfg.mask_train + cfg.mask_test, cfg.mask_train},
                 {SplitTag::Distractor, cfg.distractor_identities, cfg.distractor_images, 0},
                 {SplitTag::TrainSurrogate, cfg.train_identities, cfg.train_images, 0}};
  w.data = synth_dataset(spec);

  const std::vector<LabeledImage> train_set = surrogate_training_set(w.data);
  for (std::size_t m = 0; m < zoo.size(); ++m) {
    TrainConfig tc;
    tc.loss = zoo[m].loss;
    tc.epochs = cfg.epochs;
    tc.learning_rate = cfg.learning_rate;
    tc.seed = mix_seed(cfg.seed, "train:" + zoo[m].name);
    const FeatureExtractor init = make_extractor(zoo[m].arch, mix_seed(cfg.seed, "init:" + zoo[m].name));
    TrainResult r = train(init, train_set, tc);
    w.heldout_accuracy.push_back(r.heldout_accuracy);
    if (m == 0) {
      w.surrogate = std::move(r.model);
    } else {
      w.targets.push_back(std::move(r.model));
      w.target_names.push_back(zoo[m].name);
    }
  }

  for (std::size_t i : w.data.identities_with(SplitTag::MaskTrain)) {
    w.protocol.probes.push_back({w.data.manifest.identities[i].id, w.data.select(i, SplitTag::MaskTest)});
    w.mask_train.push_back(w.data.select(i, SplitTag::MaskTrain));
  }
  for (std::size_t i : w.data.identities_with(SplitTag::Distractor))
    for (Tensor& img : w.data.select(i, SplitTag::Distractor))
      w.protocol.distractors.push_back({w.data.manifest.identities[i].id, std::move(img)});
  return w;
}

MaskSets person_specific_masks(const World& world, const AttackConfig& cfg, std::size_t workers) {
  std::vector<Mask> masks(world.protocol.probes.size());
  parallel_for(masks.size(), workers, [&](std::size_t i) {
    AttackConfig c = cfg;
    c.seed = mix_seed(cfg.seed, i);
    masks[i] = generate_mask(world.surrogate, world.mask_train[i], c, world.protocol.probes[i].id);
  });
  MaskSets out;
  for (Mask& m : masks) out[m.identity].push_back(std::move(m));
  return out;
}

MaskSets diverse_masks(const World& world, const AttackConfig& cfg, const DiversityConfig& div,
                       std::size_t workers) {
  std::vector<DiverseMasks> sets(world.protocol.probes.size());
  parallel_for(sets.size(), workers, [&](std::size_t i) {
    AttackConfig c = cfg;
    c.seed = mix_seed(cfg.seed, i);
    sets[i] = generate_diverse_masks(world.surrogate, world.mask_train[i], c, div, world.protocol.probes[i].id);
  });
  MaskSets out;
  for (std::size_t i = 0; i < sets.size(); ++i) out[world.protocol.probes[i].id] = std::move(sets[i].masks);
  return out;
}

MaskSets universal_mask(const World& world, const AttackConfig& cfg) {
  std::vector<Tensor> pooled;
  for (const auto& imgs : world.mask_train) pooled.insert(pooled.end(), imgs.begin(), imgs.end());
  AttackConfig c = cfg;
  c.objective = Objective::FiUapAll;
  const Mask m = generate_mask(world.surrogate, pooled, c, "all");
  MaskSets out;
  for (const ProbeIdentity& p : world.protocol.probes) {
    Mask copy = m;
    copy.identity = p.id;
    out[p.id].push_back(std::move(copy));
  }
  return out;
}

MaskSets zero_masks(const World& world) {
  MaskSets out;
  for (const ProbeIdentity& p : world.protocol.probes) {
    Mask m;
    m.identity = p.id;
    m.delta = Tensor(world.data.manifest.image_shape);
    out[p.id].push_back(std::move(m));
  }
  return out;
}

double mean_rate(const ProtectionReport& report, std::size_t k) {
  double s = 0.0;
  for (const ModelResult& r : report.results) s += r.rate.at(k);
  return report.results.empty() ? 0.0 : s / static_cast<double>(report.results.size());
}

}  // namespace opom::testing
