#include <gtest/gtest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "opom/dataio.hpp"
#include "opom/evalharness.hpp"

namespace opom {
namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
  const std::string cmd = std::string(OPOM_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class Cli : public ::testing::Test {
 protected:
  static fs::path root;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / ("opom_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    ASSERT_EQ(run("synth-data --out " + (root / "ds").string() +
                  " --identities 20 --per-id 15 --distractors 20 --distractor-images 2"
                  " --train-identities 60 --train-per-id 10 --seed 7 --pose 0.7 --jitter 0.2 --noise 2 --brightness 4"),
              0);
    ASSERT_EQ(run("train-model --data " + p("ds") + " --out " + p("sur.model") + " --role surrogate --lr 5e-3 --seed 1"), 0);
  }
  static void TearDownTestSuite() { fs::remove_all(root); }
  static std::string p(const std::string& rel) { return (root / rel).string(); }
};

fs::path Cli::root;

TEST_F(Cli, SynthDataWritesTheRequestedIdentities) {
  const DatasetManifest m = decode_manifest(read_file(root / "ds" / "manifest.json"));
  std::size_t probes = 0;
  for (const IdentityEntry& id : m.identities) probes += id.has(SplitTag::MaskTrain);
  EXPECT_EQ(probes, 20u);
  EXPECT_EQ(m.identities.size(), 100u);
  EXPECT_TRUE(m.generator.contains("config_digest"));
}

TEST_F(Cli, SynthDataIsDeterministicAndCreatesMissingDirectories) {
  ASSERT_EQ(run("synth-data --out " + p("again/nested") + " --identities 20 --per-id 15 --distractors 20"
                " --distractor-images 2 --train-identities 60 --train-per-id 10 --seed 7 --pose 0.7 --jitter 0.2"
                " --noise 2 --brightness 4"),
            0);
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root / "ds")) {
    if (!e.is_regular_file()) continue;
    ++files;
    EXPECT_EQ(read_file(e.path()), read_file(root / "again/nested" / fs::relative(e.path(), root / "ds")));
  }
  EXPECT_EQ(files, 1u + 20 * 15 + 20 * 2 + 60 * 10);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run("synth-data --out /proc/opom-unwritable --identities 2 --per-id 4"), 2);
  EXPECT_EQ(run("synth-data --identities 2"), 1);
  EXPECT_EQ(run("no-such-command"), 1);
  EXPECT_EQ(run("train-model --data " + p("missing") + " --out " + p("x.model")), 2);
  EXPECT_EQ(run("gen-mask --data " + p("ds") + " --model " + p("ds/manifest.json") + " --out " + p("bad")), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(Cli, TrainedModelsDependOnSeedLossAndEpochs) {
  std::set<std::string> digests;
  for (int s : {11, 12, 13}) {
    const std::string out = p("t" + std::to_string(s) + ".model");
    ASSERT_EQ(run("train-model --data " + p("ds") + " --out " + out + " --role target --epochs 2 --seed " + std::to_string(s)), 0);
    digests.insert(model_digest(decode_model(read_file(out)).model));
  }
  EXPECT_EQ(digests.size(), 3u);

  ASSERT_EQ(run("train-model --data " + p("ds") + " --out " + p("soft.model") + " --epochs 2 --seed 5 --loss softmax"), 0);
  ASSERT_EQ(run("train-model --data " + p("ds") + " --out " + p("margin.model") + " --epochs 2 --seed 5 --loss margin_softmax"), 0);
  EXPECT_NE(decode_model(read_file(p("soft.model"))).model.weights(),
            decode_model(read_file(p("margin.model"))).model.weights());

  ASSERT_EQ(run("train-model --data " + p("ds") + " --out " + p("init.model") + " --epochs 0 --seed 5"), 0);
  const ModelFile init = decode_model(read_file(p("init.model")));
  const std::uint64_t init_seed = init.meta.at("config").at("init_seed").get<std::uint64_t>();
  EXPECT_EQ(init.model.weights(), make_extractor(ArchitectureSpec{}, init_seed).weights());
  EXPECT_TRUE(init.meta.contains("config_digest"));
}

TEST_F(Cli, GenMaskWritesOneClampValidMaskPerIdentity) {
  ASSERT_EQ(run("gen-mask --data " + p("ds") + " --model " + p("sur.model") + " --out " + p("m_ch")), 0);
  std::size_t masks = 0;
  for (const auto& e : fs::directory_iterator(root / "m_ch")) {
    if (e.path().extension() != ".mask") continue;
    ++masks;
    const Mask m = decode_mask(read_file(e.path()));
    EXPECT_LE(max_abs(m.delta), 8.0);
    EXPECT_EQ(m.config.max_iters, 16);
  }
  EXPECT_EQ(masks, 20u);
}

TEST_F(Cli, SingleImageObjectivesCollapse) {
  ASSERT_EQ(run("synth-data --out " + p("one") + " --identities 3 --per-id 3 --mask-train 1 --seed 2"), 0);
  ASSERT_EQ(run("gen-mask --data " + p("one") + " --model " + p("sur.model") + " --out " + p("m1") + " --objective convexhull"), 0);
  ASSERT_EQ(run("gen-mask --data " + p("one") + " --model " + p("sur.model") + " --out " + p("m2") + " --objective fiuap"), 0);
  for (const char* id : {"p0000", "p0001", "p0002"}) {
    const Mask a = decode_mask(read_file(root / "m1" / (std::string(id) + ".mask")));
    const Mask b = decode_mask(read_file(root / "m2" / (std::string(id) + ".mask")));
    EXPECT_EQ(a.delta.storage(), b.delta.storage()) << id;
  }
}

TEST_F(Cli, DiverseMasksLogPairwiseDistances) {
  ASSERT_EQ(run("synth-data --out " + p("small") + " --identities 3 --per-id 8 --seed 4"), 0);
  ASSERT_EQ(run("gen-mask --data " + p("small") + " --model " + p("sur.model") + " --out " + p("m_div") + " --diverse 5"), 0);
  const Json index = Json::parse(read_file(root / "m_div" / "masks.json"));
  const Dataset data = load_dataset(root / "small");
  const FeatureExtractor model = decode_model(read_file(p("sur.model"))).model;
  ASSERT_EQ(index.at("identities").size(), 3u);
  const Json& first = index.at("identities").at(0);
  ASSERT_EQ(first.at("files").size(), 5u);
  ASSERT_EQ(first.at("pairwise").size(), 10u);
  std::vector<Tensor> deltas;
  for (const Json& f : first.at("files")) deltas.push_back(decode_mask(read_file(root / "m_div" / f.get<std::string>())).delta);
  const std::vector<Tensor> train = data.select(0, SplitTag::MaskTrain);
  for (const Json& pair : first.at("pairwise")) {
    const std::size_t a = pair.at("first"), b = pair.at("second");
    const std::vector<double> logged = pair.at("distances");
    ASSERT_EQ(logged.size(), train.size());
    for (std::size_t i = 0; i < train.size(); ++i) {
      Tensor xa = train[i], xb = train[i];
      for (std::size_t k = 0; k < xa.size(); ++k) {
        xa[k] += deltas[a][k];
        xb[k] += deltas[b][k];
      }
      const Embedding ea = forward(model, xa).embedding, eb = forward(model, xb).embedding;
      double d = 0.0;
      for (std::size_t k = 0; k < ea.size(); ++k) d += (ea[k] - eb[k]) * (ea[k] - eb[k]);
      EXPECT_NEAR(logged[i], std::sqrt(d), 1e-9);
    }
  }
}

TEST_F(Cli, EvaluateControlTotalsAndDeterminism) {
  ASSERT_EQ(run("train-model --data " + p("ds") + " --out " + p("tgt.model") + " --role target --loss margin_softmax --lr 5e-3 --seed 3"), 0);
  ASSERT_EQ(run("evaluate --data " + p("ds") + " --zero-mask --target " + p("tgt.model") + " --out " + p("zero.json")), 0);
  const ProtectionReport zero = decode_report(read_file(p("zero.json")));
  EXPECT_EQ(zero.results.at(0).tests, 20u * 5 * 4);
  EXPECT_LE(zero.results.at(0).rate.at(1), 0.1);

  ASSERT_EQ(run("gen-mask --data " + p("ds") + " --model " + p("sur.model") + " --out " + p("m_eval")), 0);
  const std::string args = "evaluate --data " + p("ds") + " --masks " + p("m_eval") + " --target " + p("tgt.model") +
                           " --target " + p("sur.model") + " --csv " + p("r.csv") + " --out ";
  ASSERT_EQ(run(args + p("r1.json")), 0);
  ASSERT_EQ(run(args + p("r2.json") + " --workers 3"), 0);
  Json a = Json::parse(read_file(p("r1.json"))), b = Json::parse(read_file(p("r2.json")));
  a.erase("generated_at");
  b.erase("generated_at");
  EXPECT_EQ(a.dump(), b.dump());
  const ProtectionReport r = decode_report(read_file(p("r1.json")));
  ASSERT_EQ(r.results.size(), 2u);
  EXPECT_GT(r.results[1].rate.at(1), zero.results[0].rate.at(1));
  EXPECT_EQ(read_file(p("r.csv")).rfind("method,model,k,rate\n", 0), 0u);
  EXPECT_EQ(run("report --in " + p("r1.json") + " --in " + p("zero.json")), 0);
}

}  // namespace
}  // namespace opom
