#include <benchmark/benchmark.h>

#include "generators.hpp"
#include "opom/evalharness.hpp"
#include "opom/maskgen.hpp"
#include "opom/numerics.hpp"
#include "opom/subspace.hpp"
#include "opom/surrogate.hpp"

namespace {

using namespace opom;
using opom::testing::Gen;

void BM_ThinSvd(benchmark::State& state) {
  Gen g(1);
  const auto cols = static_cast<std::size_t>(state.range(0));
  const Matrix m = g.matrix(64, cols);
  for (auto _ : state) benchmark::DoNotOptimize(thin_svd(m));
}
BENCHMARK(BM_ThinSvd)->Arg(4)->Arg(10)->Arg(32);

void BM_SimplexLsq(benchmark::State& state) {
  Gen g(2);
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix f = Matrix::from_columns(g.units(n, 64));
  const Vector q = g.unit(64);
  for (auto _ : state) benchmark::DoNotOptimize(simplex_constrained_lsq(f, q));
}
BENCHMARK(BM_SimplexLsq)->Arg(3)->Arg(10)->Arg(32);

void BM_Forward(benchmark::State& state) {
  Gen g(3);
  const FeatureExtractor m = make_extractor(ArchitectureSpec{}, 3);
  const Tensor x = g.image(m.input_shape());
  for (auto _ : state) benchmark::DoNotOptimize(forward(m, x));
}
BENCHMARK(BM_Forward);

void BM_InputGradient(benchmark::State& state) {
  Gen g(4);
  const FeatureExtractor m = make_extractor(ArchitectureSpec{}, 4);
  const Tensor x = g.image(m.input_shape());
  const Vector u = g.vector(m.embedding_dim());
  for (auto _ : state) benchmark::DoNotOptimize(input_gradient(m, x, u));
}
BENCHMARK(BM_InputGradient);

void BM_ConvexHullMask(benchmark::State& state) {
  Gen g(5);
  const FeatureExtractor m = make_extractor(ArchitectureSpec{}, 5);
  std::vector<Tensor> images;
  for (int i = 0; i < 10; ++i) images.push_back(g.image(m.input_shape()));
  AttackConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(generate_mask(m, images, cfg));
}
BENCHMARK(BM_ConvexHullMask)->Unit(benchmark::kMillisecond);

void BM_Identify(benchmark::State& state) {
  Gen g(6);
  std::vector<GalleryEntry> gallery;
  for (int i = 0; i < 200; ++i) gallery.push_back({"g" + std::to_string(i), g.unit(64)});
  const Vector probe = g.unit(64);
  for (auto _ : state) benchmark::DoNotOptimize(identify(probe, gallery, 5));
}
BENCHMARK(BM_Identify);

}  // namespace

BENCHMARK_MAIN();
