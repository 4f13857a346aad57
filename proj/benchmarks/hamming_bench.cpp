#include <benchmark/benchmark.h>

#include "modgate/catalog.hpp"
#include "modgate/signature.hpp"

namespace {

struct Fixture {
  explicit Fixture(std::size_t n) {
    const auto images = modgate::generate_corpus({n, {"a", "b", "c"}, 5, 64, 64});
    std::vector<modgate::Signature> sigs;
    for (const auto& img : images) sigs.push_back(modgate::compute_signature(img));
    index = std::make_unique<modgate::SimilarityIndex>(modgate::fit_binarization(sigs));
    std::vector<std::pair<std::string, modgate::BinarySignature>> entries;
    for (std::size_t i = 0; i < images.size(); ++i) {
      entries.emplace_back(images[i].image_id, modgate::binarize(sigs[i], index->binarization()));
    }
    probe = entries.front().second;
    other = entries.back().second;
    index->insert_batch(std::move(entries));
  }
  std::unique_ptr<modgate::SimilarityIndex> index;
  modgate::BinarySignature probe;
  modgate::BinarySignature other;
};

void BM_Hamming(benchmark::State& state) {
  static const Fixture f(64);
  for (auto _ : state) benchmark::DoNotOptimize(modgate::hamming(f.probe, f.other));
}
BENCHMARK(BM_Hamming);

void BM_KnnQuery(benchmark::State& state) {
  const Fixture f(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(f.index->query(f.probe, 10));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_KnnQuery)->Arg(1000)->Arg(10000);

}  // namespace

BENCHMARK_MAIN();
