#include <benchmark/benchmark.h>

#include "modgate/catalog.hpp"
#include "modgate/signature.hpp"

namespace {

void BM_ComputeSignature(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  const auto image = modgate::generate_corpus({1, {"a"}, 9, side, side}).front();
  for (auto _ : state) benchmark::DoNotOptimize(modgate::compute_signature(image));
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_ComputeSignature)->Arg(64)->Arg(256);

}  // namespace

BENCHMARK_MAIN();
