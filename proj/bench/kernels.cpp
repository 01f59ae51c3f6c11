// Serial reference kernels against their OpenMP counterparts on UMLS-sized
// RotatE batches (512 positives x 32 negatives, d_e = 512).

#include <benchmark/benchmark.h>
#include <omp.h>

#include "kopa/adapter.hpp"
#include "kopa/kge.hpp"
#include "kopa/kge_kernels.hpp"

using namespace kopa;

namespace {

constexpr std::size_t kEntities = 135, kRelations = 46;

struct Fixture {
  EmbeddingModel model;
  NegativeBatch batch;

  explicit Fixture(std::size_t d_e) {
    Rng rng(1);
    model.family = ScoreFamily::RotatE;
    model.d_e = d_e;
    model.d_r = d_e / 2;
    model.gamma = 8.0f;
    std::uniform_real_distribution<double> u(-0.1, 0.1);
    model.entity_table.resize(kEntities * d_e);
    model.relation_table.resize(kRelations * model.d_r);
    for (auto& x : model.entity_table) x = float(u(rng));
    for (auto& x : model.relation_table) x = float(u(rng) * 30);
    std::uniform_int_distribution<EntityId> e(0, kEntities - 1);
    std::uniform_int_distribution<RelationId> r(0, kRelations - 1);
    batch.k = 32;
    for (int j = 0; j < 512; ++j) {
      Triple pos{e(rng), r(rng), e(rng)};
      batch.positives.push_back(pos);
      for (int i = 0; i < 32; ++i) batch.negatives.push_back({i % 2 ? e(rng) : pos.head, pos.relation, i % 2 ? pos.tail : e(rng)});
    }
  }
};

const Fixture& fixture(std::size_t d_e) {
  static const Fixture f128(128), f512(512);
  return d_e == 128 ? f128 : f512;
}

void BM_LossSerial(benchmark::State& state) {
  const auto& f = fixture(std::size_t(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::loss_serial(f.model.view(), f.batch, 8.0, 1.0).loss);
}

void BM_LossParallel(benchmark::State& state) {
  const auto& f = fixture(std::size_t(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(kernels::loss_parallel(f.model.view(), f.batch, 8.0, 1.0).loss);
}

void BM_GradientSerial(benchmark::State& state) {
  const auto& f = fixture(std::size_t(state.range(0)));
  auto bl = kernels::loss_serial(f.model.view(), f.batch, 8.0, 1.0);
  for (auto _ : state) {
    auto g = kernels::gradient_serial(f.model.view(), std::span<const Triple>(bl.triples), std::span<const double>(bl.coef));
    benchmark::DoNotOptimize(g.entity_grad.data());
  }
}

void BM_GradientParallel(benchmark::State& state) {
  const auto& f = fixture(std::size_t(state.range(0)));
  auto bl = kernels::loss_serial(f.model.view(), f.batch, 8.0, 1.0);
  for (auto _ : state) {
    auto g = kernels::gradient_parallel(f.model.view(), std::span<const Triple>(bl.triples), std::span<const double>(bl.coef));
    benchmark::DoNotOptimize(g.entity_grad.data());
  }
}

void BM_ScoreAll(benchmark::State& state) {
  const auto& f = fixture(512);
  const bool parallel = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(score_all(f.model, f.batch.negatives, parallel).data());
}

void BM_AdapterPredict(benchmark::State& state) {
  std::vector<std::string> texts{"is this triple a correct fact", "entity relation"};
  Rng rng(2);
  ToyLM lm(ToyLMConfig{}, Tokenizer::build(texts), rng);
  auto adapter = PrefixAdapter::init(64, 64, rng);
  std::vector<KopaExample> examples(64);
  for (auto& ex : examples) {
    ex.instruction = lm.tokenizer().encode(texts[0]);
    ex.triple = lm.tokenizer().encode("entity relation entity");
    for (auto& f : ex.features) f.assign(64, 0.1);
  }
  const bool parallel = state.range(0) != 0;
  for (auto _ : state) benchmark::DoNotOptimize(kopa_predict_all(lm, adapter, examples, PrefixPosition::prefix, parallel));
}

}  // namespace

BENCHMARK(BM_LossSerial)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_LossParallel)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientSerial)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_GradientParallel)->Arg(128)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScoreAll)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AdapterPredict)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

int main(int argc, char** argv) {
  benchmark::Initialize(&argc, argv);
  benchmark::AddCustomContext("omp_max_threads", std::to_string(omp_get_max_threads()));
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
