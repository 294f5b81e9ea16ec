#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

#include "teir/bpe.hpp"
#include "teir/frozen_encoders.hpp"
#include "teir/objectives.hpp"
#include "teir/optimizer.hpp"

using namespace teir;

namespace {

std::vector<std::string> corpus(std::size_t lines, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> ch('a', 'p'), len(3, 7);
  std::vector<std::string> out;
  for (std::size_t i = 0; i < lines; ++i) {
    std::string s;
    for (int w = 0; w < 5; ++w) {
      if (w) s += ' ';
      for (int k = len(rng); k > 0; --k) s += static_cast<char>(ch(rng));
    }
    out.push_back(s);
  }
  return out;
}

Matrix random_table(std::size_t rows, std::size_t dim) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> n(0.0f, 0.1f);
  Matrix m(rows, dim);
  for (float& v : m.values()) v = n(rng);
  return m;
}

}  // namespace

static void BM_BpeTrain(benchmark::State& state) {
  const auto text = corpus(2000, 1);
  for (auto _ : state) benchmark::DoNotOptimize(train_bpe(text, 512, 0));
}
BENCHMARK(BM_BpeTrain)->Unit(benchmark::kMillisecond);

static void BM_BpeEncode(benchmark::State& state) {
  const auto text = corpus(2000, 1);
  const auto scope = EncodingScope::from_task_vocab(train_bpe(text, 512, 0));
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(scope.encode(text[i++ % text.size()]));
}
BENCHMARK(BM_BpeEncode);

static void BM_EncodeText(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const Matrix table = random_table(512, dim);
  const FrozenTextParams p = make_text_params(dim, dim, 32, 7);
  std::vector<TokenId> ids(12);
  for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = static_cast<TokenId>(k * 37 % 512);
  for (auto _ : state) benchmark::DoNotOptimize(encode_text(ids, table, p));
}
BENCHMARK(BM_EncodeText)->Arg(64)->Arg(256);

static void BM_EncodeTextGrad(benchmark::State& state) {
  const auto dim = static_cast<std::size_t>(state.range(0));
  const Matrix table = random_table(512, dim);
  const FrozenTextParams p = make_text_params(dim, dim, 32, 7);
  std::vector<TokenId> ids(12);
  for (std::size_t k = 0; k < ids.size(); ++k) ids[k] = static_cast<TokenId>(k * 37 % 512);
  const std::vector<double> up(dim, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(encode_text_grad(ids, table, p, up));
}
BENCHMARK(BM_EncodeTextGrad)->Arg(64)->Arg(256);

static void BM_TotalLoss(benchmark::State& state) {
  const auto k = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n(0.0, 1.0);
  FeatureBatch b{MatrixD(k, 64), MatrixD(k, 64), MatrixD(k, 64)};
  for (auto* m : {&b.images, &b.english, &b.foreign})
    for (double& v : m->values()) v = n(rng);
  for (auto _ : state) benchmark::DoNotOptimize(total_loss(b, LossConfig{}));
}
BENCHMARK(BM_TotalLoss)->Arg(32)->Arg(128);

static void BM_OptimizerStep(benchmark::State& state) {
  EmbeddingTable table(2048, 64);
  RowGrads g;
  for (TokenId id = 0; id < 256; ++id) g[id * 8] = std::vector<double>(64, 0.01);
  const LambdaVector lam = all_ones(2048);
  OptimConfig cfg;
  cfg.kind = state.range(0) == 0 ? OptimKind::kSgd : OptimKind::kAdamW;
  cfg.total_steps = 1000;
  OptimState s;
  for (auto _ : state) step(table, g, lam, cfg, s);
}
BENCHMARK(BM_OptimizerStep)->Arg(0)->Arg(1);
BENCHMARK_MAIN();
