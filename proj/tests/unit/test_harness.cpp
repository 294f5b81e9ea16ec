#include <gtest/gtest.h>

#include <algorithm>
#include <bit>

#include "teir/error.hpp"
#include "teir/harness.hpp"
#include "teir/synth_bench.hpp"
#include "test_util.hpp"

using namespace teir;
namespace fs = std::filesystem;

namespace {

// Generated once per test binary; every test reads it only.
const fs::path& small_bench() {
  static testutil::TempDir dir;
  static bool made = [] {
    BenchConfig b;
    b.n_concepts = 60;
    b.n_languages = 3;
    b.n_train = 240;
    b.n_val = 40;
    b.n_test = 40;
    b.out_dim = 16;
    b.seed = 3;
    gen_benchmark(b, dir.path());
    return true;
  }();
  (void)made;
  return dir.path();
}

RunConfig small_run() {
  Config c;
  c.set("data.dir", small_bench().string());
  c.set("vocab.size_per_task", "320");
  c.set("model.dim", "16");
  c.set("run.batch_size", "16");
  c.set("run.epochs", "2");
  c.set("pretrain.epochs", "2");
  c.set("optim.lr", "2");
  c.set("run.seed", "5");
  return RunConfig::from_config(c);
}

bool bit_equal(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (std::bit_cast<std::uint32_t>(a[i]) != std::bit_cast<std::uint32_t>(b[i])) return false;
  return true;
}

}  // namespace

TEST(Harness, SameSeedIsBitwiseDeterministic) {
  const RunArtifacts a = run_sequence(small_run());
  const RunArtifacts b = run_sequence(small_run());
  EXPECT_EQ(a.eval, b.eval);
  ASSERT_EQ(a.checkpoints.size(), b.checkpoints.size());
  for (std::size_t i = 0; i < a.checkpoints.size(); ++i)
    EXPECT_TRUE(bit_equal(a.checkpoints[i].second.values.values(),
                          b.checkpoints[i].second.values.values()));
  EXPECT_TRUE(bit_equal(a.anchor.values(), b.anchor.values()));
  EXPECT_EQ(a.final_mean_loss, b.final_mean_loss);

  RunConfig other = small_run();
  other.seed = 6;
  EXPECT_FALSE(bit_equal(run_sequence(other).anchor.values(), a.anchor.values()));
}

TEST(Harness, ZeroLambdaRowsSurviveEachTask) {
  ContinualRun run(small_run());
  run.run_pretrain();
  for (std::size_t t = 1; t < run.task_count(); ++t) {
    const EmbeddingTable before = run.table();
    run.run_task(t);
    const Partition& p = run.last_partition();
    ASSERT_FALSE(p.old_ids.empty());
    for (TokenId id : p.old_ids) {
      EXPECT_EQ(run.last_lambda().lambda[id], 0.0);
      ASSERT_TRUE(bit_equal(run.table().values.row(id), before.values.row(id))) << "row " << id;
    }
    // Overlap and new tokens did move.
    std::size_t moved = 0;
    for (TokenId id : p.new_ids) moved += id < before.row_count() ? 0 : 1;
    EXPECT_EQ(moved, p.new_ids.size());
  }
}

TEST(Harness, BaselineUsesUnitLambda) {
  RunConfig cfg = small_run();
  cfg.teir_reg = false;
  cfg.teir_init = false;
  ContinualRun run(cfg);
  run.run_pretrain();
  run.run_task(1);
  for (double l : run.last_lambda().lambda) EXPECT_EQ(l, 1.0);
}

TEST(Harness, EvalRowsAndVocabGrowth) {
  ContinualRun run(small_run());
  run.run_pretrain();
  std::size_t prev = run.vocab().size();
  for (std::size_t t = 1; t < run.task_count(); ++t) {
    run.run_task(t);
    EXPECT_GE(run.vocab().size(), prev);
    prev = run.vocab().size();
  }
  const RunArtifacts a = run.finish();
  for (Direction d : kDirections) {
    for (std::size_t j = 0; j < 3; ++j) {
      for (std::size_t i = 0; i < 4; ++i) {
        const auto v = a.eval.get(j, i, d);
        EXPECT_EQ(v.has_value(), i <= j) << j << "," << i;
        if (v) {
          EXPECT_GE(*v, 0.0);
          EXPECT_LE(*v, 100.0);
        }
      }
    }
  }
  ASSERT_EQ(a.registry.size(), 3u);
  for (const auto& e : a.registry) EXPECT_GE(e.vocab_after, e.vocab_before);
  EXPECT_EQ(a.languages, (std::vector<std::string>{"lang0", "lang1", "lang2"}));
}

TEST(Harness, AnchorIsFrozenAcrossTasks) {
  ContinualRun run(small_run());
  run.run_pretrain();
  const Matrix anchor = run.anchor().values();
  const std::vector<TokenId> ids = {40, 7, 300};
  const FeatureVec before = encode_text(ids, run.anchor(), run.text_params());
  for (std::size_t t = 1; t < run.task_count(); ++t) {
    run.run_task(t);
    EXPECT_EQ(run.anchor().values(), anchor);
    EXPECT_EQ(encode_text(ids, run.anchor(), run.text_params()), before);
  }
}

TEST(Harness, SelectedEpochHasBestValidationScore) {
  RunConfig cfg = small_run();
  cfg.epochs = 4;
  const RunArtifacts a = run_sequence(cfg);
  for (const auto& d : a.diagnostics) {
    ASSERT_FALSE(d.epochs.empty());
    double selected = -1;
    for (const auto& e : d.epochs)
      if (e.epoch == d.selected_epoch) selected = e.val_score;
    for (const auto& e : d.epochs) EXPECT_GE(selected, e.val_score);
  }
}

TEST(Harness, PretrainIgnoresCrossLingualWeight) {
  RunConfig a = small_run(), b = small_run();
  b.loss.gamma_cl = 7.0;
  ContinualRun ra(a), rb(b);
  ra.run_pretrain();
  rb.run_pretrain();
  EXPECT_EQ(ra.anchor().values(), rb.anchor().values());
}

TEST(Harness, OracleVocabNeverGrows) {
  RunConfig cfg = small_run();
  cfg.oracle_vocab = true;
  ContinualRun run(cfg);
  run.run_pretrain();
  const std::size_t size = run.vocab().size();
  // Three tasks' worth of merges over the shared byte base.
  EXPECT_EQ(size, kByteTokens + (320 - 257) * 3);
  for (std::size_t t = 1; t < run.task_count(); ++t) {
    run.run_task(t);
    EXPECT_EQ(run.vocab().size(), size);
    EXPECT_EQ(run.table().row_count(), size);
  }
}

TEST(Harness, JointModeFillsLastRowOnly) {
  RunConfig cfg = small_run();
  cfg.mode = RunMode::kJoint;
  const RunArtifacts a = run_sequence(cfg);
  EXPECT_TRUE(a.eval.has_row(0, Direction::kImageToText));
  EXPECT_FALSE(a.eval.has_row(1, Direction::kImageToText));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE(a.eval.get(2, i, Direction::kTextToImage));
}

TEST(Harness, RunDirectoryReevaluatesToSameMatrix) {
  const RunConfig cfg = small_run();
  const RunArtifacts a = run_sequence(cfg);
  testutil::TempDir out;
  write_run_directory(a, cfg, out.path());
  for (const char* f : {"effective_config.txt", "eval_matrix.csv", "registry.txt", "tasks.csv",
                        "checkpoints/anchor.emb", "checkpoints/task_2.emb",
                        "diagnostics/fisher.csv", "diagnostics/ted_task1.csv"})
    EXPECT_TRUE(fs::exists(out / f)) << f;
  EXPECT_EQ(evaluate_run_directory(out.path(), small_bench(), Split::kTest), a.eval);
  EXPECT_EQ(EvalMatrix::read_csv(out / "eval_matrix.csv"), a.eval);
}

TEST(Harness, ConfigurationErrors) {
  RunConfig cfg = small_run();
  cfg.task_languages = {"lang1", "lang0"};
  EXPECT_THROW(ContinualRun{cfg}, ConfigError);
  cfg.task_languages = {"lang0", "lang7"};
  EXPECT_THROW(ContinualRun{cfg}, ConfigError);
  cfg.task_languages = {"lang0", "lang1", "lang1"};
  EXPECT_THROW(ContinualRun{cfg}, ConfigError);
  cfg.task_languages.clear();
  cfg.data_dir = small_bench() / "nowhere";
  EXPECT_THROW(ContinualRun{cfg}, IoError);

  ContinualRun run(small_run());
  EXPECT_THROW(run.run_task(1), StateError);
}

TEST(Harness, TaskSubsetFollowsConfiguredOrder) {
  RunConfig cfg = small_run();
  cfg.task_languages = {"lang0", "lang2"};
  const RunArtifacts a = run_sequence(cfg);
  EXPECT_EQ(a.languages, (std::vector<std::string>{"lang0", "lang2"}));
  EXPECT_EQ(a.eval.task_rows(), 2u);
}

// The reference pipeline on the default benchmark.
TEST(Harness, PretrainBeatsRandomRetrievalFiveFold) {
  testutil::TempDir data;
  BenchConfig b;
  b.n_languages = 1;
  gen_benchmark(b, data.path());
  RunConfig cfg = RunConfig::from_config(Config{});
  cfg.data_dir = data.path();
  ContinualRun run(cfg);
  run.run_pretrain();
  const double random = 100.0 / static_cast<double>(b.n_test);
  for (Direction d : kDirections) EXPECT_GE(run.eval().at(0, 0, d), 5 * random);
}
