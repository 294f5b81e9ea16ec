#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "teir/bpe.hpp"
#include "teir/config.hpp"
#include "teir/embedding_store.hpp"
#include "teir/evaluation.hpp"
#include "teir/frozen_encoders.hpp"
#include "teir/objectives.hpp"
#include "teir/optimizer.hpp"
#include "teir/synth_bench.hpp"
#include "teir/vocab_registry.hpp"

namespace teir {

enum class RunMode { kContinual, kJoint };

struct TaskSpec {
  std::uint32_t task_index = 0;
  std::string language_id;
};

struct RunConfig {
  std::filesystem::path data_dir;
  std::vector<std::string> task_languages;  // empty: manifest order
  RunMode mode = RunMode::kContinual;
  std::uint64_t seed = 0;

  std::size_t epochs = 3;
  std::size_t batch_size = 32;
  std::size_t vocab_size_per_task = 512;
  bool oracle_vocab = false;
  std::size_t oracle_vocab_size = 0;  // 0: 257 + (size_per_task - 257) * tasks

  std::size_t dim = 64;
  std::size_t max_len = 32;
  std::uint64_t encoder_seed = 7;

  LossConfig loss;
  // Desk default. A constant lambda rescales the gradient, which Adam's
  // normalization cancels, so regularization is only visible under SGD.
  OptimConfig optim = [] {
    OptimConfig o;
    o.kind = OptimKind::kSgd;
    o.lr_peak = 10.0;
    o.weight_decay = 0.0005;
    return o;
  }();

  // Task 0 manufactures the anchor with the cross-modal loss only.
  std::size_t pretrain_epochs = 5;
  double pretrain_lr = 0.05;  // 0: use optim.lr_peak
  OptimKind pretrain_kind = OptimKind::kAdamW;
  double pretrain_gamma_cm = 1.0;

  double init_mu = 0.0;
  double init_sigma = 0.02;

  bool teir_init = true;
  bool teir_reg = true;
  RegScope reg_scope;

  std::size_t ted_bins = 50;

  void validate() const;
  static RunConfig from_config(const Config& cfg);
  Config to_config() const;
};

// Every key RunConfig::from_config understands, with its default.
const std::vector<std::pair<std::string, std::string>>& run_config_keys();

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double val_score = 0.0;  // Recall@{1,5,10} summed over both directions
};

struct TaskDiagnostics {
  std::uint32_t task_index = 0;
  std::string language;
  DistStats source_stats;  // table before expansion (zero for task 0)
  DistStats trained_stats;
  double ks_stat = 0.0;    // trained table vs its own Gaussian fit
  double fisher = 0.0;     // on this task's training set
  std::size_t selected_epoch = 0;
  std::vector<EpochLog> epochs;
  TedHistogram ted;
};

struct RunArtifacts {
  std::vector<std::pair<std::uint32_t, EmbeddingTable>> checkpoints;  // selected per task
  Matrix anchor;
  EvalMatrix eval;
  std::vector<TaskDiagnostics> diagnostics;
  std::vector<RegistryManifestEntry> registry;
  VocabState vocab;
  std::vector<std::string> languages;  // in task order
  double final_mean_loss = 0.0;        // over all tasks' training data
  double final_fisher = 0.0;
  std::vector<std::string> log;
};

// Drives one continual (or joint) run. Call run_pretrain, then run_task for
// t = 1..T-1 (continual) or run_joint, then finish.
class ContinualRun {
 public:
  explicit ContinualRun(RunConfig cfg);

  void run_pretrain();
  void run_task(std::size_t t);
  void run_joint();
  RunArtifacts finish();

  std::size_t task_count() const { return languages_.size(); }
  const EmbeddingTable& table() const { return table_; }
  const AnchorTable& anchor() const { return anchor_.get(); }
  const VocabState& vocab() const { return vocab_; }
  const TokenCounts& counts() const { return counts_; }
  const EvalMatrix& eval() const { return artifacts_.eval; }
  const FrozenTextParams& text_params() const { return params_; }
  const ImageFeatureProvider& images() const { return images_; }
  const LambdaVector& last_lambda() const { return lambda_; }
  const Partition& last_partition() const { return partition_; }

 private:
  struct TaskData {
    std::string language;
    std::vector<std::string> corpus;
    std::vector<TrainingTriplet> train, val, test;
    std::vector<EncodedSample> train_enc, val_enc, test_enc;
  };

  void encode_task(std::size_t t);
  std::vector<EncodedSample> encode_split(const std::vector<TrainingTriplet>& triplets,
                                          const EncodingScope& english,
                                          const EncodingScope& foreign) const;
  void train_epochs(std::uint32_t task, const std::vector<EncodedSample>& train,
                    const std::vector<EncodedSample>& val, const LossConfig& loss,
                    std::size_t epochs, OptimKind kind, double lr,
                    TaskDiagnostics& diag);
  RetrievalScores retrieval(const std::vector<EncodedSample>& samples,
                            std::span<const std::size_t> ks) const;
  void evaluate_row(std::size_t j);
  void record_task(std::uint32_t t, const Partition& partition, std::size_t vocab_before,
                   TaskDiagnostics diag, const std::vector<EncodedSample>& fisher_set);
  ModelView model_view(const LossConfig& loss) const;
  void log(const std::string& line);

  RunConfig cfg_;
  BenchManifest manifest_;
  std::vector<std::string> languages_;
  std::vector<TaskData> tasks_;
  ImageFeatureProvider images_;
  FrozenTextParams params_;

  VocabState vocab_;
  TokenCounts counts_;
  EmbeddingTable table_;
  AnchorSlot anchor_;
  LambdaVector lambda_;
  Partition partition_;
  OptimState optim_state_;
  std::optional<EncodingScope> oracle_scope_;

  RunArtifacts artifacts_;
  bool pretrained_ = false;
  std::size_t next_task_ = 0;
};

RunArtifacts run_sequence(const RunConfig& cfg);

// Writes the documented run directory layout.
void write_run_directory(const RunArtifacts& artifacts, const RunConfig& cfg,
                         const std::filesystem::path& out);

// Recomputes the Recall@1 matrix of a finished run from its stored
// checkpoints on `split`.
EvalMatrix evaluate_run_directory(const std::filesystem::path& run_dir,
                                  const std::filesystem::path& data_dir, Split split);

}  // namespace teir
