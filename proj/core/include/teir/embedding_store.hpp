#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include "teir/bpe.hpp"
#include "teir/matrix.hpp"

namespace teir {

// Trainable |V| x d token embedding matrix (theta_t).
struct EmbeddingTable {
  Matrix values;

  EmbeddingTable() = default;
  EmbeddingTable(std::size_t rows, std::size_t dim) : values(rows, dim) {}
  explicit EmbeddingTable(Matrix m) : values(std::move(m)) {}

  std::size_t row_count() const { return values.rows(); }
  std::size_t dim() const { return values.cols(); }
  bool operator==(const EmbeddingTable&) const = default;
};

// Frozen snapshot of the embedding table after the anchor task.
class AnchorTable {
 public:
  explicit AnchorTable(Matrix m) : values_(std::move(m)) {}
  const Matrix& values() const { return values_; }
  std::size_t row_count() const { return values_.rows(); }
  std::size_t dim() const { return values_.cols(); }

 private:
  Matrix values_;
};

// Holds the anchor once it exists; a second snapshot is a state error.
class AnchorSlot {
 public:
  const AnchorTable& snapshot(const EmbeddingTable& table);
  bool has_value() const { return anchor_.has_value(); }
  const AnchorTable& get() const;

 private:
  std::optional<AnchorTable> anchor_;
};

struct DistStats {
  double mu = 0.0;
  double sigma = 0.0;  // population standard deviation
};

DistStats dist_stats(const EmbeddingTable& table);
DistStats dist_stats(std::span<const float> values);
// Statistics restricted to a subset of rows.
DistStats dist_stats_rows(const EmbeddingTable& table, std::span<const TokenId> rows);

struct InitPolicy {
  enum class Kind { kMatched, kFixed };
  Kind kind = Kind::kFixed;
  double mu = 0.0;
  double sigma = 0.02;

  static InitPolicy matched() { return {Kind::kMatched, 0.0, 0.0}; }
  static InitPolicy fixed(double mu, double sigma) { return {Kind::kFixed, mu, sigma}; }
  std::string name() const;
};

// The N(mu, sigma^2) a policy resolves to against a given pre-expansion table.
DistStats resolve_policy(const InitPolicy& policy, const EmbeddingTable& table);

// Appends n_new rows drawn i.i.d. from the resolved policy. Existing rows
// are preserved bit-exactly.
EmbeddingTable expand(const EmbeddingTable& table, std::int64_t n_new,
                      const InitPolicy& policy, std::uint64_t seed);

// Redraws the given rows from `stats`; used when an oracle vocab activates
// rows that were allocated up front.
void reinit_rows(EmbeddingTable& table, std::span<const TokenId> rows,
                 const DistStats& stats, std::uint64_t seed);

// One-sample Kolmogorov-Smirnov statistic against N(mu, sigma^2).
double ks_statistic(std::span<const float> values, double mu, double sigma);
// Asymptotic 1% critical value, 1.628 / sqrt(n).
double ks_critical_1pct(std::size_t n);

struct CheckpointManifest {
  std::uint64_t vocab_hash = 0;
  std::size_t vocab_size = 0;
  std::uint32_t task_index = 0;
  std::string policy;
  std::uint64_t seed = 0;
};

// Writes `path` (binary, TEIREMB1) and `path`.manifest (text sidecar).
void save_checkpoint(const EmbeddingTable& table, const CheckpointManifest& manifest,
                     const std::filesystem::path& path);
EmbeddingTable load_checkpoint(const std::filesystem::path& path);
// As above, but also rejects a table whose rows disagree with the vocab size
// the caller expects.
EmbeddingTable load_checkpoint(const std::filesystem::path& path,
                               std::size_t expected_rows);
CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& path);

bool all_finite(std::span<const float> values);

}  // namespace teir
