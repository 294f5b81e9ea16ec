#include "teir/embedding_store.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <vector>

#include "teir/error.hpp"
#include "teir/matrix_io.hpp"
#include "teir/rng.hpp"

namespace teir {

const AnchorTable& AnchorSlot::snapshot(const EmbeddingTable& table) {
  if (anchor_) throw StateError("anchor table already snapshotted");
  anchor_.emplace(table.values);
  return *anchor_;
}

const AnchorTable& AnchorSlot::get() const {
  if (!anchor_) throw StateError("anchor table not snapshotted yet");
  return *anchor_;
}

DistStats dist_stats(std::span<const float> values) {
  if (values.empty()) throw InvalidInput("dist_stats: empty table");
  double sum = 0.0;
  for (float v : values) sum += v;
  const double mu = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (float v : values) {
    const double d = v - mu;
    sq += d * d;
  }
  return {mu, std::sqrt(sq / static_cast<double>(values.size()))};
}

DistStats dist_stats(const EmbeddingTable& table) {
  if (table.row_count() == 0) throw InvalidInput("dist_stats: empty table");
  return dist_stats(table.values.values());
}

DistStats dist_stats_rows(const EmbeddingTable& table, std::span<const TokenId> rows) {
  std::vector<float> values;
  values.reserve(rows.size() * table.dim());
  for (TokenId r : rows) {
    if (r >= table.row_count()) throw InvalidId(r, "dist_stats_rows");
    auto row = table.values.row(r);
    values.insert(values.end(), row.begin(), row.end());
  }
  return dist_stats(values);
}

std::string InitPolicy::name() const {
  return kind == Kind::kMatched ? "matched" : "fixed";
}

DistStats resolve_policy(const InitPolicy& policy, const EmbeddingTable& table) {
  if (policy.kind == InitPolicy::Kind::kMatched) return dist_stats(table);
  if (policy.sigma < 0.0) throw InvalidInput("init policy sigma < 0");
  return {policy.mu, policy.sigma};
}

namespace {

void fill_gaussian(std::span<float> out, const DistStats& stats, std::uint64_t seed) {
  if (!(stats.sigma >= 0.0) || !std::isfinite(stats.mu) || !std::isfinite(stats.sigma)) {
    throw InvalidInput("gaussian init needs finite mu and sigma >= 0");
  }
  if (stats.sigma == 0.0) {
    std::fill(out.begin(), out.end(), static_cast<float>(stats.mu));
    return;
  }
  Rng rng(seed);
  std::normal_distribution<double> normal(stats.mu, stats.sigma);
  for (auto& v : out) v = static_cast<float>(normal(rng));
}

}  // namespace

EmbeddingTable expand(const EmbeddingTable& table, std::int64_t n_new,
                      const InitPolicy& policy, std::uint64_t seed) {
  if (n_new < 0) throw InvalidInput("expand: negative row count");
  if (policy.kind == InitPolicy::Kind::kFixed && policy.sigma < 0.0) {
    throw InvalidInput("expand: sigma < 0");
  }
  EmbeddingTable out = table;
  if (n_new == 0) return out;
  const DistStats stats = resolve_policy(policy, table);
  const std::size_t old_rows = table.row_count();
  out.values.append_rows(static_cast<std::size_t>(n_new));
  auto all = out.values.values();
  fill_gaussian(all.subspan(old_rows * table.dim()), stats, seed);
  return out;
}

void reinit_rows(EmbeddingTable& table, std::span<const TokenId> rows,
                 const DistStats& stats, std::uint64_t seed) {
  std::vector<float> fresh(rows.size() * table.dim());
  fill_gaussian(fresh, stats, seed);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= table.row_count()) throw InvalidId(rows[i], "reinit_rows");
    auto dst = table.values.row(rows[i]);
    std::copy_n(fresh.begin() + static_cast<std::ptrdiff_t>(i * table.dim()),
                table.dim(), dst.begin());
  }
}

double ks_statistic(std::span<const float> values, double mu, double sigma) {
  if (values.empty()) throw InvalidInput("ks_statistic: no samples");
  if (!(sigma > 0.0)) throw InvalidInput("ks_statistic: sigma must be > 0");
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-(sorted[i] - mu) / (sigma * std::sqrt(2.0)));
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - cdf,
                  cdf - static_cast<double>(i) / n});
  }
  return d;
}

double ks_critical_1pct(std::size_t n) { return 1.628 / std::sqrt(static_cast<double>(n)); }

bool all_finite(std::span<const float> values) {
  return std::all_of(values.begin(), values.end(), [](float v) { return std::isfinite(v); });
}

namespace {

std::filesystem::path sidecar(const std::filesystem::path& path) {
  auto p = path;
  p += ".manifest";
  return p;
}

}  // namespace

void save_checkpoint(const EmbeddingTable& table, const CheckpointManifest& manifest,
                     const std::filesystem::path& path) {
  if (!all_finite(table.values.values())) {
    throw NumericError("refusing to checkpoint a table with non-finite entries");
  }
  write_matrix_file(path, kEmbeddingMagic, table.values);
  std::ofstream out(sidecar(path), std::ios::binary);
  if (!out) throw IoError("cannot write " + sidecar(path).string());
  out << "format = " << kEmbeddingMagic << '\n'
      << "version = " << kMatrixFormatVersion << '\n'
      << "rows = " << table.row_count() << '\n'
      << "dim = " << table.dim() << '\n'
      << "vocab_hash = " << manifest.vocab_hash << '\n'
      << "vocab_size = " << manifest.vocab_size << '\n'
      << "task_index = " << manifest.task_index << '\n'
      << "policy = " << manifest.policy << '\n'
      << "seed = " << manifest.seed << '\n';
}

CheckpointManifest read_checkpoint_manifest(const std::filesystem::path& path) {
  const auto file = sidecar(path);
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot read " + file.string());
  CheckpointManifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) throw ParseError(file.string(), lineno, "expected 'key = value'");
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 3);
    try {
      if (key == "vocab_hash") m.vocab_hash = std::stoull(value);
      else if (key == "vocab_size") m.vocab_size = std::stoull(value);
      else if (key == "task_index") m.task_index = static_cast<std::uint32_t>(std::stoul(value));
      else if (key == "policy") m.policy = value;
      else if (key == "seed") m.seed = std::stoull(value);
    } catch (const std::logic_error&) {
      throw ParseError(file.string(), lineno, "bad value for " + key);
    }
  }
  return m;
}

EmbeddingTable load_checkpoint(const std::filesystem::path& path) {
  EmbeddingTable table(read_matrix_file(path, kEmbeddingMagic));
  if (std::filesystem::exists(sidecar(path))) {
    const auto m = read_checkpoint_manifest(path);
    if (m.vocab_size != table.row_count()) {
      throw DimensionMismatch(path.string() + ": " + std::to_string(table.row_count()) +
                              " rows but sidecar vocab has " +
                              std::to_string(m.vocab_size) + " tokens");
    }
  }
  return table;
}

EmbeddingTable load_checkpoint(const std::filesystem::path& path,
                               std::size_t expected_rows) {
  EmbeddingTable table = load_checkpoint(path);
  if (table.row_count() != expected_rows) {
    throw DimensionMismatch(path.string() + ": " + std::to_string(table.row_count()) +
                            " rows but vocab has " + std::to_string(expected_rows) +
                            " tokens");
  }
  return table;
}

}  // namespace teir
