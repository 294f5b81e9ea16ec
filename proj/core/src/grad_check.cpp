#include "teir/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>
#include <vector>

#include "teir/bpe.hpp"
#include "teir/error.hpp"
#include "teir/frozen_encoders.hpp"
#include "teir/rng.hpp"

namespace teir {
namespace {

struct Instance {
  MatrixD table;
  MatrixD anchor;
  MatrixD images;
  std::vector<std::vector<TokenId>> english, foreign;
  FrozenTextParams params;
};

FeatureBatch features(const Instance& in, const MatrixD& table) {
  const std::size_t k = in.foreign.size();
  const std::size_t d_out = in.params.out_dim();
  FeatureBatch b{in.images, MatrixD(k, d_out), MatrixD(k, d_out)};
  for (std::size_t s = 0; s < k; ++s) {
    auto re = encode_text(in.english[s], in.anchor, in.params);
    auto rf = encode_text(in.foreign[s], table, in.params);
    std::copy(re.begin(), re.end(), b.english.row(s).begin());
    std::copy(rf.begin(), rf.end(), b.foreign.row(s).begin());
  }
  return b;
}

}  // namespace

GradCheckResult grad_check(const GradCheckConfig& cfg) {
  if (cfg.batch < 2 || cfg.max_len == 0 || cfg.vocab == 0 || !(cfg.step > 0.0)) {
    throw InvalidInput("grad_check: degenerate instance shape");
  }
  Rng rng(derive_seed(cfg.seed, "grad-check", 0));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> len(1, cfg.max_len);
  std::uniform_int_distribution<TokenId> tok(0, static_cast<TokenId>(cfg.vocab - 1));

  Instance in;
  in.params = make_text_params(cfg.dim, cfg.out_dim, cfg.max_len, mix_seed(cfg.seed));
  in.table = MatrixD(cfg.vocab, cfg.dim);
  in.anchor = MatrixD(cfg.vocab, cfg.dim);
  in.images = MatrixD(cfg.batch, cfg.out_dim);
  // Table scale large enough that tanh is visibly nonlinear.
  for (double& v : in.table.values()) v = 0.5 * normal(rng);
  for (double& v : in.anchor.values()) v = 0.5 * normal(rng);
  for (double& v : in.images.values()) v = normal(rng);
  for (std::size_t s = 0; s < cfg.batch; ++s) {
    std::vector<TokenId> e(len(rng)), f(len(rng));
    for (auto& id : e) id = tok(rng);
    for (auto& id : f) id = tok(rng);
    in.english.push_back(std::move(e));
    in.foreign.push_back(std::move(f));
  }

  const FeatureBatch base = features(in, in.table);
  const LossResult lr = total_loss(base, cfg.loss);
  RowGrads analytic;
  for (std::size_t s = 0; s < cfg.batch; ++s) {
    accumulate_text_grad(in.foreign[s], in.params, base.foreign.row(s),
                         lr.grad_foreign.row(s), analytic);
  }
  if (cfg.corrupt != 0.0 && !analytic.empty()) {
    auto it = std::next(analytic.begin(), static_cast<long>(analytic.size() / 2));
    it->second[cfg.dim / 2] += cfg.corrupt;
  }

  GradCheckResult res;
  MatrixD probe = in.table;
  for (const auto& [row, grad] : analytic) {
    for (std::size_t c = 0; c < cfg.dim; ++c) {
      const double orig = probe(row, c);
      probe(row, c) = orig + cfg.step;
      const double up = total_loss(features(in, probe), cfg.loss).loss;
      probe(row, c) = orig - cfg.step;
      const double down = total_loss(features(in, probe), cfg.loss).loss;
      probe(row, c) = orig;
      const double numeric = (up - down) / (2.0 * cfg.step);
      const double a = grad[c];
      const double rel =
          std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++res.entries;
      if (rel > res.max_rel_error || res.entries == 1) {
        res.max_rel_error = rel;
        res.worst_row = row;
        res.worst_col = c;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
    }
  }
  res.passed = res.entries > 0 && res.max_rel_error <= cfg.tolerance;
  return res;
}

std::string describe(const GradCheckResult& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "%s max_rel_error=%.3e entries=%zu worst=row %u col %zu analytic=%.9g "
                "numeric=%.9g",
                r.passed ? "PASS" : "FAIL", r.max_rel_error, r.entries, r.worst_row,
                r.worst_col, r.worst_analytic, r.worst_numeric);
  return buf;
}

}  // namespace teir
