#include "teir/optimizer.hpp"

#include <cmath>

#include "teir/error.hpp"

namespace teir {

void OptimConfig::validate() const {
  if (!(lr_peak > 0.0)) throw InvalidInput("optimizer lr must be > 0");
  if (!(weight_decay >= 0.0)) throw InvalidInput("weight decay must be >= 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
    throw InvalidInput("warmup fraction must be in [0, 1)");
  }
}

double lr_at(std::size_t step, const OptimConfig& cfg) {
  const auto warmup = static_cast<std::size_t>(
      std::ceil(cfg.warmup_fraction * static_cast<double>(cfg.total_steps)));
  if (warmup == 0 || step >= warmup) return cfg.lr_peak;
  return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
}

void step(EmbeddingTable& table, const RowGrads& grads, const LambdaVector& lambda,
          const OptimConfig& cfg, OptimState& state, RegScope scope) {
  const std::size_t d = table.dim();
  for (const auto& [id, g] : grads) {
    if (id >= table.row_count()) throw InvalidId(id, "optimizer row");
    if (id >= lambda.lambda.size()) throw InvalidId(id, "no lambda for row");
    if (g.size() != d) throw DimensionMismatch("gradient row length");
    for (double v : g) {
      if (!std::isfinite(v)) {
        throw NumericError("non-finite gradient for token " + std::to_string(id));
      }
    }
  }

  const std::size_t t = ++state.step;
  const double lr = lr_at(t, cfg);
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));

  for (const auto& [id, g] : grads) {
    const double lam = lambda.lambda[id];
    const double gs = scope.gradient ? lam : 1.0;
    const double ds = scope.decay ? lam : 1.0;
    if (gs == 0.0 && ds == 0.0) continue;
    auto row = table.values.row(id);
    const double decay = lr * cfg.weight_decay * ds;

    if (cfg.kind == OptimKind::kSgd) {
      for (std::size_t k = 0; k < d; ++k) {
        const double theta = row[k];
        row[k] = static_cast<float>((1.0 - decay) * theta - lr * (gs * g[k]));
      }
      continue;
    }

    auto& mom = state.moments[id];
    if (mom.first.empty()) {
      mom.first.assign(d, 0.0);
      mom.second.assign(d, 0.0);
    }
    for (std::size_t k = 0; k < d; ++k) {
      const double gk = gs * g[k];
      mom.first[k] = cfg.beta1 * mom.first[k] + (1.0 - cfg.beta1) * gk;
      mom.second[k] = cfg.beta2 * mom.second[k] + (1.0 - cfg.beta2) * gk * gk;
      double theta = row[k];
      theta = theta - decay * theta;
      const double m_hat = mom.first[k] / bc1;
      const double v_hat = mom.second[k] / bc2;
      row[k] = static_cast<float>(theta - lr * m_hat / (std::sqrt(v_hat) + cfg.eps));
    }
  }
}

void reset_state(OptimState& state) {
  state.moments.clear();
  state.step = 0;
}

}  // namespace teir
