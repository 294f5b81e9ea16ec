#pragma once

#include <cstddef>
#include <unordered_map>
#include <vector>

#include "teir/bpe.hpp"
#include "teir/embedding_store.hpp"
#include "teir/frozen_encoders.hpp"
#include "teir/vocab_registry.hpp"

namespace teir {

enum class OptimKind { kSgd, kAdamW };

struct OptimConfig {
  OptimKind kind = OptimKind::kAdamW;
  double lr_peak = 5e-5;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double warmup_fraction = 0.1;
  std::size_t total_steps = 1;

  void validate() const;
};

// Which terms the per-token lambda multiplies. Both is the full rule; the
// single-term variants exist for ablations.
struct RegScope {
  bool gradient = true;
  bool decay = true;
};

struct OptimState {
  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };
  std::unordered_map<TokenId, Moments> moments;
  std::size_t step = 0;
};

// Linear warm-up from 0 to lr_peak over ceil(warmup_fraction * total_steps)
// steps, constant afterwards.
double lr_at(std::size_t step, const OptimConfig& cfg);

// One update of the rows present in `grads`; all other rows are untouched.
//   sgd:   theta <- (1 - a*b*lambda) theta - a*lambda*g
//   adamw: theta <- theta - a*b*lambda*theta, then the Adam step on the
//          moments of lambda*g.
// `a` is lr_at(state.step + 1). Rows whose lambda zeroes both terms are
// skipped entirely.
void step(EmbeddingTable& table, const RowGrads& grads, const LambdaVector& lambda,
          const OptimConfig& cfg, OptimState& state, RegScope scope = {});

void reset_state(OptimState& state);

}  // namespace teir
