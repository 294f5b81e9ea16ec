#pragma once

#include <span>

#include "teir/matrix.hpp"

namespace teir {

// One row per triplet. Image and English rows come from frozen branches and
// never receive gradient.
struct FeatureBatch {
  MatrixD images;   // r^I
  MatrixD english;  // r^E, from the anchor table
  MatrixD foreign;  // r^F, from the trainable table

  std::size_t size() const { return foreign.rows(); }
};

struct LossConfig {
  double tau = 0.07;
  double gamma_cm = 0.01;
  double gamma_cl = 1.0;
};

struct LossResult {
  double loss = 0.0;
  MatrixD grad_foreign;  // d loss / d r^F, same shape as FeatureBatch::foreign
};

double cosine(std::span<const double> a, std::span<const double> b);

// Symmetric InfoNCE over cosine logits scaled by 1/tau.
LossResult cm_loss(const FeatureBatch& batch, double tau);
// (1/2K) sum_k ||r^E_k - r^F_k||^2.
LossResult cl_loss(const FeatureBatch& batch);
// gamma_cm * cm + gamma_cl * cl. A component whose weight is exactly zero is
// not evaluated, so its branch may be empty (e.g. no anchor yet).
LossResult total_loss(const FeatureBatch& batch, const LossConfig& cfg);

}  // namespace teir
