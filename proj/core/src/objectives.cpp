#include "teir/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "teir/error.hpp"

namespace teir {
namespace {

double norm_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

void check_shapes(const MatrixD& a, const MatrixD& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionMismatch(std::string(what) + ": batch matrices differ in shape");
  }
  if (a.rows() == 0) throw InvalidInput(std::string(what) + ": empty batch");
}

}  // namespace

double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("cosine: length mismatch");
  const double na = norm_of(a), nb = norm_of(b);
  if (na == 0.0) throw DegenerateFeature(0, "zero-norm vector in cosine");
  if (nb == 0.0) throw DegenerateFeature(1, "zero-norm vector in cosine");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += a[i] * b[i];
  return dot / (na * nb);
}

LossResult cm_loss(const FeatureBatch& batch, double tau) {
  check_shapes(batch.images, batch.foreign, "cm_loss");
  if (!(tau > 0.0)) throw InvalidInput("cm_loss: tau must be > 0");
  const std::size_t k = batch.size();
  const std::size_t d = batch.foreign.cols();

  MatrixD u(k, d), v(k, d);
  std::vector<double> f_norm(k);
  for (std::size_t r = 0; r < k; ++r) {
    const double ni = norm_of(batch.images.row(r));
    const double nf = norm_of(batch.foreign.row(r));
    if (ni == 0.0) throw DegenerateFeature(r, "zero-norm image feature");
    if (nf == 0.0) throw DegenerateFeature(r, "zero-norm text feature");
    f_norm[r] = nf;
    for (std::size_t c = 0; c < d; ++c) {
      u(r, c) = batch.images(r, c) / ni;
      v(r, c) = batch.foreign(r, c) / nf;
    }
  }

  MatrixD logits(k, k);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += u(a, c) * v(b, c);
      logits(a, b) = dot / tau;
    }
  }

  // Log-sum-exp per row (image -> text) and per column (text -> image).
  std::vector<double> row_lse(k), col_lse(k);
  for (std::size_t a = 0; a < k; ++a) {
    double mr = -INFINITY, mc = -INFINITY;
    for (std::size_t b = 0; b < k; ++b) {
      mr = std::max(mr, logits(a, b));
      mc = std::max(mc, logits(b, a));
    }
    double sr = 0.0, sc = 0.0;
    for (std::size_t b = 0; b < k; ++b) {
      sr += std::exp(logits(a, b) - mr);
      sc += std::exp(logits(b, a) - mc);
    }
    row_lse[a] = mr + std::log(sr);
    col_lse[a] = mc + std::log(sc);
  }

  const double inv_k = 1.0 / static_cast<double>(k);
  double i2f = 0.0, f2i = 0.0;
  for (std::size_t a = 0; a < k; ++a) {
    i2f += row_lse[a] - logits(a, a);
    f2i += col_lse[a] - logits(a, a);
  }
  LossResult out;
  out.loss = 0.5 * (i2f * inv_k + f2i * inv_k);

  // dL/dS_ab = (P_ab + Q_ab - 2 delta_ab) / 2K, P row-softmax, Q column-softmax.
  MatrixD dv(k, d);
  for (std::size_t a = 0; a < k; ++a) {
    for (std::size_t b = 0; b < k; ++b) {
      const double p = std::exp(logits(a, b) - row_lse[a]);
      const double q = std::exp(logits(a, b) - col_lse[b]);
      const double g = 0.5 * inv_k * (p + q - (a == b ? 2.0 : 0.0)) / tau;
      for (std::size_t c = 0; c < d; ++c) dv(b, c) += g * u(a, c);
    }
  }
  out.grad_foreign = MatrixD(k, d);
  for (std::size_t b = 0; b < k; ++b) {
    double proj = 0.0;
    for (std::size_t c = 0; c < d; ++c) proj += v(b, c) * dv(b, c);
    for (std::size_t c = 0; c < d; ++c) {
      out.grad_foreign(b, c) = (dv(b, c) - v(b, c) * proj) / f_norm[b];
    }
  }
  return out;
}

LossResult cl_loss(const FeatureBatch& batch) {
  check_shapes(batch.english, batch.foreign, "cl_loss");
  const std::size_t k = batch.size();
  const std::size_t d = batch.foreign.cols();
  const double inv_k = 1.0 / static_cast<double>(k);
  LossResult out;
  out.grad_foreign = MatrixD(k, d);
  double sum = 0.0;
  for (std::size_t r = 0; r < k; ++r) {
    for (std::size_t c = 0; c < d; ++c) {
      const double diff = batch.foreign(r, c) - batch.english(r, c);
      sum += diff * diff;
      out.grad_foreign(r, c) = diff * inv_k;
    }
  }
  out.loss = 0.5 * inv_k * sum;
  return out;
}

LossResult total_loss(const FeatureBatch& batch, const LossConfig& cfg) {
  const bool use_cm = cfg.gamma_cm != 0.0;
  const bool use_cl = cfg.gamma_cl != 0.0;
  LossResult out;
  out.grad_foreign = MatrixD(batch.foreign.rows(), batch.foreign.cols());
  if (!use_cm && !use_cl) return out;
  if (use_cm) {
    LossResult cm = cm_loss(batch, cfg.tau);
    out.loss = cfg.gamma_cm * cm.loss;
    auto dst = out.grad_foreign.values();
    auto src = cm.grad_foreign.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = cfg.gamma_cm * src[i];
  }
  if (use_cl) {
    LossResult cl = cl_loss(batch);
    out.loss += cfg.gamma_cl * cl.loss;
    auto dst = out.grad_foreign.values();
    auto src = cl.grad_foreign.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += cfg.gamma_cl * src[i];
  }
  return out;
}

}  // namespace teir
