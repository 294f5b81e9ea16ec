#include "teir/frozen_encoders.hpp"

#include <cmath>
#include <random>

#include "teir/error.hpp"
#include "teir/matrix_io.hpp"
#include "teir/rng.hpp"

namespace teir {

MatrixD sinusoidal_positions(std::size_t max_len, std::size_t dim) {
  MatrixD pos(max_len, dim);
  for (std::size_t i = 0; i < max_len; ++i) {
    for (std::size_t k = 0; 2 * k < dim; ++k) {
      const double angle =
          static_cast<double>(i) /
          std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(dim));
      pos(i, 2 * k) = std::sin(angle);
      if (2 * k + 1 < dim) pos(i, 2 * k + 1) = std::cos(angle);
    }
  }
  return pos;
}

FrozenTextParams make_text_params(std::size_t dim, std::size_t out_dim,
                                  std::size_t max_len, std::uint64_t seed) {
  if (dim == 0 || out_dim == 0 || max_len == 0) {
    throw InvalidInput("text encoder dimensions must be positive");
  }
  FrozenTextParams p;
  p.weight = MatrixD(out_dim, dim);
  p.bias.assign(out_dim, 0.0);
  p.pos = sinusoidal_positions(max_len, dim);
  p.max_len = max_len;
  p.seed = seed;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (auto& w : p.weight.values()) w = normal(rng);
  return p;
}

namespace {

template <typename T>
void check_ids(std::span<const TokenId> ids, const BasicMatrix<T>& table,
               const FrozenTextParams& params) {
  if (ids.empty()) throw InvalidInput("encode_text: empty token sequence");
  if (table.cols() != params.dim()) {
    throw DimensionMismatch("table dim " + std::to_string(table.cols()) +
                            " != encoder dim " + std::to_string(params.dim()));
  }
  const std::size_t len = std::min(ids.size(), params.max_len);
  for (std::size_t i = 0; i < len; ++i) {
    if (ids[i] >= table.rows()) throw InvalidId(ids[i], "encode_text");
  }
}

template <typename T>
FeatureVec forward(std::span<const TokenId> ids, const BasicMatrix<T>& table,
                   const FrozenTextParams& params) {
  check_ids(ids, table, params);
  const std::size_t d = params.dim();
  const std::size_t len = std::min(ids.size(), params.max_len);
  std::vector<double> h(d, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    auto emb = table.row(ids[i]);
    auto pos = params.pos.row(i);
    for (std::size_t k = 0; k < d; ++k) h[k] += static_cast<double>(emb[k]) + pos[k];
  }
  const double inv_len = 1.0 / static_cast<double>(len);
  for (auto& v : h) v *= inv_len;
  FeatureVec r(params.out_dim());
  for (std::size_t o = 0; o < r.size(); ++o) {
    auto w = params.weight.row(o);
    double z = params.bias[o];
    for (std::size_t k = 0; k < d; ++k) z += w[k] * h[k];
    r[o] = std::tanh(z);
  }
  return r;
}

template <typename T>
RowGrads backward(std::span<const TokenId> ids, const BasicMatrix<T>& table,
                  const FrozenTextParams& params, std::span<const double> upstream) {
  RowGrads grads;
  const FeatureVec r = forward(ids, table, params);
  accumulate_text_grad(ids, params, r, upstream, grads);
  return grads;
}

}  // namespace

FeatureVec encode_text(std::span<const TokenId> ids, const Matrix& table,
                       const FrozenTextParams& params) {
  return forward(ids, table, params);
}

FeatureVec encode_text(std::span<const TokenId> ids, const MatrixD& table,
                       const FrozenTextParams& params) {
  return forward(ids, table, params);
}

void accumulate_text_grad(std::span<const TokenId> ids, const FrozenTextParams& params,
                          std::span<const double> features,
                          std::span<const double> upstream, RowGrads& grads) {
  if (ids.empty()) throw InvalidInput("encode_text_grad: empty token sequence");
  if (upstream.size() != params.out_dim() || features.size() != params.out_dim()) {
    throw DimensionMismatch("upstream gradient has wrong length");
  }
  const std::size_t d = params.dim();
  const std::size_t len = std::min(ids.size(), params.max_len);
  std::vector<double> dz(params.out_dim());
  for (std::size_t o = 0; o < dz.size(); ++o) {
    dz[o] = (1.0 - features[o] * features[o]) * upstream[o];
  }
  // dh = W^T dz / L, shared by every position.
  std::vector<double> dh(d, 0.0);
  for (std::size_t o = 0; o < dz.size(); ++o) {
    auto w = params.weight.row(o);
    for (std::size_t k = 0; k < d; ++k) dh[k] += w[k] * dz[o];
  }
  const double inv_len = 1.0 / static_cast<double>(len);
  for (auto& v : dh) v *= inv_len;
  for (std::size_t i = 0; i < len; ++i) {
    auto& g = grads[ids[i]];
    if (g.empty()) g.assign(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) g[k] += dh[k];
  }
}

RowGrads encode_text_grad(std::span<const TokenId> ids, const Matrix& table,
                          const FrozenTextParams& params, std::span<const double> upstream) {
  return backward(ids, table, params, upstream);
}

RowGrads encode_text_grad(std::span<const TokenId> ids, const MatrixD& table,
                          const FrozenTextParams& params, std::span<const double> upstream) {
  return backward(ids, table, params, upstream);
}

ImageFeatureProvider::ImageFeatureProvider(Matrix features)
    : features_(std::move(features)) {
  if (!all_finite(features_.values())) {
    throw NumericError("image features contain non-finite values");
  }
}

ImageFeatureProvider ImageFeatureProvider::from_file(const std::filesystem::path& path) {
  return ImageFeatureProvider(read_matrix_file(path, kImageMagic));
}

ImageFeatureProvider ImageFeatureProvider::synthetic(std::size_t n_images,
                                                     std::size_t out_dim,
                                                     std::uint64_t seed) {
  Matrix m(n_images, out_dim);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : m.values()) v = static_cast<float>(normal(rng));
  return ImageFeatureProvider(std::move(m));
}

void ImageFeatureProvider::save(const std::filesystem::path& path) const {
  write_matrix_file(path, kImageMagic, features_);
}

std::span<const float> ImageFeatureProvider::image_feature(std::size_t index) const {
  if (index >= features_.rows()) throw InvalidId(index, "image index");
  return features_.row(index);
}

}  // namespace teir
