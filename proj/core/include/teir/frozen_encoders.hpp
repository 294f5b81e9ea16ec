#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "teir/bpe.hpp"
#include "teir/embedding_store.hpp"
#include "teir/matrix.hpp"

namespace teir {

using FeatureVec = std::vector<double>;
// Sparse gradient w.r.t. embedding rows, ordered by token id.
using RowGrads = std::map<TokenId, std::vector<double>>;

// Frozen text encoder: r = tanh(W h + b) with h the mean over the first
// L = min(|ids|, max_len) positions of (embedding row + sinusoidal position).
struct FrozenTextParams {
  MatrixD weight;            // d_out x d, entries ~ N(0, (1/sqrt(d))^2)
  std::vector<double> bias;  // d_out, zero
  MatrixD pos;               // max_len x d
  std::size_t max_len = 32;
  std::uint64_t seed = 0;

  std::size_t dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
};

FrozenTextParams make_text_params(std::size_t dim, std::size_t out_dim,
                                  std::size_t max_len, std::uint64_t seed);
MatrixD sinusoidal_positions(std::size_t max_len, std::size_t dim);

FeatureVec encode_text(std::span<const TokenId> ids, const Matrix& table,
                       const FrozenTextParams& params);
FeatureVec encode_text(std::span<const TokenId> ids, const MatrixD& table,
                       const FrozenTextParams& params);
inline FeatureVec encode_text(std::span<const TokenId> ids, const EmbeddingTable& table,
                              const FrozenTextParams& params) {
  return encode_text(ids, table.values, params);
}
inline FeatureVec encode_text(std::span<const TokenId> ids, const AnchorTable& table,
                              const FrozenTextParams& params) {
  return encode_text(ids, table.values(), params);
}

// Adds d(upstream . r)/d(table rows) into `grads`. `features` must be the
// encode_text output for the same ids (saves a second forward pass).
void accumulate_text_grad(std::span<const TokenId> ids, const FrozenTextParams& params,
                          std::span<const double> features,
                          std::span<const double> upstream, RowGrads& grads);

RowGrads encode_text_grad(std::span<const TokenId> ids, const Matrix& table,
                          const FrozenTextParams& params, std::span<const double> upstream);
RowGrads encode_text_grad(std::span<const TokenId> ids, const MatrixD& table,
                          const FrozenTextParams& params, std::span<const double> upstream);
inline RowGrads encode_text_grad(std::span<const TokenId> ids, const EmbeddingTable& table,
                                 const FrozenTextParams& params,
                                 std::span<const double> upstream) {
  return encode_text_grad(ids, table.values, params, upstream);
}

// Frozen image features r^I, one row per image.
class ImageFeatureProvider {
 public:
  ImageFeatureProvider() = default;
  explicit ImageFeatureProvider(Matrix features);

  static ImageFeatureProvider from_file(const std::filesystem::path& path);
  static ImageFeatureProvider synthetic(std::size_t n_images, std::size_t out_dim,
                                        std::uint64_t seed);
  void save(const std::filesystem::path& path) const;

  std::span<const float> image_feature(std::size_t index) const;
  std::size_t size() const { return features_.rows(); }
  std::size_t out_dim() const { return features_.cols(); }
  const Matrix& matrix() const { return features_; }

 private:
  Matrix features_;
};

}  // namespace teir
