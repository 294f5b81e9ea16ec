#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "teir/bpe.hpp"
#include "teir/embedding_store.hpp"
#include "teir/frozen_encoders.hpp"
#include "teir/matrix.hpp"
#include "teir/objectives.hpp"

namespace teir {

enum class Direction { kImageToText, kTextToImage };

inline constexpr Direction kDirections[] = {Direction::kImageToText,
                                            Direction::kTextToImage};

std::string to_string(Direction dir);
Direction direction_from_string(const std::string& s);

// Recall@1 after training task j, measured on task i (i <= j), per
// direction. Tasks are 0-based; task 0 is the anchor language.
class EvalMatrix {
 public:
  void set(std::size_t j, std::size_t i, Direction dir, double recall);
  std::optional<double> get(std::size_t j, std::size_t i, Direction dir) const;
  double at(std::size_t j, std::size_t i, Direction dir) const;
  bool has_row(std::size_t j, Direction dir) const;
  // One past the largest j with any entry.
  std::size_t task_rows() const;

  void write_csv(const std::filesystem::path& path) const;
  static EvalMatrix read_csv(const std::filesystem::path& path);

  bool operator==(const EvalMatrix&) const = default;

 private:
  std::map<std::tuple<std::size_t, std::size_t, int>, double> entries_;
};

// Percentage of queries whose top-k gallery items by cosine similarity
// (ties to the lower gallery index) contain a relevant item.
double recall_at_k(const MatrixD& queries, const MatrixD& gallery,
                   const std::vector<std::vector<std::size_t>>& relevance,
                   std::size_t k);

struct RetrievalScores {
  // recall[direction][n] for n-th entry of `ks`
  std::vector<double> image_to_text;
  std::vector<double> text_to_image;

  double sum() const;
};

// One caption per image, aligned by row.
RetrievalScores paired_retrieval(const MatrixD& image_feats, const MatrixD& text_feats,
                                 std::span<const std::size_t> ks);

// AR_j: mean of a_{j,i} over i = 0..j.
double average_recall(const EvalMatrix& m, std::size_t j, Direction dir);
// F_j = 1/j * sum_{i<j} (max_{k in [i, j-1]} a_{k,i} - a_{j,i}); j >= 1.
double forgetting(const EvalMatrix& m, std::size_t j, Direction dir);

// eta * cos(img, eng) + (1 - eta) * cos(img, foreign).
double fused_similarity(std::span<const double> r_img, std::span<const double> r_eng,
                        std::span<const double> r_foreign, double eta);

// A training triplet after tokenization.
struct EncodedSample {
  std::size_t image_index = 0;
  std::vector<TokenId> english;
  std::vector<TokenId> foreign;
};

// The pieces of the dual encoder a per-sample loss needs.
struct ModelView {
  const Matrix* table = nullptr;   // trainable theta
  const Matrix* anchor = nullptr;  // frozen Omega_emb (may be null if gamma_cl = 0)
  const FrozenTextParams* params = nullptr;
  const ImageFeatureProvider* images = nullptr;
  LossConfig loss;
};

// Loss and embedding-row gradient for one batch.
struct BatchGrad {
  double loss = 0.0;
  RowGrads grads;
};
BatchGrad batch_loss_and_grad(const ModelView& model, std::span<const EncodedSample> samples);

// (1/N) sum_n ||grad_theta L(x_n)||^2 with batch size 1.
double fisher_trace(std::span<const EncodedSample> samples, const ModelView& model);

// Mean batch loss over consecutive batches of `batch_size` in dataset order.
double mean_loss(std::span<const EncodedSample> samples, const ModelView& model,
                 std::size_t batch_size);

struct TedHistogram {
  DistStats stats;
  std::vector<double> edges;          // bins + 1 edges over [mu-5s, mu+5s]
  std::vector<std::size_t> counts;    // bins
  std::size_t below = 0;
  std::size_t above = 0;
  bool degenerate = false;            // sigma == 0: one bin holding everything

  std::size_t total() const;
  void write_csv(const std::filesystem::path& path) const;
};

TedHistogram ted_histogram(const EmbeddingTable& table, std::size_t bins);

}  // namespace teir
