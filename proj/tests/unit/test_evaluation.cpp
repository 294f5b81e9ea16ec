#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "teir/error.hpp"
#include "teir/evaluation.hpp"
#include "test_util.hpp"

using namespace teir;

namespace {

MatrixD random_rows(std::size_t k, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixD m(k, d);
  for (double& v : m.values()) v = n(rng);
  return m;
}

double cos_rows(const MatrixD& a, std::size_t i, const MatrixD& b, std::size_t j) {
  double d = 0, na = 0, nb = 0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    d += a(i, c) * b(j, c);
    na += a(i, c) * a(i, c);
    nb += b(j, c) * b(j, c);
  }
  return d / std::sqrt(na * nb);
}

// Sorts the full gallery for every query.
double full_sort_recall(const MatrixD& q, const MatrixD& g,
                        const std::vector<std::vector<std::size_t>>& rel, std::size_t k) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < q.rows(); ++i) {
    std::vector<std::size_t> order(g.rows());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return cos_rows(q, i, g, a) > cos_rows(q, i, g, b);
    });
    for (std::size_t r = 0; r < std::min(k, order.size()); ++r) {
      if (std::find(rel[i].begin(), rel[i].end(), order[r]) != rel[i].end()) {
        ++hits;
        break;
      }
    }
  }
  return 100.0 * hits / q.rows();
}

EvalMatrix three_task_matrix(Direction dir) {
  EvalMatrix m;
  const double a[3][3] = {{70, 0, 0}, {55, 62, 0}, {48, 66, 40}};
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i <= j; ++i) m.set(j, i, dir, a[j][i]);
  return m;
}

double brute_forgetting(const EvalMatrix& m, std::size_t j, Direction dir) {
  double s = 0;
  for (std::size_t i = 0; i < j; ++i) {
    double best = -1e9;
    for (std::size_t k = 0; k < j; ++k)
      if (k >= i) best = std::max(best, m.at(k, i, dir));
    s += best - m.at(j, i, dir);
  }
  return s / j;
}

}  // namespace

TEST(RecallAtK, IdentityAndOrthogonal) {
  const MatrixD q = random_rows(5, 4, 1);
  std::vector<std::vector<std::size_t>> self(5);
  for (std::size_t i = 0; i < 5; ++i) self[i] = {i};
  EXPECT_EQ(recall_at_k(q, q, self, 1), 100.0);

  MatrixD e(2, 2, 0.0);
  e(0, 0) = 1;
  e(1, 1) = 1;
  const std::vector<std::vector<std::size_t>> swapped = {{1}, {0}};
  EXPECT_EQ(recall_at_k(e, e, swapped, 1), 0.0);
  EXPECT_EQ(recall_at_k(e, e, swapped, 2), 100.0);
}

TEST(RecallAtK, MatchesFullSortOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const MatrixD q = random_rows(10, 3, seed);
    const MatrixD g = random_rows(10, 3, seed + 1000);
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> rel(10);
    for (auto& r : rel) {
      r = {rng() % 10};
      if (rng() % 2) r.push_back(rng() % 10);
    }
    for (std::size_t k : {1u, 3u, 5u, 10u})
      EXPECT_EQ(recall_at_k(q, g, rel, k), full_sort_recall(q, g, rel, k));
  }
}

TEST(RecallAtK, TiesGoToLowerIndex) {
  MatrixD q(1, 2, 0.0);
  q(0, 0) = 1;
  MatrixD g(2, 2, 0.0);
  g(0, 0) = 1;
  g(1, 0) = 2;  // same direction as row 0
  EXPECT_EQ(recall_at_k(q, g, {{0}}, 1), 100.0);
  EXPECT_EQ(recall_at_k(q, g, {{1}}, 1), 0.0);
}

TEST(RecallAtK, InvariantToRowRescaling) {
  const MatrixD q = random_rows(8, 4, 3);
  MatrixD g = random_rows(8, 4, 4);
  std::vector<std::vector<std::size_t>> rel(8);
  for (std::size_t i = 0; i < 8; ++i) rel[i] = {(i * 3) % 8};
  const double before = recall_at_k(q, g, rel, 2);
  for (std::size_t r = 0; r < 8; ++r)
    for (double& v : g.row(r)) v *= 0.1 + r;
  EXPECT_EQ(recall_at_k(q, g, rel, 2), before);
}

TEST(PairedRetrieval, BothDirections) {
  const MatrixD img = random_rows(6, 4, 5);
  const MatrixD txt = random_rows(6, 4, 6);
  const std::vector<std::size_t> ks = {1, 5, 10};
  const RetrievalScores s = paired_retrieval(img, txt, ks);
  std::vector<std::vector<std::size_t>> diag(6);
  for (std::size_t i = 0; i < 6; ++i) diag[i] = {i};
  ASSERT_EQ(s.image_to_text.size(), 3u);
  EXPECT_EQ(s.image_to_text[0], recall_at_k(img, txt, diag, 1));
  EXPECT_EQ(s.text_to_image[1], recall_at_k(txt, img, diag, 5));
  EXPECT_EQ(s.image_to_text[2], 100.0);
  EXPECT_DOUBLE_EQ(s.sum(), std::accumulate(s.image_to_text.begin(), s.image_to_text.end(), 0.0) +
                                std::accumulate(s.text_to_image.begin(), s.text_to_image.end(), 0.0));
}

TEST(Metrics, HandValues) {
  const Direction d = Direction::kImageToText;
  EvalMatrix one;
  one.set(0, 0, d, 50);
  EXPECT_EQ(average_recall(one, 0, d), 50);
  EXPECT_THROW(forgetting(one, 0, d), UndefinedMetric);

  EvalMatrix two;
  two.set(0, 0, d, 50);
  two.set(1, 0, d, 40);
  two.set(1, 1, d, 60);
  EXPECT_EQ(average_recall(two, 1, d), 50);
  EXPECT_EQ(forgetting(two, 1, d), 10);

  EvalMatrix flat;
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t i = 0; i <= j; ++i) flat.set(j, i, d, 33.0);
  EXPECT_EQ(average_recall(flat, 3, d), 33.0);
  EXPECT_EQ(forgetting(flat, 3, d), 0.0);
}

TEST(Metrics, ImprovementGivesNegativeForgetting) {
  const Direction d = Direction::kTextToImage;
  EvalMatrix m;
  m.set(0, 0, d, 20);
  m.set(1, 0, d, 30);
  m.set(1, 1, d, 10);
  EXPECT_EQ(forgetting(m, 1, d), -10);
}

TEST(Metrics, ThreeTaskMatrixMatchesBruteForce) {
  for (Direction d : kDirections) {
    const EvalMatrix m = three_task_matrix(d);
    EXPECT_DOUBLE_EQ(average_recall(m, 2, d), (48.0 + 66 + 40) / 3);
    EXPECT_DOUBLE_EQ(average_recall(m, 1, d), (55.0 + 62) / 2);
    EXPECT_DOUBLE_EQ(forgetting(m, 1, d), brute_forgetting(m, 1, d));
    EXPECT_DOUBLE_EQ(forgetting(m, 2, d), brute_forgetting(m, 2, d));
    // max(70, 55) - 48 and 62 - 66
    EXPECT_DOUBLE_EQ(forgetting(m, 2, d), (22.0 - 4.0) / 2);
  }
}

TEST(Metrics, RandomMatricesMatchBruteForce) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0, 100);
  for (int trial = 0; trial < 50; ++trial) {
    EvalMatrix m;
    const std::size_t t = 2 + trial % 5;
    for (std::size_t j = 0; j < t; ++j)
      for (std::size_t i = 0; i <= j; ++i) m.set(j, i, Direction::kImageToText, u(rng));
    for (std::size_t j = 1; j < t; ++j)
      EXPECT_NEAR(forgetting(m, j, Direction::kImageToText),
                  brute_forgetting(m, j, Direction::kImageToText), 1e-12);
  }
}

TEST(EvalMatrix, CsvRoundTripPreservesMetrics) {
  testutil::TempDir dir;
  EvalMatrix m = three_task_matrix(Direction::kImageToText);
  m.set(0, 0, Direction::kTextToImage, 12.345678901234);
  m.set(2, 1, Direction::kTextToImage, 1.0 / 3.0);
  m.write_csv(dir / "m.csv");
  const EvalMatrix back = EvalMatrix::read_csv(dir / "m.csv");
  EXPECT_EQ(back, m);
  EXPECT_EQ(back.task_rows(), 3u);
  EXPECT_EQ(average_recall(back, 2, Direction::kImageToText),
            average_recall(m, 2, Direction::kImageToText));
  EXPECT_EQ(forgetting(back, 2, Direction::kImageToText),
            forgetting(m, 2, Direction::kImageToText));
}

TEST(EvalMatrix, RejectsBadEntries) {
  EvalMatrix m;
  EXPECT_THROW(m.set(0, 1, Direction::kImageToText, 10), InvalidInput);
  EXPECT_THROW(m.set(1, 0, Direction::kImageToText, 101), InvalidInput);
  EXPECT_THROW(m.at(0, 0, Direction::kImageToText), UndefinedMetric);
  testutil::TempDir dir;
  testutil::spit(dir / "bad.csv", "j,i,direction,recall\n0,0,sideways,1\n");
  EXPECT_THROW(EvalMatrix::read_csv(dir / "bad.csv"), ParseError);
}

TEST(Fusion, Endpoints) {
  const std::vector<double> img = {1, 0}, eng = {0.6, 0.8}, fr = {0, 1};
  EXPECT_DOUBLE_EQ(fused_similarity(img, eng, fr, 0.0), cosine(img, fr));
  EXPECT_DOUBLE_EQ(fused_similarity(img, eng, fr, 1.0), cosine(img, eng));
  const std::vector<double> a = {0.2, std::sqrt(1 - 0.04)};
  const std::vector<double> b = {0.6, 0.8};
  EXPECT_NEAR(fused_similarity(img, a, b, 0.5), 0.4, 1e-12);
  EXPECT_THROW(fused_similarity(img, eng, fr, 1.5), InvalidInput);
}

namespace {

struct SmallModel {
  Matrix table;
  Matrix anchor;
  FrozenTextParams params;
  ImageFeatureProvider images;
  std::vector<EncodedSample> samples;

  explicit SmallModel(std::uint64_t seed)
      : table(12, 6), anchor(12, 6), params(make_text_params(6, 6, 32, seed)),
        images(ImageFeatureProvider::synthetic(5, 6, seed)) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<float> n(0.0f, 0.5f);
    for (float& v : table.values()) v = n(rng);
    for (float& v : anchor.values()) v = n(rng);
    for (std::size_t s = 0; s < 5; ++s) {
      EncodedSample e;
      e.image_index = s;
      for (std::size_t k = 0; k < 3; ++k) {
        e.english.push_back(static_cast<TokenId>(rng() % 12));
        e.foreign.push_back(static_cast<TokenId>(rng() % 12));
      }
      samples.push_back(e);
    }
  }

  ModelView view(LossConfig loss = {}) const { return {&table, &anchor, &params, &images, loss}; }
};

}  // namespace

TEST(Fisher, ZeroWeightsGiveZero) {
  const SmallModel m(1);
  EXPECT_EQ(fisher_trace(m.samples, m.view({0.07, 0.0, 0.0})), 0.0);
}

TEST(Fisher, SingleSampleIsSquaredGradNorm) {
  const SmallModel m(2);
  const std::span<const EncodedSample> one(m.samples.data(), 1);
  const BatchGrad g = batch_loss_and_grad(m.view(), one);
  double sq = 0;
  for (const auto& [id, row] : g.grads)
    for (double v : row) sq += v * v;
  EXPECT_GT(sq, 0.0);
  EXPECT_DOUBLE_EQ(fisher_trace(one, m.view()), sq);
}

TEST(Fisher, MatchesFiniteDifferenceGradients) {
  SmallModel m(3);
  double expected = 0;
  for (const EncodedSample& s : m.samples) {
    const std::span<const EncodedSample> one(&s, 1);
    for (std::size_t i = 0; i < m.table.size(); ++i) {
      float& x = m.table.values()[i];
      const float saved = x;
      const float xp = saved + 1e-2f, xm = saved - 1e-2f;
      x = xp;
      const double fp = batch_loss_and_grad(m.view(), one).loss;
      x = xm;
      const double fm = batch_loss_and_grad(m.view(), one).loss;
      x = saved;
      const double g = (fp - fm) / (static_cast<double>(xp) - xm);
      expected += g * g;
    }
  }
  expected /= m.samples.size();
  EXPECT_NEAR(fisher_trace(m.samples, m.view()), expected, 1e-3 * expected);
}

TEST(MeanLoss, AveragesConsecutiveBatches) {
  const SmallModel m(4);
  const std::span<const EncodedSample> all(m.samples);
  const double a = batch_loss_and_grad(m.view(), all.subspan(0, 2)).loss;
  const double b = batch_loss_and_grad(m.view(), all.subspan(2, 2)).loss;
  const double c = batch_loss_and_grad(m.view(), all.subspan(4, 1)).loss;
  EXPECT_NEAR(mean_loss(all, m.view(), 2), (a + b + c) / 3, 1e-12);
}

TEST(Ted, ConstantTableIsOneBin) {
  EmbeddingTable t(4, 5);
  for (float& v : t.values.values()) v = 0.3f;
  const TedHistogram h = ted_histogram(t, 20);
  EXPECT_TRUE(h.degenerate);
  ASSERT_EQ(h.counts.size(), 1u);
  EXPECT_EQ(h.total(), 20u);
}

TEST(Ted, GaussianBinsWithinStandardError) {
  EmbeddingTable t(1000, 1000);
  std::mt19937_64 rng(5);
  std::normal_distribution<float> n(0.0f, 0.02f);
  for (float& v : t.values.values()) v = n(rng);
  const TedHistogram h = ted_histogram(t, 40);
  EXPECT_EQ(h.total(), 1000000u);
  const double total = 1e6;
  auto phi = [&](double x) {
    return 0.5 * std::erfc(-(x - h.stats.mu) / (h.stats.sigma * std::sqrt(2.0)));
  };
  for (std::size_t b = 0; b < h.counts.size(); ++b) {
    const double p = phi(h.edges[b + 1]) - phi(h.edges[b]);
    const double se = std::sqrt(total * p * (1 - p));
    EXPECT_LE(std::abs(h.counts[b] - total * p), 3 * se + 1) << "bin " << b;
  }
}

TEST(Ted, CsvHasOneLinePerBin) {
  testutil::TempDir dir;
  EmbeddingTable t(10, 10);
  std::mt19937_64 rng(6);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (float& v : t.values.values()) v = n(rng);
  const TedHistogram h = ted_histogram(t, 8);
  h.write_csv(dir / "h.csv");
  const std::string text = testutil::slurp(dir / "h.csv");
  // header, lower tail, 8 bins, upper tail
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 11);
  EXPECT_EQ(text.substr(0, 24), "bin_left,bin_right,count");
  EXPECT_THROW(ted_histogram(t, 1), InvalidInput);
}
