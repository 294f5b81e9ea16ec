#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "teir/error.hpp"
#include "teir/objectives.hpp"

using namespace teir;

namespace {

MatrixD random_rows(std::size_t k, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  MatrixD m(k, d);
  for (double& v : m.values()) v = n(rng);
  return m;
}

FeatureBatch random_batch(std::size_t k, std::size_t d, std::uint64_t seed) {
  return {random_rows(k, d, seed), random_rows(k, d, seed + 1), random_rows(k, d, seed + 2)};
}

MatrixD from_rows(std::initializer_list<std::vector<double>> rows) {
  MatrixD m(rows.size(), rows.begin()->size());
  std::size_t r = 0;
  for (const auto& row : rows) {
    std::copy(row.begin(), row.end(), m.row(r).begin());
    ++r;
  }
  return m;
}

// Every K^2 cosine materialized, naive log-sum-exp.
double brute_cm(const FeatureBatch& b, double tau) {
  const std::size_t k = b.size();
  std::vector<std::vector<double>> s(k, std::vector<double>(k));
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double dot = 0, ni = 0, nj = 0;
      for (std::size_t c = 0; c < b.images.cols(); ++c) {
        dot += b.images(i, c) * b.foreign(j, c);
        ni += b.images(i, c) * b.images(i, c);
        nj += b.foreign(j, c) * b.foreign(j, c);
      }
      s[i][j] = dot / std::sqrt(ni * nj) / tau;
    }
  }
  double i2f = 0, f2i = 0;
  for (std::size_t i = 0; i < k; ++i) {
    double row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += std::exp(s[i][j]);
      col += std::exp(s[j][i]);
    }
    i2f += -s[i][i] + std::log(row);
    f2i += -s[i][i] + std::log(col);
  }
  return 0.5 * (i2f + f2i) / k;
}

double brute_cl(const FeatureBatch& b) {
  double s = 0;
  for (std::size_t i = 0; i < b.english.size(); ++i) {
    const double d = b.english.values()[i] - b.foreign.values()[i];
    s += d * d;
  }
  return s / (2.0 * b.size());
}

double max_rel_fd_error(FeatureBatch b, const LossConfig& cfg) {
  const LossResult res = total_loss(b, cfg);
  const double h = 1e-5;
  double worst = 0;
  for (std::size_t i = 0; i < b.foreign.size(); ++i) {
    double& x = b.foreign.values()[i];
    const double saved = x;
    x = saved + h;
    const double fp = total_loss(b, cfg).loss;
    x = saved - h;
    const double fm = total_loss(b, cfg).loss;
    x = saved;
    const double num = (fp - fm) / (2 * h);
    const double an = res.grad_foreign.values()[i];
    worst = std::max(worst, std::abs(num - an) / std::max({std::abs(num), std::abs(an), 1e-8}));
  }
  return worst;
}

}  // namespace

TEST(Cosine, ScaleInvariance) {
  const std::vector<double> u = {1, 2, -3}, v = {0.5, -1, 4};
  std::vector<double> cv = v;
  for (double& x : cv) x *= 3.7;
  EXPECT_NEAR(cosine(u, v), cosine(u, cv), 1e-15);
  EXPECT_NEAR(cosine(u, u), 1.0, 1e-15);
}

TEST(CmLoss, SinglePairIsZero) {
  FeatureBatch b{from_rows({{0.3, -2}}), {}, from_rows({{1, 5}})};
  EXPECT_NEAR(cm_loss(b, 0.07).loss, 0.0, 1e-12);
}

TEST(CmLoss, TwoByTwoHandValue) {
  FeatureBatch b{from_rows({{1, 0}, {0, 1}}), {}, from_rows({{1, 0}, {0, 1}})};
  EXPECT_NEAR(cm_loss(b, 1.0).loss, std::log(1 + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(cm_loss(b, 1.0).loss, 0.31326, 1e-5);
}

TEST(CmLoss, MatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FeatureBatch b = random_batch(4, 6, seed * 3);
    EXPECT_NEAR(cm_loss(b, 0.07).loss, brute_cm(b, 0.07), 1e-6);
    EXPECT_NEAR(cm_loss(b, 0.5).loss, brute_cm(b, 0.5), 1e-6);
  }
}

TEST(CmLoss, StableAtSmallTemperature) {
  const FeatureBatch b = random_batch(8, 4, 77);
  const double l = cm_loss(b, 1e-3).loss;
  EXPECT_TRUE(std::isfinite(l));
  EXPECT_GE(l, 0.0);
}

TEST(CmLoss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    EXPECT_LE(max_rel_fd_error(random_batch(4, 6, seed * 5), {0.07, 1.0, 0.0}), 1e-4);
  }
}

TEST(CmLoss, ZeroRowIsDegenerate) {
  FeatureBatch b = random_batch(3, 4, 1);
  for (double& v : b.foreign.row(1)) v = 0;
  try {
    cm_loss(b, 0.07);
    FAIL() << "expected DegenerateFeature";
  } catch (const DegenerateFeature& e) {
    EXPECT_EQ(e.row(), 1u);
  }
  FeatureBatch c = random_batch(3, 4, 2);
  for (double& v : c.images.row(2)) v = 0;
  EXPECT_THROW(cm_loss(c, 0.07), DegenerateFeature);
}

TEST(CmLoss, RejectsNonPositiveTau) {
  EXPECT_THROW(cm_loss(random_batch(2, 2, 1), 0.0), InvalidInput);
}

TEST(ClLoss, HandValues) {
  FeatureBatch b{{}, from_rows({{1, 0}}), from_rows({{0, 1}})};
  const LossResult r = cl_loss(b);
  EXPECT_DOUBLE_EQ(r.loss, 1.0);
  EXPECT_DOUBLE_EQ(r.grad_foreign(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(r.grad_foreign(0, 1), 1.0);
  FeatureBatch same{{}, from_rows({{1, 2}, {3, 4}}), from_rows({{1, 2}, {3, 4}})};
  EXPECT_EQ(cl_loss(same).loss, 0.0);
}

TEST(ClLoss, MatchesBruteForceAndFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const FeatureBatch b = random_batch(5, 3, seed * 7);
    EXPECT_NEAR(cl_loss(b).loss, brute_cl(b), 1e-12);
    EXPECT_LE(max_rel_fd_error(b, {0.07, 0.0, 1.0}), 1e-4);
  }
}

TEST(ClLoss, ShapeMismatch) {
  FeatureBatch b{{}, random_rows(2, 3, 1), random_rows(3, 3, 2)};
  EXPECT_THROW(cl_loss(b), DimensionMismatch);
}

TEST(TotalLoss, LinearCombination) {
  const FeatureBatch b = random_batch(4, 5, 40);
  EXPECT_EQ(total_loss(b, {0.07, 0.0, 1.0}).loss, cl_loss(b).loss);
  EXPECT_EQ(total_loss(b, {0.07, 1.0, 0.0}).loss, cm_loss(b, 0.07).loss);
  const LossResult t = total_loss(b, {0.07, 0.3, 2.0});
  EXPECT_NEAR(t.loss, 0.3 * cm_loss(b, 0.07).loss + 2.0 * cl_loss(b).loss, 1e-12);
  EXPECT_LE(max_rel_fd_error(b, {0.07, 0.01, 1.0}), 1e-4);
}

TEST(TotalLoss, DefaultWeightsOnHandCase) {
  const MatrixD eye = from_rows({{1, 0}, {0, 1}});
  FeatureBatch b{eye, eye, eye};
  EXPECT_NEAR(total_loss(b, {1.0, 0.01, 1.0}).loss, 0.0031326, 1e-7);
  const LossConfig defaults;
  EXPECT_EQ(defaults.tau, 0.07);
  EXPECT_EQ(defaults.gamma_cm, 0.01);
  EXPECT_EQ(defaults.gamma_cl, 1.0);
}

TEST(TotalLoss, ZeroWeightSkipsEmptyBranch) {
  FeatureBatch b = random_batch(3, 4, 50);
  b.english = MatrixD();
  EXPECT_NO_THROW(total_loss(b, {0.07, 1.0, 0.0}));
}

TEST(Losses, NonNegativeAndPermutationInvariant) {
  std::mt19937_64 rng(60);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const FeatureBatch b = random_batch(6, 4, seed * 11);
    const double cm = cm_loss(b, 0.07).loss, cl = cl_loss(b).loss;
    EXPECT_GE(cm, 0.0);
    EXPECT_GT(cl, 0.0);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    FeatureBatch p{MatrixD(6, 4), MatrixD(6, 4), MatrixD(6, 4)};
    for (std::size_t i = 0; i < 6; ++i) {
      std::copy_n(b.images.row(perm[i]).begin(), 4, p.images.row(i).begin());
      std::copy_n(b.english.row(perm[i]).begin(), 4, p.english.row(i).begin());
      std::copy_n(b.foreign.row(perm[i]).begin(), 4, p.foreign.row(i).begin());
    }
    EXPECT_NEAR(cm_loss(p, 0.07).loss, cm, 1e-10);
    EXPECT_NEAR(cl_loss(p).loss, cl, 1e-12);
  }
}
