#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <random>
#include <vector>

#include "teir/error.hpp"
#include "teir/frozen_encoders.hpp"
#include "test_util.hpp"

using namespace teir;

namespace {

MatrixD random_table(std::size_t rows, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  MatrixD t(rows, dim);
  for (double& v : t.values()) v = n(rng);
  return t;
}

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = d(rng);
  return v;
}

// Straight-line forward pass written from the formula, sharing nothing with
// the library beyond the parameter values.
std::vector<double> reference_forward(const std::vector<TokenId>& ids, const MatrixD& table,
                                      const FrozenTextParams& p) {
  const std::size_t d = table.cols();
  const std::size_t len = std::min(ids.size(), p.max_len);
  std::vector<double> h(d, 0.0);
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (c / 2)) / d);
      const double pos = (c % 2 == 0) ? std::sin(i * freq) : std::cos(i * freq);
      h[c] += (table(ids[i], c) + pos) / len;
    }
  }
  std::vector<double> r(p.out_dim());
  for (std::size_t o = 0; o < r.size(); ++o) {
    double z = p.bias[o];
    for (std::size_t c = 0; c < d; ++c) z += p.weight(o, c) * h[c];
    r[o] = std::tanh(z);
  }
  return r;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Positions, SinusoidalLayout) {
  const MatrixD pos = sinusoidal_positions(4, 6);
  EXPECT_EQ(pos(0, 0), 0.0);
  EXPECT_EQ(pos(0, 1), 1.0);
  EXPECT_NEAR(pos(1, 0), std::sin(1.0), 1e-15);
  EXPECT_NEAR(pos(3, 3), std::cos(3.0 * std::pow(10000.0, -2.0 / 6.0)), 1e-15);
}

TEST(TextParams, SeededGaussianWeights) {
  const FrozenTextParams a = make_text_params(64, 64, 32, 5);
  EXPECT_EQ(a.weight, make_text_params(64, 64, 32, 5).weight);
  EXPECT_NE(a.weight, make_text_params(64, 64, 32, 6).weight);
  double ss = 0.0;
  for (double w : a.weight.values()) ss += w * w;
  const double sd = std::sqrt(ss / a.weight.size());
  EXPECT_NEAR(sd, 1.0 / std::sqrt(64.0), 0.1 / std::sqrt(64.0));
  for (double b : a.bias) EXPECT_EQ(b, 0.0);
}

TEST(EncodeText, IdentityWeightsGiveTanhOfPosition) {
  FrozenTextParams p = make_text_params(4, 4, 8, 1);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c) p.weight(r, c) = r == c ? 1.0 : 0.0;
  MatrixD table(3, 4, 0.0);
  const std::vector<TokenId> ids = {2};
  const FeatureVec r = encode_text(ids, table, p);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_DOUBLE_EQ(r[c], std::tanh(p.pos(0, c)));
}

TEST(EncodeText, TruncatesToMaxLength) {
  const FrozenTextParams p = make_text_params(8, 8, 3, 2);
  const MatrixD table = random_table(10, 8, 3);
  const std::vector<TokenId> longer = {1, 2, 3, 4, 5, 9};
  const std::vector<TokenId> prefix = {1, 2, 3};
  EXPECT_EQ(encode_text(longer, table, p), encode_text(prefix, table, p));
}

TEST(EncodeText, MatchesIndependentForward) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const FrozenTextParams p = make_text_params(8, 8, 32, seed);
    const MatrixD table = random_table(12, 8, seed + 100);
    std::mt19937_64 rng(seed);
    std::vector<TokenId> ids(3);
    for (auto& id : ids) id = static_cast<TokenId>(rng() % 12);
    const auto got = encode_text(ids, table, p);
    const auto want = reference_forward(ids, table, p);
    for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(got[i], want[i], 1e-6);
  }
}

TEST(EncodeText, FloatAndDoubleTablesAgree) {
  const FrozenTextParams p = make_text_params(8, 6, 32, 4);
  Matrix f(5, 8);
  MatrixD d(5, 8);
  std::mt19937_64 rng(9);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (std::size_t i = 0; i < f.size(); ++i) d.values()[i] = f.values()[i] = n(rng);
  const std::vector<TokenId> ids = {0, 4, 4, 1};
  EXPECT_EQ(encode_text(ids, f, p), encode_text(ids, d, p));
}

TEST(EncodeText, OutputsInOpenUnitInterval) {
  const FrozenTextParams p = make_text_params(16, 16, 32, 7);
  MatrixD table = random_table(30, 16, 8);
  for (double& v : table.values()) v *= 5.0;
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<TokenId> ids(1 + rng() % 40);
    for (auto& id : ids) id = static_cast<TokenId>(rng() % 30);
    for (double x : encode_text(ids, table, p)) {
      EXPECT_GT(x, -1.0);
      EXPECT_LT(x, 1.0);
    }
  }
}

TEST(EncodeText, Errors) {
  const FrozenTextParams p = make_text_params(4, 4, 8, 1);
  const MatrixD table(3, 4);
  EXPECT_THROW(encode_text(std::vector<TokenId>{}, table, p), InvalidInput);
  try {
    encode_text(std::vector<TokenId>{0, 3}, table, p);
    FAIL() << "expected InvalidId";
  } catch (const InvalidId& e) {
    EXPECT_EQ(e.id(), 3u);
  }
  EXPECT_THROW(encode_text_grad(std::vector<TokenId>{}, table, p, std::vector<double>(4)),
               InvalidInput);
}

TEST(EncodeTextGrad, ZeroUpstreamGivesZero) {
  const FrozenTextParams p = make_text_params(8, 8, 32, 11);
  const MatrixD table = random_table(6, 8, 12);
  const std::vector<TokenId> ids = {1, 2, 5};
  const RowGrads g = encode_text_grad(ids, table, p, std::vector<double>(8, 0.0));
  for (const auto& [id, row] : g)
    for (double v : row) EXPECT_EQ(v, 0.0);
}

TEST(EncodeTextGrad, RepeatedIdAccumulates) {
  const FrozenTextParams p = make_text_params(8, 8, 32, 13);
  const MatrixD table = random_table(6, 8, 14);
  const auto up = random_vec(8, 15);
  // Mean pooling gives every position the same gradient, so two copies of
  // id 4 get twice what the single id 2 gets.
  const RowGrads g = encode_text_grad(std::vector<TokenId>{4, 2, 4}, table, p, up);
  ASSERT_EQ(g.size(), 2u);
  for (std::size_t c = 0; c < 8; ++c) EXPECT_DOUBLE_EQ(g.at(4)[c], 2.0 * g.at(2)[c]);
}

TEST(EncodeTextGrad, MatchesFiniteDifferences) {
  const double h = 1e-3;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const FrozenTextParams p = make_text_params(8, 8, 32, seed);
    MatrixD table = random_table(10, 8, seed + 50);
    std::mt19937_64 rng(seed + 7);
    std::vector<TokenId> ids(1 + rng() % 4);
    for (auto& id : ids) id = static_cast<TokenId>(rng() % 10);
    const auto up = random_vec(8, seed + 9);
    const RowGrads g = encode_text_grad(ids, table, p, up);
    for (const auto& [id, row] : g) {
      for (std::size_t c = 0; c < 8; ++c) {
        const double saved = table(id, c);
        table(id, c) = saved + h;
        const double fp = dot(up, encode_text(ids, table, p));
        table(id, c) = saved - h;
        const double fm = dot(up, encode_text(ids, table, p));
        table(id, c) = saved;
        const double numeric = (fp - fm) / (2 * h);
        const double denom = std::max({std::abs(numeric), std::abs(row[c]), 1e-8});
        worst = std::max(worst, std::abs(numeric - row[c]) / denom);
      }
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(EncodeTextGrad, OnlyTouchedRowsAppear) {
  const FrozenTextParams p = make_text_params(8, 8, 2, 16);
  const MatrixD table = random_table(10, 8, 17);
  // Id 9 sits past max_len and must not receive gradient.
  const RowGrads g = encode_text_grad(std::vector<TokenId>{1, 3, 9}, table, p, random_vec(8, 18));
  EXPECT_EQ(g.size(), 2u);
  EXPECT_EQ(g.count(9), 0u);
}

TEST(ImageFeatures, SyntheticIsDeterministic) {
  const auto a = ImageFeatureProvider::synthetic(20, 16, 3);
  const auto b = ImageFeatureProvider::synthetic(20, 16, 3);
  EXPECT_EQ(a.matrix(), b.matrix());
  EXPECT_NE(a.matrix(), ImageFeatureProvider::synthetic(20, 16, 4).matrix());
  const auto r1 = a.image_feature(7);
  const auto r2 = a.image_feature(7);
  EXPECT_TRUE(std::equal(r1.begin(), r1.end(), r2.begin()));
  EXPECT_THROW(a.image_feature(20), InvalidId);
}

TEST(ImageFeatures, FileRoundTripIsBitExact) {
  testutil::TempDir dir;
  const auto a = ImageFeatureProvider::synthetic(9, 5, 21);
  a.save(dir / "img.feat");
  const auto b = ImageFeatureProvider::from_file(dir / "img.feat");
  ASSERT_EQ(b.size(), 9u);
  for (std::size_t i = 0; i < a.matrix().size(); ++i)
    EXPECT_EQ(std::bit_cast<std::uint32_t>(a.matrix().values()[i]),
              std::bit_cast<std::uint32_t>(b.matrix().values()[i]));
  const std::string bytes = testutil::slurp(dir / "img.feat");
  EXPECT_EQ(bytes.substr(0, 8), "TEIRIMG1");
}
