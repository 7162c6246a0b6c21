#include <gtest/gtest.h>

#include <cmath>

#include "sparsa/classifiers.hpp"

namespace {

using namespace sparsa;

SymMatrix ar1(Index p, double rho) {
  return SymMatrix::generate(p, [rho](Index i, Index j) { return std::pow(rho, std::abs(static_cast<double>(i - j))); });
}

SymMatrix equicorrelation(Index p, double rho) {
  return SymMatrix::generate(p, [rho](Index i, Index j) { return i == j ? 1.0 : rho; });
}

Vec sparse_signal(Index p) {
  Vec b = Vec::Zero(p);
  for (int k = 1; k <= 5; ++k) {
    const Index pos = (2 * k - 1) * p / 10 - 1 + ((2 * k - 1) * p % 10 != 0);
    b(pos) = (k % 2 ? 1.0 : -1.0) * (k + 1) / 4.0;
  }
  return b;
}

GaussianPopulation from_beta0(const SymMatrix& sigma, const Vec& beta0) {
  return {sigma.matrix() * beta0, Vec::Zero(beta0.size()), sigma};
}

LabeledDataset draw(const GaussianPopulation& pop, Index n1, Index n2, std::uint64_t seed) {
  const Matrix l = cholesky(pop.sigma);
  Rng rng(RngSeed{seed});
  return LabeledDataset::from_classes(sample_mvn(pop.mu1, l, n1, rng), sample_mvn(pop.mu2, l, n2, rng));
}

SymMatrix random_spd(Index p, Rng& rng) {
  Matrix a(p, p);
  for (Index i = 0; i < p; ++i)
    for (Index j = 0; j < p; ++j) a(i, j) = rng.normal();
  Matrix m = a * a.transpose() / static_cast<double>(p);
  m.diagonal().array() += 0.3;
  return SymMatrix::from_lower(m);
}

TEST(Moments, PointsAtClassMeansGiveZeroCovariance) {
  Matrix x1(2, 2), x2(2, 2);
  x1 << 1, 2, 1, 2;
  x2 << -1, 0, -1, 0;
  const auto m = moments(LabeledDataset::from_classes(x1, x2));
  EXPECT_TRUE(m.pooled_cov.matrix().isZero(0.0));
  EXPECT_TRUE(m.mu_hat_a.isApprox((m.xbar1 + m.xbar2) / 2.0));
  EXPECT_TRUE(m.mu_hat_d.isApprox((m.xbar1 - m.xbar2) / 2.0));
}

TEST(Moments, SingletonClassesRejected) {
  EXPECT_THROW(moments(LabeledDataset::from_classes(Matrix::Ones(1, 2), Matrix::Zero(1, 2))), DegenerateClass);
}

TEST(Moments, UsesOneOverNDivisorAndFactorMatches) {
  Rng rng(RngSeed{4});
  Matrix x1(5, 3), x2(4, 3);
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 3; ++j) x1(i, j) = rng.normal();
  for (Index i = 0; i < 4; ++i)
    for (Index j = 0; j < 3; ++j) x2(i, j) = rng.normal();
  const auto m = moments(LabeledDataset::from_classes(x1, x2));
  Matrix c1 = x1.rowwise() - x1.colwise().mean();
  Matrix c2 = x2.rowwise() - x2.colwise().mean();
  Matrix expected = (c1.transpose() * c1 + c2.transpose() * c2) / 9.0;
  EXPECT_LE((m.pooled_cov.matrix() - expected).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_EQ(m.gram_factor.rows(), 7);
  EXPECT_LE((m.gram_factor.transpose() * m.gram_factor - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Moments, Model1CovarianceEntryConsistent) {
  const auto pop = from_beta0(ar1(10, 0.8), sparse_signal(10));
  const auto m = moments(draw(pop, 5000, 5000, 31));
  EXPECT_NEAR(m.pooled_cov(0, 1), 0.8, 0.03);
}

TEST(FisherDelta, Examples) {
  Vec mu1 = Vec::Zero(3);
  mu1(0) = 1.0;
  GaussianPopulation pop{mu1, Vec::Zero(3), SymMatrix::identity(3)};
  EXPECT_NEAR(fisher_delta(pop), 0.25, 1e-15);
  EXPECT_NEAR(fisher_delta(pop, IndexSet{0}), 0.25, 1e-15);
  EXPECT_EQ(fisher_delta(pop, IndexSet{1, 2}), 0.0);
  EXPECT_THROW(fisher_delta(pop, IndexSet{}), InvalidInput);
}

TEST(FisherDelta, SupportOfBeta0IsOptimalSubset) {
  Rng rng(RngSeed{100});
  for (int trial = 0; trial < 200; ++trial) {
    const Index p = 2 + static_cast<Index>(rng.below(7));
    const auto sigma = random_spd(p, rng);
    Vec beta0 = Vec::Zero(p);
    IndexSet support;
    for (Index j = 0; j < p; ++j) {
      if (rng.uniform() < 0.5 || (j == p - 1 && support.empty())) {
        beta0(j) = rng.normal() + (rng.uniform() < 0.5 ? 1.0 : -1.0);
        support.push_back(j);
      }
    }
    const auto pop = from_beta0(sigma, beta0);
    EXPECT_NEAR(fisher_delta(pop, support), fisher_delta(pop), 1e-10);
  }
}

TEST(FisherDelta, SubsetMonotoneByBruteForce) {
  Rng rng(RngSeed{101});
  for (int trial = 0; trial < 20; ++trial) {
    const Index p = 2 + static_cast<Index>(rng.below(5));
    const auto sigma = random_spd(p, rng);
    Vec mu1(p);
    for (Index j = 0; j < p; ++j) mu1(j) = rng.normal();
    const GaussianPopulation pop{mu1, Vec::Zero(p), sigma};
    const unsigned full = (1u << p) - 1u;
    std::vector<double> delta(full + 1u, 0.0);
    for (unsigned mask = 1; mask <= full; ++mask) {
      IndexSet s;
      for (Index j = 0; j < p; ++j)
        if (mask & (1u << j)) s.push_back(j);
      delta[mask] = fisher_delta(pop, s);
    }
    for (unsigned a = 1; a <= full; ++a)
      for (unsigned b = a; b <= full; ++b)
        if ((a & b) == a) EXPECT_LE(delta[a], delta[b] + 1e-12);
  }
}

TEST(FisherDelta, GapVanishesWithTailMass) {
  // Truncating beta0 to its large entries loses at most O(tail mass) of signal.
  Rng rng(RngSeed{102});
  const double c0 = 4.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Index p = 8;
    Matrix q = Eigen::HouseholderQR<Matrix>(Matrix::NullaryExpr(p, p, [&] { return rng.normal(); })).householderQ();
    Vec ev(p);
    for (Index j = 0; j < p; ++j) ev(j) = 1.0 / c0 + rng.uniform() * (c0 - 1.0 / c0);
    const auto sigma = SymMatrix::from_lower(q * ev.asDiagonal() * q.transpose());
    const double tail = std::pow(10.0, -1.0 - 5.0 * rng.uniform());
    Vec beta0 = Vec::Zero(p);
    beta0.head(3) << 1.0, -0.7, 1.3;
    for (Index j = 3; j < p; ++j) beta0(j) = std::sqrt(tail / 5.0) * (rng.uniform() < 0.5 ? 1.0 : -1.0);
    const auto pop = from_beta0(sigma, beta0);
    const double gap = fisher_delta(pop) - fisher_delta(pop, IndexSet{0, 1, 2});
    const double s = beta0.tail(p - 3).squaredNorm();
    EXPECT_GE(gap, -1e-12);
    EXPECT_LE(gap, 10.0 * s * c0 * c0);
  }
}

TEST(TheoreticalRate, Examples) {
  EXPECT_DOUBLE_EQ(theoretical_rate(0.0), 0.5);
  EXPECT_NEAR(theoretical_rate(1.0), 0.15865525393145707, 1e-14);
  EXPECT_THROW(theoretical_rate(-1.0), InvalidInput);
  const auto model2 = from_beta0(equicorrelation(100, 0.5), sparse_signal(100));
  EXPECT_NEAR(theoretical_rate(fisher_delta(model2)), 0.1841, 0.015);
  for (double d = 0.0; d < 5.0; d += 0.25) EXPECT_GT(theoretical_rate(d), theoretical_rate(d + 0.25));
}

TEST(OracleClassify, MeansAndTie) {
  const auto pop = from_beta0(ar1(6, 0.8), sparse_signal(10).head(6) + Vec::Ones(6) * 0.1);
  EXPECT_EQ(oracle_classify(pop, pop.mu1), 1);
  EXPECT_EQ(oracle_classify(pop, pop.mu2), 2);
  const GaussianPopulation simple{Vec::Ones(2), -Vec::Ones(2), SymMatrix::identity(2)};
  EXPECT_EQ(oracle_classify(simple, Vec::Zero(2)), 2);
  EXPECT_THROW(oracle_classify(simple, Vec::Zero(3)), InvalidInput);
}

TEST(FitLda, OneDimensionalSign) {
  Matrix x1(3, 1), x2(3, 1);
  x1 << -4.0, -5.0, -6.5;
  x2 << 3.0, 4.0, 4.2;
  const auto fit = fit_lda(LabeledDataset::from_classes(x1, x2));
  EXPECT_LT(fit.direction(0), 0.0);
}

TEST(FitLda, Model1SanityAndAgreementWithOracle) {
  const auto pop = from_beta0(ar1(10, 0.8), sparse_signal(10));
  const auto train = draw(pop, 100, 100, 5);
  const auto fit = fit_lda(train);
  EXPECT_TRUE(fit.direction.allFinite());
  EXPECT_LE(empirical_error(fit.rule(), train), empirical_error(oracle_rule(pop), train) + 0.10);

  const auto m = moments(train);
  EXPECT_EQ(classify_lda(fit, m.xbar1), 1);
  EXPECT_EQ(classify_lda(fit, m.mu_hat_a), 2);

  const auto big = draw(pop, 200, 200, 6);
  const auto train400 = draw(pop, 200, 200, 7);
  const auto fit400 = fit_lda(train400);
  Index agree = 0;
  for (Index i = 0; i < big.n(); ++i) agree += classify_lda(fit400, big.row(i)) == oracle_classify(pop, big.row(i));
  // Delta is only 0.48 at p = 10, so many test points sit near the boundary.
  EXPECT_GE(static_cast<double>(agree) / static_cast<double>(big.n()), 0.90);
}

TEST(FitLda, RankDeficientRejectedUnlessRidge) {
  const auto pop = from_beta0(ar1(20, 0.8), sparse_signal(20));
  const auto data = draw(pop, 5, 5, 8);
  EXPECT_THROW(fit_lda(data), NotPositiveDefinite);
  EXPECT_TRUE(fit_lda(data, std::nullopt, Ridge::Allow).direction.allFinite());
}

TEST(ConditionalRate, TruthRecoversTheoreticalRate) {
  const auto pop = from_beta0(ar1(100, 0.8), sparse_signal(100));
  EXPECT_NEAR(conditional_rate(oracle_rule(pop), pop), theoretical_rate(fisher_delta(pop)), 1e-12);
}

TEST(ConditionalRate, UninformativeDirectionIsHalf) {
  Vec mu1(2);
  mu1 << 1.0, 0.0;
  const GaussianPopulation pop{mu1, -mu1, SymMatrix::identity(2)};
  const LinearRule rule{{0, 1}, (Vec(2) << 0.0, 1.0).finished(), Vec::Zero(2), 0.0, 2};
  EXPECT_NEAR(conditional_rate(rule, pop), 0.5, 1e-15);
  const LinearRule zero{{0, 1}, Vec::Zero(2), Vec::Zero(2), 0.0, 2};
  EXPECT_THROW(conditional_rate(zero, pop), ZeroDirection);
}

TEST(ConditionalRate, MatchesMonteCarlo) {
  const auto pop = from_beta0(ar1(10, 0.8), sparse_signal(10));
  const auto fit = fit_lda(draw(pop, 100, 100, 9));
  const auto test = draw(pop, 50000, 50000, 10);
  EXPECT_NEAR(empirical_error(fit.rule(), test), conditional_rate(fit, pop), 0.01);
}

TEST(NaiveBayes, DiagonalTruthAgreesWithLda) {
  Vec mu1(3);
  mu1 << 1.0, -0.5, 0.25;
  const GaussianPopulation pop{mu1, Vec::Zero(3), SymMatrix::from(Vec((Vec(3) << 1.0, 2.0, 0.5).finished()).asDiagonal().toDenseMatrix())};
  const auto data = draw(pop, 20000, 20000, 11);
  const Vec a = fit_naive_bayes(data).direction;
  const Vec b = fit_lda(data).direction;
  for (Index j = 0; j < 3; ++j) EXPECT_NEAR(a(j) / b(j), 1.0, 0.05);
}

TEST(NaiveBayes, OneFeatureEqualsLdaAndZeroVarianceRejected) {
  Matrix x1(3, 1), x2(3, 1);
  x1 << 1.0, 2.0, 1.5;
  x2 << -1.0, 0.0, -0.2;
  const auto data = LabeledDataset::from_classes(x1, x2);
  EXPECT_NEAR(fit_naive_bayes(data).direction(0), fit_lda(data).direction(0), 1e-14);
  Matrix c1 = Matrix::Ones(2, 2), c2 = Matrix::Zero(2, 2);
  c1(1, 1) = 3.0;
  EXPECT_THROW(fit_naive_bayes(LabeledDataset::from_classes(c1, c2)), ZeroVariance);
}

TEST(TScores, ClosedFormAndDegenerateFeatures) {
  Matrix x1(100, 3), x2(100, 3);
  for (Index i = 0; i < 100; ++i) {
    const double s = i % 2 ? 1.0 : -1.0;
    x1.row(i) << 1.0 + s, 5.0 + s, 7.0;
    x2.row(i) << -1.0 - s, 5.0 - s, 4.0;
  }
  const auto t = t_scores(LabeledDataset::from_classes(x1, x2));
  // Within-class sum of squares is 200, pooled over n - 2 = 198 degrees of freedom.
  EXPECT_NEAR(t.values(0), 2.0 / (std::sqrt(200.0 / 198.0) * std::sqrt(0.02)), 1e-9);
  EXPECT_NEAR(t.values(0), 14.14, 0.1);
  EXPECT_EQ(t.values(1), 0.0);
  EXPECT_EQ(t.values(2), std::numeric_limits<double>::infinity());
  EXPECT_EQ(t.zero_variance, IndexSet{2});
}

TEST(TScores, Model2HidesFeatures30And70) {
  const auto pop = from_beta0(equicorrelation(100, 0.5), sparse_signal(100));
  const auto top = top_by_magnitude(t_scores(draw(pop, 100, 100, 12)).values, 5);
  for (Index j : top) {
    EXPECT_NE(j, 29);
    EXPECT_NE(j, 69);
  }
}

TEST(TopByMagnitude, StableTies) {
  Vec v(5);
  v << 1.0, -3.0, 3.0, 0.5, -1.0;
  EXPECT_EQ(top_by_magnitude(v, 2), (IndexSet{1, 2}));
  EXPECT_EQ(top_by_magnitude(v, 3), (IndexSet{0, 1, 2}));
  EXPECT_THROW(top_by_magnitude(v, 6), InvalidInput);
}

TEST(FitTlda, LargeLambdaFallsBackToTScores) {
  const auto pop = from_beta0(ar1(20, 0.8), sparse_signal(20));
  const auto data = draw(pop, 30, 30, 13);
  const double dmax = moments(data).difference().lpNorm<Eigen::Infinity>();
  const auto model = fit_tlda(data, dmax * 1.01, 3);
  EXPECT_TRUE(model.degenerate_selection);
  EXPECT_EQ(model.selected, top_by_magnitude(t_scores(data).values, 3));
  EXPECT_EQ(model.p0_used, 3);
  EXPECT_TRUE(model.beta_star.allFinite());
}

TEST(FitTlda, FullSelectionEqualsLda) {
  const auto pop = from_beta0(ar1(10, 0.8), sparse_signal(10));
  const auto data = draw(pop, 60, 60, 14);
  const auto model = fit_tlda(data, 0.05, 10);
  const auto lda = fit_lda(data);
  EXPECT_EQ(model.selected, all_indices(10));
  EXPECT_LE((model.beta_star - 2.0 * lda.direction).cwiseAbs().maxCoeff(), 1e-10);
  const auto test = draw(pop, 200, 200, 15);
  for (Index i = 0; i < test.n(); ++i) EXPECT_EQ(classify_tlda(model, test.row(i)), classify_lda(lda, test.row(i)));
}

TEST(FitTlda, ContractAndClassification) {
  const auto pop = from_beta0(ar1(20, 0.8), sparse_signal(20));
  const auto data = draw(pop, 40, 40, 16);
  EXPECT_THROW(fit_tlda(data, 0.1, 0), InvalidInput);
  EXPECT_THROW(fit_tlda(data, 0.1, 21), InvalidInput);
  auto model = fit_tlda(data, 0.2, 4);
  EXPECT_EQ(static_cast<Index>(model.selected.size()), 4);
  EXPECT_TRUE(std::is_sorted(model.selected.begin(), model.selected.end()));
  const auto m = moments(data);
  EXPECT_EQ(classify_tlda(model, m.xbar1), 1);
  model.log_prior_offset = 1e300;
  for (Index i = 0; i < data.n(); ++i) EXPECT_EQ(classify_tlda(model, data.row(i)), 2);
  EXPECT_EQ(fit_tlda(data, 0.2, 4).selected, fit_tlda(data, 0.2, 4).selected);
}

TEST(FitTlda, SelectionInvariantUnderCommonScale) {
  const auto pop = from_beta0(ar1(30, 0.8), sparse_signal(30));
  const auto data = draw(pop, 40, 40, 17);
  const double c = 3.7;
  const LabeledDataset scaled(data.features() * c, data.labels());
  const auto a = fit_tlda(data, 0.3, 5);
  const auto b = fit_tlda(scaled, 0.3 * c, 5);
  EXPECT_EQ(a.selected, b.selected);
}

TEST(LogPriorOffset, EqualPriorsGiveZero) {
  EXPECT_EQ(log_prior_offset(0.5), 0.0);
  EXPECT_NEAR(log_prior_offset(0.25), std::log(3.0), 1e-15);
  EXPECT_THROW(log_prior_offset(1.0), InvalidInput);
}

TEST(LabeledDataset, BadLabelNamesRow) {
  try {
    LabeledDataset(Matrix::Zero(3, 2), {1, 2, 3});
    FAIL();
  } catch (const InvalidInput& e) {
    EXPECT_NE(std::string(e.what()).find("row 2"), std::string::npos);
  }
}

} // namespace
