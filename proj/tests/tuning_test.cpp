#include <gtest/gtest.h>

#include <cmath>
#include <map>

#include "sparsa/tuning.hpp"

namespace {

using namespace sparsa;

LabeledDataset gaussian_data(Index n1, Index n2, Index p, std::uint64_t seed, double shift = 1.0) {
  Rng rng(RngSeed{seed});
  Matrix x(n1 + n2, p);
  std::vector<int> labels;
  for (Index i = 0; i < n1 + n2; ++i) {
    const int label = i < n1 ? 1 : 2;
    labels.push_back(label);
    for (Index j = 0; j < p; ++j) x(i, j) = rng.normal() + (label == 1 && j < 2 ? shift : 0.0);
  }
  return {x, labels};
}

std::map<int, Index> fold_sizes(const LabeledDataset& data, const std::vector<int>& folds, int label) {
  std::map<int, Index> sizes;
  for (Index i = 0; i < data.n(); ++i)
    if (data.label(i) == label) ++sizes[folds[static_cast<std::size_t>(i)]];
  return sizes;
}

TEST(StratifiedFolds, EvenSplit) {
  const auto data = gaussian_data(10, 10, 2, 1);
  const auto folds = stratified_folds(data, 5, RngSeed{3});
  for (int label : {1, 2}) {
    const auto sizes = fold_sizes(data, folds, label);
    ASSERT_EQ(sizes.size(), 5u);
    for (const auto& [fold, size] : sizes) EXPECT_EQ(size, 2) << "fold " << fold;
  }
}

TEST(StratifiedFolds, RemainderBalancedAndDeterministic) {
  const auto data = gaussian_data(7, 11, 2, 1);
  const auto folds = stratified_folds(data, 5, RngSeed{3});
  EXPECT_EQ(folds, stratified_folds(data, 5, RngSeed{3}));
  std::vector<Index> c1;
  for (const auto& [fold, size] : fold_sizes(data, folds, 1)) c1.push_back(size);
  std::sort(c1.rbegin(), c1.rend());
  EXPECT_EQ(c1, (std::vector<Index>{2, 2, 1, 1, 1}));
  std::vector<Index> total(5, 0);
  for (int f : folds) ++total[static_cast<std::size_t>(f)];
  EXPECT_LE(*std::max_element(total.begin(), total.end()) - *std::min_element(total.begin(), total.end()), 1);
}

TEST(StratifiedFolds, TooFewSamples) {
  EXPECT_THROW(stratified_folds(gaussian_data(4, 10, 2, 1), 5, RngSeed{1}), TooFewSamples);
}

TEST(DefaultGrids, Shapes) {
  const auto r = default_lambda_ratios();
  ASSERT_EQ(r.size(), 20u);
  EXPECT_DOUBLE_EQ(r.front(), 1.0);
  EXPECT_NEAR(r.back(), 1.0 / 50.0, 1e-15);
  EXPECT_EQ(default_p0_grid(200, 100).size(), 18u);
  EXPECT_EQ(default_p0_grid(20, 100).size(), 10u);
  EXPECT_EQ(default_p0_grid(20, 4).size(), 4u);
  EXPECT_EQ(default_p0_grid(100000, 100).size(), 30u);
}

TEST(CvConfig, Validation) {
  CvConfig c;
  EXPECT_NEAR(c.adjust_factor(), std::sqrt(0.8), 1e-15);
  c.lambda_ratios = {0.5, 0.5};
  EXPECT_THROW(c.validate(), InvalidInput);
  c = {};
  c.p0_grid = {3, 2};
  EXPECT_THROW(c.validate(), InvalidInput);
  c = {};
  c.folds = 1;
  EXPECT_THROW(c.validate(), InvalidInput);
}

TEST(CrossValidate, SingleCellSelected) {
  const auto data = gaussian_data(20, 20, 6, 2);
  CvConfig c;
  c.lambda_grid = std::vector<double>{0.3};
  c.p0_grid = {2};
  const auto r = cross_validate(data, c);
  EXPECT_EQ(r.p0_hat, 2);
  EXPECT_DOUBLE_EQ(r.lambda_hat, 0.3);
  EXPECT_DOUBLE_EQ(r.lambda_adjusted, std::sqrt(0.8) * 0.3);
  ASSERT_EQ(r.table.size(), 1u);
  EXPECT_GE(r.table[0].error_rate, 0.0);
  EXPECT_LE(r.table[0].error_rate, 1.0);
}

TEST(CrossValidate, ZeroSolutionColumnFlaggedDegenerate) {
  const auto data = gaussian_data(20, 20, 6, 3);
  CvConfig c;
  c.lambda_ratios = {1.0, 0.2};
  c.p0_grid = {1, 2};
  const auto r = cross_validate(data, c);
  ASSERT_EQ(r.table.size(), 4u);
  EXPECT_TRUE(r.table[0].degenerate && r.table[1].degenerate);
  EXPECT_FALSE(r.table[0].failed || r.table[1].failed);
  EXPECT_FALSE(r.table[2].degenerate);
}

TEST(CrossValidate, PureAndTieRule) {
  const auto data = gaussian_data(25, 25, 8, 4, 3.0);
  CvConfig c;
  c.seed = RngSeed{9};
  const auto a = cross_validate(data, c);
  const auto b = cross_validate(data, c);
  EXPECT_EQ(a.p0_hat, b.p0_hat);
  EXPECT_EQ(a.lambda_hat, b.lambda_hat);
  EXPECT_EQ(a.fold_assignments, b.fold_assignments);
  const CvCell* chosen = nullptr;
  for (const auto& cell : a.table) {
    if (cell.p0 == a.p0_hat && cell.lambda * a.lambda_scale == a.lambda_hat) chosen = &cell;
  }
  ASSERT_NE(chosen, nullptr);
  for (const auto& cell : a.table) {
    if (cell.failed) continue;
    EXPECT_GE(cell.errors, chosen->errors);
    if (cell.errors == chosen->errors) {
      EXPECT_TRUE(cell.p0 > chosen->p0 || (cell.p0 == chosen->p0 && cell.lambda <= chosen->lambda));
    }
  }
}

TEST(CrossValidate, HeldOutFoldNeverTouchesFit) {
  const auto data = gaussian_data(15, 15, 5, 5);
  const auto folds = stratified_folds(data, 5, RngSeed{1});
  Matrix corrupted = data.features();
  for (Index i = 0; i < data.n(); ++i)
    if (folds[static_cast<std::size_t>(i)] == 0) corrupted.row(i).setConstant(1e6);
  const LabeledDataset bad(corrupted, data.labels());
  const auto clean = detail::split_fold(data, folds, 0);
  const auto dirty = detail::split_fold(bad, folds, 0);
  EXPECT_EQ(clean.train.features(), dirty.train.features());
  EXPECT_EQ(clean.train.n() + clean.test.n(), data.n());
}

TEST(TuneAndFit, UsesAdjustedLambda) {
  const auto data = gaussian_data(30, 30, 10, 6, 1.5);
  const auto tuned = tune_and_fit(data, CvConfig{});
  EXPECT_DOUBLE_EQ(tuned.model.lambda_used, tuned.cv.lambda_adjusted);
  EXPECT_EQ(tuned.model.p0_used, tuned.cv.p0_hat);
}

TEST(TscoreCv, PicksInformativeCount) {
  const auto data = gaussian_data(30, 30, 10, 7, 3.0);
  CvConfig c;
  c.p0_grid = {1, 2, 3, 4};
  const Index p0 = cross_validate_tscore_p0(data, c);
  EXPECT_GE(p0, 1);
  EXPECT_LE(p0, 4);
}

TEST(Loocv, MajorityRuleOnSixtyForty) {
  const auto data = gaussian_data(6, 4, 2, 8);
  const Recipe majority = [](const LabeledDataset& train, Index) {
    const int label = train.n1() >= train.n2() ? 1 : 2;
    return TrainedClassifier{[label](const Vec&) { return label; }, 0};
  };
  // Holding out a class-1 sample leaves 5 vs 4; holding out class 2 leaves 6 vs 3.
  const auto r = loocv_evaluate(data, majority);
  EXPECT_DOUBLE_EQ(r.error_rate, 0.4);
  EXPECT_EQ(r.predictions.size(), 10u);
}

TEST(Loocv, MinimalRunFitsThreeTimes) {
  const auto data = gaussian_data(2, 1, 2, 9);
  int fits = 0;
  const Recipe counting = [&fits](const LabeledDataset&, Index) {
    ++fits;
    return TrainedClassifier{[](const Vec&) { return 1; }, 3};
  };
  const auto r = loocv_evaluate(data, counting);
  EXPECT_EQ(fits, 3);
  EXPECT_DOUBLE_EQ(r.mean_features, 3.0);
  EXPECT_DOUBLE_EQ(r.sd_features, 0.0);
  EXPECT_THROW(loocv_evaluate(gaussian_data(1, 1, 2, 9), counting), TooFewSamples);
}

} // namespace
