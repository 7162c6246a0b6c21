/**
 * @brief Cross-validated choice of (lambda, p0) for the two-stage rule, and
 * leave-one-out evaluation of arbitrary training recipes.
 *
 * The default lambda grid is relative: 20 log-spaced multiples of
 * |xbar1 - xbar2|_inf from 1 down to 1/50, re-scaled on every training set.
 * The selected multiple is applied to the full data and then shrunk by
 * sqrt((k-1)/k) since each fold trains on (k-1)/k of the samples.
 */
#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <cmath>
#include <functional>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "classifiers.hpp"

namespace sparsa {

/// 20 log-spaced multiples from 1 down to 1/50.
inline std::vector<double> default_lambda_ratios(int points = 20, double span = 50.0) {
  std::vector<double> r(static_cast<std::size_t>(points));
  for (int k = 0; k < points; ++k) {
    r[static_cast<std::size_t>(k)] = points == 1 ? 1.0 : std::pow(1.0 / span, static_cast<double>(k) / (points - 1));
  }
  return r;
}

/// {1, ..., min(max(3 floor(sqrt(n / log p)), 10), 30, p)}.
inline std::vector<Index> default_p0_grid(Index n, Index p) {
  const double logp = std::log(static_cast<double>(std::max<Index>(p, 2)));
  const auto theory = static_cast<Index>(std::floor(std::sqrt(static_cast<double>(n) / logp)));
  const Index top = std::min({std::max<Index>(3 * theory, 10), Index{30}, p});
  std::vector<Index> grid(static_cast<std::size_t>(std::max<Index>(top, 1)));
  std::iota(grid.begin(), grid.end(), Index{1});
  return grid;
}

struct CvConfig {
  Index folds = 5;
  /// Descending multiples of |xbar1 - xbar2|_inf on each training set.
  std::vector<double> lambda_ratios = default_lambda_ratios();
  /// When set, an absolute descending lambda grid used verbatim in every fold.
  std::optional<std::vector<double>> lambda_grid;
  /// Ascending p0 values; empty means default_p0_grid(n, p).
  std::vector<Index> p0_grid;
  RngSeed seed{0};
  /// Lambda shrink factor; defaults to sqrt((folds - 1) / folds).
  std::optional<double> adjust;

  double adjust_factor() const {
    return adjust ? *adjust : std::sqrt(static_cast<double>(folds - 1) / static_cast<double>(folds));
  }

  bool relative() const { return !lambda_grid.has_value(); }
  const std::vector<double>& lambda_values() const { return lambda_grid ? *lambda_grid : lambda_ratios; }

  void validate() const {
    if (folds < 2) {
      throw InvalidInput("CvConfig: folds must be at least 2");
    }
    const auto& grid = lambda_values();
    if (grid.empty()) {
      throw InvalidInput("CvConfig: lambda grid is empty");
    }
    for (std::size_t k = 0; k < grid.size(); ++k) {
      if (!(grid[k] > 0.0) || (k > 0 && !(grid[k] < grid[k - 1]))) {
        throw InvalidInput("CvConfig: lambda grid must be positive and strictly descending");
      }
    }
    for (std::size_t k = 0; k < p0_grid.size(); ++k) {
      if (p0_grid[k] < 1 || (k > 0 && p0_grid[k] <= p0_grid[k - 1])) {
        throw InvalidInput("CvConfig: p0 grid must be positive and strictly ascending");
      }
    }
    const double a = adjust_factor();
    if (!(a > 0.0 && a <= 1.0)) {
      throw InvalidInput("CvConfig: adjust factor must lie in (0, 1]");
    }
  }
};

struct CvCell {
  double lambda = 0.0; ///< grid value (a ratio when the grid is relative)
  Index p0 = 0;
  Index errors = 0;    ///< misclassifications summed over folds
  double error_rate = 0.0;
  bool failed = false;
  bool degenerate = false; ///< some fold had beta_hat == 0 and used t ranking
};

struct CvResult {
  double lambda_hat = 0.0; ///< absolute lambda on the full data before shrinking
  Index p0_hat = 0;
  double lambda_adjusted = 0.0;
  std::vector<CvCell> table; ///< row-major: lambda index outer, p0 inner
  std::vector<int> fold_assignments;
  bool relative_grid = true;
  double lambda_scale = 1.0; ///< |xbar1 - xbar2|_inf on the full data when relative
};

/**
 * @brief Per-class round-robin fold assignment after a seeded shuffle.
 *
 * Class 1 starts at fold 0; class 2 continues where class 1 stopped so total
 * fold sizes stay balanced. Per-class fold sizes differ by at most one.
 */
inline std::vector<int> stratified_folds(const LabeledDataset& data, Index k, RngSeed seed) {
  if (k < 2) {
    throw InvalidInput("stratified_folds: need at least two folds");
  }
  if (data.n1() < k || data.n2() < k) {
    throw TooFewSamples("stratified_folds: each class needs at least " + std::to_string(k) + " samples (n1=" +
                        std::to_string(data.n1()) + ", n2=" + std::to_string(data.n2()) + ")");
  }
  Rng rng(seed);
  std::vector<int> folds(static_cast<std::size_t>(data.n()), -1);
  Index start = 0;
  for (int label : {1, 2}) {
    std::vector<Index> members;
    for (Index i = 0; i < data.n(); ++i) {
      if (data.label(i) == label) {
        members.push_back(i);
      }
    }
    for (std::size_t i = members.size(); i > 1; --i) {
      std::swap(members[i - 1], members[rng.below(i)]);
    }
    for (std::size_t pos = 0; pos < members.size(); ++pos) {
      folds[static_cast<std::size_t>(members[pos])] = static_cast<int>((start + static_cast<Index>(pos)) % k);
    }
    start = (start + static_cast<Index>(members.size())) % k;
  }
  return folds;
}

namespace detail {

struct FoldSplit {
  LabeledDataset train;
  LabeledDataset test;
};

inline FoldSplit split_fold(const LabeledDataset& data, const std::vector<int>& folds, int fold) {
  std::vector<Index> train, test;
  for (Index i = 0; i < data.n(); ++i) {
    (folds[static_cast<std::size_t>(i)] == fold ? test : train).push_back(i);
  }
  return {data.rows(train), data.rows(test)};
}

/// Runs body(i) for i in [0, count) on up to `threads` workers.
template <class Body>
void parallel_for(Index count, Index threads, Body&& body) {
  threads = std::clamp<Index>(threads, 1, std::max<Index>(count, 1));
  if (threads == 1) {
    for (Index i = 0; i < count; ++i) body(i);
    return;
  }
  std::atomic<Index> next{0};
  std::vector<std::thread> pool;
  std::exception_ptr failure;
  std::mutex failure_mutex;
  for (Index t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (Index i = next++; i < count; i = next++) {
        try {
          body(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

/// Lowest error; ties prefer smaller p0, then larger lambda.
inline const CvCell* best_cell(const std::vector<CvCell>& table) {
  const CvCell* best = nullptr;
  for (const auto& c : table) {
    if (c.failed) {
      continue;
    }
    if (!best || c.errors < best->errors || (c.errors == best->errors && c.p0 < best->p0) ||
        (c.errors == best->errors && c.p0 == best->p0 && c.lambda > best->lambda)) {
      best = &c;
    }
  }
  return best;
}

} // namespace detail

/**
 * @brief k-fold CV over the (lambda, p0) grid for the two-stage rule.
 *
 * Each fold solves the l1 path once on its training part and scores every p0
 * on the held-out part. Cells that fail in any fold are excluded.
 */
inline CvResult cross_validate(const LabeledDataset& data, const CvConfig& config, const TldaOptions& options = {}) {
  config.validate();
  const auto p0_grid = config.p0_grid.empty() ? default_p0_grid(data.n(), data.p()) : config.p0_grid;
  if (p0_grid.back() > data.p()) {
    throw InvalidInput("cross_validate: p0 grid exceeds the feature count");
  }
  const auto& grid = config.lambda_values();
  const std::size_t nl = grid.size();
  const std::size_t np = p0_grid.size();

  CvResult result;
  result.relative_grid = config.relative();
  result.fold_assignments = stratified_folds(data, config.folds, config.seed);
  result.table.resize(nl * np);
  for (std::size_t a = 0; a < nl; ++a) {
    for (std::size_t b = 0; b < np; ++b) {
      result.table[a * np + b].lambda = grid[a];
      result.table[a * np + b].p0 = p0_grid[b];
    }
  }

  for (int fold = 0; fold < static_cast<int>(config.folds); ++fold) {
    const auto split = detail::split_fold(data, result.fold_assignments, fold);
    std::optional<SampleMoments> m;
    try {
      m = moments(split.train);
    } catch (const Error&) {
      for (auto& c : result.table) c.failed = true;
      continue;
    }
    const double scale = config.relative() ? m->difference().lpNorm<Eigen::Infinity>() : 1.0;
    std::vector<double> lambdas(nl);
    for (std::size_t a = 0; a < nl; ++a) {
      lambdas[a] = grid[a] * scale;
    }
    const auto path = solve_path(m->pooled_cov, m->difference(), lambdas, options.solver, m->gram_factor);
    for (std::size_t a = 0; a < nl; ++a) {
      for (std::size_t b = 0; b < np; ++b) {
        CvCell& cell = result.table[a * np + b];
        if (cell.failed) {
          continue;
        }
        if (path[a].status == SolveStatus::Infeasible) {
          cell.failed = true;
          continue;
        }
        try {
          const auto model = detail::finish_tlda(split.train, *m, path[a].beta, p0_grid[b], lambdas[a], options);
          cell.degenerate = cell.degenerate || model.degenerate_selection;
          for (Index i = 0; i < split.test.n(); ++i) {
            cell.errors += classify_tlda(model, split.test.row(i)) != split.test.label(i);
          }
        } catch (const Error&) {
          cell.failed = true;
        }
      }
    }
  }

  for (auto& c : result.table) {
    c.error_rate = static_cast<double>(c.errors) / static_cast<double>(data.n());
  }
  const CvCell* best = detail::best_cell(result.table);
  if (!best) {
    throw CvFailed("cross_validate: every grid cell failed");
  }
  result.p0_hat = best->p0;
  result.lambda_scale = config.relative() ? moments(data).difference().lpNorm<Eigen::Infinity>() : 1.0;
  result.lambda_hat = best->lambda * result.lambda_scale;
  result.lambda_adjusted = config.adjust_factor() * result.lambda_hat;
  return result;
}

/**
 * @brief fit_tlda, raising lambda by `growth` while the l1 program is infeasible.
 *
 * A singular S_n can leave small lambda infeasible. lambda = |xbar1 - xbar2|_inf
 * is always feasible (beta = 0), so the search is capped there.
 */
inline TldaModel fit_tlda_feasible(const LabeledDataset& data, double lambda, Index p0, const TldaOptions& options,
                                   double growth = 1.25) {
  const double cap = moments(data).difference().lpNorm<Eigen::Infinity>();
  for (;;) {
    try {
      return fit_tlda(data, lambda, p0, options);
    } catch (const SolverFailure&) {
      if (lambda >= cap) {
        throw;
      }
      lambda = std::min(lambda * growth, cap);
    }
  }
}

struct TunedTlda {
  CvResult cv;
  TldaModel model;
};

/// Cross-validates, then fits on all of `data` at the adjusted lambda.
inline TunedTlda tune_and_fit(const LabeledDataset& data, const CvConfig& config, const TldaOptions& options = {}) {
  TunedTlda out;
  out.cv = cross_validate(data, config, options);
  const double a = config.adjust_factor();
  out.model = fit_tlda_feasible(data, out.cv.lambda_adjusted, out.cv.p0_hat, options, a < 1.0 ? 1.0 / a : 1.25);
  return out;
}

/// k-fold CV of p0 for LDA on the top-p0 features by |t|.
inline Index cross_validate_tscore_p0(const LabeledDataset& data, const CvConfig& config) {
  config.validate();
  const auto p0_grid = config.p0_grid.empty() ? default_p0_grid(data.n(), data.p()) : config.p0_grid;
  const auto folds = stratified_folds(data, config.folds, config.seed);
  std::vector<Index> errors(p0_grid.size(), 0);
  std::vector<bool> failed(p0_grid.size(), false);
  for (int fold = 0; fold < static_cast<int>(config.folds); ++fold) {
    const auto split = detail::split_fold(data, folds, fold);
    try {
      const auto m = moments(split.train);
      const Vec t = t_scores(split.train).values;
      for (std::size_t b = 0; b < p0_grid.size(); ++b) {
        try {
          const auto fit = fit_lda_from_moments(m, top_by_magnitude(t, p0_grid[b]), Ridge::Allow);
          for (Index i = 0; i < split.test.n(); ++i) {
            errors[b] += classify_lda(fit, split.test.row(i)) != split.test.label(i);
          }
        } catch (const Error&) {
          failed[b] = true;
        }
      }
    } catch (const Error&) {
      std::fill(failed.begin(), failed.end(), true);
    }
  }
  std::optional<std::size_t> best;
  for (std::size_t b = 0; b < p0_grid.size(); ++b) {
    if (!failed[b] && (!best || errors[b] < errors[*best])) {
      best = b;
    }
  }
  if (!best) {
    throw CvFailed("cross_validate_tscore_p0: every grid cell failed");
  }
  return p0_grid[*best];
}

/// A classifier trained by a recipe, with the number of features it uses.
struct TrainedClassifier {
  std::function<int(const Vec&)> classify;
  Index feature_count = 0;
};

using Recipe = std::function<TrainedClassifier(const LabeledDataset& train, Index split)>;

struct LoocvResult {
  Index errors = 0;
  double error_rate = 0.0;
  double mean_features = 0.0;
  double sd_features = 0.0;
  std::vector<int> predictions;
  std::vector<Index> feature_counts;
};

/// Holds out each sample once, retrains `recipe` on the rest, predicts it.
/// Splits may run on up to `threads` workers; results do not depend on it.
inline LoocvResult loocv_evaluate(const LabeledDataset& data, const Recipe& recipe, Index threads = 1) {
  if (data.n() < 3) {
    throw TooFewSamples("loocv_evaluate: need at least three samples");
  }
  LoocvResult out;
  out.predictions.resize(static_cast<std::size_t>(data.n()));
  out.feature_counts.resize(static_cast<std::size_t>(data.n()));
  detail::parallel_for(data.n(), threads, [&](Index i) {
    std::vector<Index> rest;
    for (Index j = 0; j < data.n(); ++j) {
      if (j != i) {
        rest.push_back(j);
      }
    }
    const auto trained = recipe(data.rows(rest), i);
    out.predictions[static_cast<std::size_t>(i)] = trained.classify(data.row(i));
    out.feature_counts[static_cast<std::size_t>(i)] = trained.feature_count;
  });
  for (Index i = 0; i < data.n(); ++i) {
    out.errors += out.predictions[static_cast<std::size_t>(i)] != data.label(i);
  }
  const double n = static_cast<double>(data.n());
  out.error_rate = static_cast<double>(out.errors) / n;
  double sum = 0.0, sq = 0.0;
  for (Index c : out.feature_counts) {
    sum += static_cast<double>(c);
  }
  out.mean_features = sum / n;
  for (Index c : out.feature_counts) {
    sq += (static_cast<double>(c) - out.mean_features) * (static_cast<double>(c) - out.mean_features);
  }
  out.sd_features = std::sqrt(sq / (n - 1.0));
  return out;
}

} // namespace sparsa
