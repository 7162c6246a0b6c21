/**
 * @brief Two-class Gaussian discriminant rules.
 *
 * Oracle Fisher rule, plug-in LDA (full or restricted), naive Bayes, the
 * two-sample t statistic and the two-stage l1/LDA classifier (TLDA).
 *
 * Conventions shared by every rule:
 *  - labels are 1 and 2; a score exactly equal to the threshold goes to class 2;
 *  - the pooled covariance uses the 1/n divisor (maximum likelihood), not the
 *    1/(n-2) divisor most statistics packages default to.
 */
#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "l1solver.hpp"
#include "linalg.hpp"

namespace sparsa {

/// X ~ N_p(mu_k, sigma), k = 1, 2.
struct GaussianPopulation {
  Vec mu1;
  Vec mu2;
  SymMatrix sigma;

  Index dim() const { return mu1.size(); }
  Vec mu_a() const { return (mu1 + mu2) / 2.0; }
  Vec mu_d() const { return (mu1 - mu2) / 2.0; }
  /// beta0 = 2 sigma^{-1} mu_d.
  Vec beta0() const { return 2.0 * spd_solve(sigma, mu_d()); }

  void validate() const {
    if (mu2.size() != dim() || sigma.dim() != dim()) {
      throw InvalidInput("GaussianPopulation: dimensions differ");
    }
    if (mu1 == mu2) {
      throw InvalidInput("GaussianPopulation: class means coincide");
    }
  }
};

/// n x p features with labels in {1, 2}.
class LabeledDataset {
public:
  LabeledDataset() = default;

  LabeledDataset(Matrix features, std::vector<int> labels)
      : features_(std::move(features)), labels_(std::move(labels)) {
    if (static_cast<Index>(labels_.size()) != features_.rows()) {
      throw InvalidInput("LabeledDataset: label count does not match row count");
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      if (labels_[i] == 1) {
        ++n1_;
      } else if (labels_[i] == 2) {
        ++n2_;
      } else {
        throw InvalidInput("LabeledDataset: label " + std::to_string(labels_[i]) + " at row " +
                           std::to_string(i) + " is not 1 or 2");
      }
    }
  }

  /// Stacks class-1 rows above class-2 rows.
  static LabeledDataset from_classes(const Matrix& class1, const Matrix& class2) {
    Matrix x(class1.rows() + class2.rows(), class1.cols());
    x << class1, class2;
    std::vector<int> labels(static_cast<std::size_t>(class1.rows()), 1);
    labels.resize(static_cast<std::size_t>(x.rows()), 2);
    return {std::move(x), std::move(labels)};
  }

  const Matrix& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  Index n() const { return features_.rows(); }
  Index p() const { return features_.cols(); }
  Index n1() const { return n1_; }
  Index n2() const { return n2_; }
  int label(Index i) const { return labels_[static_cast<std::size_t>(i)]; }
  Vec row(Index i) const { return features_.row(i).transpose(); }

  LabeledDataset rows(const std::vector<Index>& idx) const {
    Matrix x(static_cast<Index>(idx.size()), p());
    std::vector<int> labels(idx.size());
    for (std::size_t a = 0; a < idx.size(); ++a) {
      x.row(static_cast<Index>(a)) = features_.row(idx[a]);
      labels[a] = labels_[static_cast<std::size_t>(idx[a])];
    }
    return {std::move(x), std::move(labels)};
  }

  LabeledDataset columns(const IndexSet& idx) const {
    Matrix x(n(), static_cast<Index>(idx.size()));
    for (std::size_t a = 0; a < idx.size(); ++a) {
      x.col(static_cast<Index>(a)) = features_.col(idx[a]);
    }
    return {std::move(x), labels_};
  }

private:
  Matrix features_;
  std::vector<int> labels_;
  Index n1_ = 0;
  Index n2_ = 0;
};

struct SampleMoments {
  Vec xbar1;
  Vec xbar2;
  SymMatrix pooled_cov; ///< S_n, 1/n divisor
  Vec mu_hat_a;
  Vec mu_hat_d;
  /// F with F'F == pooled_cov; n - 2 rows built from Helmert contrasts.
  Matrix gram_factor;
  Index n = 0;

  Vec difference() const { return xbar1 - xbar2; }
};

namespace detail {

/// Rows C X with C the (m-1) x m Helmert contrast matrix, so that
/// (C X)'(C X) == X' (I - 11'/m) X.
inline Matrix helmert_rows(const Matrix& x) {
  const Index m = x.rows();
  Matrix out(std::max<Index>(m - 1, 0), x.cols());
  Eigen::RowVectorXd running = Eigen::RowVectorXd::Zero(x.cols());
  for (Index j = 1; j < m; ++j) {
    running += x.row(j - 1);
    const double jd = static_cast<double>(j);
    out.row(j - 1) = (running - jd * x.row(j)) / std::sqrt(jd * (jd + 1.0));
  }
  return out;
}

inline Matrix class_rows(const LabeledDataset& data, int label) {
  Matrix x(label == 1 ? data.n1() : data.n2(), data.p());
  Index r = 0;
  for (Index i = 0; i < data.n(); ++i) {
    if (data.label(i) == label) {
      x.row(r++) = data.features().row(i);
    }
  }
  return x;
}

} // namespace detail

/// Class means, pooled covariance (1/n divisor) and their half-sum/difference.
inline SampleMoments moments(const LabeledDataset& data) {
  if (data.n1() < 2 || data.n2() < 2) {
    throw DegenerateClass("moments: each class needs at least two samples (n1=" + std::to_string(data.n1()) +
                          ", n2=" + std::to_string(data.n2()) + ")");
  }
  const Matrix x1 = detail::class_rows(data, 1);
  const Matrix x2 = detail::class_rows(data, 2);
  SampleMoments m;
  m.n = data.n();
  m.xbar1 = x1.colwise().mean().transpose();
  m.xbar2 = x2.colwise().mean().transpose();
  m.mu_hat_a = (m.xbar1 + m.xbar2) / 2.0;
  m.mu_hat_d = (m.xbar1 - m.xbar2) / 2.0;

  Matrix centered(data.n(), data.p());
  centered << x1.rowwise() - m.xbar1.transpose(), x2.rowwise() - m.xbar2.transpose();
  const double nd = static_cast<double>(data.n());
  Matrix s = Matrix::Zero(data.p(), data.p());
  s.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), 1.0 / nd);
  m.pooled_cov = SymMatrix::from_lower(std::move(s));

  m.gram_factor.resize(data.n() - 2, data.p());
  m.gram_factor << detail::helmert_rows(x1), detail::helmert_rows(x2);
  m.gram_factor /= std::sqrt(nd);
  return m;
}

/// Delta_A = (mu_d)_A' (sigma_AA)^{-1} (mu_d)_A; all features when subset is empty.
inline double fisher_delta(const GaussianPopulation& pop, const std::optional<IndexSet>& subset = std::nullopt) {
  pop.validate();
  if (!subset) {
    return quad_form(pop.sigma, pop.mu_d());
  }
  if (subset->empty()) {
    throw InvalidInput("fisher_delta: subset is empty");
  }
  return quad_form(pop.sigma.restrict(*subset), restrict(pop.mu_d(), *subset));
}

/// Optimal misclassification rate 1 - Phi(sqrt(delta)).
inline double theoretical_rate(double delta) {
  if (!(delta >= 0.0)) {
    throw InvalidInput("theoretical_rate: delta must be nonnegative");
  }
  return normal_cdf(-std::sqrt(delta));
}

inline int oracle_classify(const GaussianPopulation& pop, const Vec& x) {
  if (x.size() != pop.dim()) {
    throw InvalidInput("oracle_classify: dimension mismatch");
  }
  const double score = (x - pop.mu_a()).dot(spd_solve(pop.sigma, pop.mu_d()));
  return score > 0.0 ? 1 : 2;
}

/**
 * @brief Linear rule on a feature subset: class 1 iff
 * sum_k weights_k (x_{features_k} - center_k) > threshold.
 */
struct LinearRule {
  IndexSet features;
  Vec weights;
  Vec center;
  double threshold = 0.0;
  Index ambient_dim = 0;

  double score(const Vec& x) const {
    if (x.size() != ambient_dim) {
      throw InvalidInput("LinearRule: point has dimension " + std::to_string(x.size()) + ", expected " +
                         std::to_string(ambient_dim));
    }
    double s = 0.0;
    for (std::size_t k = 0; k < features.size(); ++k) {
      const auto kk = static_cast<Index>(k);
      s += weights(kk) * (x(features[k]) - center(kk));
    }
    return s;
  }

  int classify(const Vec& x) const { return score(x) > threshold ? 1 : 2; }

  /// Ambient-dimension weight vector (zeros off the feature set).
  Vec full_weights() const {
    Vec w = Vec::Zero(ambient_dim);
    for (std::size_t k = 0; k < features.size(); ++k) {
      w(features[k]) = weights(static_cast<Index>(k));
    }
    return w;
  }

  Vec full_center() const {
    Vec c = Vec::Zero(ambient_dim);
    for (std::size_t k = 0; k < features.size(); ++k) {
      c(features[k]) = center(static_cast<Index>(k));
    }
    return c;
  }
};

/**
 * @brief Exact error of a linear rule under the Gaussian model, conditional
 * on the fitted quantities:
 * 1/2 Phi((c - w'(mu1 - m)) / s) + 1/2 Phi((w'(mu2 - m) - c) / s), s = sqrt(w' sigma w).
 */
inline double conditional_rate(const LinearRule& rule, const GaussianPopulation& pop) {
  if (rule.ambient_dim != pop.dim()) {
    throw InvalidInput("conditional_rate: dimension mismatch");
  }
  const Vec w = rule.full_weights();
  const Vec m = rule.full_center();
  const double var = w.dot(pop.sigma.matrix() * w);
  if (!(var > 0.0)) {
    throw ZeroDirection("conditional_rate: direction has zero variance under sigma");
  }
  const double sd = std::sqrt(var);
  const double c = rule.threshold;
  return 0.5 * normal_cdf((c - w.dot(pop.mu1 - m)) / sd) + 0.5 * normal_cdf((w.dot(pop.mu2 - m) - c) / sd);
}

/// Oracle Fisher rule as a LinearRule.
inline LinearRule oracle_rule(const GaussianPopulation& pop) {
  return {all_indices(pop.dim()), spd_solve(pop.sigma, pop.mu_d()), pop.mu_a(), 0.0, pop.dim()};
}

/// Plug-in LDA on a feature set: direction S^{-1} mu_hat_d restricted to it.
struct FittedLda {
  Vec direction;
  Vec mu_hat_a;
  IndexSet feature_set;
  Index ambient_dim = 0;

  LinearRule rule() const { return {feature_set, direction, mu_hat_a, 0.0, ambient_dim}; }
};

inline FittedLda fit_lda_from_moments(const SampleMoments& m, const IndexSet& features, Ridge ridge) {
  FittedLda fit;
  fit.feature_set = features;
  fit.ambient_dim = m.xbar1.size();
  fit.mu_hat_a = restrict(m.mu_hat_a, features);
  fit.direction = spd_solve(m.pooled_cov.restrict(features), restrict(m.mu_hat_d, features), ridge);
  return fit;
}

/// Classic LDA, optionally restricted to `feature_set`.
inline FittedLda fit_lda(const LabeledDataset& data, const std::optional<IndexSet>& feature_set = std::nullopt,
                         Ridge ridge = Ridge::Disallow) {
  const auto m = moments(data);
  return fit_lda_from_moments(m, feature_set ? *feature_set : all_indices(data.p()), ridge);
}

inline int classify_lda(const FittedLda& model, const Vec& x) { return model.rule().classify(x); }

inline double conditional_rate(const FittedLda& model, const GaussianPopulation& pop) {
  return conditional_rate(model.rule(), pop);
}

/// Independence rule: LDA with S_n replaced by diag(S_n).
inline FittedLda fit_naive_bayes(const LabeledDataset& data) {
  const auto m = moments(data);
  const Vec diag = m.pooled_cov.matrix().diagonal();
  for (Index j = 0; j < diag.size(); ++j) {
    if (!(diag(j) > 0.0)) {
      throw ZeroVariance("fit_naive_bayes: feature " + std::to_string(j) + " has zero pooled variance");
    }
  }
  FittedLda fit;
  fit.feature_set = all_indices(data.p());
  fit.ambient_dim = data.p();
  fit.mu_hat_a = m.mu_hat_a;
  fit.direction = m.mu_hat_d.cwiseQuotient(diag);
  return fit;
}

/**
 * @brief Two-sample t statistics with pooled (n - 2) variance.
 *
 * A feature constant within both classes gets +-infinity when the class means
 * differ and 0 when they agree; its index is listed in `zero_variance`.
 */
struct TScores {
  Vec values;
  IndexSet zero_variance;
};

inline TScores t_scores(const LabeledDataset& data) {
  if (data.n1() < 1 || data.n2() < 1 || data.n() < 3) {
    throw DegenerateClass("t_scores: need both classes and n >= 3");
  }
  const Matrix x1 = detail::class_rows(data, 1);
  const Matrix x2 = detail::class_rows(data, 2);
  const Vec m1 = x1.colwise().mean().transpose();
  const Vec m2 = x2.colwise().mean().transpose();
  const Vec ss = (x1.rowwise() - m1.transpose()).colwise().squaredNorm().transpose() +
                 (x2.rowwise() - m2.transpose()).colwise().squaredNorm().transpose();
  const double n1 = static_cast<double>(data.n1());
  const double n2 = static_cast<double>(data.n2());
  const double scale = std::sqrt(1.0 / n1 + 1.0 / n2);
  TScores out;
  out.values.resize(data.p());
  for (Index j = 0; j < data.p(); ++j) {
    const double diff = m1(j) - m2(j);
    const double var = ss(j) / (static_cast<double>(data.n()) - 2.0);
    // Spread below rounding level of the values counts as constant.
    const double level = std::max({std::abs(m1(j)), std::abs(m2(j)), 1e-300});
    if (var <= 1e-28 * level * level) {
      out.zero_variance.push_back(j);
      out.values(j) = diff == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), diff);
    } else {
      out.values(j) = diff / (std::sqrt(var) * scale);
    }
  }
  return out;
}

/// Indices of the k largest |v_j|; ties go to the lower index. Returned sorted.
inline IndexSet top_by_magnitude(const Vec& v, Index k) {
  if (k < 0 || k > v.size()) {
    throw InvalidInput("top_by_magnitude: k out of range");
  }
  IndexSet order = all_indices(v.size());
  std::stable_sort(order.begin(), order.end(),
                   [&v](Index a, Index b) { return std::abs(v(a)) > std::abs(v(b)); });
  order.resize(static_cast<std::size_t>(k));
  std::sort(order.begin(), order.end());
  return order;
}

/// Fitted two-stage classifier.
struct TldaModel {
  IndexSet selected;   ///< A*, strictly increasing
  Vec beta_star;       ///< (S_AA)^{-1} (xbar1 - xbar2)_A
  Vec mu_hat_a_sel;
  double lambda_used = 0.0;
  Index p0_used = 0;
  double log_prior_offset = 0.0;
  /// beta_hat was identically zero; selection fell back to |t| ranking.
  bool degenerate_selection = false;
  Index ambient_dim = 0;
  Vec beta_hat; ///< l1 solution over all features
  SolveStatus solver_status = SolveStatus::Optimal;

  LinearRule rule() const { return {selected, beta_star, mu_hat_a_sel, log_prior_offset, ambient_dim}; }
};

struct TldaOptions {
  double log_prior_offset = 0.0;
  Ridge ridge = Ridge::Allow;
  SolverOptions solver{};
};

/// log(pi2 / pi1) for a class-1 prior pi1.
inline double log_prior_offset(double pi1) {
  if (!(pi1 > 0.0 && pi1 < 1.0)) {
    throw InvalidInput("log_prior_offset: prior must lie in (0, 1)");
  }
  return std::log((1.0 - pi1) / pi1);
}

namespace detail {

/// Entries of an interior-point solution below this fraction of |beta|_inf
/// are numerically zero and rank as exact ties.
inline constexpr double kSelectionZero = 1e-7;

inline Vec clean_solution(const Vec& beta) {
  const double cut = kSelectionZero * std::max(beta.size() ? beta.lpNorm<Eigen::Infinity>() : 0.0, 1e-300);
  return beta.unaryExpr([cut](double b) { return std::abs(b) <= cut ? 0.0 : b; });
}

/// Steps 4-5 of the two-stage rule given an l1 solution.
inline TldaModel finish_tlda(const LabeledDataset& data, const SampleMoments& m, const Vec& beta_hat, Index p0,
                             double lambda, const TldaOptions& options) {
  TldaModel model;
  model.ambient_dim = data.p();
  model.lambda_used = lambda;
  model.p0_used = p0;
  model.log_prior_offset = options.log_prior_offset;
  model.beta_hat = clean_solution(beta_hat);
  if (model.beta_hat.isZero(0.0)) {
    model.degenerate_selection = true;
    model.selected = top_by_magnitude(t_scores(data).values, p0);
  } else {
    model.selected = top_by_magnitude(model.beta_hat, p0);
  }
  model.mu_hat_a_sel = restrict(m.mu_hat_a, model.selected);
  model.beta_star =
      spd_solve(m.pooled_cov.restrict(model.selected), restrict(m.difference(), model.selected), options.ridge);
  return model;
}

inline void check_p0(Index p0, Index p) {
  if (p0 < 1 || p0 > p) {
    throw InvalidInput("fit_tlda: p0 must lie in [1, p]");
  }
}

} // namespace detail

inline L1Problem l1_problem(const SampleMoments& m, double lambda) {
  return {m.pooled_cov, m.difference(), lambda, m.gram_factor};
}

/// Two-stage LDA: l1 selection at `lambda`, top-p0 features, LDA on them.
inline TldaModel fit_tlda(const LabeledDataset& data, double lambda, Index p0, const TldaOptions& options = {}) {
  detail::check_p0(p0, data.p());
  const auto m = moments(data);
  const auto sol = solve(l1_problem(m, lambda), options.solver);
  if (sol.status == SolveStatus::Infeasible) {
    throw SolverFailure("fit_tlda: l1 program infeasible at lambda = " + std::to_string(lambda));
  }
  auto model = detail::finish_tlda(data, m, sol.beta, p0, lambda, options);
  model.solver_status = sol.status;
  return model;
}

inline int classify_tlda(const TldaModel& model, const Vec& x) { return model.rule().classify(x); }

inline double conditional_rate(const TldaModel& model, const GaussianPopulation& pop) {
  return conditional_rate(model.rule(), pop);
}

/// Fraction of rows of `data` the rule misclassifies.
template <class Rule>
double empirical_error(const Rule& rule, const LabeledDataset& data) {
  Index wrong = 0;
  for (Index i = 0; i < data.n(); ++i) {
    wrong += rule.classify(data.row(i)) != data.label(i);
  }
  return data.n() ? static_cast<double>(wrong) / static_cast<double>(data.n()) : 0.0;
}

} // namespace sparsa
