/**
 * @brief Gaussian simulation models, replicated experiments, expression-data
 * preprocessing and the end-to-end two-stage pipeline used on real data.
 */
#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tuning.hpp"

namespace sparsa {

/// Models 1-4 of the simulation study.
struct ModelSpec {
  int model_id = 1;
  Index p = 100;
  Index n1 = 100;
  Index n2 = 100;

  void validate() const {
    if (model_id < 1 || model_id > 4) {
      throw InvalidSpec("model must be one of {1, 2, 3, 4}, got " + std::to_string(model_id));
    }
    if ((model_id == 1 || model_id == 2) && (p < 10 || p % 10 != 0)) {
      throw InvalidSpec("models 1 and 2 need p >= 10 and divisible by 10, got " + std::to_string(p));
    }
    if ((model_id == 3 || model_id == 4) && p < 6) {
      throw InvalidSpec("models 3 and 4 need p >= 6, got " + std::to_string(p));
    }
    if (n1 < 2 || n2 < 2) {
      throw InvalidSpec("each class needs at least two samples");
    }
  }
};

inline SymMatrix ar1_covariance(Index p, double rho) {
  return SymMatrix::generate(p, [rho](Index i, Index j) { return std::pow(rho, static_cast<double>(i - j)); });
}

inline SymMatrix equicorrelation_covariance(Index p, double rho) {
  return SymMatrix::generate(p, [rho](Index i, Index j) { return i == j ? 1.0 : rho; });
}

/// Five alternating signals (k + 1)/4 at 0-based positions ceil((2k - 1) p / 10) - 1.
inline Vec sparse_beta0(Index p) {
  Vec b = Vec::Zero(p);
  for (Index k = 1; k <= 5; ++k) {
    const Index pos = ((2 * k - 1) * p + 9) / 10 - 1;
    b(pos) = (k % 2 ? 1.0 : -1.0) * static_cast<double>(k + 1) / 4.0;
  }
  return b;
}

inline GaussianPopulation build_population(const ModelSpec& spec) {
  spec.validate();
  const Index p = spec.p;
  GaussianPopulation pop;
  pop.mu2 = Vec::Zero(p);
  switch (spec.model_id) {
  case 1:
    pop.sigma = ar1_covariance(p, 0.8);
    pop.mu1 = pop.sigma.matrix() * sparse_beta0(p);
    break;
  case 2:
    pop.sigma = equicorrelation_covariance(p, 0.5);
    pop.mu1 = pop.sigma.matrix() * sparse_beta0(p);
    break;
  case 3:
    pop.sigma = ar1_covariance(p, 0.8);
    pop.mu1 = Vec::Zero(p);
    pop.mu1.head(5).setOnes();
    break;
  default: {
    pop.sigma = equicorrelation_covariance(p, 0.5);
    Vec b(p);
    b.head(5) << 3.0, 1.7, -2.2, -2.1, 2.55;
    b.tail(p - 5).setConstant(1.0 / static_cast<double>(p - 5));
    pop.mu1 = pop.sigma.matrix() * (0.551 * b);
  }
  }
  return pop;
}

/// Sorted support of beta0 = 2 sigma^{-1} mu_d, entries above 1e-9 |beta0|_inf.
inline IndexSet support_of(const Vec& beta0) {
  const double cut = 1e-9 * beta0.lpNorm<Eigen::Infinity>();
  IndexSet s;
  for (Index j = 0; j < beta0.size(); ++j) {
    if (std::abs(beta0(j)) > cut) {
      s.push_back(j);
    }
  }
  return s;
}

enum class Method { Tlda, NaiveBayes, LdaFull, Oracle, TscoreRule };

inline std::string to_string(Method m) {
  switch (m) {
  case Method::Tlda: return "tlda";
  case Method::NaiveBayes: return "nb";
  case Method::LdaFull: return "lda_full";
  case Method::Oracle: return "oracle";
  case Method::TscoreRule: return "tscore_rule";
  }
  return "?";
}

inline Method parse_method(const std::string& name) {
  for (Method m : {Method::Tlda, Method::NaiveBayes, Method::LdaFull, Method::Oracle, Method::TscoreRule}) {
    if (to_string(m) == name) {
      return m;
    }
  }
  throw InvalidInput("unknown method '" + name + "' (valid: tlda, nb, lda_full, oracle, tscore_rule)");
}

/// Closed-form conditional rate, or the empirical rate on `holdout_size` fresh points.
struct Evaluation {
  enum class Mode { Analytic, Holdout } mode = Mode::Analytic;
  Index holdout_size = 10000;
};

struct ExperimentOptions {
  std::vector<Method> methods{Method::Tlda, Method::NaiveBayes, Method::Oracle};
  Index reps = 100;
  RngSeed seed{0};
  Evaluation evaluation{};
  CvConfig cv{}; ///< its seed is replaced per replication
  TldaOptions tlda{};
  Index threads = 1;
  /// Largest failure fraction per method before the run counts as failed.
  double max_failure_fraction = 0.05;
};

struct MethodSummary {
  Method method = Method::Tlda;
  double mean_error_pct = 0.0;
  double sd_error_pct = 0.0;
  double mean_features = 0.0;
  double sd_features = 0.0;
  Index successes = 0;
  Index failures = 0;
  bool failed = false;
  std::vector<double> errors_pct; ///< per replication, NaN when that fit failed
};

/// Per-feature averages over replications of beta_hat and xbar1 - xbar2.
struct FeatureTrace {
  Vec tlda_signal;
  Vec t_signal;
  Vec tlda_magnitude; ///< average |beta_hat_j|
  Vec t_magnitude;    ///< average |xbar1_j - xbar2_j|

  std::string to_csv() const {
    std::ostringstream out;
    out << std::setprecision(10) << "index,tlda_signal,t_signal\n";
    for (Index j = 0; j < tlda_signal.size(); ++j) {
      out << j + 1 << ',' << tlda_signal(j) << ',' << t_signal(j) << '\n';
    }
    return out.str();
  }
};

struct ExperimentReport {
  ModelSpec spec;
  Evaluation evaluation;
  Index reps = 0;
  std::uint64_t base_seed = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<MethodSummary> methods;
  FeatureTrace trace;
  double theoretical_rate_pct = 0.0;
  /// Replications where the TLDA selection equals support(beta0) exactly.
  Index exact_recoveries = 0;
  double runtime_seconds = 0.0;

  bool failed() const {
    return std::any_of(methods.begin(), methods.end(), [](const MethodSummary& m) { return m.failed; });
  }

  const MethodSummary* find(Method m) const {
    for (const auto& s : methods) {
      if (s.method == m) {
        return &s;
      }
    }
    return nullptr;
  }

  /// Aligned table with percentages to two decimals and sd in parentheses.
  std::string to_text() const {
    std::ostringstream out;
    out << "Model " << spec.model_id << ", p=" << spec.p << ", n1=" << spec.n1 << ", n2=" << spec.n2
        << ", reps=" << reps << ", eval="
        << (evaluation.mode == Evaluation::Mode::Analytic ? std::string("analytic")
                                                          : "holdout(" + std::to_string(evaluation.holdout_size) + ")")
        << '\n';
    out << std::left << std::setw(13) << "method" << std::right << std::setw(18) << "error % (sd)" << std::setw(18)
        << "features (sd)" << std::setw(10) << "failures" << '\n';
    for (const auto& m : methods) {
      std::ostringstream err, feat;
      err << std::fixed << std::setprecision(2) << m.mean_error_pct << " (" << m.sd_error_pct << ")";
      feat << std::fixed << std::setprecision(2) << m.mean_features << " (" << m.sd_features << ")";
      out << std::left << std::setw(13) << to_string(m.method) << std::right << std::setw(18) << err.str()
          << std::setw(18) << feat.str() << std::setw(10) << m.failures << '\n';
    }
    return out.str();
  }
};

namespace detail {

struct RepOutcome {
  std::vector<std::optional<double>> error; // fraction, per method
  std::vector<double> features;
  Vec beta_hat;
  Vec difference;
  bool recovered = false;
  bool has_tlda = false;
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

} // namespace detail

/**
 * @brief Replicated train/tune/evaluate runs on one simulation model.
 *
 * Replication i draws everything from derive_seed(seed, i): the training
 * sample from child stream 0, CV folds from 1, the holdout sample from 2.
 */
inline ExperimentReport run_experiment(const ModelSpec& spec, const ExperimentOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  if (options.reps < 1) {
    throw InvalidInput("run_experiment: reps must be at least 1");
  }
  if (options.methods.empty()) {
    throw InvalidInput("run_experiment: no methods requested");
  }
  const auto pop = build_population(spec);
  const Matrix chol = cholesky(pop.sigma);
  const IndexSet support = support_of(pop.beta0());
  const LinearRule oracle = oracle_rule(pop);
  const std::size_t nm = options.methods.size();

  std::vector<detail::RepOutcome> outcomes(static_cast<std::size_t>(options.reps));
  detail::parallel_for(options.reps, options.threads, [&](Index rep) {
    const RngSeed rep_seed = derive_seed(options.seed, static_cast<std::uint64_t>(rep));
    detail::RepOutcome& out = outcomes[static_cast<std::size_t>(rep)];
    out.error.assign(nm, std::nullopt);
    out.features.assign(nm, 0.0);

    Rng train_rng(derive_seed(rep_seed, 0));
    const auto train = LabeledDataset::from_classes(sample_mvn(pop.mu1, chol, spec.n1, train_rng),
                                                    sample_mvn(pop.mu2, chol, spec.n2, train_rng));
    std::optional<LabeledDataset> test;
    if (options.evaluation.mode == Evaluation::Mode::Holdout) {
      Rng test_rng(derive_seed(rep_seed, 2));
      const Index half = options.evaluation.holdout_size / 2;
      test = LabeledDataset::from_classes(sample_mvn(pop.mu1, chol, half, test_rng),
                                          sample_mvn(pop.mu2, chol, options.evaluation.holdout_size - half, test_rng));
    }
    auto evaluate = [&](const LinearRule& rule) {
      return test ? empirical_error(rule, *test) : conditional_rate(rule, pop);
    };
    CvConfig cv = options.cv;
    cv.seed = derive_seed(rep_seed, 1);

    for (std::size_t k = 0; k < nm; ++k) {
      try {
        switch (options.methods[k]) {
        case Method::Tlda: {
          const auto tuned = tune_and_fit(train, cv, options.tlda);
          out.error[k] = evaluate(tuned.model.rule());
          out.features[k] = static_cast<double>(tuned.model.selected.size());
          out.beta_hat = tuned.model.beta_hat;
          out.recovered = tuned.model.selected == support;
          out.has_tlda = true;
          break;
        }
        case Method::NaiveBayes: {
          const auto fit = fit_naive_bayes(train);
          out.error[k] = evaluate(fit.rule());
          out.features[k] = static_cast<double>(spec.p);
          break;
        }
        case Method::LdaFull: {
          const auto fit = fit_lda(train);
          out.error[k] = evaluate(fit.rule());
          out.features[k] = static_cast<double>(spec.p);
          break;
        }
        case Method::Oracle:
          out.error[k] = evaluate(oracle);
          out.features[k] = static_cast<double>(support.size());
          break;
        case Method::TscoreRule: {
          const Index p0 = cross_validate_tscore_p0(train, cv);
          const auto m = moments(train);
          const auto fit = fit_lda_from_moments(m, top_by_magnitude(t_scores(train).values, p0), Ridge::Allow);
          out.error[k] = evaluate(fit.rule());
          out.features[k] = static_cast<double>(p0);
          break;
        }
        }
      } catch (const Error&) {
        out.error[k] = std::nullopt;
      }
    }
    out.difference = train.n() ? moments(train).difference() : Vec();
  });

  ExperimentReport report;
  report.spec = spec;
  report.evaluation = options.evaluation;
  report.reps = options.reps;
  report.base_seed = options.seed.value;
  report.theoretical_rate_pct = 100.0 * theoretical_rate(fisher_delta(pop));
  for (Index rep = 0; rep < options.reps; ++rep) {
    report.seeds.push_back(derive_seed(options.seed, static_cast<std::uint64_t>(rep)).value);
  }
  for (std::size_t k = 0; k < nm; ++k) {
    MethodSummary s;
    s.method = options.methods[k];
    std::vector<double> errs, feats;
    for (const auto& o : outcomes) {
      if (o.error[k]) {
        errs.push_back(100.0 * *o.error[k]);
        feats.push_back(o.features[k]);
        s.errors_pct.push_back(100.0 * *o.error[k]);
      } else {
        ++s.failures;
        s.errors_pct.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    s.successes = static_cast<Index>(errs.size());
    s.mean_error_pct = detail::mean_of(errs);
    s.sd_error_pct = detail::sd_of(errs);
    s.mean_features = detail::mean_of(feats);
    s.sd_features = detail::sd_of(feats);
    s.failed = static_cast<double>(s.failures) > options.max_failure_fraction * static_cast<double>(options.reps);
    report.methods.push_back(std::move(s));
  }

  FeatureTrace& tr = report.trace;
  tr.tlda_signal = tr.tlda_magnitude = tr.t_signal = tr.t_magnitude = Vec::Zero(spec.p);
  Index with_tlda = 0;
  for (const auto& o : outcomes) {
    tr.t_signal += o.difference;
    tr.t_magnitude += o.difference.cwiseAbs();
    if (o.has_tlda) {
      ++with_tlda;
      tr.tlda_signal += o.beta_hat;
      tr.tlda_magnitude += o.beta_hat.cwiseAbs();
      report.exact_recoveries += o.recovered;
    }
  }
  tr.t_signal /= static_cast<double>(options.reps);
  tr.t_magnitude /= static_cast<double>(options.reps);
  if (with_tlda) {
    tr.tlda_signal /= static_cast<double>(with_tlda);
    tr.tlda_magnitude /= static_cast<double>(with_tlda);
  }
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

/**
 * @brief Per-sample centering plus per-feature scaling to unit pooled variance.
 *
 * Features with zero pooled variance are dropped, first on the raw values and
 * again after centering. Row means are taken over `informative`, the features
 * surviving the first pass; `kept` maps output columns to input columns.
 */
struct ScalingRecord {
  enum class Order { CenterThenScale, ScaleThenCenter } order = Order::CenterThenScale;
  Index input_dim = 0;
  IndexSet informative;
  IndexSet kept;
  IndexSet dropped;
  Vec scale; ///< multiplier per kept feature

  Vec apply(const Vec& x) const {
    if (x.size() != input_dim) {
      throw InvalidInput("ScalingRecord: point has dimension " + std::to_string(x.size()) + ", expected " +
                         std::to_string(input_dim));
    }
    if (order == Order::CenterThenScale) {
      const double mean = restrict(x, informative).mean();
      return (restrict(x, kept).array() - mean).matrix().cwiseProduct(scale);
    }
    Vec scaled = restrict(x, kept).cwiseProduct(scale);
    return scaled.array() - scaled.mean();
  }

  LabeledDataset apply(const LabeledDataset& data) const {
    Matrix out(data.n(), static_cast<Index>(kept.size()));
    for (Index i = 0; i < data.n(); ++i) {
      out.row(i) = apply(data.row(i)).transpose();
    }
    return {std::move(out), data.labels()};
  }
};

struct Standardized {
  LabeledDataset data;
  ScalingRecord record;
};

namespace detail {

inline Vec pooled_variances(const LabeledDataset& data) {
  const Matrix x1 = class_rows(data, 1);
  const Matrix x2 = class_rows(data, 2);
  const Vec ss = (x1.rowwise() - x1.colwise().mean()).colwise().squaredNorm().transpose() +
                 (x2.rowwise() - x2.colwise().mean()).colwise().squaredNorm().transpose();
  return ss / static_cast<double>(data.n());
}

/// Splits `columns` by whether their pooled variance clears rounding level.
inline std::pair<IndexSet, IndexSet> split_by_variance(const Matrix& x, const std::vector<int>& labels,
                                                       const IndexSet& columns) {
  Matrix sub(x.rows(), static_cast<Index>(columns.size()));
  for (std::size_t a = 0; a < columns.size(); ++a) sub.col(static_cast<Index>(a)) = x.col(columns[a]);
  const Vec var = pooled_variances(LabeledDataset(sub, labels));
  const double level = std::max(sub.size() ? sub.cwiseAbs().maxCoeff() : 0.0, 1e-300);
  IndexSet good, bad;
  for (std::size_t a = 0; a < columns.size(); ++a) {
    (var(static_cast<Index>(a)) > 1e-24 * level * level ? good : bad).push_back(columns[a]);
  }
  return {good, bad};
}

} // namespace detail

inline Standardized standardize_expression(const LabeledDataset& data,
                                           ScalingRecord::Order order = ScalingRecord::Order::CenterThenScale) {
  if (data.n1() < 2 || data.n2() < 2) {
    throw DegenerateClass("standardize_expression: each class needs at least two samples");
  }
  ScalingRecord rec;
  rec.order = order;
  rec.input_dim = data.p();
  auto [informative, raw_dropped] = detail::split_by_variance(data.features(), data.labels(), all_indices(data.p()));
  if (informative.empty()) {
    throw ZeroVariance("standardize_expression: every feature has zero pooled variance");
  }
  rec.informative = informative;
  Matrix x = data.features();
  if (order == ScalingRecord::Order::CenterThenScale) {
    const Vec means = data.columns(informative).features().rowwise().mean();
    x.colwise() -= means;
  }
  auto [kept, late_dropped] = detail::split_by_variance(x, data.labels(), informative);
  if (kept.empty()) {
    throw ZeroVariance("standardize_expression: every feature has zero pooled variance after centering");
  }
  rec.kept = kept;
  rec.dropped = raw_dropped;
  rec.dropped.insert(rec.dropped.end(), late_dropped.begin(), late_dropped.end());
  std::sort(rec.dropped.begin(), rec.dropped.end());
  const Vec var = detail::pooled_variances(LabeledDataset(x, data.labels()).columns(kept));
  rec.scale = var.cwiseSqrt().cwiseInverse();
  return {rec.apply(data), std::move(rec)};
}

struct Screened {
  LabeledDataset data;
  IndexSet kept; ///< ascending input columns
};

/// Keeps the `keep` features with largest |t|, ties to the lower index.
inline Screened screen_by_t(const LabeledDataset& data, Index keep) {
  if (keep < 1 || keep > data.p()) {
    throw InvalidInput("screen_by_t: keep must lie in [1, p]");
  }
  const IndexSet kept = keep == data.p() ? all_indices(data.p()) : top_by_magnitude(t_scores(data).values, keep);
  return {data.columns(kept), kept};
}

/// Keeps features with |xbar1_j - xbar2_j| > threshold.
inline Screened screen_by_mean_difference(const LabeledDataset& data, double threshold) {
  const Vec d = moments(data).difference();
  IndexSet kept;
  for (Index j = 0; j < d.size(); ++j) {
    if (std::abs(d(j)) > threshold) {
      kept.push_back(j);
    }
  }
  if (kept.empty()) {
    throw InvalidInput("screen_by_mean_difference: no feature exceeds the threshold");
  }
  return {data.columns(kept), kept};
}

/// Standardize, screen, cross-validate and fit on user data.
struct PipelineConfig {
  bool standardize = false;
  ScalingRecord::Order order = ScalingRecord::Order::CenterThenScale;
  std::optional<Index> screen_count;
  std::optional<double> screen_threshold;
  CvConfig cv{};
  TldaOptions tlda{};
};

struct FittedPipeline {
  Index input_dim = 0;
  std::optional<ScalingRecord> scaling;
  std::optional<IndexSet> screen_kept; ///< columns of the standardized data
  TldaModel model;
  CvResult cv;
  /// Too few samples per class for CV; fixed mid-grid lambda and smallest p0.
  bool cv_skipped = false;

  Vec transform(const Vec& x) const {
    if (x.size() != input_dim) {
      throw InvalidInput("pipeline: point has dimension " + std::to_string(x.size()) + ", expected " +
                         std::to_string(input_dim));
    }
    Vec z = scaling ? scaling->apply(x) : x;
    return screen_kept ? restrict(z, *screen_kept) : z;
  }

  int classify(const Vec& x) const { return classify_tlda(model, transform(x)); }

  /// Selected features as input column indices.
  IndexSet selected_input() const {
    IndexSet out;
    for (Index j : model.selected) {
      Index k = screen_kept ? (*screen_kept)[static_cast<std::size_t>(j)] : j;
      out.push_back(scaling ? scaling->kept[static_cast<std::size_t>(k)] : k);
    }
    return out;
  }
};

inline FittedPipeline fit_pipeline(const LabeledDataset& data, const PipelineConfig& config) {
  FittedPipeline out;
  out.input_dim = data.p();
  LabeledDataset work = data;
  if (config.standardize) {
    auto s = standardize_expression(data, config.order);
    work = std::move(s.data);
    out.scaling = std::move(s.record);
  }
  if (config.screen_threshold) {
    auto s = screen_by_mean_difference(work, *config.screen_threshold);
    work = std::move(s.data);
    out.screen_kept = std::move(s.kept);
  } else if (config.screen_count && *config.screen_count < work.p()) {
    auto s = screen_by_t(work, *config.screen_count);
    work = std::move(s.data);
    out.screen_kept = std::move(s.kept);
  }
  // Tiny training sets cannot fill every fold; use as many as the smaller class
  // allows, and skip CV when a fold would leave a class with one sample.
  CvConfig cv = config.cv;
  const Index smaller = std::min(work.n1(), work.n2());
  if (smaller < 4) {
    if (smaller < 2) {
      throw TooFewSamples("fit_pipeline: each class needs at least two samples");
    }
    const auto& grid = cv.lambda_values();
    const double mid = std::sqrt(grid.front() * grid.back());
    const double scale = cv.relative() ? moments(work).difference().lpNorm<Eigen::Infinity>() : 1.0;
    const Index p0 = cv.p0_grid.empty() ? 1 : std::min(cv.p0_grid.front(), work.p());
    out.model = fit_tlda_feasible(work, mid * scale, p0, config.tlda);
    out.cv_skipped = true;
    return out;
  }
  cv.folds = std::min(cv.folds, smaller);
  auto tuned = tune_and_fit(work, cv, config.tlda);
  out.model = std::move(tuned.model);
  out.cv = std::move(tuned.cv);
  return out;
}

/// Recipe for loocv_evaluate; inner CV folds are seeded per split.
inline Recipe pipeline_recipe(const PipelineConfig& config) {
  return [config](const LabeledDataset& train, Index split) {
    PipelineConfig c = config;
    c.cv.seed = derive_seed(config.cv.seed, static_cast<std::uint64_t>(split));
    auto fitted = std::make_shared<FittedPipeline>(fit_pipeline(train, c));
    const auto count = static_cast<Index>(fitted->model.selected.size());
    return TrainedClassifier{[fitted](const Vec& x) { return fitted->classify(x); }, count};
  };
}

} // namespace sparsa
