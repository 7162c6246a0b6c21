/**
 * @brief Command-line front end: CSV ingestion, model files and the
 * simulate / fit / predict / loocv subcommands.
 *
 * Exit codes: 0 success, 1 runtime or data error, 2 usage error.
 */
#pragma once

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "simbench.hpp"

namespace sparsa::cli {

using Json = nlohmann::ordered_json;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;
inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kModelFormat = "sparsa-tlda-model";
inline constexpr int kModelSchema = 1;

/// Bad flag values that CLI11 validators cannot express.
class UsageError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// CSV

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '"')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '"')) s.remove_suffix(1);
  return s;
}

inline std::optional<double> parse_number(std::string_view s) {
  s = trim(s);
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    return std::nullopt;
  }
  return v;
}

struct CsvGrid {
  std::vector<std::vector<std::string>> cells;
  std::vector<std::size_t> lines; ///< 1-based source line of each row
};

inline CsvGrid read_grid(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw InvalidInput("cannot open '" + path + "'");
  }
  CsvGrid grid;
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (trim(line).empty()) continue;
    std::vector<std::string> row;
    std::size_t start = 0;
    for (;;) {
      const auto comma = line.find(',', start);
      row.emplace_back(trim(std::string_view(line).substr(start, comma == std::string::npos ? std::string::npos
                                                                                              : comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    grid.cells.push_back(std::move(row));
    grid.lines.push_back(lineno);
  }
  return grid;
}

inline CsvGrid transpose_grid(const CsvGrid& g) {
  CsvGrid t;
  if (g.cells.empty()) return t;
  const std::size_t cols = g.cells.front().size();
  for (std::size_t r = 0; r < g.cells.size(); ++r) {
    if (g.cells[r].size() != cols) {
      throw InvalidInput("line " + std::to_string(g.lines[r]) + ": expected " + std::to_string(cols) +
                         " fields, found " + std::to_string(g.cells[r].size()));
    }
  }
  t.cells.assign(cols, std::vector<std::string>(g.cells.size()));
  for (std::size_t r = 0; r < g.cells.size(); ++r)
    for (std::size_t c = 0; c < cols; ++c) t.cells[c][r] = g.cells[r][c];
  t.lines.resize(cols, 0);
  return t;
}

/// Rows of a CSV as numbers, header row dropped when its first cell is not numeric.
struct NumericRows {
  Matrix values;
  std::vector<std::string> where; ///< "line N" or "sample N" per row
};

inline NumericRows read_numeric(const std::string& path, bool transpose) {
  CsvGrid grid = read_grid(path);
  if (transpose) grid = transpose_grid(grid);
  std::size_t first = 0;
  if (!grid.cells.empty() && !parse_number(grid.cells.front().front())) {
    first = 1;
  }
  if (grid.cells.size() <= first) {
    throw InvalidInput("'" + path + "' has no data rows");
  }
  const std::size_t cols = grid.cells[first].size();
  NumericRows out;
  out.values.resize(static_cast<Index>(grid.cells.size() - first), static_cast<Index>(cols));
  for (std::size_t r = first; r < grid.cells.size(); ++r) {
    const std::string where = transpose ? "sample " + std::to_string(r - first + 1) : "line " + std::to_string(grid.lines[r]);
    if (grid.cells[r].size() != cols) {
      throw InvalidInput(where + ": expected " + std::to_string(cols) + " fields, found " +
                         std::to_string(grid.cells[r].size()));
    }
    for (std::size_t c = 0; c < cols; ++c) {
      const auto v = parse_number(grid.cells[r][c]);
      if (!v || !std::isfinite(*v)) {
        throw InvalidInput(where + ", field " + std::to_string(c + 1) + ": '" + grid.cells[r][c] +
                           "' is not a finite number");
      }
      out.values(static_cast<Index>(r - first), static_cast<Index>(c)) = *v;
    }
    out.where.push_back(where);
  }
  return out;
}

inline std::vector<int> labels_from(const NumericRows& rows) {
  std::vector<int> labels;
  for (Index i = 0; i < rows.values.rows(); ++i) {
    const double v = rows.values(i, 0);
    if (v != 1.0 && v != 2.0) {
      std::ostringstream msg;
      msg << rows.where[static_cast<std::size_t>(i)] << " (row " << i + 1 << "): label " << v << " is not 1 or 2";
      throw InvalidInput(msg.str());
    }
    labels.push_back(static_cast<int>(v));
  }
  return labels;
}

/// Labeled dataset: first column the label, remaining columns features.
inline LabeledDataset read_dataset(const std::string& path, bool transpose) {
  const auto rows = read_numeric(path, transpose);
  if (rows.values.cols() < 2) {
    throw InvalidInput("'" + path + "' needs a label column and at least one feature");
  }
  auto labels = labels_from(rows);
  return {rows.values.rightCols(rows.values.cols() - 1), std::move(labels)};
}

/// Test points, labeled when there is one more column than `dim`.
struct TestPoints {
  Matrix features;
  std::optional<std::vector<int>> labels;
};

inline TestPoints read_points(const std::string& path, bool transpose, Index dim) {
  const auto rows = read_numeric(path, transpose);
  TestPoints out;
  if (rows.values.cols() == dim + 1) {
    out.labels = labels_from(rows);
    out.features = rows.values.rightCols(dim);
  } else if (rows.values.cols() == dim) {
    out.features = rows.values;
  } else {
    throw InvalidInput("'" + path + "' has " + std::to_string(rows.values.cols()) + " columns; the model expects " +
                       std::to_string(dim) + " features (plus an optional label column)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model files

inline Json index_json(const IndexSet& s, Index base = 0) {
  Json a = Json::array();
  for (Index j : s) a.push_back(j + base);
  return a;
}

inline Json vec_json(const Vec& v) {
  Json a = Json::array();
  for (Index j = 0; j < v.size(); ++j) a.push_back(v(j));
  return a;
}

inline IndexSet index_from(const Json& a, Index bound, const char* what) {
  IndexSet s;
  for (const auto& x : a) {
    const auto j = x.get<Index>();
    if (j < 0 || j >= bound || (!s.empty() && j <= s.back())) {
      throw InvalidInput(std::string("model file: '") + what + "' is not an increasing index list within range");
    }
    s.push_back(j);
  }
  return s;
}

inline Vec vec_from(const Json& a) {
  Vec v(static_cast<Index>(a.size()));
  for (std::size_t k = 0; k < a.size(); ++k) v(static_cast<Index>(k)) = a[k].get<double>();
  return v;
}

struct ModelExtras {
  std::optional<double> prior_pi1;
  Index folds = 5;
  Json screen_rule;
  Json training;
};

inline Json model_to_json(const FittedPipeline& fit, const ModelExtras& extras) {
  Json j;
  j["format"] = kModelFormat;
  j["schema_version"] = kModelSchema;
  j["input_dim"] = fit.input_dim;
  j["selected_features"] = index_json(fit.selected_input(), 1);
  j["beta_star"] = vec_json(fit.model.beta_star);
  j["mu_hat_a"] = vec_json(fit.model.mu_hat_a_sel);
  j["lambda"] = fit.model.lambda_used;
  j["p0"] = fit.model.p0_used;
  j["log_prior_offset"] = fit.model.log_prior_offset;
  j["prior_pi1"] = extras.prior_pi1 ? Json(*extras.prior_pi1) : Json();
  j["degenerate_selection"] = fit.model.degenerate_selection;
  j["solver_status"] = to_string(fit.model.solver_status);
  j["cv"] = {{"skipped", fit.cv_skipped},
             {"folds", extras.folds},
             {"lambda_hat", fit.cv_skipped ? Json() : Json(fit.cv.lambda_hat)},
             {"lambda_adjusted", fit.cv_skipped ? Json() : Json(fit.cv.lambda_adjusted)},
             {"p0_hat", fit.cv_skipped ? Json() : Json(fit.cv.p0_hat)}};
  if (fit.scaling) {
    j["scaling"] = {{"order", fit.scaling->order == ScalingRecord::Order::CenterThenScale ? "center_then_scale"
                                                                                          : "scale_then_center"},
                    {"informative", index_json(fit.scaling->informative)},
                    {"kept", index_json(fit.scaling->kept)},
                    {"dropped", index_json(fit.scaling->dropped)},
                    {"scale", vec_json(fit.scaling->scale)}};
  } else {
    j["scaling"] = nullptr;
  }
  if (fit.screen_kept) {
    j["screen"] = {{"rule", extras.screen_rule}, {"kept", index_json(*fit.screen_kept)}};
  } else {
    j["screen"] = nullptr;
  }
  j["working_dim"] = fit.model.ambient_dim;
  j["working_selected"] = index_json(fit.model.selected);
  j["training"] = extras.training;
  return j;
}

inline FittedPipeline model_from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != kModelFormat) {
      throw InvalidInput("model file: unknown format");
    }
    if (j.at("schema_version").get<int>() != kModelSchema) {
      throw InvalidInput("model file: unsupported schema_version " + j.at("schema_version").dump());
    }
    FittedPipeline fit;
    fit.input_dim = j.at("input_dim").get<Index>();
    Index dim = fit.input_dim;
    if (!j.at("scaling").is_null()) {
      const auto& s = j["scaling"];
      ScalingRecord rec;
      rec.input_dim = fit.input_dim;
      rec.order = s.at("order").get<std::string>() == "scale_then_center" ? ScalingRecord::Order::ScaleThenCenter
                                                                          : ScalingRecord::Order::CenterThenScale;
      rec.informative = index_from(s.at("informative"), dim, "scaling.informative");
      rec.kept = index_from(s.at("kept"), dim, "scaling.kept");
      rec.dropped = index_from(s.at("dropped"), dim, "scaling.dropped");
      rec.scale = vec_from(s.at("scale"));
      if (rec.scale.size() != static_cast<Index>(rec.kept.size())) {
        throw InvalidInput("model file: scaling.scale length differs from scaling.kept");
      }
      dim = static_cast<Index>(rec.kept.size());
      fit.scaling = std::move(rec);
    }
    if (!j.at("screen").is_null()) {
      fit.screen_kept = index_from(j["screen"].at("kept"), dim, "screen.kept");
      dim = static_cast<Index>(fit.screen_kept->size());
    }
    if (j.at("working_dim").get<Index>() != dim) {
      throw InvalidInput("model file: working_dim is inconsistent with the scaling and screen records");
    }
    TldaModel& m = fit.model;
    m.ambient_dim = dim;
    m.selected = index_from(j.at("working_selected"), dim, "working_selected");
    m.beta_star = vec_from(j.at("beta_star"));
    m.mu_hat_a_sel = vec_from(j.at("mu_hat_a"));
    if (m.beta_star.size() != static_cast<Index>(m.selected.size()) || m.mu_hat_a_sel.size() != m.beta_star.size()) {
      throw InvalidInput("model file: beta_star / mu_hat_a lengths differ from the selection");
    }
    m.lambda_used = j.at("lambda").get<double>();
    m.p0_used = j.at("p0").get<Index>();
    m.log_prior_offset = j.at("log_prior_offset").get<double>();
    m.degenerate_selection = j.at("degenerate_selection").get<bool>();
    fit.cv_skipped = j.at("cv").at("skipped").get<bool>();
    return fit;
  } catch (const Json::exception& e) {
    throw InvalidInput(std::string("model file: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Options

struct SeedOption {
  std::optional<std::uint64_t> seed;
  bool strict = false;

  /// Resolves the seed; without --seed, draws one from the OS entropy source.
  std::uint64_t resolve() {
    if (!seed) {
      if (strict) {
        throw UsageError("--seed is required in --strict mode");
      }
      std::random_device rd;
      seed = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    }
    return *seed;
  }
};

struct SimulateOptions {
  int model = 1;
  Index p = 100;
  Index n1 = 100;
  Index n2 = 100;
  Index reps = 100;
  SeedOption seed;
  std::string methods = "tlda,nb,oracle";
  std::string eval = "analytic";
  Index holdout = 10000;
  Index folds = 5;
  std::string out_dir = ".";

  Json to_json() const {
    return {{"model", model}, {"p", p},         {"n1", n1},       {"n2", n2},           {"reps", reps},
            {"seed", *seed.seed}, {"methods", methods}, {"eval", eval}, {"holdout", holdout}, {"folds", folds},
            {"out-dir", out_dir}};
  }
};

struct PipelineFlags {
  bool standardize = false;
  std::string order = "center_then_scale";
  std::optional<Index> screen;
  std::optional<double> screen_threshold;
  Index folds = 5;
  bool transpose = false;

  void add(CLI::App* app) {
    app->add_flag("--standardize", standardize, "Center each sample, scale features to unit pooled variance");
    app->add_option("--order", order, "Standardization order")
        ->check(CLI::IsMember({"center_then_scale", "scale_then_center"}));
    app->add_option("--screen", screen, "Keep the N features with largest |t| before fitting")
        ->check(CLI::PositiveNumber);
    app->add_option("--screen-threshold", screen_threshold, "Keep features with |xbar1 - xbar2| above this value")
        ->check(CLI::NonNegativeNumber);
    app->add_option("--folds", folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
    app->add_flag("--transpose", transpose, "Input CSV has features in rows and samples in columns");
  }

  void write(Json& j) const {
    j["standardize"] = standardize;
    j["order"] = order;
    if (screen) j["screen"] = *screen;
    if (screen_threshold) j["screen-threshold"] = *screen_threshold;
    j["folds"] = folds;
    j["transpose"] = transpose;
  }

  PipelineConfig config(std::uint64_t seed) const {
    PipelineConfig c;
    c.standardize = standardize;
    c.order = order == "scale_then_center" ? ScalingRecord::Order::ScaleThenCenter
                                           : ScalingRecord::Order::CenterThenScale;
    c.screen_count = screen;
    c.screen_threshold = screen_threshold;
    c.cv.folds = folds;
    c.cv.seed = RngSeed{seed};
    return c;
  }

  Json screen_rule() const {
    if (screen_threshold) return {{"mean_difference_above", *screen_threshold}};
    if (screen) return {{"top_abs_t", *screen}};
    return nullptr;
  }
};

struct FitOptions {
  std::string train;
  std::string model_out;
  PipelineFlags pipeline;
  std::optional<double> prior;
  SeedOption seed;
  std::string out_dir = ".";

  Json to_json() const {
    Json j{{"train", train}, {"model-out", model_out}};
    pipeline.write(j);
    if (prior) j["prior"] = *prior;
    j["seed"] = *seed.seed;
    j["out-dir"] = out_dir;
    return j;
  }
};

struct PredictOptions {
  std::string model;
  std::string test;
  bool transpose = false;
  std::string out_dir = ".";

  Json to_json() const {
    return {{"model", model}, {"test", test}, {"transpose", transpose}, {"out-dir", out_dir}};
  }
};

struct LoocvOptions {
  std::string data;
  PipelineFlags pipeline;
  bool global_screen = false;
  SeedOption seed;
  std::string out_dir = ".";

  Json to_json() const {
    Json j{{"data", data}};
    pipeline.write(j);
    j["global-screen"] = global_screen;
    j["seed"] = *seed.seed;
    j["out-dir"] = out_dir;
    return j;
  }
};

/// Worker count: hardware threads, capped by SPARSA_THREADS when set.
inline Index worker_threads() {
  Index n = std::max<Index>(1, static_cast<Index>(std::thread::hardware_concurrency()));
  if (const char* env = std::getenv("SPARSA_THREADS")) {
    const auto cap = parse_number(env);
    if (cap && *cap >= 1) n = std::min<Index>(n, static_cast<Index>(*cap));
  }
  return n;
}

// ---------------------------------------------------------------------------
// Output helpers

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw InvalidInput("cannot write '" + path.string() + "'");
  }
  out << text;
  if (!out) {
    throw InvalidInput("failed writing '" + path.string() + "'");
  }
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

/// Config, then timestamps and runtime in a separate metadata file.
class RunRecorder {
public:
  RunRecorder(std::string subcommand, std::filesystem::path out_dir)
      : subcommand_(std::move(subcommand)), dir_(std::move(out_dir)), start_(std::chrono::steady_clock::now()),
        wall_(std::chrono::system_clock::now()) {}

  void config(Json options) const {
    Json j{{"subcommand", subcommand_}};
    j.update(options);
    write_json(dir_ / "resolved_config.json", j);
  }

  void finish(Index threads) const {
    const auto t = std::chrono::system_clock::to_time_t(wall_);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    write_json(dir_ / "run_meta.json",
               {{"subcommand", subcommand_},
                {"version", kVersion},
                {"started_at", stamp},
                {"runtime_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count()},
                {"threads", threads}});
  }

private:
  std::string subcommand_;
  std::filesystem::path dir_;
  std::chrono::steady_clock::time_point start_;
  std::chrono::system_clock::time_point wall_;
};

inline Json summary_json(const MethodSummary& m) {
  auto round2 = [](double x) { return std::round(x * 100.0) / 100.0; };
  return {{"method", to_string(m.method)},
          {"mean_error_pct", round2(m.mean_error_pct)},
          {"sd_error_pct", round2(m.sd_error_pct)},
          {"mean_features", round2(m.mean_features)},
          {"sd_features", round2(m.sd_features)},
          {"successes", m.successes},
          {"failures", m.failures},
          {"failed", m.failed}};
}

inline Json report_json(const ExperimentReport& r) {
  Json methods = Json::array();
  for (const auto& m : r.methods) methods.push_back(summary_json(m));
  Json seeds = Json::array();
  for (auto s : r.seeds) seeds.push_back(s);
  return {{"model", r.spec.model_id},
          {"p", r.spec.p},
          {"n1", r.spec.n1},
          {"n2", r.spec.n2},
          {"reps", r.reps},
          {"evaluation", r.evaluation.mode == Evaluation::Mode::Analytic ? "analytic" : "holdout"},
          {"holdout_size", r.evaluation.mode == Evaluation::Mode::Analytic ? Json() : Json(r.evaluation.holdout_size)},
          {"theoretical_rate_pct", std::round(r.theoretical_rate_pct * 100.0) / 100.0},
          {"methods", methods},
          {"exact_support_recoveries", r.exact_recoveries},
          {"base_seed", r.base_seed},
          {"seeds", seeds}};
}

inline Json confusion_json(const std::vector<int>& truth, const std::vector<int>& predicted) {
  Index c[2][2] = {{0, 0}, {0, 0}};
  for (std::size_t i = 0; i < truth.size(); ++i) ++c[truth[i] - 1][predicted[i] - 1];
  return Json::array({Json::array({c[0][0], c[0][1]}), Json::array({c[1][0], c[1][1]})});
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_simulate(SimulateOptions& o, std::ostream& out) {
  const auto seed = o.seed.resolve();
  ModelSpec spec{o.model, o.p, o.n1, o.n2};
  try {
    spec.validate();
  } catch (const InvalidSpec& e) {
    throw UsageError(e.what());
  }
  ExperimentOptions ex;
  ex.methods.clear();
  std::stringstream list(o.methods);
  for (std::string name; std::getline(list, name, ',');) {
    try {
      const Method m = parse_method(std::string(trim(name)));
      if (std::find(ex.methods.begin(), ex.methods.end(), m) != ex.methods.end()) {
        throw UsageError("--methods lists '" + name + "' twice");
      }
      ex.methods.push_back(m);
    } catch (const InvalidInput& e) {
      throw UsageError(e.what());
    }
  }
  if (ex.methods.empty()) throw UsageError("--methods is empty");
  ex.reps = o.reps;
  ex.seed = RngSeed{seed};
  ex.evaluation.mode = o.eval == "holdout" ? Evaluation::Mode::Holdout : Evaluation::Mode::Analytic;
  ex.evaluation.holdout_size = o.holdout;
  ex.cv.folds = o.folds;
  ex.threads = worker_threads();

  const std::filesystem::path dir(o.out_dir);
  RunRecorder rec("simulate", dir);
  rec.config(o.to_json());
  const auto report = run_experiment(spec, ex);
  write_json(dir / "report.json", report_json(report));
  write_text(dir / "report.txt", report.to_text());
  write_text(dir / "trace.csv", report.trace.to_csv());
  rec.finish(ex.threads);
  out << report.to_text();
  if (report.failed()) {
    throw SolverFailure("more than 5% of replications failed for at least one method");
  }
  return kExitOk;
}

inline int cmd_fit(FitOptions& o, std::ostream& out) {
  const auto seed = o.seed.resolve();
  const std::filesystem::path dir(o.out_dir);
  const std::filesystem::path model_path = o.model_out.empty() ? dir / "model.json" : std::filesystem::path(o.model_out);
  RunRecorder rec("fit", dir);
  rec.config(o.to_json());

  const auto data = read_dataset(o.train, o.pipeline.transpose);
  auto config = o.pipeline.config(seed);
  if (o.prior) config.tlda.log_prior_offset = log_prior_offset(*o.prior);
  const auto fit = fit_pipeline(data, config);

  std::vector<int> predicted;
  for (Index i = 0; i < data.n(); ++i) predicted.push_back(fit.classify(data.row(i)));
  Index errors = 0;
  for (Index i = 0; i < data.n(); ++i) errors += predicted[static_cast<std::size_t>(i)] != data.label(i);

  ModelExtras extras;
  extras.prior_pi1 = o.prior;
  extras.folds = config.cv.folds;
  extras.screen_rule = o.pipeline.screen_rule();
  extras.training = {{"n", data.n()}, {"errors", errors}, {"confusion", confusion_json(data.labels(), predicted)}};
  write_json(model_path, model_to_json(fit, extras));
  rec.finish(1);

  out << "selected " << fit.model.selected.size() << " features:";
  for (Index j : fit.selected_input()) out << ' ' << j + 1;
  out << "\ntraining error " << errors << "/" << data.n() << "\nmodel written to " << model_path.string() << '\n';
  return kExitOk;
}

inline int cmd_predict(PredictOptions& o, std::ostream& out) {
  const std::filesystem::path dir(o.out_dir);
  RunRecorder rec("predict", dir);
  rec.config(o.to_json());
  std::ifstream in(o.model);
  if (!in) throw InvalidInput("cannot open model file '" + o.model + "'");
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw InvalidInput("model file '" + o.model + "' is not valid JSON: " + e.what());
  }
  const auto fit = model_from_json(j);
  const auto points = read_points(o.test, o.transpose, fit.input_dim);

  std::vector<int> predicted;
  std::ostringstream csv;
  csv << (points.labels ? "row,label,predicted\n" : "row,predicted\n");
  for (Index i = 0; i < points.features.rows(); ++i) {
    predicted.push_back(fit.classify(points.features.row(i).transpose()));
    csv << i + 1 << ',';
    if (points.labels) csv << (*points.labels)[static_cast<std::size_t>(i)] << ',';
    csv << predicted.back() << '\n';
  }
  write_text(dir / "predictions.csv", csv.str());
  Json report{{"n", points.features.rows()}};
  if (points.labels) {
    Index errors = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i) errors += predicted[i] != (*points.labels)[i];
    report["errors"] = errors;
    report["error_rate"] = static_cast<double>(errors) / static_cast<double>(predicted.size());
    report["confusion"] = confusion_json(*points.labels, predicted);
    out << "test error " << errors << "/" << predicted.size() << '\n';
  }
  write_json(dir / "predict_report.json", report);
  rec.finish(1);
  out << "predictions written to " << (dir / "predictions.csv").string() << '\n';
  return kExitOk;
}

inline int cmd_loocv(LoocvOptions& o, std::ostream& out) {
  const auto seed = o.seed.resolve();
  const std::filesystem::path dir(o.out_dir);
  RunRecorder rec("loocv", dir);
  if (!o.pipeline.screen && !o.pipeline.screen_threshold) o.pipeline.screen = 1000;
  rec.config(o.to_json());

  auto data = read_dataset(o.data, o.pipeline.transpose);
  auto config = o.pipeline.config(seed);
  if (config.screen_count && *config.screen_count > data.p()) config.screen_count = data.p();
  if (o.global_screen) {
    // Preprocess once on all samples, then only tune and fit inside splits.
    PipelineConfig pre = config;
    if (pre.standardize) {
      data = standardize_expression(data, pre.order).data;
    }
    if (pre.screen_threshold) {
      data = screen_by_mean_difference(data, *pre.screen_threshold).data;
    } else if (pre.screen_count && *pre.screen_count < data.p()) {
      data = screen_by_t(data, *pre.screen_count).data;
    }
    config.standardize = false;
    config.screen_count.reset();
    config.screen_threshold.reset();
  }
  const Index threads = worker_threads();
  const auto result = loocv_evaluate(data, pipeline_recipe(config), threads);

  Json splits = Json::array();
  for (Index i = 0; i < data.n(); ++i) {
    splits.push_back({{"held_out", i + 1},
                      {"label", data.label(i)},
                      {"predicted", result.predictions[static_cast<std::size_t>(i)]},
                      {"features", result.feature_counts[static_cast<std::size_t>(i)]}});
  }
  auto round2 = [](double x) { return std::round(x * 100.0) / 100.0; };
  const Json report{{"n", data.n()},
                    {"errors", result.errors},
                    {"error_pct", round2(100.0 * result.error_rate)},
                    {"mean_features", round2(result.mean_features)},
                    {"sd_features", round2(result.sd_features)},
                    {"splits", splits}};
  write_json(dir / "loocv_report.json", report);
  std::ostringstream text;
  text << std::fixed << std::setprecision(2) << "LOOCV error " << 100.0 * result.error_rate << "% (" << result.errors
       << "/" << data.n() << "), features " << result.mean_features << " (" << result.sd_features << ")\n";
  write_text(dir / "loocv_report.txt", text.str());
  rec.finish(threads);
  out << text.str();
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Entry point

namespace detail {

/// Expands a JSON config file into flags placed before the command-line ones.
inline std::vector<std::string> expand_config(std::vector<std::string> args, const std::vector<std::string>& commands) {
  std::optional<std::string> path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i + 2));
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (!path) return args;
  const auto sub = std::find_first_of(args.begin(), args.end(), commands.begin(), commands.end());
  if (sub == args.end()) throw UsageError("--config needs a subcommand");
  std::ifstream in(*path);
  if (!in) throw UsageError("cannot open config file '" + *path + "'");
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw UsageError("config file '" + *path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw UsageError("config file must hold a JSON object");
  std::vector<std::string> flags;
  for (const auto& [key, value] : j.items()) {
    if (key == "subcommand") {
      if (value != *sub) throw UsageError("config file is for '" + value.get<std::string>() + "', not '" + *sub + "'");
      continue;
    }
    if (value.is_null()) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) flags.push_back("--" + key);
      continue;
    }
    flags.push_back("--" + key);
    flags.push_back(value.is_string() ? value.get<std::string>() : value.dump());
  }
  args.insert(sub + 1, flags.begin(), flags.end());
  return args;
}

inline void add_seed(CLI::App* app, SeedOption& seed) {
  app->add_option("--seed", seed.seed, "Base seed for every random stream");
  app->add_flag("--strict", seed.strict, "Require --seed");
}

} // namespace detail

/// Runs the CLI on `args` (without the program name) and returns the exit code.
inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Two-stage sparse linear discriminant analysis", "sparsa"};
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);
  app.add_option("--config", "JSON file of flag values; explicit flags override it");

  SimulateOptions sim;
  auto* s = app.add_subcommand("simulate", "Replicated simulation study on models 1-4");
  s->add_option("--model", sim.model, "Simulation model")->check(CLI::IsMember({1, 2, 3, 4}));
  s->add_option("--p", sim.p, "Dimension")->check(CLI::PositiveNumber);
  s->add_option("--n1", sim.n1, "Class 1 training size")->check(CLI::Range(Index{2}, Index{10000000}));
  s->add_option("--n2", sim.n2, "Class 2 training size")->check(CLI::Range(Index{2}, Index{10000000}));
  s->add_option("--reps", sim.reps, "Replications")->check(CLI::PositiveNumber);
  s->add_option("--methods", sim.methods, "Comma list of tlda, nb, lda_full, oracle, tscore_rule");
  s->add_option("--eval", sim.eval, "Error evaluation")->check(CLI::IsMember({"analytic", "holdout"}));
  s->add_option("--holdout", sim.holdout, "Test points per replication for --eval holdout")
      ->check(CLI::Range(Index{2}, Index{100000000}));
  s->add_option("--folds", sim.folds, "Cross-validation folds")->check(CLI::Range(2, 1000));
  s->add_option("--out-dir", sim.out_dir, "Directory for report files");
  detail::add_seed(s, sim.seed);

  FitOptions fit;
  auto* f = app.add_subcommand("fit", "Tune and fit the two-stage classifier on a labeled CSV");
  f->add_option("--train", fit.train, "Training CSV (label column first)")->required();
  f->add_option("--model-out", fit.model_out, "Model file (default <out-dir>/model.json)");
  fit.pipeline.add(f);
  f->add_option("--prior", fit.prior, "Class 1 prior probability")->check(CLI::Range(0.0, 1.0));
  f->add_option("--out-dir", fit.out_dir, "Directory for run records");
  detail::add_seed(f, fit.seed);

  PredictOptions pred;
  auto* p = app.add_subcommand("predict", "Classify rows of a CSV with a fitted model");
  p->add_option("--model", pred.model, "Model file written by fit")->required();
  p->add_option("--test", pred.test, "Test CSV, with or without a label column")->required();
  p->add_flag("--transpose", pred.transpose, "Input CSV has features in rows and samples in columns");
  p->add_option("--out-dir", pred.out_dir, "Directory for predictions and run records");

  LoocvOptions loo;
  auto* l = app.add_subcommand("loocv", "Leave-one-out evaluation of the full pipeline");
  l->add_option("--data", loo.data, "Labeled CSV")->required();
  loo.pipeline.add(l);
  l->add_flag("--global-screen", loo.global_screen, "Standardize and screen once on all samples");
  l->add_option("--out-dir", loo.out_dir, "Directory for report files");
  detail::add_seed(l, loo.seed);

  try {
    args = detail::expand_config(std::move(args), {"simulate", "fit", "predict", "loocv"});
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << '\n';
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\nrun with --help for usage\n";
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  }

  try {
    if (s->parsed()) return cmd_simulate(sim, out);
    if (f->parsed()) return cmd_fit(fit, out);
    if (p->parsed()) return cmd_predict(pred, out);
    return cmd_loocv(loo, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}

} // namespace sparsa::cli
