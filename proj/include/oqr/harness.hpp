#pragma once

// Experiment runner behind the `oqr` command line tool.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "oqr/conformal.hpp"
#include "oqr/datagen.hpp"
#include "oqr/metrics.hpp"
#include "oqr/training.hpp"

namespace oqr {

struct DatasetSource {
  enum class Kind { synthetic, csv };
  Kind kind = Kind::synthetic;
  std::string name;  // defaults to synthetic_lambda<l> or the CSV file stem
  SyntheticSpec synthetic{};
  std::string path;
  CsvSchema schema{};
  /// Log-transform y before standardising; unset = on for the heavy-tailed
  /// benchmark sets (facebook_1, facebook_2, blog_data, bio).
  std::optional<bool> log_y;

  std::string resolved_name() const;
  bool resolved_log_y() const;
};

struct MethodSpec {
  std::string name;  // defaults to vanilla_<loss> / orthogonal_<penalty>_<loss>
  LossKind loss = LossKind::pinball;
  PenaltyKind penalty = PenaltyKind::none;
  std::optional<double> gamma;  // unset = per-dataset default

  std::string resolved_name() const;
};

struct RunSpec {
  DatasetSource dataset{};
  std::vector<MethodSpec> methods;
  std::vector<std::uint64_t> seeds;
  bool conformalize = false;
  double alpha = 0.1;
  /// train, validation, test[, calibration]; empty = protocol default.
  std::vector<double> split;
  TrainConfig train{};
  std::optional<Architecture> architecture;  // unset = by dataset kind
  MetricsOptions metrics{};
  std::string output_dir = "oqr_run";
  int jobs = 0;  // 0 = hardware concurrency
  bool write_interval_features = false;

  void validate() const;
  std::vector<double> split_fractions() const;
  /// Training configuration of one (method, seed) cell.
  TrainConfig train_config(const MethodSpec& method, std::uint64_t seed) const;
};

/// The default experiment: synthetic lambda = 3, vanilla and corr-penalised
/// pinball QR, seeds 0..29.
RunSpec default_runspec();

RunSpec runspec_from_json(const std::string& text);
std::string runspec_to_json(const RunSpec& spec);

/// "0-29", "0,4,7" or a mix ("0-2,9").
std::vector<std::uint64_t> parse_seeds(const std::string& text);

Dataset load_dataset(const DatasetSource& source);

/// Test-set intervals of one method in one trial.
struct MethodOutcome {
  std::string method;
  IntervalBatch intervals;  // raw units, conformalized when requested
  std::optional<CalibrationResult> calibration;
  TrainTrace trace;
};

struct TrialResult {
  std::uint64_t seed = 0;
  std::vector<MetricsRow> rows;  // one per method
  std::vector<GroupMetricsRow> groups;
  std::vector<MethodOutcome> outcomes;
  Eigen::MatrixXd x_test;  // model-space test features
  std::optional<Eigen::VectorXi> group_test;
  std::string error;  // non-empty when the trial failed
};

/// split -> preprocess -> train every method -> (calibrate) -> evaluate.
TrialResult run_trial(const RunSpec& spec, const Dataset& data, std::uint64_t seed, std::ostream* log = nullptr);

struct RunSummary {
  std::vector<MetricsRow> rows;
  std::vector<MetricsRow> aggregate;
  std::vector<GroupMetricsRow> groups;
  std::vector<std::uint64_t> failed_seeds;
};

/// Runs all trials (in parallel over seeds) and writes the output directory:
/// runspec.json, metrics.csv/json, aggregate.csv, group_metrics.csv,
/// improvement.csv, traces/, intervals/ and errors/.
RunSummary run_experiment(const RunSpec& spec, std::ostream* log = nullptr);

/// Percent improvement of each penalised method over its vanilla baseline,
/// per lower-is-better metric, from aggregate means.
void write_improvement_csv(std::ostream& out, const RunSpec& spec, const std::vector<MetricsRow>& aggregate);

/// figure1.csv (coverage vs. epoch of the first seed) and figure2.csv
/// (100 length-sorted bins over all seeds) from a run directory.
void write_figures(const std::string& run_dir, const std::string& out_dir, int bins = 100);

struct BinnedPoint {
  int bin;
  double mean_length;
  double coverage;
};
/// Sorts rows by length and averages length and coverage within `bins`
/// equal-count bins.
std::vector<BinnedPoint> bin_by_length(const IntervalBatch& intervals, int bins);

/// Metrics of intervals read from CSV (columns y, lo, hi, optional group,
/// the rest are features). With a baseline file the ILS-based metrics are
/// computed against it.
MetricsRow audit_intervals(const std::string& path, const std::optional<std::string>& baseline_path,
                           const MetricsOptions& options = {});

struct GeneratedFiles {
  std::string data;
  std::string oracle;
  std::string spec;
};
/// Synthetic dataset CSV, oracle-quantile sidecar and spec echo.
GeneratedFiles generate_dataset(const SyntheticSpec& spec, double alpha, const std::string& out_dir);
std::string synthetic_spec_json(const SyntheticSpec& spec, double alpha);
/// Reads {n, lambda, seed[, alpha]}; alpha is stored when present.
SyntheticSpec synthetic_spec_from_json(const std::string& text, double* alpha = nullptr);

}  // namespace oqr
