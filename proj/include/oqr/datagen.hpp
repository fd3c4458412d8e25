#pragma once

// Synthetic two-group benchmark with exact conditional quantiles, CSV
// ingestion, seeded train/validation/test(/calibration) splits and z-score
// preprocessing fitted on the training split only.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "oqr/random.hpp"

namespace oqr {

/// Synthetic data: 50 features, feature 0 is the group (1 w.p. 0.2),
/// features 1..49 ~ U(0, 5);
///   y = 0.03 beta.x eps1                  (group 0)
///   y = 0.03 gamma.x eps1 + lambda eps2   (group 1).
struct SyntheticSpec {
  Eigen::Index n = 7000;
  double lambda = 3.0;
  std::uint64_t seed = 1;
  static constexpr Eigen::Index kDimension = 50;
  static constexpr double kMajorityProbability = 0.8;
  static constexpr double kScale = 0.03;

  void validate() const;
};

/// Coefficients drawn from a spec; also the exact conditional law of y | x.
struct SyntheticModel {
  Eigen::VectorXd beta;   // unit norm, nonnegative
  Eigen::VectorXd gamma;  // unit norm, nonnegative
  double lambda = 3.0;

  static SyntheticModel from_spec(const SyntheticSpec& spec);

  /// Conditional standard deviation of y given x (y | x is N(0, sd^2)).
  double conditional_sd(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  /// Exact conditional tau-quantile.
  double quantile(const Eigen::Ref<const Eigen::VectorXd>& x, double tau) const;
};

enum class SplitPart { train, validation, test, calibration };

struct Split {
  std::vector<Eigen::Index> train;
  std::vector<Eigen::Index> validation;
  std::vector<Eigen::Index> test;
  std::vector<Eigen::Index> calibration;

  const std::vector<Eigen::Index>& part(SplitPart which) const;
};

/// Fitted on training rows; maps raw values to model space and back.
struct Preprocessing {
  Eigen::VectorXd feature_mean;
  Eigen::VectorXd feature_std;
  double y_mean = 0;
  double y_std = 1;
  bool log_y = false;
  double y_log_min = 0;  // training minimum used by the log transform

  Eigen::MatrixXd transform_features(const Eigen::Ref<const Eigen::MatrixXd>& x) const;
  Eigen::VectorXd transform_y(const Eigen::Ref<const Eigen::VectorXd>& y) const;
  Eigen::VectorXd inverse_y(const Eigen::Ref<const Eigen::VectorXd>& v) const;
};

struct Dataset {
  std::string name;
  std::vector<std::string> feature_names;
  Eigen::MatrixXd x;                   // raw features
  Eigen::VectorXd y;                   // raw responses
  std::optional<Eigen::VectorXi> group;
  Split split;
  std::optional<Preprocessing> preprocessing;
  Eigen::MatrixXd x_model;             // preprocessed features (empty until preprocess)
  Eigen::VectorXd y_model;             // preprocessed responses

  Eigen::Index rows() const { return x.rows(); }
  Eigen::Index features() const { return x.cols(); }

  /// Preprocessed rows of one split part.
  Eigen::MatrixXd model_features(SplitPart which) const;
  Eigen::VectorXd model_responses(SplitPart which) const;
  Eigen::MatrixXd raw_features(SplitPart which) const;
  Eigen::VectorXd raw_responses(SplitPart which) const;
  std::optional<Eigen::VectorXi> groups(SplitPart which) const;
};

/// n fresh rows from `model` drawn from `rng`.
Dataset sample_synthetic(const SyntheticModel& model, Eigen::Index n, Rng& rng);

/// The full synthetic dataset of `spec`; deterministic in spec.seed.
Dataset generate_synthetic(const SyntheticSpec& spec);

/// [q_{alpha/2}(x), q_{1-alpha/2}(x)].
std::pair<double, double> oracle_interval(const Eigen::Ref<const Eigen::VectorXd>& x, double alpha,
                                          const SyntheticModel& model);

/// Random disjoint partition with part sizes floor(f * n), the remainder
/// going to the largest-fraction part. fractions = (train, validation, test
/// [, calibration]) and must sum to 1.
Dataset split(Dataset dataset, const std::vector<double>& fractions, std::uint64_t seed);

/// Optional log transform of y, then z-scores from the training split.
Dataset preprocess(Dataset dataset, bool log_transform_y);

/// Which columns of a CSV hold the target and (optionally) the group.
struct CsvSchema {
  std::string target;
  std::optional<std::string> group;
  /// Columns ignored entirely.
  std::vector<std::string> drop;
  /// Keep the group column among the features (the synthetic layout).
  bool group_is_feature = true;
};

Dataset load_csv(const std::string& path, const CsvSchema& schema);

/// Writes features (header = feature names) followed by a `y` column.
void write_csv(const Dataset& dataset, const std::string& path);

}  // namespace oqr
