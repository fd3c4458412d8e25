#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "oqr/datagen.hpp"
#include "oqr/losses.hpp"
#include "oqr/nn.hpp"

namespace oqr {

/// synthetic: 2 hidden layers of 64, no dropout. real: 3 x 64, dropout 0.1.
enum class Architecture { synthetic, real };

std::string to_string(Architecture arch);
Architecture parse_architecture(const std::string& text);

struct TrainConfig {
  LossKind loss = LossKind::pinball;
  PenaltyKind penalty = PenaltyKind::none;
  double gamma = 0;
  double alpha = 0.1;
  Eigen::Index batch_size = 1024;
  double learning_rate = 1e-3;
  int max_epochs = 10000;
  int patience = 200;
  std::uint64_t seed = 0;
  Architecture architecture = Architecture::synthetic;
  /// Overrides the architecture's hidden widths / dropout when set.
  std::optional<std::vector<Eigen::Index>> hidden;
  std::optional<double> dropout;

  double slope = kDefaultSlope;
  AlphaSampling sampling{};
  /// An incomplete last batch smaller than this gets no penalty term.
  Eigen::Index min_penalty_batch = 64;
  /// Early stopping on the penalized objective instead of the base loss.
  bool penalized_validation = false;
  /// Levels (k + 1/2) / n of the interval-score validation risk.
  int validation_alpha_grid = 10;
  bool track_coverage = true;

  void validate() const;
  std::vector<Eigen::Index> hidden_widths() const;
  double dropout_rate() const;
  ObjectiveConfig objective() const;
};

/// Hard coverage of one split (and group; -1 = all rows) after an epoch.
struct CoverageRecord {
  SplitPart split;
  int group;
  double coverage;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;       // mean training objective over the epoch's batches
  double validation_loss = 0;  // early-stopping criterion
  std::vector<CoverageRecord> coverage;

  std::optional<double> coverage_of(SplitPart split, int group) const;
};

struct TrainTrace {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;

  const EpochRecord& best() const { return epochs.at(static_cast<std::size_t>(best_epoch)); }
};

/// A trained network together with the transforms of its training data.
struct QuantileModel {
  Mlp<double> net;
  Preprocessing preprocessing;
  double alpha = 0.1;
};

struct TrainResult {
  QuantileModel model;
  TrainTrace trace;
};

/// Mini-batch Adam on the orthogonal QR objective with early stopping;
/// returns the weights of the best validation epoch.
TrainResult train(const Dataset& dataset, const TrainConfig& config);

/// Intervals at tau = alpha/2 and 1 - alpha/2 in model (preprocessed) units,
/// endpoints swapped where they cross.
IntervalBatch predict_model_space(const Mlp<double>& net, const Eigen::Ref<const Eigen::MatrixXd>& x_model,
                                  const Eigen::Ref<const Eigen::VectorXd>& y_model, double alpha);

/// Intervals for raw features, reported in raw response units.
IntervalBatch predict_intervals(const QuantileModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x_raw,
                                const Eigen::Ref<const Eigen::VectorXd>& y_raw, double alpha);
IntervalBatch predict_intervals(const QuantileModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x_raw,
                                const Eigen::Ref<const Eigen::VectorXd>& y_raw);

/// Penalty multiplier used for a dataset (names as in the benchmark suite;
/// any name starting with "synthetic" selects the synthetic values).
double gamma_for(const std::string& dataset_name, LossKind loss, PenaltyKind penalty,
                 std::optional<double> override_value = std::nullopt);

}  // namespace oqr
