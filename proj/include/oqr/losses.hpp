#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "oqr/hsic.hpp"
#include "oqr/nn.hpp"
#include "oqr/random.hpp"

namespace oqr {

/// Check loss rho_alpha(y, yhat).
template <typename Scalar>
Scalar pinball(Scalar y, Scalar yhat, Scalar alpha) {
  const Scalar residual = y - yhat;
  return residual > Scalar(0) ? alpha * residual : (Scalar(1) - alpha) * (-residual);
}

/// rho_{alpha/2}(y, lo) + rho_{1-alpha/2}(y, hi) for miscoverage level alpha.
template <typename Scalar>
Scalar pinball_pair(Scalar y, Scalar lo, Scalar hi, Scalar alpha) {
  return pinball(y, lo, alpha / Scalar(2)) + pinball(y, hi, Scalar(1) - alpha / Scalar(2));
}

/// Width plus 2/alpha times the distance by which y escapes [lo, hi].
template <typename Scalar>
Scalar interval_score(Scalar y, Scalar lo, Scalar hi, Scalar alpha) {
  Scalar score = hi - lo;
  if (y < lo) score += Scalar(2) / alpha * (lo - y);
  if (y > hi) score += Scalar(2) / alpha * (y - hi);
  return score;
}

/// (tanh(c * min(y - lo, hi - y)) + 1) / 2: a differentiable coverage indicator.
template <typename Scalar>
Scalar smooth_coverage(Scalar y, Scalar lo, Scalar hi, Scalar slope) {
  using std::min;
  using std::tanh;
  return (tanh(slope * min(y - lo, hi - y)) + Scalar(1)) / Scalar(2);
}

inline constexpr double kDefaultSlope = 5e3;

/// Lower/upper endpoints and responses of a set of prediction intervals.
struct IntervalBatch {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  Eigen::VectorXd y;

  IntervalBatch() = default;
  IntervalBatch(Eigen::VectorXd lo_, Eigen::VectorXd hi_, Eigen::VectorXd y_);

  Eigen::Index size() const { return y.size(); }
  /// hi - lo, negative where the quantiles cross.
  Eigen::VectorXd length() const { return hi - lo; }
  /// 1 where lo <= y <= hi (closed interval), else 0.
  Eigen::VectorXd covered() const;
  Eigen::VectorXd smooth_covered(double slope = kDefaultSlope) const;
  /// Endpoints swapped where hi < lo.
  IntervalBatch uncrossed() const;
  IntervalBatch subset(const std::vector<Eigen::Index>& rows) const;
};

/// Value of a dependence penalty R(L, V) and its partial derivatives.
struct PenaltyGradient {
  double value = 0;
  Eigen::VectorXd d_length;
  Eigen::VectorXd d_coverage;
};

/// |Pearson correlation| with population moments; 0 if either variance is 0.
double penalty_corr(const Eigen::Ref<const Eigen::VectorXd>& length,
                    const Eigen::Ref<const Eigen::VectorXd>& coverage);
PenaltyGradient penalty_corr_gradient(const Eigen::Ref<const Eigen::VectorXd>& length,
                                      const Eigen::Ref<const Eigen::VectorXd>& coverage);

/// sqrt(max(HSIC(L, V), 0)).
double penalty_hsic(const Eigen::Ref<const Eigen::VectorXd>& length,
                    const Eigen::Ref<const Eigen::VectorXd>& coverage, const HsicConfig& config = {});
PenaltyGradient penalty_hsic_gradient(const Eigen::Ref<const Eigen::VectorXd>& length,
                                      const Eigen::Ref<const Eigen::VectorXd>& coverage,
                                      const HsicConfig& config = {});

enum class LossKind { pinball, interval_score };
enum class PenaltyKind { none, corr, hsic };

std::string to_string(LossKind kind);
std::string to_string(PenaltyKind kind);
LossKind parse_loss_kind(const std::string& text);
PenaltyKind parse_penalty_kind(const std::string& text);

/// How the interval-score risk draws its miscoverage levels.
struct AlphaSampling {
  enum class Kind { per_example, per_batch, fixed };
  Kind kind = Kind::per_example;
  double fixed_alpha = 0.1;

  /// One alpha per row, alpha ~ U(0, 1) unless fixed.
  Eigen::VectorXd draw(Eigen::Index rows, Rng& rng) const;
};

struct ObjectiveConfig {
  LossKind loss = LossKind::pinball;
  PenaltyKind penalty = PenaltyKind::none;
  double gamma = 0;
  double alpha = 0.1;  // target miscoverage of the reported interval
  double slope = kDefaultSlope;
  AlphaSampling sampling{};
  /// Batches smaller than this contribute no penalty.
  Eigen::Index min_penalty_batch = 2;
  /// The pinball objective receives gamma scaled by this factor.
  double pinball_gamma_scale = 0.1;
  HsicConfig hsic{};
};

/// Multiplier actually applied to the penalty term.
double effective_gamma(const ObjectiveConfig& config);

struct ObjectiveTerms {
  double base = 0;
  double penalty = 0;  // R(L, V), before the multiplier
  double total = 0;
};

/// The orthogonal QR objective of one batch as a function of the network
/// outputs over a stacked (features, tau) input matrix.
///
/// Row layout of inputs(): [lower levels; upper levels] for the base loss,
/// followed for the interval score (when a penalty is active) by the target
/// levels alpha/2 and 1 - alpha/2 on which the penalty is measured. The
/// pinball loss already sits at the target levels and reuses its rows.
class QuantileObjective {
 public:
  QuantileObjective(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y,
                    const ObjectiveConfig& config, Rng& alpha_stream);

  const Eigen::MatrixXd& inputs() const { return inputs_; }
  bool penalty_active() const { return penalty_active_; }
  ObjectiveTerms terms(const Eigen::VectorXd& outputs) const;
  OutputObjective<double> operator()(const Eigen::VectorXd& outputs) const;
  OutputObjectiveFn<double> as_function() const {
    return [this](const Eigen::VectorXd& outputs) { return (*this)(outputs); };
  }

 private:
  OutputObjective<double> evaluate(const Eigen::VectorXd& outputs, ObjectiveTerms* terms) const;

  ObjectiveConfig config_;
  Eigen::VectorXd y_;
  Eigen::VectorXd alphas_;  // per-row base-loss miscoverage levels
  Eigen::MatrixXd inputs_;
  bool penalty_active_ = false;
};

/// Eval-mode objective value of `model` on the batch (x, y).
ObjectiveTerms orthogonal_objective(const Mlp<double>& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                                    const Eigen::Ref<const Eigen::VectorXd>& y,
                                    const ObjectiveConfig& config, Rng& alpha_stream);

/// Maps (features, per-row quantile level) to quantile estimates.
using QuantileFunction = std::function<Eigen::VectorXd(const Eigen::MatrixXd&, const Eigen::VectorXd&)>;

QuantileFunction as_quantile_function(const Mlp<double>& model);

/// Monte-Carlo estimate of E_{alpha ~ U(0,1)} interval score over a batch.
double interval_score_risk(const QuantileFunction& quantiles, const Eigen::Ref<const Eigen::MatrixXd>& x,
                           const Eigen::Ref<const Eigen::VectorXd>& y, Rng& alpha_stream,
                           const AlphaSampling& sampling = {});

}  // namespace oqr
