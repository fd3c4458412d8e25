#include "oqr/losses.hpp"

#include <algorithm>

#include "oqr/error.hpp"

namespace oqr {

namespace {

void require_same_length(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b)
    throw DimensionError(std::string(what) + ": length mismatch " + std::to_string(a) + " vs " +
                         std::to_string(b));
  if (a < 2) throw DimensionError(std::string(what) + ": need at least 2 samples");
}

double sign(double x) { return (x > 0) - (x < 0); }

}  // namespace

IntervalBatch::IntervalBatch(Eigen::VectorXd lo_, Eigen::VectorXd hi_, Eigen::VectorXd y_)
    : lo(std::move(lo_)), hi(std::move(hi_)), y(std::move(y_)) {
  if (lo.size() != hi.size() || lo.size() != y.size())
    throw DimensionError("interval batch: lo/hi/y lengths " + std::to_string(lo.size()) + "/" +
                         std::to_string(hi.size()) + "/" + std::to_string(y.size()));
}

Eigen::VectorXd IntervalBatch::covered() const {
  return ((y.array() >= lo.array()) && (y.array() <= hi.array())).cast<double>().matrix();
}

Eigen::VectorXd IntervalBatch::smooth_covered(double slope) const {
  Eigen::VectorXd v(size());
  for (Eigen::Index i = 0; i < size(); ++i) v(i) = smooth_coverage(y(i), lo(i), hi(i), slope);
  return v;
}

IntervalBatch IntervalBatch::uncrossed() const {
  return {lo.cwiseMin(hi), lo.cwiseMax(hi), y};
}

IntervalBatch IntervalBatch::subset(const std::vector<Eigen::Index>& rows) const {
  IntervalBatch out{Eigen::VectorXd(rows.size()), Eigen::VectorXd(rows.size()), Eigen::VectorXd(rows.size())};
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.lo(k) = lo(rows[k]);
    out.hi(k) = hi(rows[k]);
    out.y(k) = y(rows[k]);
  }
  return out;
}

PenaltyGradient penalty_corr_gradient(const Eigen::Ref<const Eigen::VectorXd>& length,
                                      const Eigen::Ref<const Eigen::VectorXd>& coverage) {
  require_same_length(length.size(), coverage.size(), "penalty_corr");
  const double n = static_cast<double>(length.size());
  const Eigen::VectorXd lc = length.array() - length.mean();
  const Eigen::VectorXd vc = coverage.array() - coverage.mean();
  const double var_l = lc.squaredNorm() / n;
  const double var_v = vc.squaredNorm() / n;

  PenaltyGradient out{0, Eigen::VectorXd::Zero(length.size()), Eigen::VectorXd::Zero(length.size())};
  if (!(var_l > 0) || !(var_v > 0)) return out;

  const double scale = std::sqrt(var_l * var_v);
  const double rho = lc.dot(vc) / n / scale;
  out.value = std::abs(rho);
  const double s = sign(rho);
  out.d_length = s * (vc / (n * scale) - rho * lc / (n * var_l));
  out.d_coverage = s * (lc / (n * scale) - rho * vc / (n * var_v));
  return out;
}

double penalty_corr(const Eigen::Ref<const Eigen::VectorXd>& length,
                    const Eigen::Ref<const Eigen::VectorXd>& coverage) {
  require_same_length(length.size(), coverage.size(), "penalty_corr");
  const double n = static_cast<double>(length.size());
  const Eigen::VectorXd lc = length.array() - length.mean();
  const Eigen::VectorXd vc = coverage.array() - coverage.mean();
  const double var_l = lc.squaredNorm() / n;
  const double var_v = vc.squaredNorm() / n;
  if (!(var_l > 0) || !(var_v > 0)) return 0.0;
  return std::min(1.0, std::abs(lc.dot(vc) / n / std::sqrt(var_l * var_v)));
}

double penalty_hsic(const Eigen::Ref<const Eigen::VectorXd>& length,
                    const Eigen::Ref<const Eigen::VectorXd>& coverage, const HsicConfig& config) {
  require_same_length(length.size(), coverage.size(), "penalty_hsic");
  return std::sqrt(std::max(0.0, hsic_estimate(length, coverage, config)));
}

PenaltyGradient penalty_hsic_gradient(const Eigen::Ref<const Eigen::VectorXd>& length,
                                      const Eigen::Ref<const Eigen::VectorXd>& coverage,
                                      const HsicConfig& config) {
  require_same_length(length.size(), coverage.size(), "penalty_hsic");
  const HsicGradient h = hsic_with_gradient(length, coverage, config);
  PenaltyGradient out{0, Eigen::VectorXd::Zero(length.size()), Eigen::VectorXd::Zero(length.size())};
  if (!(h.value > 0)) return out;
  out.value = std::sqrt(h.value);
  const double chain = 0.5 / out.value;
  out.d_length = chain * h.d_a;
  out.d_coverage = chain * h.d_b;
  return out;
}

std::string to_string(LossKind kind) {
  return kind == LossKind::pinball ? "pinball" : "interval_score";
}

std::string to_string(PenaltyKind kind) {
  switch (kind) {
    case PenaltyKind::none: return "none";
    case PenaltyKind::corr: return "corr";
    case PenaltyKind::hsic: return "hsic";
  }
  return "none";
}

LossKind parse_loss_kind(const std::string& text) {
  if (text == "pinball") return LossKind::pinball;
  if (text == "interval_score" || text == "interval") return LossKind::interval_score;
  throw ConfigError("unknown loss '" + text + "' (expected pinball | interval_score)");
}

PenaltyKind parse_penalty_kind(const std::string& text) {
  if (text == "none") return PenaltyKind::none;
  if (text == "corr") return PenaltyKind::corr;
  if (text == "hsic") return PenaltyKind::hsic;
  throw ConfigError("unknown penalty '" + text + "' (expected none | corr | hsic)");
}

Eigen::VectorXd AlphaSampling::draw(Eigen::Index rows, Rng& rng) const {
  if (kind == Kind::fixed) return Eigen::VectorXd::Constant(rows, fixed_alpha);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto positive = [&] {
    double a = unit(rng);
    while (a <= 0.0) a = unit(rng);
    return a;
  };
  if (kind == Kind::per_batch) return Eigen::VectorXd::Constant(rows, positive());
  Eigen::VectorXd out(rows);
  for (Eigen::Index i = 0; i < rows; ++i) out(i) = positive();
  return out;
}

double effective_gamma(const ObjectiveConfig& config) {
  if (config.penalty == PenaltyKind::none) return 0.0;
  return config.loss == LossKind::pinball ? config.gamma * config.pinball_gamma_scale : config.gamma;
}

QuantileObjective::QuantileObjective(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                     const Eigen::Ref<const Eigen::VectorXd>& y,
                                     const ObjectiveConfig& config, Rng& alpha_stream)
    : config_(config), y_(y) {
  if (x.rows() != y.size())
    throw DimensionError("objective: " + std::to_string(x.rows()) + " feature rows for " +
                         std::to_string(y.size()) + " responses");
  if (y.size() < 1) throw DimensionError("objective: empty batch");
  if (config.gamma < 0) throw ConfigError("objective: gamma must be non-negative");
  if (!(config.alpha > 0 && config.alpha < 1)) throw ConfigError("objective: alpha must lie in (0, 1)");

  const Eigen::Index n = y.size();
  penalty_active_ = effective_gamma(config) > 0 && n >= std::max<Eigen::Index>(2, config.min_penalty_batch);

  if (config.loss == LossKind::pinball)
    alphas_ = Eigen::VectorXd::Constant(n, config.alpha);
  else
    alphas_ = config.sampling.draw(n, alpha_stream);

  const bool extra_rows = penalty_active_ && config.loss == LossKind::interval_score;
  Eigen::VectorXd tau(extra_rows ? 4 * n : 2 * n);
  tau.segment(0, n) = alphas_ / 2.0;
  tau.segment(n, n) = 1.0 - alphas_.array() / 2.0;
  if (extra_rows) {
    tau.segment(2 * n, n).setConstant(config.alpha / 2.0);
    tau.segment(3 * n, n).setConstant(1.0 - config.alpha / 2.0);
  }
  inputs_ = with_quantile_level(x.replicate(tau.size() / n, 1), tau);
}

ObjectiveTerms QuantileObjective::terms(const Eigen::VectorXd& outputs) const {
  ObjectiveTerms t;
  evaluate(outputs, &t);
  return t;
}

OutputObjective<double> QuantileObjective::operator()(const Eigen::VectorXd& outputs) const {
  return evaluate(outputs, nullptr);
}

OutputObjective<double> QuantileObjective::evaluate(const Eigen::VectorXd& outputs,
                                                    ObjectiveTerms* terms) const {
  const Eigen::Index n = y_.size();
  if (outputs.size() != inputs_.rows())
    throw DimensionError("objective: " + std::to_string(outputs.size()) + " outputs for " +
                         std::to_string(inputs_.rows()) + " stacked rows");
  OutputObjective<double> out{0, Eigen::VectorXd::Zero(outputs.size())};
  const double inv_n = 1.0 / static_cast<double>(n);

  double base = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double lo = outputs(i);
    const double hi = outputs(n + i);
    const double y = y_(i);
    const double a = alphas_(i);
    if (config_.loss == LossKind::pinball) {
      const double a_lo = a / 2.0;
      const double a_hi = 1.0 - a / 2.0;
      base += pinball(y, lo, a_lo) + pinball(y, hi, a_hi);
      out.gradient(i) = (y - lo > 0 ? -a_lo : 1.0 - a_lo) * inv_n;
      out.gradient(n + i) = (y - hi > 0 ? -a_hi : 1.0 - a_hi) * inv_n;
    } else {
      base += interval_score(y, lo, hi, a);
      out.gradient(i) = (-1.0 + (y < lo ? 2.0 / a : 0.0)) * inv_n;
      out.gradient(n + i) = (1.0 - (y > hi ? 2.0 / a : 0.0)) * inv_n;
    }
  }
  base *= inv_n;

  double penalty = 0;
  if (penalty_active_) {
    const Eigen::Index offset = config_.loss == LossKind::interval_score ? 2 * n : 0;
    const Eigen::Index m = config_.penalty == PenaltyKind::hsic ? n / 2 : n;
    if (m >= 2) {
      Eigen::VectorXd length(m), coverage(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        length(i) = outputs(offset + n + i) - outputs(offset + i);
        coverage(i) = smooth_coverage(y_(i), outputs(offset + i), outputs(offset + n + i), config_.slope);
      }
      const PenaltyGradient r = config_.penalty == PenaltyKind::corr
                                    ? penalty_corr_gradient(length, coverage)
                                    : penalty_hsic_gradient(length, coverage, config_.hsic);
      penalty = r.value;
      const double g = effective_gamma(config_);
      for (Eigen::Index i = 0; i < m; ++i) {
        const double lo = outputs(offset + i);
        const double hi = outputs(offset + n + i);
        const double below = y_(i) - lo;
        const double above = hi - y_(i);
        const double t = std::tanh(config_.slope * std::min(below, above));
        const double dv_dmargin = 0.5 * config_.slope * (1.0 - t * t);
        double d_lo = -r.d_length(i);
        double d_hi = r.d_length(i);
        if (below <= above)
          d_lo -= r.d_coverage(i) * dv_dmargin;
        else
          d_hi += r.d_coverage(i) * dv_dmargin;
        out.gradient(offset + i) += g * d_lo;
        out.gradient(offset + n + i) += g * d_hi;
      }
    }
  }

  out.value = base + effective_gamma(config_) * penalty;
  if (terms) *terms = {base, penalty, out.value};
  return out;
}

ObjectiveTerms orthogonal_objective(const Mlp<double>& model, const Eigen::Ref<const Eigen::MatrixXd>& x,
                                    const Eigen::Ref<const Eigen::VectorXd>& y,
                                    const ObjectiveConfig& config, Rng& alpha_stream) {
  const QuantileObjective objective(x, y, config, alpha_stream);
  return objective.terms(forward_batch(model, objective.inputs()));
}

QuantileFunction as_quantile_function(const Mlp<double>& model) {
  return [&model](const Eigen::MatrixXd& x, const Eigen::VectorXd& tau) -> Eigen::VectorXd {
    return forward_batch(model, with_quantile_level(x, tau));
  };
}

double interval_score_risk(const QuantileFunction& quantiles, const Eigen::Ref<const Eigen::MatrixXd>& x,
                           const Eigen::Ref<const Eigen::VectorXd>& y, Rng& alpha_stream,
                           const AlphaSampling& sampling) {
  const Eigen::Index n = y.size();
  if (n < 1) throw DimensionError("interval_score_risk: empty batch");
  if (x.rows() != n) throw DimensionError("interval_score_risk: feature rows do not match responses");
  const Eigen::VectorXd alphas = sampling.draw(n, alpha_stream);
  const Eigen::MatrixXd features = x;
  const Eigen::VectorXd lo = quantiles(features, alphas / 2.0);
  const Eigen::VectorXd hi = quantiles(features, (1.0 - alphas.array() / 2.0).matrix());
  double total = 0;
  for (Eigen::Index i = 0; i < n; ++i) total += interval_score(y(i), lo(i), hi(i), alphas(i));
  return total / static_cast<double>(n);
}

}  // namespace oqr
