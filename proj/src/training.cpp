#include "oqr/training.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <set>

#include "oqr/error.hpp"

namespace oqr {

namespace {

template <typename Rows>
Eigen::MatrixXd take_rows(const Eigen::MatrixXd& m, const Rows& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
  return out;
}

template <typename Rows>
Eigen::VectorXd take(const Eigen::VectorXd& v, const Rows& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(rows[k]);
  return out;
}

// Base (penalty-free) loss at the training levels, or the penalized
// objective when requested. Deterministic: interval-score levels come from
// a fixed midpoint grid.
double validation_loss(const Mlp<double>& net, const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                       const TrainConfig& config) {
  if (config.penalized_validation && config.loss == LossKind::pinball) {
    Rng unused(0);
    return orthogonal_objective(net, x, y, config.objective(), unused).total;
  }
  const Eigen::Index n = y.size();
  if (config.loss == LossKind::pinball) {
    const IntervalBatch raw{forward_batch(net, with_quantile_level(x, Eigen::VectorXd::Constant(n, config.alpha / 2))),
                            forward_batch(net, with_quantile_level(x, Eigen::VectorXd::Constant(n, 1 - config.alpha / 2))),
                            y};
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) total += pinball_pair(y(i), raw.lo(i), raw.hi(i), config.alpha);
    return total / static_cast<double>(n);
  }
  const int grid = config.validation_alpha_grid;
  double total = 0;
  for (int k = 0; k < grid; ++k) {
    const double a = (k + 0.5) / grid;
    const Eigen::VectorXd lo = forward_batch(net, with_quantile_level(x, Eigen::VectorXd::Constant(n, a / 2)));
    const Eigen::VectorXd hi = forward_batch(net, with_quantile_level(x, Eigen::VectorXd::Constant(n, 1 - a / 2)));
    for (Eigen::Index i = 0; i < n; ++i) total += interval_score(y(i), lo(i), hi(i), a);
  }
  double value = total / (static_cast<double>(n) * grid);
  if (config.penalized_validation) {
    const IntervalBatch target = predict_model_space(net, x, y, config.alpha);
    const ObjectiveConfig obj = config.objective();
    const double r = config.penalty == PenaltyKind::corr
                         ? penalty_corr(target.length(), target.smooth_covered(config.slope))
                         : penalty_hsic(target.length(), target.smooth_covered(config.slope), obj.hsic);
    value += effective_gamma(obj) * r;
  }
  return value;
}

void record_coverage(EpochRecord& record, SplitPart part, const Mlp<double>& net, const Eigen::MatrixXd& x,
                     const Eigen::VectorXd& y, const std::optional<Eigen::VectorXi>& groups,
                     const std::set<int>& group_ids, double alpha) {
  if (y.size() == 0) return;
  const Eigen::VectorXd v = predict_model_space(net, x, y, alpha).covered();
  record.coverage.push_back({part, -1, v.mean()});
  if (!groups) return;
  for (int g : group_ids) {
    double hits = 0;
    double count = 0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
      if ((*groups)(i) == g) {
        hits += v(i);
        count += 1;
      }
    if (count > 0) record.coverage.push_back({part, g, hits / count});
  }
}

}  // namespace

std::string to_string(Architecture arch) { return arch == Architecture::synthetic ? "synthetic" : "real"; }

Architecture parse_architecture(const std::string& text) {
  if (text == "synthetic") return Architecture::synthetic;
  if (text == "real") return Architecture::real;
  throw ConfigError("unknown architecture '" + text + "' (expected synthetic | real)");
}

void TrainConfig::validate() const {
  if (gamma < 0) throw ConfigError("train: gamma must be non-negative");
  if (patience < 1) throw ConfigError("train: patience must be at least 1");
  if (max_epochs < 1) throw ConfigError("train: max_epochs must be at least 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be positive");
  if (gamma > 0 && penalty != PenaltyKind::none && batch_size < 2)
    throw ConfigError("train: a penalty needs batch_size >= 2");
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("train: alpha must lie in (0, 1)");
  if (!(learning_rate > 0)) throw ConfigError("train: learning rate must be positive");
  if (validation_alpha_grid < 1) throw ConfigError("train: validation_alpha_grid must be positive");
  const double rate = dropout_rate();
  if (!(rate >= 0 && rate < 1)) throw ConfigError("train: dropout must lie in [0, 1)");
}

std::vector<Eigen::Index> TrainConfig::hidden_widths() const {
  if (hidden) return *hidden;
  return architecture == Architecture::synthetic ? std::vector<Eigen::Index>{64, 64}
                                                 : std::vector<Eigen::Index>{64, 64, 64};
}

double TrainConfig::dropout_rate() const {
  if (dropout) return *dropout;
  return architecture == Architecture::synthetic ? 0.0 : 0.1;
}

ObjectiveConfig TrainConfig::objective() const {
  ObjectiveConfig obj;
  obj.loss = loss;
  obj.penalty = penalty;
  obj.gamma = gamma;
  obj.alpha = alpha;
  obj.slope = slope;
  obj.sampling = sampling;
  return obj;
}

std::optional<double> EpochRecord::coverage_of(SplitPart split, int group) const {
  for (const auto& c : coverage)
    if (c.split == split && c.group == group) return c.coverage;
  return std::nullopt;
}

IntervalBatch predict_model_space(const Mlp<double>& net, const Eigen::Ref<const Eigen::MatrixXd>& x_model,
                                  const Eigen::Ref<const Eigen::VectorXd>& y_model, double alpha) {
  if (!(alpha > 0 && alpha < 1)) throw ConfigError("predict: alpha must lie in (0, 1)");
  const Eigen::Index n = x_model.rows();
  if (y_model.size() != n) throw DimensionError("predict: responses do not match feature rows");
  const Eigen::MatrixXd x = x_model;
  return IntervalBatch{forward_batch(net, with_quantile_level(x, Eigen::VectorXd::Constant(n, alpha / 2))),
                       forward_batch(net, with_quantile_level(x, Eigen::VectorXd::Constant(n, 1 - alpha / 2))),
                       y_model}
      .uncrossed();
}

IntervalBatch predict_intervals(const QuantileModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x_raw,
                                const Eigen::Ref<const Eigen::VectorXd>& y_raw, double alpha) {
  const Eigen::MatrixXd x_model = model.preprocessing.transform_features(x_raw);
  const IntervalBatch scaled =
      predict_model_space(model.net, x_model, Eigen::VectorXd::Zero(x_raw.rows()), alpha);
  return IntervalBatch{model.preprocessing.inverse_y(scaled.lo), model.preprocessing.inverse_y(scaled.hi), y_raw}
      .uncrossed();
}

IntervalBatch predict_intervals(const QuantileModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x_raw,
                                const Eigen::Ref<const Eigen::VectorXd>& y_raw) {
  return predict_intervals(model, x_raw, y_raw, model.alpha);
}

TrainResult train(const Dataset& dataset, const TrainConfig& config) {
  config.validate();
  if (!dataset.preprocessing) throw ConfigError("train: dataset '" + dataset.name + "' is not preprocessed");
  if (dataset.split.train.empty()) throw ConfigError("train: empty training split");
  if (dataset.split.validation.empty()) throw ConfigError("train: empty validation split");

  const Eigen::MatrixXd x_train = dataset.model_features(SplitPart::train);
  const Eigen::VectorXd y_train = dataset.model_responses(SplitPart::train);
  const Eigen::MatrixXd x_val = dataset.model_features(SplitPart::validation);
  const Eigen::VectorXd y_val = dataset.model_responses(SplitPart::validation);
  const Eigen::MatrixXd x_test = dataset.model_features(SplitPart::test);
  const Eigen::VectorXd y_test = dataset.model_responses(SplitPart::test);
  const auto g_train = dataset.groups(SplitPart::train);
  const auto g_test = dataset.groups(SplitPart::test);
  std::set<int> group_ids;
  if (dataset.group)
    for (Eigen::Index i = 0; i < dataset.group->size(); ++i) group_ids.insert((*dataset.group)(i));

  Rng init_rng = make_stream(config.seed, "init");
  Rng shuffle_rng = make_stream(config.seed, "shuffle");
  Rng dropout_rng = make_stream(config.seed, "dropout");
  Rng alpha_rng = make_stream(config.seed, "alpha");

  Mlp<double> net = Mlp<double>::random(x_train.cols() + 1, config.hidden_widths(), config.dropout_rate(), init_rng);
  AdamState<double> adam(net, config.learning_rate);
  const ObjectiveConfig base_objective = config.objective();

  TrainResult result{QuantileModel{net, *dataset.preprocessing, config.alpha}, {}};
  double best_loss = std::numeric_limits<double>::infinity();

  const auto n = static_cast<std::size_t>(y_train.size());
  const auto batch = static_cast<std::size_t>(config.batch_size);
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < n; start += batch, ++batch_index) {
      const std::size_t stop = std::min(n, start + batch);
      const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(stop));
      const Eigen::MatrixXd xb = take_rows(x_train, rows);
      const Eigen::VectorXd yb = take(y_train, rows);

      ObjectiveConfig obj = base_objective;
      obj.min_penalty_batch = stop - start < batch ? config.min_penalty_batch : 2;
      const QuantileObjective objective(xb, yb, obj, alpha_rng);
      LossGradients<double> step;
      try {
        step = loss_gradients(net, objective.inputs(), objective.as_function(), Mode::train, &dropout_rng,
                              batch_index);
      } catch (const NumericError& e) {
        throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
      }
      adam_step(adam, net, step.gradients);
      loss_sum += step.value * static_cast<double>(rows.size());
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(n);
    record.validation_loss = validation_loss(net, x_val, y_val, config);
    if (!std::isfinite(record.validation_loss))
      throw NumericError("epoch " + std::to_string(epoch) + ": non-finite validation loss");
    if (config.track_coverage) {
      record_coverage(record, SplitPart::train, net, x_train, y_train, g_train, group_ids, config.alpha);
      record_coverage(record, SplitPart::test, net, x_test, y_test, g_test, group_ids, config.alpha);
    }
    result.trace.epochs.push_back(std::move(record));

    if (result.trace.epochs.back().validation_loss < best_loss) {
      best_loss = result.trace.epochs.back().validation_loss;
      result.trace.best_epoch = epoch;
      result.model.net = net;
    }
    if (epoch - result.trace.best_epoch >= config.patience) break;
  }
  return result;
}

double gamma_for(const std::string& dataset_name, LossKind loss, PenaltyKind penalty,
                 std::optional<double> override_value) {
  if (override_value) {
    if (*override_value < 0) throw ConfigError("gamma override must be non-negative");
    return *override_value;
  }
  if (penalty == PenaltyKind::none) return 0.0;

  struct Multipliers {
    double pinball_corr;
    double pinball_hsic;
    double interval_corr;
  };
  static const std::map<std::string, Multipliers> table = {
      {"facebook_1", {0.5, 0.5, 0.5}}, {"facebook_2", {0.5, 0.5, 0.5}}, {"blog_data", {0.5, 0.5, 1.0}},
      {"bio", {0.1, 0.1, 0.1}},        {"kin8nm", {0.1, 0.1, 0.5}},     {"naval", {0.1, 0.1, 0.1}},
      {"meps_19", {0.5, 0.1, 3.0}},    {"meps_20", {0.5, 0.1, 3.0}},    {"meps_21", {0.5, 0.5, 3.0}},
  };

  if (dataset_name.rfind("synthetic", 0) == 0 && penalty == PenaltyKind::corr)
    return loss == LossKind::pinball ? 0.5 : 3.0;

  const auto it = table.find(dataset_name);
  if (it != table.end()) {
    if (loss == LossKind::pinball) return penalty == PenaltyKind::corr ? it->second.pinball_corr : it->second.pinball_hsic;
    if (penalty == PenaltyKind::corr) return it->second.interval_corr;
  }
  throw ConfigError("no penalty multiplier known for dataset '" + dataset_name + "' with " + to_string(loss) +
                    " loss and " + to_string(penalty) + " penalty; pass an explicit gamma");
}

}  // namespace oqr
