#include "oqr/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "oqr/error.hpp"
#include "oqr/normal.hpp"

namespace oqr {

namespace {

Eigen::VectorXd unit_uniform_direction(Eigen::Index dim, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = unit(rng);
  return v / v.norm();
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream stream(line);
  std::string cell;
  while (std::getline(stream, cell, ',')) cells.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

std::string format_double(double v) {
  char buffer[64];
  const auto result = std::to_chars(buffer, buffer + sizeof buffer, v);
  return std::string(buffer, result.ptr);
}

template <typename Rows>
Eigen::MatrixXd gather_rows(const Eigen::MatrixXd& m, const Rows& rows) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), m.cols());
  for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
  return out;
}

template <typename Rows>
Eigen::VectorXd gather(const Eigen::VectorXd& v, const Rows& rows) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Eigen::Index>(k)) = v(rows[k]);
  return out;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (n < 1) throw ConfigError("synthetic spec: n must be at least 1");
  if (lambda < 0) throw ConfigError("synthetic spec: lambda must be non-negative");
}

SyntheticModel SyntheticModel::from_spec(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng = make_stream(spec.seed, "synthetic/coefficients");
  SyntheticModel model;
  model.beta = unit_uniform_direction(SyntheticSpec::kDimension, rng);
  model.gamma = unit_uniform_direction(SyntheticSpec::kDimension, rng);
  model.lambda = spec.lambda;
  return model;
}

double SyntheticModel::conditional_sd(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != beta.size())
    throw DimensionError("synthetic model: expected " + std::to_string(beta.size()) + " features");
  if (x(0) == 0.0) return std::abs(SyntheticSpec::kScale * beta.dot(x));
  const double s = SyntheticSpec::kScale * gamma.dot(x);
  return std::sqrt(s * s + lambda * lambda);
}

double SyntheticModel::quantile(const Eigen::Ref<const Eigen::VectorXd>& x, double tau) const {
  if (tau == 0.5) return 0.0;
  return conditional_sd(x) * normal_quantile(tau);
}

const std::vector<Eigen::Index>& Split::part(SplitPart which) const {
  switch (which) {
    case SplitPart::train: return train;
    case SplitPart::validation: return validation;
    case SplitPart::test: return test;
    case SplitPart::calibration: return calibration;
  }
  return train;
}

Eigen::MatrixXd Preprocessing::transform_features(const Eigen::Ref<const Eigen::MatrixXd>& x) const {
  if (x.cols() != feature_mean.size())
    throw DimensionError("preprocessing: expected " + std::to_string(feature_mean.size()) + " features, got " +
                         std::to_string(x.cols()));
  return ((x.rowwise() - feature_mean.transpose()).array().rowwise() / feature_std.transpose().array())
      .matrix();
}

Eigen::VectorXd Preprocessing::transform_y(const Eigen::Ref<const Eigen::VectorXd>& y) const {
  Eigen::VectorXd v = y;
  if (log_y) v = (v.array() - y_log_min + 1.0).log().matrix();
  return (v.array() - y_mean) / y_std;
}

Eigen::VectorXd Preprocessing::inverse_y(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  Eigen::VectorXd y = v.array() * y_std + y_mean;
  if (log_y) y = (y.array().exp() - 1.0 + y_log_min).matrix();
  return y;
}

Eigen::MatrixXd Dataset::model_features(SplitPart which) const {
  if (!preprocessing) throw ConfigError("dataset '" + name + "' is not preprocessed");
  return gather_rows(x_model, split.part(which));
}

Eigen::VectorXd Dataset::model_responses(SplitPart which) const {
  if (!preprocessing) throw ConfigError("dataset '" + name + "' is not preprocessed");
  return gather(y_model, split.part(which));
}

Eigen::MatrixXd Dataset::raw_features(SplitPart which) const { return gather_rows(x, split.part(which)); }

Eigen::VectorXd Dataset::raw_responses(SplitPart which) const { return gather(y, split.part(which)); }

std::optional<Eigen::VectorXi> Dataset::groups(SplitPart which) const {
  if (!group) return std::nullopt;
  const auto& rows = split.part(which);
  Eigen::VectorXi out(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) out(static_cast<Eigen::Index>(k)) = (*group)(rows[k]);
  return out;
}

Dataset sample_synthetic(const SyntheticModel& model, Eigen::Index n, Rng& rng) {
  if (n < 1) throw ConfigError("synthetic sample: n must be at least 1");
  const Eigen::Index dim = model.beta.size();
  std::bernoulli_distribution minority(1.0 - SyntheticSpec::kMajorityProbability);
  std::uniform_real_distribution<double> feature(0.0, 5.0);
  std::normal_distribution<double> noise(0.0, 1.0);

  Dataset data;
  data.name = "synthetic";
  data.x.resize(n, dim);
  data.y.resize(n);
  Eigen::VectorXi group(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool is_minority = minority(rng);
    data.x(i, 0) = is_minority ? 1.0 : 0.0;
    for (Eigen::Index j = 1; j < dim; ++j) data.x(i, j) = feature(rng);
    const double eps1 = noise(rng);
    const double eps2 = noise(rng);
    const auto xi = data.x.row(i);
    if (is_minority)
      data.y(i) = SyntheticSpec::kScale * model.gamma.dot(xi.transpose()) * eps1 + model.lambda * eps2;
    else
      data.y(i) = SyntheticSpec::kScale * model.beta.dot(xi.transpose()) * eps1;
    group(i) = is_minority ? 1 : 0;
  }
  data.group = group;
  for (Eigen::Index j = 0; j < dim; ++j) data.feature_names.push_back("x" + std::to_string(j));
  data.split.train.resize(static_cast<std::size_t>(n));
  std::iota(data.split.train.begin(), data.split.train.end(), Eigen::Index{0});
  return data;
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  const SyntheticModel model = SyntheticModel::from_spec(spec);
  Rng rng = make_stream(spec.seed, "synthetic/samples");
  Dataset data = sample_synthetic(model, spec.n, rng);
  std::ostringstream name;
  name << "synthetic_lambda" << spec.lambda;
  data.name = name.str();
  return data;
}

std::pair<double, double> oracle_interval(const Eigen::Ref<const Eigen::VectorXd>& x, double alpha,
                                          const SyntheticModel& model) {
  if (!(alpha > 0 && alpha <= 1)) throw ConfigError("oracle interval: alpha must lie in (0, 1]");
  return {model.quantile(x, alpha / 2.0), model.quantile(x, 1.0 - alpha / 2.0)};
}

Dataset split(Dataset dataset, const std::vector<double>& fractions, std::uint64_t seed) {
  if (fractions.size() < 3 || fractions.size() > 4)
    throw ConfigError("split: expected 3 or 4 fractions (train, validation, test[, calibration])");
  double total = 0;
  for (double f : fractions) {
    if (f < 0) throw ConfigError("split: fractions must be non-negative");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split: fractions sum to " + format_double(total) + ", not 1");

  const Eigen::Index n = dataset.rows();
  std::vector<Eigen::Index> sizes;
  Eigen::Index assigned = 0;
  for (double f : fractions) {
    sizes.push_back(static_cast<Eigen::Index>(std::floor(f * static_cast<double>(n) + 1e-9)));
    assigned += sizes.back();
  }
  const auto largest = std::max_element(fractions.begin(), fractions.end()) - fractions.begin();
  sizes[static_cast<std::size_t>(largest)] += n - assigned;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng = make_stream(seed, "split");
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<std::vector<Eigen::Index>*> parts = {&dataset.split.train, &dataset.split.validation,
                                                    &dataset.split.test, &dataset.split.calibration};
  for (auto* part : parts) part->clear();
  auto it = order.begin();
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    parts[k]->assign(it, it + sizes[k]);
    std::sort(parts[k]->begin(), parts[k]->end());
    it += sizes[k];
  }
  dataset.preprocessing.reset();
  dataset.x_model.resize(0, 0);
  dataset.y_model.resize(0);
  return dataset;
}

Dataset preprocess(Dataset dataset, bool log_transform_y) {
  const auto& train = dataset.split.train;
  if (train.empty()) throw DataError("preprocess: training split is empty");
  const Eigen::MatrixXd x_train = gather_rows(dataset.x, train);
  const Eigen::VectorXd y_train = gather(dataset.y, train);
  const double n = static_cast<double>(train.size());

  Preprocessing prep;
  prep.feature_mean = x_train.colwise().mean().transpose();
  prep.feature_std.resize(x_train.cols());
  for (Eigen::Index j = 0; j < x_train.cols(); ++j) {
    const double var = (x_train.col(j).array() - prep.feature_mean(j)).square().sum() / n;
    if (!(var > 0)) {
      const std::string column =
          j < static_cast<Eigen::Index>(dataset.feature_names.size()) ? dataset.feature_names[j] : std::to_string(j);
      throw DataError("preprocess: feature column '" + column + "' has zero variance on the training split");
    }
    prep.feature_std(j) = std::sqrt(var);
  }

  prep.log_y = log_transform_y;
  Eigen::VectorXd y_fit = y_train;
  if (log_transform_y) {
    prep.y_log_min = y_train.minCoeff();
    y_fit = (y_fit.array() - prep.y_log_min + 1.0).log().matrix();
  }
  prep.y_mean = y_fit.mean();
  const double y_var = (y_fit.array() - prep.y_mean).square().sum() / n;
  if (!(y_var > 0)) throw DataError("preprocess: response has zero variance on the training split");
  prep.y_std = std::sqrt(y_var);

  dataset.x_model = prep.transform_features(dataset.x);
  dataset.y_model = prep.transform_y(dataset.y);
  dataset.preprocessing = prep;
  return dataset;
}

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open CSV '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw DataError("CSV '" + path + "' is empty");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line = line.substr(3);  // UTF-8 BOM
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const std::vector<std::string> header = split_line(line);

  auto find_column = [&](const std::string& column) -> std::size_t {
    const auto it = std::find(header.begin(), header.end(), column);
    if (it == header.end()) throw DataError("CSV '" + path + "': column '" + column + "' not found");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t target = find_column(schema.target);
  std::optional<std::size_t> group_col;
  if (schema.group) group_col = find_column(*schema.group);
  std::vector<std::size_t> dropped;
  for (const auto& column : schema.drop) dropped.push_back(find_column(column));

  std::vector<std::size_t> feature_cols;
  Dataset data;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (c == target || std::find(dropped.begin(), dropped.end(), c) != dropped.end()) continue;
    if (group_col && c == *group_col && !schema.group_is_feature) continue;
    feature_cols.push_back(c);
    data.feature_names.push_back(header[c]);
  }

  std::vector<std::vector<double>> rows;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_line(line);
    if (cells.size() != header.size())
      throw DataError("CSV '" + path + "' row " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " cells, got " + std::to_string(cells.size()));
    std::vector<double> values(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
      const auto& cell = cells[c];
      const char* end = cell.data() + cell.size();
      const auto result = std::from_chars(cell.data(), end, values[c]);
      if (cell.empty() || result.ec != std::errc() || result.ptr != end)
        throw DataError("CSV '" + path + "' row " + std::to_string(line_no) + ", column '" + header[c] +
                        "': non-numeric cell '" + cell + "'");
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw DataError("CSV '" + path + "' has no data rows");

  const auto n = static_cast<Eigen::Index>(rows.size());
  data.name = path;
  data.x.resize(n, static_cast<Eigen::Index>(feature_cols.size()));
  data.y.resize(n);
  Eigen::VectorXi group(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& row = rows[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < feature_cols.size(); ++k) data.x(i, static_cast<Eigen::Index>(k)) = row[feature_cols[k]];
    data.y(i) = row[target];
    if (group_col) group(i) = static_cast<int>(std::lround(row[*group_col]));
  }
  if (group_col) data.group = group;
  data.split.train.resize(static_cast<std::size_t>(n));
  std::iota(data.split.train.begin(), data.split.train.end(), Eigen::Index{0});
  return data;
}

void write_csv(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write CSV '" + path + "'");
  for (Eigen::Index j = 0; j < dataset.features(); ++j) {
    out << (j < static_cast<Eigen::Index>(dataset.feature_names.size()) ? dataset.feature_names[j]
                                                                        : "x" + std::to_string(j))
        << ',';
  }
  out << "y\n";
  for (Eigen::Index i = 0; i < dataset.rows(); ++i) {
    for (Eigen::Index j = 0; j < dataset.features(); ++j) out << format_double(dataset.x(i, j)) << ',';
    out << format_double(dataset.y(i)) << '\n';
  }
}

}  // namespace oqr
