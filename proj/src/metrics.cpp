#include "oqr/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>
#include <random>

#include <json.hpp>

#include "oqr/error.hpp"
#include "oqr/random.hpp"
#include "oqr/rank.hpp"

namespace oqr {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void require_rows(const IntervalBatch& intervals, Eigen::Index minimum, const char* what) {
  if (intervals.size() < minimum)
    throw DataError(std::string(what) + ": needs at least " + std::to_string(minimum) + " intervals");
}

double covered_fraction(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& rows) {
  double hits = 0;
  for (Eigen::Index r : rows) hits += v(r);
  return hits / static_cast<double>(rows.size());
}

std::string csv_field(const std::string& text) {
  if (text.find_first_of(",\"\n") == std::string::npos) return text;
  std::string quoted = "\"";
  for (char c : text) {
    if (c == '"') quoted += '"';
    quoted += c;
  }
  return quoted + "\"";
}

}  // namespace

double coverage(const IntervalBatch& intervals) {
  require_rows(intervals, 1, "coverage");
  return intervals.covered().mean();
}

double mean_length(const IntervalBatch& intervals) {
  require_rows(intervals, 1, "length");
  return intervals.length().mean();
}

double corr_metric(const IntervalBatch& intervals) {
  require_rows(intervals, 2, "corr metric");
  return penalty_corr(intervals.length(), intervals.covered());
}

double hsic_metric(const IntervalBatch& intervals, const HsicConfig& config) {
  require_rows(intervals, 2, "hsic metric");
  return std::sqrt(std::max(0.0, hsic_estimate(intervals.length(), intervals.covered(), config)));
}

WindowMinimum min_mean_window(const Eigen::Ref<const Eigen::VectorXd>& values, Eigen::Index min_length) {
  const Eigen::Index n = values.size();
  if (min_length < 1 || min_length > n)
    throw DataError("window minimum: window length " + std::to_string(min_length) + " out of range for " +
                    std::to_string(n) + " values");
  std::vector<double> prefix(static_cast<std::size_t>(n) + 1, 0.0);
  for (Eigen::Index i = 0; i < n; ++i) prefix[i + 1] = prefix[i] + values(i);
  auto mean_of = [&](Eigen::Index b, Eigen::Index e) { return (prefix[e] - prefix[b]) / static_cast<double>(e - b); };

  // Some run of length >= m has mean <= c  iff  S_j - max_{i <= j - m} S_i <= 0
  // for the prefix sums S of (values - c).
  std::vector<double> shifted(static_cast<std::size_t>(n) + 1);
  auto feasible = [&](double c, WindowMinimum& found) {
    for (Eigen::Index k = 0; k <= n; ++k) shifted[k] = prefix[k] - c * static_cast<double>(k);
    double best = -std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index j = min_length; j <= n; ++j) {
      const Eigen::Index i = j - min_length;
      if (shifted[i] > best) {
        best = shifted[i];
        arg = i;
      }
      if (shifted[j] - best <= 0) {
        found = {mean_of(arg, j), arg, j};
        return true;
      }
    }
    return false;
  };

  WindowMinimum result{mean_of(0, n), 0, n};
  double lo = values.minCoeff();
  double hi = result.mean;
  WindowMinimum found{};
  if (feasible(lo, found)) return found.mean < result.mean ? found : result;
  // Window means with denominators <= n are at least 1/n^2 apart, so a
  // bracket narrower than that isolates the minimum.
  const double tolerance = 0.25 / (static_cast<double>(n) * static_cast<double>(n));
  while (hi - lo > tolerance) {
    const double mid = 0.5 * (lo + hi);
    if (feasible(mid, found)) {
      if (found.mean < result.mean) result = found;
      hi = std::min(mid, result.mean);
    } else {
      lo = mid;
    }
  }
  return result;
}

WscResult worst_slab(const Eigen::Ref<const Eigen::MatrixXd>& x, const IntervalBatch& intervals,
                     const WscOptions& options) {
  const Eigen::Index n = intervals.size();
  if (x.rows() != n) throw DimensionError("wsc: features do not match intervals");
  if (!(options.delta > 0 && options.delta <= 1)) throw ConfigError("wsc: delta must lie in (0, 1]");
  if (options.directions < 1) throw ConfigError("wsc: need at least one direction");
  if (static_cast<double>(n) * options.delta < 1 - 1e-9)
    throw DataError("wsc: " + std::to_string(n) + " rows are too few for delta = " + std::to_string(options.delta));
  const Eigen::Index m = ceil_rank(options.delta, n);
  const Eigen::VectorXd v = intervals.covered();

  Rng rng = make_stream(options.seed, "wsc");
  std::normal_distribution<double> normal;
  Eigen::MatrixXd directions(x.cols(), options.directions);
  for (int d = 0; d < options.directions; ++d) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) directions(j, d) = normal(rng);
    const double norm = directions.col(d).norm();
    if (norm > 0) directions.col(d) /= norm;
  }

  WscResult result;
  result.value = std::numeric_limits<double>::infinity();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  Eigen::VectorXd sorted_v(n);
  for (int d = 0; d < options.directions; ++d) {
    const Eigen::VectorXd projection = x * directions.col(d);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
      return projection(a) < projection(b) || (projection(a) == projection(b) && a < b);
    });
    for (Eigen::Index k = 0; k < n; ++k) sorted_v(k) = v(order[k]);
    const WindowMinimum w = min_mean_window(sorted_v, m);
    if (w.mean < result.value) {
      result.value = w.mean;
      result.direction = d;
      result.begin = w.begin;
      result.end = w.end;
      result.normal = directions.col(d);
    }
  }
  return result;
}

double wsc(const Eigen::Ref<const Eigen::MatrixXd>& x, const IntervalBatch& intervals, const WscOptions& options) {
  return worst_slab(x, intervals, options).value;
}

double delta_wsc(const Eigen::Ref<const Eigen::MatrixXd>& x, const IntervalBatch& intervals,
                 const WscOptions& options) {
  return std::abs(wsc(x, intervals, options) - coverage(intervals));
}

std::vector<Eigen::Index> ils_set(const Eigen::Ref<const Eigen::VectorXd>& length_a1,
                                  const Eigen::Ref<const Eigen::VectorXd>& length_a2, double level) {
  if (length_a1.size() != length_a2.size()) throw DimensionError("ils: length vectors differ in size");
  const Eigen::Index n = length_a1.size();
  if (n == 0) throw DataError("ils: no rows");
  if (!(level > 0 && level <= 1)) throw ConfigError("ils: level must lie in (0, 1]");
  const Eigen::VectorXd diff = length_a1 - length_a2;
  std::vector<double> sorted(diff.data(), diff.data() + n);
  const Eigen::Index k = std::max<Eigen::Index>(1, ceil_rank(level, n));
  std::nth_element(sorted.begin(), sorted.begin() + (k - 1), sorted.end());
  const double q = sorted[static_cast<std::size_t>(k - 1)];
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < n; ++i)
    if (diff(i) >= q) rows.push_back(i);
  return rows;
}

double delta_ils_coverage(const IntervalBatch& intervals, const std::vector<Eigen::Index>& ils) {
  if (ils.empty()) throw DataError("delta ils coverage: empty ILS");
  const Eigen::VectorXd v = intervals.covered();
  for (Eigen::Index r : ils)
    if (r < 0 || r >= v.size()) throw DimensionError("delta ils coverage: row index out of range");
  return std::abs(covered_fraction(v, ils) - v.mean());
}

NodeSelection select_node(const Eigen::Ref<const Eigen::MatrixXd>& x, const IntervalBatch& intervals,
                          const std::vector<Eigen::Index>& ils, const TreeOptions& options) {
  const Eigen::Index n = intervals.size();
  if (x.rows() != n) throw DimensionError("delta node coverage: features do not match intervals");
  if (ils.empty()) throw DataError("delta node coverage: empty ILS");
  std::vector<bool> member(static_cast<std::size_t>(n), false);
  for (Eigen::Index r : ils) {
    if (r < 0 || r >= n) throw DimensionError("delta node coverage: row index out of range");
    member[static_cast<std::size_t>(r)] = true;
  }
  const DecisionTree tree = DecisionTree::fit(x, member, options);
  const Eigen::Index min_size = ceil_rank(options.min_node_fraction, n);

  NodeSelection best;
  best.node = -1;
  const auto& nodes = tree.nodes();
  for (int k = 0; k < static_cast<int>(nodes.size()); ++k) {
    const auto& node = nodes[k];
    if (node.size() < min_size) continue;
    const Eigen::Index in = node.positives;
    const Eigen::Index out = node.size() - in;
    bool better = best.node < 0;
    if (!better) {
      // in / out against best.in_ils / best.outside_ils, exactly.
      const bool inf_new = out == 0;
      const bool inf_old = best.outside_ils == 0;
      int cmp;
      if (inf_new || inf_old) {
        cmp = inf_new == inf_old ? 0 : (inf_new ? 1 : -1);
      } else {
        const auto lhs = static_cast<long double>(in) * best.outside_ils;
        const auto rhs = static_cast<long double>(best.in_ils) * out;
        cmp = lhs > rhs ? 1 : (lhs < rhs ? -1 : 0);
      }
      better = cmp > 0 || (cmp == 0 && node.size() > best.in_ils + best.outside_ils);
    }
    if (better) {
      best.node = k;
      best.in_ils = in;
      best.outside_ils = out;
    }
  }
  if (best.node < 0) throw DataError("delta node coverage: no admissible node");
  const Eigen::VectorXd v = intervals.covered();
  best.delta = std::abs(covered_fraction(v, nodes[best.node].rows) - v.mean());
  return best;
}

double delta_node_coverage(const Eigen::Ref<const Eigen::MatrixXd>& x, const IntervalBatch& intervals,
                           const std::vector<Eigen::Index>& ils, const TreeOptions& options) {
  return select_node(x, intervals, ils, options).delta;
}

double improvement_pct(double baseline, double treated) {
  if (!std::isfinite(baseline)) throw DataError("improvement: baseline must be finite");
  if (baseline == 0) {
    if (treated == 0) return 0;
    return treated > 0 ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::infinity();
  }
  return 100 * (baseline - treated) / baseline;
}

std::string format_improvement(double pct) { return format_number(pct); }

MetricsRow evaluate(const std::string& dataset, const std::string& method, const std::string& seed,
                    const Eigen::Ref<const Eigen::MatrixXd>& x, const IntervalBatch& intervals,
                    const MetricsOptions& options) {
  MetricsRow row;
  row.dataset = dataset;
  row.method = method;
  row.seed = seed;
  row.coverage = coverage(intervals);
  row.length = mean_length(intervals);
  row.corr = corr_metric(intervals);
  row.hsic = hsic_metric(intervals, options.hsic);
  row.wsc = wsc(x, intervals, options.wsc);
  row.delta_wsc = std::abs(row.wsc - row.coverage);
  row.delta_ils = kNaN;
  row.delta_node = kNaN;
  return row;
}

std::vector<GroupMetricsRow> evaluate_groups(const std::string& dataset, const std::string& method,
                                             const std::string& seed, const IntervalBatch& intervals,
                                             const Eigen::Ref<const Eigen::VectorXi>& groups) {
  if (groups.size() != intervals.size()) throw DimensionError("group metrics: groups do not match intervals");
  std::map<int, std::vector<Eigen::Index>> members;
  for (Eigen::Index i = 0; i < groups.size(); ++i) members[groups(i)].push_back(i);
  std::vector<GroupMetricsRow> rows;
  for (const auto& [g, idx] : members) {
    const IntervalBatch part = intervals.subset(idx);
    rows.push_back({dataset, method, seed, g, static_cast<Eigen::Index>(idx.size()), coverage(part),
                    mean_length(part)});
  }
  return rows;
}

MeanSe mean_se(const std::vector<double>& values) {
  MeanSe out;
  double sum = 0;
  for (double v : values)
    if (!std::isnan(v)) {
      sum += v;
      ++out.count;
    }
  if (out.count == 0) return {kNaN, kNaN, 0};
  out.mean = sum / static_cast<double>(out.count);
  double sq = 0;
  for (double v : values)
    if (!std::isnan(v)) sq += (v - out.mean) * (v - out.mean);
  out.se = std::sqrt(sq / static_cast<double>(out.count)) / std::sqrt(static_cast<double>(out.count));
  return out;
}

std::vector<MetricsRow> aggregate(const std::vector<MetricsRow>& rows) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::vector<const MetricsRow*>> by_key;
  for (const auto& row : rows) {
    auto key = std::make_pair(row.dataset, row.method);
    auto [it, inserted] = by_key.try_emplace(key);
    if (inserted) keys.push_back(key);
    it->second.push_back(&row);
  }
  static constexpr double MetricsRow::*fields[] = {&MetricsRow::coverage,  &MetricsRow::length,
                                                    &MetricsRow::corr,      &MetricsRow::hsic,
                                                    &MetricsRow::wsc,       &MetricsRow::delta_wsc,
                                                    &MetricsRow::delta_ils, &MetricsRow::delta_node};
  std::vector<MetricsRow> out;
  for (const auto& key : keys) {
    const auto& group = by_key[key];
    MetricsRow mean{key.first, key.second, "mean"};
    MetricsRow se{key.first, key.second, "se"};
    for (auto field : fields) {
      std::vector<double> values;
      for (const MetricsRow* r : group) values.push_back(r->*field);
      const MeanSe s = mean_se(values);
      mean.*field = s.mean;
      se.*field = s.se;
    }
    out.push_back(mean);
    out.push_back(se);
  }
  return out;
}

const std::vector<std::string> kMetricsColumns = {"dataset", "method",    "seed",      "coverage",
                                                  "length",  "corr",      "hsic",      "wsc",
                                                  "delta_wsc", "delta_ils", "delta_node"};

std::string format_number(double value) {
  if (std::isnan(value)) return "";
  if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, value);
  return std::string(buf, res.ptr);
}

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows) {
  for (std::size_t k = 0; k < kMetricsColumns.size(); ++k) out << (k ? "," : "") << kMetricsColumns[k];
  out << '\n';
  for (const auto& r : rows) {
    out << csv_field(r.dataset) << ',' << csv_field(r.method) << ',' << csv_field(r.seed) << ','
        << format_number(r.coverage) << ',' << format_number(r.length) << ',' << format_number(r.corr) << ','
        << format_number(r.hsic) << ',' << format_number(r.wsc) << ',' << format_number(r.delta_wsc) << ','
        << format_number(r.delta_ils) << ',' << format_number(r.delta_node) << '\n';
  }
}

std::string metrics_json(const std::vector<MetricsRow>& rows) {
  auto num = [](double v) -> nlohmann::ordered_json {
    if (std::isnan(v)) return nullptr;
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
  };
  nlohmann::ordered_json array = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    array.push_back(nlohmann::ordered_json{{"dataset", r.dataset},
                     {"method", r.method},
                     {"seed", r.seed},
                     {"coverage", num(r.coverage)},
                     {"length", num(r.length)},
                     {"corr", num(r.corr)},
                     {"hsic", num(r.hsic)},
                     {"wsc", num(r.wsc)},
                     {"delta_wsc", num(r.delta_wsc)},
                     {"delta_ils", num(r.delta_ils)},
                     {"delta_node", num(r.delta_node)}});
  }
  return array.dump(2);
}

void write_group_csv(std::ostream& out, const std::vector<GroupMetricsRow>& rows) {
  out << "dataset,method,seed,group,count,coverage,length\n";
  for (const auto& r : rows)
    out << csv_field(r.dataset) << ',' << csv_field(r.method) << ',' << csv_field(r.seed) << ',' << r.group << ','
        << r.count << ',' << format_number(r.coverage) << ',' << format_number(r.length) << '\n';
}

}  // namespace oqr
