#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "oqr/decision_tree.hpp"
#include "oqr/hsic.hpp"
#include "oqr/losses.hpp"

namespace oqr {

/// Fraction of rows with lo <= y <= hi.
double coverage(const IntervalBatch& intervals);
double mean_length(const IntervalBatch& intervals);

/// |corr(L, V)| with the exact coverage indicator.
double corr_metric(const IntervalBatch& intervals);
/// sqrt(HSIC(L, V)) with the exact coverage indicator.
double hsic_metric(const IntervalBatch& intervals, const HsicConfig& config = {});

struct WscOptions {
  double delta = 0.1;
  int directions = 1000;
  std::uint64_t seed = 0;
};

struct WscResult {
  double value = 1;  // worst slab coverage
  int direction = -1;
  Eigen::Index begin = 0;  // window [begin, end) in the sorted projection order
  Eigen::Index end = 0;
  Eigen::VectorXd normal;  // the direction of the worst slab
};

/// Smallest mean of `values` over contiguous runs of at least `min_length`
/// entries; returns {mean, begin, end}.
struct WindowMinimum {
  double mean;
  Eigen::Index begin;
  Eigen::Index end;
};
WindowMinimum min_mean_window(const Eigen::Ref<const Eigen::VectorXd>& values, Eigen::Index min_length);

/// Worst coverage over slabs {a <= v.x <= b} holding at least ceil(delta n)
/// points, minimised over random unit directions v.
WscResult worst_slab(const Eigen::Ref<const Eigen::MatrixXd>& x, const IntervalBatch& intervals,
                     const WscOptions& options = {});
double wsc(const Eigen::Ref<const Eigen::MatrixXd>& x, const IntervalBatch& intervals,
           const WscOptions& options = {});
/// |wsc - coverage|.
double delta_wsc(const Eigen::Ref<const Eigen::MatrixXd>& x, const IntervalBatch& intervals,
                 const WscOptions& options = {});

/// Rows whose length difference len_a1 - len_a2 is at least its
/// ceil(0.9 n)-th order statistic.
std::vector<Eigen::Index> ils_set(const Eigen::Ref<const Eigen::VectorXd>& length_a1,
                                  const Eigen::Ref<const Eigen::VectorXd>& length_a2, double level = 0.9);

/// |coverage on `rows` - coverage on all rows|.
double delta_ils_coverage(const IntervalBatch& intervals, const std::vector<Eigen::Index>& ils);

struct NodeSelection {
  int node = 0;  // index into tree.nodes()
  Eigen::Index in_ils = 0;
  Eigen::Index outside_ils = 0;
  double delta = 0;
};

/// Fits the ILS-membership tree on x and audits the node most enriched in
/// ILS rows (ratio |node & ILS| / |node \ ILS|, empty denominator = +inf,
/// ties to the larger node).
NodeSelection select_node(const Eigen::Ref<const Eigen::MatrixXd>& x, const IntervalBatch& intervals,
                          const std::vector<Eigen::Index>& ils, const TreeOptions& options = {});
double delta_node_coverage(const Eigen::Ref<const Eigen::MatrixXd>& x, const IntervalBatch& intervals,
                           const std::vector<Eigen::Index>& ils, const TreeOptions& options = {});

/// 100 (baseline - treated) / baseline; -inf when the baseline is 0 and the
/// treated value is not.
double improvement_pct(double baseline, double treated);
std::string format_improvement(double pct);

/// One trial's metrics. delta_ils / delta_node are NaN when not computed.
struct MetricsRow {
  std::string dataset;
  std::string method;
  std::string seed;
  double coverage = 0;
  double length = 0;
  double corr = 0;
  double hsic = 0;
  double wsc = 0;
  double delta_wsc = 0;
  double delta_ils = 0;
  double delta_node = 0;
};

struct GroupMetricsRow {
  std::string dataset;
  std::string method;
  std::string seed;
  int group = 0;
  Eigen::Index count = 0;
  double coverage = 0;
  double length = 0;
};

struct MetricsOptions {
  WscOptions wsc{};
  HsicConfig hsic{};
  TreeOptions tree{};
};

/// Metrics that need only one method's intervals; delta_ils / delta_node are
/// left as NaN.
MetricsRow evaluate(const std::string& dataset, const std::string& method, const std::string& seed,
                    const Eigen::Ref<const Eigen::MatrixXd>& x, const IntervalBatch& intervals,
                    const MetricsOptions& options = {});

std::vector<GroupMetricsRow> evaluate_groups(const std::string& dataset, const std::string& method,
                                             const std::string& seed, const IntervalBatch& intervals,
                                             const Eigen::Ref<const Eigen::VectorXi>& groups);

/// Mean and standard error (population std / sqrt(trials)) of one metric.
struct MeanSe {
  double mean = 0;
  double se = 0;
  std::size_t count = 0;
};
MeanSe mean_se(const std::vector<double>& values);

/// Per (dataset, method): a "mean" row and an "se" row, in order of first
/// appearance. NaN entries are skipped per metric.
std::vector<MetricsRow> aggregate(const std::vector<MetricsRow>& rows);

extern const std::vector<std::string> kMetricsColumns;

void write_metrics_csv(std::ostream& out, const std::vector<MetricsRow>& rows);
std::string metrics_json(const std::vector<MetricsRow>& rows);
void write_group_csv(std::ostream& out, const std::vector<GroupMetricsRow>& rows);

/// Shortest round-trip text for a double; NaN becomes empty, infinities "inf"/"-inf".
std::string format_number(double value);

}  // namespace oqr
