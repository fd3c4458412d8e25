#include <algorithm>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "oqr/decision_tree.hpp"
#include "oqr/error.hpp"
#include "oqr/metrics.hpp"

using namespace oqr;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Intervals [0, length] with y at the midpoint where v = 1 and above hi elsewhere.
IntervalBatch from_coverage(const Eigen::VectorXd& v, const Eigen::VectorXd& length) {
  const Eigen::Index n = v.size();
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) y(i) = v(i) > 0.5 ? 0.5 * length(i) : 2 * length(i) + 1;
  return IntervalBatch(Eigen::VectorXd::Zero(n), length, y);
}

IntervalBatch from_coverage(const Eigen::VectorXd& v) { return from_coverage(v, Eigen::VectorXd::Ones(v.size())); }

std::vector<Eigen::Index> sorted(std::vector<Eigen::Index> v) {
  std::sort(v.begin(), v.end());
  return v;
}

}  // namespace

TEST(Coverage, HandCases) {
  EXPECT_EQ(coverage(from_coverage(Eigen::VectorXd::Ones(5))), 1.0);
  EXPECT_EQ(coverage(IntervalBatch(vec({-1, -1}), vec({1, 1}), vec({0, 2}))), 0.5);
  EXPECT_EQ(coverage(IntervalBatch(vec({0}), vec({1}), vec({1}))), 1.0);
  EXPECT_EQ(coverage(IntervalBatch(vec({0}), vec({1}), vec({0}))), 1.0);
  EXPECT_EQ(mean_length(IntervalBatch(vec({0, 1}), vec({1, 4}), vec({0, 0}))), 2.0);
}

TEST(CorrMetric, HandCases) {
  EXPECT_NEAR(corr_metric(from_coverage(vec({0, 1}), vec({1, 2}))), 1.0, 1e-15);
  EXPECT_EQ(corr_metric(from_coverage(vec({1, 1, 1}), vec({1, 2, 3}))), 0.0);
  EXPECT_NEAR(corr_metric(from_coverage(vec({1, 0, 1, 0}), vec({1, 2, 3, 4}))), 1 / std::sqrt(5.0), 1e-12);
}

TEST(HsicMetric, HandCasesAndBruteForce) {
  EXPECT_NEAR(hsic_metric(from_coverage(vec({1, 1, 1, 1}), vec({1, 2, 3, 5}))), 0.0, 1e-12);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> unif(0.5, 2);
  std::bernoulli_distribution coin(0.6);
  for (int t = 0; t < 30; ++t) {
    const Eigen::Index n = 2 + t % 7;
    Eigen::VectorXd v(n), l(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      v(i) = coin(rng);
      l(i) = unif(rng);
    }
    const IntervalBatch b = from_coverage(v, l);
    // Compare squares: sqrt turns 1e-17 rounding noise into 1e-8.
    EXPECT_NEAR(std::pow(hsic_metric(b), 2), std::max(0.0, oracle::hsic(l, v)), 1e-12);
    std::vector<Eigen::Index> p(static_cast<std::size_t>(n));
    std::iota(p.begin(), p.end(), Eigen::Index{0});
    std::shuffle(p.begin(), p.end(), rng);
    EXPECT_NEAR(std::pow(hsic_metric(b.subset(p)), 2), std::pow(hsic_metric(b), 2), 1e-12);
  }
}

TEST(Window, HandCases) {
  const WindowMinimum w = min_mean_window(vec({1, 1, 0, 0, 1}), 2);
  EXPECT_EQ(w.mean, 0.0);
  EXPECT_EQ(w.begin, 2);
  EXPECT_EQ(w.end, 4);
  EXPECT_NEAR(min_mean_window(vec({1, 0, 1, 0, 1}), 3).mean, 1.0 / 3, 1e-12);
  EXPECT_EQ(min_mean_window(vec({1, 0, 1}), 3).mean, 2.0 / 3);
}

TEST(Window, MatchesExhaustiveScan) {
  std::mt19937_64 rng(5);
  std::bernoulli_distribution coin(0.8);
  std::normal_distribution<double> normal;
  for (int t = 0; t < 300; ++t) {
    const Eigen::Index n = 1 + t % 60;
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
    Eigen::VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = t % 2 ? coin(rng) : normal(rng);
    const std::vector<double> copy(v.data(), v.data() + n);
    const WindowMinimum w = min_mean_window(v, m);
    const double expect = oracle::min_window_mean(copy, static_cast<std::size_t>(m));
    EXPECT_NEAR(w.mean, expect, 1e-12) << "n=" << n << " m=" << m;
    ASSERT_GE(w.end - w.begin, m);
    EXPECT_NEAR(v.segment(w.begin, w.end - w.begin).mean(), w.mean, 1e-12);
  }
}

TEST(Wsc, UniformCoverage) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(50, 3);
  EXPECT_EQ(wsc(x, from_coverage(Eigen::VectorXd::Ones(50)), {0.1, 50, 1}), 1.0);
  EXPECT_EQ(delta_wsc(x, from_coverage(Eigen::VectorXd::Ones(50)), {0.1, 50, 1}), 0.0);
}

TEST(Wsc, OneDimensionalSlab) {
  Eigen::MatrixXd x(100, 1);
  Eigen::VectorXd v(100);
  for (int i = 0; i < 100; ++i) {
    x(i, 0) = i + 1;
    v(i) = i < 10 ? 0 : 1;
  }
  const IntervalBatch b = from_coverage(v);
  EXPECT_EQ(wsc(x, b, {0.1, 20, 3}), 0.0);
  EXPECT_NEAR(delta_wsc(x, b, {0.1, 20, 3}), 0.9, 1e-15);
  EXPECT_NEAR(wsc(x, b, {1.0, 5, 3}), 0.9, 1e-15);
  // Shifting every endpoint leaves V, and so the metric, unchanged.
  const IntervalBatch shifted(b.lo.array() - 0.1, b.hi.array() + 0.1, b.y);
  EXPECT_EQ(shifted.covered(), b.covered());
  EXPECT_EQ(delta_wsc(x, shifted, {0.1, 20, 3}), delta_wsc(x, b, {0.1, 20, 3}));
  EXPECT_THROW(wsc(x, b, {0.0, 5, 3}), ConfigError);
  EXPECT_THROW(wsc(x, b, {1.5, 5, 3}), ConfigError);
}

TEST(Wsc, NeverAboveMarginalAndSeeded) {
  std::mt19937_64 rng(7);
  std::bernoulli_distribution coin(0.85);
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(200, 4);
    Eigen::VectorXd v(200);
    for (int i = 0; i < 200; ++i) v(i) = coin(rng);
    const IntervalBatch b = from_coverage(v);
    const WscResult r = worst_slab(x, b, {0.1, 100, static_cast<std::uint64_t>(t)});
    EXPECT_LE(r.value, coverage(b));
    EXPECT_GE(r.end - r.begin, 20);
    EXPECT_NEAR(r.normal.norm(), 1.0, 1e-12);
    EXPECT_EQ(r.value, wsc(x, b, {0.1, 100, static_cast<std::uint64_t>(t)}));
    // The reported slab really has that coverage.
    std::vector<std::pair<double, Eigen::Index>> proj;
    for (Eigen::Index i = 0; i < 200; ++i) proj.emplace_back(x.row(i).dot(r.normal), i);
    std::stable_sort(proj.begin(), proj.end(), [](auto& a, auto& c) { return a.first < c.first; });
    double hits = 0;
    for (Eigen::Index k = r.begin; k < r.end; ++k) hits += v(proj[static_cast<std::size_t>(k)].second);
    EXPECT_NEAR(hits / static_cast<double>(r.end - r.begin), r.value, 1e-12);
  }
}

TEST(Ils, HandCases) {
  const Eigen::VectorXd dl = Eigen::VectorXd::LinSpaced(10, 1, 10);
  EXPECT_EQ(sorted(ils_set(dl, Eigen::VectorXd::Zero(10))), (std::vector<Eigen::Index>{8, 9}));
  EXPECT_EQ(ils_set(Eigen::VectorXd::Constant(6, 2), Eigen::VectorXd::Ones(6)).size(), 6u);
  EXPECT_EQ(ils_set(dl, dl).size(), 10u);
  EXPECT_THROW(ils_set(dl, Eigen::VectorXd::Zero(3)), DimensionError);
}

TEST(Ils, QuantileRuleOracle) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> coarse(0, 5);
  for (int t = 0; t < 100; ++t) {
    const Eigen::Index n = 5 + t;
    Eigen::VectorXd a(n);
    for (Eigen::Index i = 0; i < n; ++i) a(i) = coarse(rng);
    std::vector<double> s(a.data(), a.data() + n);
    std::sort(s.begin(), s.end());
    const double q = s[static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(n) - 1e-9)) - 1];
    std::vector<Eigen::Index> expect;
    for (Eigen::Index i = 0; i < n; ++i)
      if (a(i) >= q) expect.push_back(i);
    EXPECT_EQ(sorted(ils_set(a, Eigen::VectorXd::Zero(n))), expect);
  }
}

TEST(DeltaIls, HandCases) {
  Eigen::VectorXd v = vec({1, 1, 1, 1, 1, 1, 0, 0, 1, 1});
  const IntervalBatch b = from_coverage(v);
  EXPECT_NEAR(delta_ils_coverage(b, {0, 1}), 0.2, 1e-15);
  std::vector<Eigen::Index> all(10);
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  EXPECT_EQ(delta_ils_coverage(b, all), 0.0);
  EXPECT_THROW(delta_ils_coverage(b, {}), DataError);
  // Reverse the rows and map the set along.
  const IntervalBatch r = from_coverage(v.reverse().eval());
  EXPECT_NEAR(delta_ils_coverage(r, {9, 8}), 0.2, 1e-15);
  EXPECT_NEAR(delta_ils_coverage(b, {6, 7}), 0.8, 1e-15);
}

TEST(Tree, RespectsDepthAndOccupancy) {
  std::mt19937_64 rng(12);
  std::bernoulli_distribution coin(0.3);
  for (int t = 0; t < 10; ++t) {
    const Eigen::MatrixXd x = Eigen::MatrixXd::Random(300, 3);
    std::vector<bool> labels(300);
    for (int i = 0; i < 300; ++i) labels[i] = x(i, 0) + 0.5 * x(i, 1) > 0.3 || coin(rng);
    const DecisionTree tree = DecisionTree::fit(x, labels);
    EXPECT_LE(tree.depth(), 3);
    EXPECT_EQ(tree.sample_count(), 300);
    for (std::size_t k = 0; k < tree.nodes().size(); ++k) {
      const auto& node = tree.nodes()[k];
      EXPECT_GE(node.size(), 15);
      EXPECT_LE(node.depth, 3);
      if (node.leaf()) continue;
      // Preorder: the left child follows its parent directly.
      EXPECT_EQ(node.left, static_cast<int>(k) + 1);
      const auto& l = tree.nodes()[static_cast<std::size_t>(node.left)];
      const auto& r = tree.nodes()[static_cast<std::size_t>(node.right)];
      EXPECT_EQ(l.size() + r.size(), node.size());
      for (Eigen::Index row : l.rows) EXPECT_LE(x(row, node.feature), node.threshold);
      for (Eigen::Index row : r.rows) EXPECT_GT(x(row, node.feature), node.threshold);
    }
  }
}

TEST(Tree, PerfectSplitAtMidpoint) {
  Eigen::MatrixXd x(40, 1);
  std::vector<bool> labels(40);
  for (int i = 0; i < 40; ++i) {
    x(i, 0) = i - 19.5;  // -19.5 .. 19.5
    labels[i] = x(i, 0) > 0;
  }
  const DecisionTree tree = DecisionTree::fit(x, labels);
  const auto& root = tree.nodes()[0];
  EXPECT_EQ(root.feature, 0);
  EXPECT_EQ(root.threshold, 0.0);
  EXPECT_TRUE(tree.nodes()[static_cast<std::size_t>(root.left)].leaf());
  EXPECT_TRUE(tree.predict(vec({3.0})));
  EXPECT_FALSE(tree.predict(vec({-3.0})));
}

TEST(DeltaNode, AllRowsInIlsSelectsRoot) {
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(40, 2);
  std::vector<Eigen::Index> all(40);
  std::iota(all.begin(), all.end(), Eigen::Index{0});
  Eigen::VectorXd v = Eigen::VectorXd::Ones(40);
  v.head(5).setZero();
  const NodeSelection s = select_node(x, from_coverage(v), all);
  EXPECT_EQ(s.node, 0);
  EXPECT_EQ(s.in_ils, 40);
  EXPECT_EQ(s.outside_ils, 0);
  EXPECT_EQ(s.delta, 0.0);
}

TEST(DeltaNode, PerfectSplitSelectsTheIlsHalf) {
  Eigen::MatrixXd x(40, 1);
  Eigen::VectorXd v(40);
  std::vector<Eigen::Index> ils;
  for (int i = 0; i < 40; ++i) {
    x(i, 0) = i - 19.5;
    v(i) = i % 4 == 0 ? 0 : 1;  // marginal 0.75
    if (x(i, 0) > 0) {
      ils.push_back(i);
      v(i) = i % 2 == 0 ? 0 : 1;  // 0.5 on the right half
    }
  }
  const IntervalBatch b = from_coverage(v);
  const NodeSelection s = select_node(x, b, ils);
  constexpr int right_leaf = 2;  // preorder: root, left leaf, right leaf
  EXPECT_EQ(s.node, right_leaf);
  EXPECT_EQ(s.in_ils, 20);
  EXPECT_EQ(s.outside_ils, 0);
  EXPECT_NEAR(s.delta, std::abs(0.5 - coverage(b)), 1e-15);
  EXPECT_EQ(delta_node_coverage(x, b, ils), s.delta);
}

TEST(DeltaNode, RandomMembershipGivesSmallDeltas) {
  std::mt19937_64 rng(21);
  std::bernoulli_distribution coin(0.9);
  std::vector<double> deltas;
  for (int t = 0; t < 50; ++t) {
    Eigen::MatrixXd x(1000, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = std::uniform_real_distribution<double>(-1, 1)(rng);
    Eigen::VectorXd v(1000);
    for (int i = 0; i < 1000; ++i) v(i) = coin(rng);
    std::vector<Eigen::Index> ils;
    for (Eigen::Index i = 0; i < 1000; ++i)
      if (rng() % 10 == 0) ils.push_back(i);
    deltas.push_back(delta_node_coverage(x, from_coverage(v), ils));
  }
  std::nth_element(deltas.begin(), deltas.begin() + 25, deltas.end());
  EXPECT_LT(deltas[25], 0.1);
}

TEST(Improvement, HandCases) {
  EXPECT_DOUBLE_EQ(improvement_pct(10, 5), 50);
  EXPECT_DOUBLE_EQ(improvement_pct(5, 10), -100);
  EXPECT_NEAR(improvement_pct(0.105, 0.038), 63.8, 0.05);
  EXPECT_EQ(improvement_pct(0, 0), 0.0);
  EXPECT_EQ(improvement_pct(0, 0.1), -INFINITY);
  EXPECT_EQ(format_improvement(-INFINITY), "-inf");
  EXPECT_EQ(format_improvement(50), "50");
}

TEST(Aggregate, MeanAndStandardError) {
  const MeanSe same = mean_se({0.3, 0.3, 0.3});
  EXPECT_NEAR(same.mean, 0.3, 1e-15);
  EXPECT_EQ(same.se, 0.0);
  const MeanSe two = mean_se({0, 1});
  EXPECT_EQ(two.mean, 0.5);
  EXPECT_NEAR(two.se, 0.354, 5e-4);
  EXPECT_EQ(mean_se({1, 0}).se, two.se);
  const MeanSe skip = mean_se({1, NAN, 3});
  EXPECT_EQ(skip.count, 2u);
  EXPECT_EQ(skip.mean, 2.0);
}

TEST(Aggregate, RowsPerDatasetAndMethod) {
  std::vector<MetricsRow> rows;
  for (int s = 0; s < 2; ++s)
    for (const char* m : {"b", "a"}) {
      MetricsRow r;
      r.dataset = "d";
      r.method = m;
      r.seed = std::to_string(s);
      r.coverage = s;
      r.delta_ils = NAN;
      rows.push_back(r);
    }
  const auto agg = aggregate(rows);
  ASSERT_EQ(agg.size(), 4u);
  EXPECT_EQ(agg[0].method, "b");
  EXPECT_EQ(agg[0].seed, "mean");
  EXPECT_EQ(agg[1].seed, "se");
  EXPECT_EQ(agg[2].method, "a");
  EXPECT_EQ(agg[0].coverage, 0.5);
  EXPECT_NEAR(agg[1].coverage, 0.354, 5e-4);
  EXPECT_TRUE(std::isnan(agg[0].delta_ils));
}

TEST(Output, CsvHeaderAndNumbers) {
  MetricsRow r;
  r.dataset = "synthetic_lambda3";
  r.method = "vanilla_pinball";
  r.seed = "0";
  r.coverage = 0.9;
  r.delta_ils = NAN;
  r.delta_node = NAN;
  std::ostringstream out;
  write_metrics_csv(out, {r});
  EXPECT_EQ(out.str(),
            "dataset,method,seed,coverage,length,corr,hsic,wsc,delta_wsc,delta_ils,delta_node\n"
            "synthetic_lambda3,vanilla_pinball,0,0.9,0,0,0,0,0,,\n");
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(-INFINITY), "-inf");
  EXPECT_EQ(format_number(NAN), "");
  const std::string json = metrics_json({r});
  EXPECT_NE(json.find("\"delta_ils\": null"), std::string::npos) << json;
  EXPECT_LT(json.find("\"dataset\""), json.find("\"delta_node\""));
}

TEST(Groups, PerGroupCoverageAndLength) {
  const IntervalBatch b(vec({0, 0, 0, 0}), vec({1, 2, 3, 4}), vec({0.5, 5, 1, 1}));
  Eigen::VectorXi g(4);
  g << 0, 0, 1, 1;
  const auto rows = evaluate_groups("d", "m", "0", b, g);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].group, 0);
  EXPECT_EQ(rows[0].count, 2);
  EXPECT_EQ(rows[0].coverage, 0.5);
  EXPECT_EQ(rows[0].length, 1.5);
  EXPECT_EQ(rows[1].coverage, 1.0);
  EXPECT_EQ(rows[1].length, 3.5);
}
