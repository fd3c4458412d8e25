#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "oqr/datagen.hpp"
#include "oqr/error.hpp"
#include "oqr/hsic.hpp"
#include "oqr/normal.hpp"

using namespace oqr;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name, const std::string& contents) {
  const fs::path dir = fs::temp_directory_path() / "oqr_test_datagen";
  fs::create_directories(dir);
  const fs::path path = dir / name;
  std::ofstream(path) << contents;
  return path;
}

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

CsvSchema schema(const std::string& target) {
  CsvSchema s;
  s.target = target;
  return s;
}

}  // namespace

TEST(Synthetic, ShapeGroupsAndRanges) {
  SyntheticSpec spec;
  const Dataset d = generate_synthetic(spec);
  ASSERT_EQ(d.rows(), 7000);
  ASSERT_EQ(d.features(), 50);
  ASSERT_TRUE(d.group.has_value());
  const double minority = d.group->cast<double>().mean();
  EXPECT_NEAR(1 - minority, 0.8, 0.015);
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    EXPECT_EQ(d.x(i, 0), (*d.group)(i));
    EXPECT_GE(d.x.row(i).tail(49).minCoeff(), 0.0);
    EXPECT_LE(d.x.row(i).tail(49).maxCoeff(), 5.0);
  }
  EXPECT_EQ(d.name, "synthetic_lambda3");
}

TEST(Synthetic, CoefficientsAreUnitNonnegative) {
  const SyntheticModel m = SyntheticModel::from_spec(SyntheticSpec{});
  EXPECT_NEAR(m.beta.norm(), 1.0, 1e-14);
  EXPECT_NEAR(m.gamma.norm(), 1.0, 1e-14);
  EXPECT_GE(m.beta.minCoeff(), 0.0);
  EXPECT_GE(m.gamma.minCoeff(), 0.0);
  EXPECT_NE((m.beta - m.gamma).norm(), 0.0);
}

TEST(Synthetic, DeterministicInSeed) {
  SyntheticSpec spec;
  spec.n = 300;
  const Dataset a = generate_synthetic(spec);
  const Dataset b = generate_synthetic(spec);
  EXPECT_EQ(a.x, b.x);
  EXPECT_EQ(a.y, b.y);
  spec.seed = 2;
  EXPECT_NE(generate_synthetic(spec).y, a.y);
}

TEST(Synthetic, VarianceMatchesAnalyticScale) {
  // y / sd(x) is standard normal in each group.
  SyntheticSpec spec;
  spec.n = 100000;
  const SyntheticModel m = SyntheticModel::from_spec(spec);
  const Dataset d = generate_synthetic(spec);
  double second[2] = {0, 0};
  double count[2] = {0, 0};
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const int g = (*d.group)(i);
    const double z = d.y(i) / m.conditional_sd(d.x.row(i).transpose());
    second[g] += z * z;
    count[g] += 1;
  }
  EXPECT_NEAR(second[0] / count[0], 1.0, 0.03);
  EXPECT_NEAR(second[1] / count[1], 1.0, 0.03);
}

TEST(Synthetic, LambdaZeroUsesGammaScaleOnly) {
  SyntheticSpec spec;
  spec.lambda = 0;
  const SyntheticModel m = SyntheticModel::from_spec(spec);
  Eigen::VectorXd x = Eigen::VectorXd::Constant(50, 2.0);
  x(0) = 1;
  EXPECT_NEAR(m.conditional_sd(x), 0.03 * m.gamma.dot(x), 1e-15);
  EXPECT_THROW(SyntheticSpec({10, -1.0, 1}).validate(), ConfigError);
}

TEST(Oracle, GroupZeroHandValue) {
  const SyntheticModel m = SyntheticModel::from_spec(SyntheticSpec{});
  // x with beta.x = 1 and group 0.
  Eigen::VectorXd x = Eigen::VectorXd::Zero(50);
  x(7) = 1 / m.beta(7);
  const auto [lo, hi] = oracle_interval(x, 0.1, m);
  EXPECT_NEAR(hi, 0.03 * 1.6448536269514722, 1e-12);
  EXPECT_NEAR(hi, 0.04935, 1e-5);
  EXPECT_NEAR(lo, -hi, 1e-15);
  const auto [mlo, mhi] = oracle_interval(x, 1.0, m);
  EXPECT_EQ(mlo, 0.0);
  EXPECT_EQ(mhi, 0.0);
  EXPECT_THROW(oracle_interval(x, 0.0, m), ConfigError);
}

TEST(Oracle, GroupOneFormula) {
  const SyntheticModel m = SyntheticModel::from_spec(SyntheticSpec{});
  Eigen::VectorXd x = Eigen::VectorXd::Constant(50, 1.5);
  x(0) = 1;
  const double s = std::sqrt(std::pow(0.03 * m.gamma.dot(x), 2) + 9.0);
  EXPECT_NEAR(m.quantile(x, 0.95), s * 1.6448536269514722, 1e-12);
  EXPECT_NEAR(m.quantile(x, 0.05), -s * 1.6448536269514722, 1e-12);
}

TEST(Oracle, MonteCarloCoverage) {
  SyntheticSpec spec;
  spec.n = 100000;
  spec.seed = 5;
  const SyntheticModel m = SyntheticModel::from_spec(spec);
  const Dataset d = generate_synthetic(spec);
  double covered = 0;
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const auto [lo, hi] = oracle_interval(d.x.row(i).transpose(), 0.1, m);
    covered += lo <= d.y(i) && d.y(i) <= hi;
  }
  EXPECT_NEAR(covered / static_cast<double>(d.rows()), 0.9, 0.003);
}

TEST(Oracle, CoverageAtFixedPoint) {
  // Resample y at one fixed x through the model's own noise law.
  const SyntheticModel m = SyntheticModel::from_spec(SyntheticSpec{});
  Eigen::VectorXd x = Eigen::VectorXd::Constant(50, 3.0);
  x(0) = 1;
  const auto [lo, hi] = oracle_interval(x, 0.1, m);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  const int n = 40000;
  int covered = 0;
  for (int i = 0; i < n; ++i) {
    const double y = 0.03 * m.gamma.dot(x) * normal(rng) + 3.0 * normal(rng);
    covered += lo <= y && y <= hi;
  }
  EXPECT_NEAR(covered / double(n), 0.9, 3 * std::sqrt(0.09 / n));
}

TEST(Oracle, IntervalsAreOrthogonal) {
  SyntheticSpec spec;
  spec.n = 10000;
  spec.seed = 9;
  const SyntheticModel m = SyntheticModel::from_spec(spec);
  const Dataset d = generate_synthetic(spec);
  Eigen::VectorXd length(d.rows()), covered(d.rows());
  for (Eigen::Index i = 0; i < d.rows(); ++i) {
    const auto [lo, hi] = oracle_interval(d.x.row(i).transpose(), 0.1, m);
    length(i) = hi - lo;
    covered(i) = lo <= d.y(i) && d.y(i) <= hi;
  }
  EXPECT_LT(oracle::pearson_abs(length, covered), 0.03);
  const Eigen::Index k = 3000;
  Rng rng(1);
  const auto test = hsic_permutation_test(length.head(k), covered.head(k), 200, rng);
  EXPECT_LT(test.observed, test.null_quantile(0.95));
}

TEST(Split, SizesAndDisjointness) {
  SyntheticSpec spec;
  spec.n = 100;
  const Dataset d = split(generate_synthetic(spec), {0.54, 0.06, 0.40}, 3);
  EXPECT_EQ(d.split.train.size(), 54u);
  EXPECT_EQ(d.split.validation.size(), 6u);
  EXPECT_EQ(d.split.test.size(), 40u);
  EXPECT_TRUE(d.split.calibration.empty());
  std::set<Eigen::Index> all;
  for (auto part : {&d.split.train, &d.split.validation, &d.split.test}) all.insert(part->begin(), part->end());
  EXPECT_EQ(all.size(), 100u);
  EXPECT_EQ(*all.begin(), 0);
  EXPECT_EQ(*all.rbegin(), 99);
}

TEST(Split, SyntheticProtocolSizes) {
  const Dataset d = split(generate_synthetic(SyntheticSpec{}), {0.72, 0.08, 0.20}, 0);
  EXPECT_EQ(d.split.train.size(), 5040u);
  EXPECT_EQ(d.split.validation.size(), 560u);
  EXPECT_EQ(d.split.test.size(), 1400u);
  const Dataset c = split(generate_synthetic(SyntheticSpec{}), {0.54, 0.06, 0.20, 0.20}, 0);
  EXPECT_EQ(c.split.calibration.size(), 1400u);
}

TEST(Split, AllTrainAndDeterminism) {
  SyntheticSpec spec;
  spec.n = 50;
  const Dataset base = generate_synthetic(spec);
  EXPECT_EQ(split(base, {1, 0, 0}, 1).split.train.size(), 50u);
  EXPECT_EQ(split(base, {0.5, 0.2, 0.3}, 4).split.test, split(base, {0.5, 0.2, 0.3}, 4).split.test);
  EXPECT_NE(split(base, {0.5, 0.2, 0.3}, 4).split.test, split(base, {0.5, 0.2, 0.3}, 5).split.test);
  EXPECT_THROW(split(base, {0.5, 0.2, 0.2}, 1), ConfigError);
  EXPECT_THROW(split(base, {0.5, 0.5}, 1), ConfigError);
}

TEST(Preprocess, TrainingStatisticsStandardise) {
  SyntheticSpec spec;
  spec.n = 2000;
  const Dataset d = preprocess(split(generate_synthetic(spec), {0.6, 0.1, 0.3}, 2), false);
  const Eigen::MatrixXd xt = d.model_features(SplitPart::train);
  const Eigen::VectorXd yt = d.model_responses(SplitPart::train);
  const double n = static_cast<double>(xt.rows());
  for (Eigen::Index j = 0; j < xt.cols(); ++j) {
    EXPECT_NEAR(xt.col(j).mean(), 0.0, 1e-8);
    EXPECT_NEAR((xt.col(j).array() - xt.col(j).mean()).square().sum() / n, 1.0, 1e-6);
  }
  EXPECT_NEAR(yt.mean(), 0.0, 1e-8);
  EXPECT_NEAR((yt.array() - yt.mean()).square().sum() / n, 1.0, 1e-6);
  // Held-out rows use the training statistics, so their mean is not exactly 0.
  EXPECT_GT(std::abs(d.model_features(SplitPart::test).col(3).mean()), 1e-6);
  const Eigen::VectorXd back = d.preprocessing->inverse_y(d.y_model);
  EXPECT_LT((back - d.y).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Preprocess, IdentityOnStandardisedData) {
  Dataset d;
  d.x.resize(4, 1);
  d.x << -1, 1, -1, 1;
  d.y = Eigen::Vector4d(1, -1, -1, 1);
  d.feature_names = {"a"};
  d.split.train = {0, 1, 2, 3};
  const Dataset p = preprocess(d, false);
  EXPECT_LT((p.x_model - d.x).cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LT((p.y_model - d.y).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Preprocess, LogTransformHandCase) {
  Dataset d;
  d.x.resize(3, 1);
  d.x << 1, 2, 3;
  d.y = Eigen::Vector3d(0, 1, 3);
  d.feature_names = {"a"};
  d.split.train = {0, 1, 2};
  const Dataset p = preprocess(d, true);
  const Eigen::Vector3d logs(std::log(1.0), std::log(2.0), std::log(4.0));
  const double mean = logs.mean();
  const double sd = std::sqrt((logs.array() - mean).square().mean());
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.y_model(i), (logs(i) - mean) / sd, 1e-14);
  EXPECT_LT((p.preprocessing->inverse_y(p.y_model) - d.y).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Preprocess, ZeroVarianceColumnIsNamed) {
  Dataset d;
  d.x.resize(3, 2);
  d.x << 1, 5, 2, 5, 3, 5;
  d.y = Eigen::Vector3d(0, 1, 3);
  d.feature_names = {"speed", "flat"};
  d.split.train = {0, 1, 2};
  const std::string message = error_of([&] { preprocess(d, false); });
  EXPECT_NE(message.find("'flat'"), std::string::npos) << message;
  d.split.train.clear();
  EXPECT_THROW(preprocess(d, false), DataError);
}

TEST(Csv, SmallFile) {
  const auto path = temp_file("small.csv", "a,b,target\n1,2,3\n4,5,6\n7,8,9\n");
  const Dataset d = load_csv(path.string(), CsvSchema{"target", std::nullopt, {}, true});
  EXPECT_EQ(d.rows(), 3);
  EXPECT_EQ(d.features(), 2);
  EXPECT_EQ(d.y, Eigen::Vector3d(3, 6, 9));
  EXPECT_EQ(d.x(2, 1), 8);
  EXPECT_EQ(d.feature_names, (std::vector<std::string>{"a", "b"}));
}

TEST(Csv, GroupAndDroppedColumns) {
  const auto path = temp_file("group.csv", "id,g,f,y\n10,1,0.5,2\n11,0,1.5,3\n");
  const Dataset d = load_csv(path.string(), CsvSchema{"y", "g", {"id"}, false});
  EXPECT_EQ(d.features(), 1);
  ASSERT_TRUE(d.group.has_value());
  EXPECT_EQ((*d.group)(0), 1);
  EXPECT_EQ((*d.group)(1), 0);
}

TEST(Csv, ErrorsNameTheProblem) {
  const auto path = temp_file("bad.csv", "a,y\n1,2\n3,oops\n");
  EXPECT_NE(error_of([&] { load_csv(path.string(), schema("missing")); }).find("'missing'"), std::string::npos);
  const std::string message = error_of([&] { load_csv(path.string(), schema("y")); });
  EXPECT_NE(message.find("row 3"), std::string::npos) << message;
  EXPECT_NE(message.find("column 'y'"), std::string::npos) << message;
  EXPECT_THROW(load_csv("/nonexistent/file.csv", schema("y")), DataError);
}

TEST(Csv, RoundTripOfSyntheticData) {
  SyntheticSpec spec;
  spec.n = 200;
  const Dataset d = generate_synthetic(spec);
  const fs::path path = fs::temp_directory_path() / "oqr_test_datagen" / "roundtrip.csv";
  fs::create_directories(path.parent_path());
  write_csv(d, path.string());
  const Dataset back = load_csv(path.string(), CsvSchema{"y", "x0", {}, true});
  EXPECT_EQ(back.x, d.x);
  EXPECT_EQ(back.y, d.y);
  EXPECT_EQ(*back.group, *d.group);
}
