#pragma once

// Hilbert-Schmidt independence criterion between two scalar samples.
//
// Biased V-statistic  HSIC = tr(K H Q H) / n^2  with Gaussian Gram matrices
// K_ij = exp(-(a_i - a_j)^2 / (2 sigma_a^2)), Q likewise for b, and the
// centering matrix H = I - 11^T / n. Bandwidths default to the median of the
// pairwise absolute differences of each input.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

#include "oqr/random.hpp"

namespace oqr {

enum class BandwidthRule { median, fixed };

struct HsicConfig {
  BandwidthRule rule = BandwidthRule::median;
  double sigma = 1.0;  // used when rule == fixed
};

/// Median of |v_i - v_j| over the n(n-1)/2 pairs i < j; 1.0 when that is 0.
///
/// For an even pair count the two middle order statistics are averaged.
/// Runs in O(n log n + 64 n) without materializing the pairs.
double median_bandwidth(const Eigen::Ref<const Eigen::VectorXd>& v);

/// The order statistics behind median_bandwidth, for differentiating it.
struct MedianPairs {
  double value = 1.0;
  bool fallback = true;                                  // median was 0, value is 1.0
  std::vector<std::pair<Eigen::Index, Eigen::Index>> pairs;  // (i, j) with v_j >= v_i, one per middle rank
};
MedianPairs median_bandwidth_pairs(const Eigen::Ref<const Eigen::VectorXd>& v);

double bandwidth(const Eigen::Ref<const Eigen::VectorXd>& v, const HsicConfig& config);

/// k-th smallest (0-based) of the pairwise absolute differences.
double kth_pairwise_difference(const Eigen::Ref<const Eigen::VectorXd>& v, std::int64_t k);

/// Gaussian Gram matrix of a scalar sample.
Eigen::MatrixXd gaussian_gram(const Eigen::Ref<const Eigen::VectorXd>& v, double sigma);

/// Biased HSIC estimate; requires len(a) == len(b) >= 2. Streams the Gram
/// matrices in row blocks, so memory stays O(n) for large samples.
double hsic_estimate(const Eigen::Ref<const Eigen::VectorXd>& a,
                     const Eigen::Ref<const Eigen::VectorXd>& b, const HsicConfig& config = {});

/// HSIC value with its gradient w.r.t. both inputs, bandwidths included.
/// Dense O(n^2) memory; intended for training batches.
struct HsicGradient {
  double value = 0;
  Eigen::VectorXd d_a;
  Eigen::VectorXd d_b;
};
HsicGradient hsic_with_gradient(const Eigen::Ref<const Eigen::VectorXd>& a,
                                const Eigen::Ref<const Eigen::VectorXd>& b,
                                const HsicConfig& config = {});

/// Observed HSIC and its permutation null (b permuted, a fixed).
struct HsicPermutationTest {
  double observed = 0;
  std::vector<double> null;  // one value per permutation
  double null_quantile(double q) const;
  double p_value() const;  // (1 + #{null >= observed}) / (1 + #null)
};

/// When b takes few distinct values (coverage indicators) this runs as one
/// blocked Gram-matrix product over all permutations at once.
HsicPermutationTest hsic_permutation_test(const Eigen::Ref<const Eigen::VectorXd>& a,
                                          const Eigen::Ref<const Eigen::VectorXd>& b,
                                          int n_permutations, Rng& rng,
                                          const HsicConfig& config = {});

}  // namespace oqr
