#include "oqr/hsic.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <map>
#include <numeric>
#include <string>

#include "oqr/error.hpp"

namespace oqr {

namespace {

constexpr Eigen::Index kBlockRows = 256;
constexpr std::size_t kMaxCategories = 16;

void require_pairable(Eigen::Index n, const char* what) {
  if (n < 2) throw DimensionError(std::string(what) + ": need at least 2 samples, got " + std::to_string(n));
}

std::vector<double> sorted_copy(const Eigen::Ref<const Eigen::VectorXd>& v) {
  std::vector<double> s(v.data(), v.data() + v.size());
  std::sort(s.begin(), s.end());
  return s;
}

// Number of pairs i < j of the sorted sample with s[j] - s[i] <= t.
std::int64_t count_pairs_within(const std::vector<double>& s, double t) {
  std::int64_t count = 0;
  std::size_t i = 0;
  for (std::size_t j = 0; j < s.size(); ++j) {
    while (s[j] - s[i] > t) ++i;
    count += static_cast<std::int64_t>(j - i);
  }
  return count;
}

std::uint64_t to_bits(double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, sizeof bits);
  return bits;
}

double from_bits(std::uint64_t bits) {
  double x;
  std::memcpy(&x, &bits, sizeof x);
  return x;
}

// Smallest pairwise difference >= k+1 pairs lie within. Non-negative doubles
// order like their bit patterns, so this bisects over representable values
// and lands exactly on a realized difference.
double kth_sorted(const std::vector<double>& s, std::int64_t k) {
  std::uint64_t lo = 0;
  std::uint64_t hi = to_bits(s.back() - s.front());
  while (lo < hi) {
    const std::uint64_t mid = lo + (hi - lo) / 2;
    if (count_pairs_within(s, from_bits(mid)) >= k + 1)
      hi = mid;
    else
      lo = mid + 1;
  }
  return from_bits(lo);
}

// Some pair (i, j), v_j >= v_i, whose difference is exactly `target`.
std::pair<Eigen::Index, Eigen::Index> locate_pair(const Eigen::Ref<const Eigen::VectorXd>& v,
                                                  const std::vector<Eigen::Index>& order,
                                                  double target) {
  const auto n = static_cast<std::size_t>(v.size());
  for (std::size_t a = 0; a < n; ++a) {
    const double base = v(order[a]);
    std::size_t lo = a + 1;
    std::size_t hi = n;
    while (lo < hi) {
      const std::size_t mid = (lo + hi) / 2;
      if (v(order[mid]) - base < target)
        lo = mid + 1;
      else
        hi = mid;
    }
    if (lo < n && v(order[lo]) - base == target) return {order[a], order[lo]};
  }
  throw Error("median bandwidth: pair for order statistic not found");
}

struct BlockSums {
  double cross = 0;  // sum_ij K_ij Q_ij
  Eigen::VectorXd k_rows;
  Eigen::VectorXd q_rows;
};

Eigen::ArrayXXd gram_block(const Eigen::Ref<const Eigen::VectorXd>& v, Eigen::Index start,
                           Eigen::Index rows, double scale) {
  const Eigen::ArrayXd seg = v.segment(start, rows).array();
  Eigen::ArrayXXd diff = seg.replicate(1, v.size()) - v.transpose().array().replicate(rows, 1);
  return (-(diff * diff) * scale).exp();
}

double centered_trace(double cross, const Eigen::VectorXd& k_rows, const Eigen::VectorXd& q_rows) {
  const double n = static_cast<double>(k_rows.size());
  return cross - 2.0 / n * k_rows.dot(q_rows) + k_rows.sum() * q_rows.sum() / (n * n);
}

}  // namespace

double kth_pairwise_difference(const Eigen::Ref<const Eigen::VectorXd>& v, std::int64_t k) {
  require_pairable(v.size(), "kth_pairwise_difference");
  const std::int64_t n = v.size();
  if (k < 0 || k >= n * (n - 1) / 2) throw DimensionError("kth_pairwise_difference: rank out of range");
  return kth_sorted(sorted_copy(v), k);
}

MedianPairs median_bandwidth_pairs(const Eigen::Ref<const Eigen::VectorXd>& v) {
  require_pairable(v.size(), "median_bandwidth");
  const std::int64_t n = v.size();
  const std::int64_t m = n * (n - 1) / 2;
  const std::vector<double> s = sorted_copy(v);

  std::vector<std::int64_t> ranks;
  if (m % 2 == 1)
    ranks = {(m - 1) / 2};
  else
    ranks = {m / 2 - 1, m / 2};

  std::vector<double> values;
  for (auto k : ranks) values.push_back(kth_sorted(s, k));
  const double median = std::accumulate(values.begin(), values.end(), 0.0) / values.size();

  MedianPairs out;
  if (median <= 0) return out;
  out.value = median;
  out.fallback = false;

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return v(a) < v(b); });
  for (double value : values) out.pairs.push_back(locate_pair(v, order, value));
  return out;
}

double median_bandwidth(const Eigen::Ref<const Eigen::VectorXd>& v) {
  return median_bandwidth_pairs(v).value;
}

double bandwidth(const Eigen::Ref<const Eigen::VectorXd>& v, const HsicConfig& config) {
  if (config.rule == BandwidthRule::fixed) {
    if (!(config.sigma > 0)) throw ConfigError("hsic: fixed bandwidth must be positive");
    return config.sigma;
  }
  return median_bandwidth(v);
}

Eigen::MatrixXd gaussian_gram(const Eigen::Ref<const Eigen::VectorXd>& v, double sigma) {
  return gram_block(v, 0, v.size(), 1.0 / (2.0 * sigma * sigma)).matrix();
}

double hsic_estimate(const Eigen::Ref<const Eigen::VectorXd>& a,
                     const Eigen::Ref<const Eigen::VectorXd>& b, const HsicConfig& config) {
  if (a.size() != b.size())
    throw DimensionError("hsic: length mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  require_pairable(a.size(), "hsic");
  const Eigen::Index n = a.size();
  const double scale_a = 1.0 / (2.0 * std::pow(bandwidth(a, config), 2));
  const double scale_b = 1.0 / (2.0 * std::pow(bandwidth(b, config), 2));

  BlockSums sums{0, Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Eigen::Index start = 0; start < n; start += kBlockRows) {
    const Eigen::Index rows = std::min(kBlockRows, n - start);
    const Eigen::ArrayXXd k = gram_block(a, start, rows, scale_a);
    const Eigen::ArrayXXd q = gram_block(b, start, rows, scale_b);
    sums.cross += (k * q).sum();
    sums.k_rows.segment(start, rows) = k.rowwise().sum().matrix();
    sums.q_rows.segment(start, rows) = q.rowwise().sum().matrix();
  }
  return centered_trace(sums.cross, sums.k_rows, sums.q_rows) / (static_cast<double>(n) * n);
}

HsicGradient hsic_with_gradient(const Eigen::Ref<const Eigen::VectorXd>& a,
                                const Eigen::Ref<const Eigen::VectorXd>& b,
                                const HsicConfig& config) {
  if (a.size() != b.size())
    throw DimensionError("hsic: length mismatch " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  require_pairable(a.size(), "hsic");
  const Eigen::Index n = a.size();
  const double nn = static_cast<double>(n) * n;

  auto sigma_of = [&](const Eigen::Ref<const Eigen::VectorXd>& v) {
    if (config.rule == BandwidthRule::fixed) {
      MedianPairs fixed;
      fixed.value = bandwidth(v, config);
      return fixed;
    }
    return median_bandwidth_pairs(v);
  };
  const MedianPairs sigma_a = sigma_of(a);
  const MedianPairs sigma_b = sigma_of(b);

  const Eigen::MatrixXd k = gaussian_gram(a, sigma_a.value);
  const Eigen::MatrixXd q = gaussian_gram(b, sigma_b.value);
  auto center = [](const Eigen::MatrixXd& m) {
    Eigen::MatrixXd c = m.rowwise() - m.colwise().mean();
    return Eigen::MatrixXd(c.colwise() - c.rowwise().mean());
  };
  const Eigen::MatrixXd k_c = center(k);
  const Eigen::MatrixXd q_c = center(q);

  HsicGradient out;
  out.value = k.cwiseProduct(q_c).sum() / nn;

  // d value / d v for one side, given the centered Gram of the other side.
  auto side = [&](const Eigen::Ref<const Eigen::VectorXd>& v, const MedianPairs& sigma,
                  const Eigen::MatrixXd& gram, const Eigen::MatrixXd& other_centered) {
    const double s2 = sigma.value * sigma.value;
    const Eigen::MatrixXd diff = v.replicate(1, n) - v.transpose().replicate(n, 1);
    const Eigen::MatrixXd weight = other_centered.cwiseProduct(gram) / nn;
    Eigen::VectorXd grad = -2.0 / s2 * weight.cwiseProduct(diff).rowwise().sum();
    if (!sigma.fallback && !sigma.pairs.empty()) {
      const double d_sigma =
          weight.cwiseProduct(diff.cwiseProduct(diff)).sum() / (s2 * sigma.value);
      const double share = d_sigma / static_cast<double>(sigma.pairs.size());
      for (const auto& [lo, hi] : sigma.pairs) {
        grad(hi) += share;
        grad(lo) -= share;
      }
    }
    return grad;
  };
  out.d_a = side(a, sigma_a, k, q_c);
  out.d_b = side(b, sigma_b, q, k_c);
  return out;
}

double HsicPermutationTest::null_quantile(double q) const {
  if (null.empty()) throw Error("hsic permutation test: empty null distribution");
  std::vector<double> sorted = null;
  std::sort(sorted.begin(), sorted.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

double HsicPermutationTest::p_value() const {
  const auto exceed = std::count_if(null.begin(), null.end(), [&](double v) { return v >= observed; });
  return (1.0 + static_cast<double>(exceed)) / (1.0 + static_cast<double>(null.size()));
}

HsicPermutationTest hsic_permutation_test(const Eigen::Ref<const Eigen::VectorXd>& a,
                                          const Eigen::Ref<const Eigen::VectorXd>& b,
                                          int n_permutations, Rng& rng, const HsicConfig& config) {
  if (a.size() != b.size()) throw DimensionError("hsic permutation test: length mismatch");
  require_pairable(a.size(), "hsic permutation test");
  if (n_permutations < 1) throw ConfigError("hsic permutation test: need at least one permutation");
  const Eigen::Index n = a.size();

  std::vector<std::vector<Eigen::Index>> perms;
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  perms.push_back(perm);
  for (int p = 0; p < n_permutations; ++p) {
    std::shuffle(perm.begin(), perm.end(), rng);
    perms.push_back(perm);
  }

  std::map<double, Eigen::Index> categories;
  for (Eigen::Index i = 0; i < n && categories.size() <= kMaxCategories; ++i)
    categories.emplace(b(i), 0);

  HsicPermutationTest out;
  if (categories.size() > kMaxCategories) {
    Eigen::VectorXd permuted(n);
    for (std::size_t p = 0; p < perms.size(); ++p) {
      for (Eigen::Index i = 0; i < n; ++i) permuted(i) = b(perms[p][static_cast<std::size_t>(i)]);
      const double value = hsic_estimate(a, permuted, config);
      (p == 0 ? out.observed : out.null.emplace_back()) = value;
    }
    return out;
  }

  // Q = E G E^T for the one-hot class matrix E, so
  // tr(K H Q H) = sum(G .* (HE)^T K (HE)); permuting b permutes rows of HE.
  const auto k_classes = static_cast<Eigen::Index>(categories.size());
  std::vector<double> levels;
  for (auto& [value, index] : categories) {
    index = static_cast<Eigen::Index>(levels.size());
    levels.push_back(value);
  }
  const double sigma_b = bandwidth(b, config);
  Eigen::MatrixXd g(k_classes, k_classes);
  for (Eigen::Index r = 0; r < k_classes; ++r)
    for (Eigen::Index s = 0; s < k_classes; ++s)
      g(r, s) = std::exp(-std::pow(levels[r] - levels[s], 2) / (2.0 * sigma_b * sigma_b));

  const double scale_a = 1.0 / (2.0 * std::pow(bandwidth(a, config), 2));
  const double nn = static_cast<double>(n) * n;

  if (k_classes == 2) {
    // The two centered class indicators are negatives of each other, so
    // tr(K H Q H) = (g00 - 2 g01 + g11) c'Kc with c the centered indicator of
    // the smaller class S: c'Kc = sum_{S x S} K - 2 p sum_S (K1) + p^2 1'K1.
    const double weight = g(0, 0) - 2.0 * g(0, 1) + g(1, 1);
    Eigen::VectorXd row_sums(n);
    for (Eigen::Index start = 0; start < n; start += kBlockRows) {
      const Eigen::Index rows = std::min(kBlockRows, n - start);
      row_sums.segment(start, rows) = gram_block(a, start, rows, scale_a).rowwise().sum().matrix();
    }
    const double total_sum = row_sums.sum();
    std::vector<Eigen::Index> cls(static_cast<std::size_t>(n));
    Eigen::Index in_first = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      cls[static_cast<std::size_t>(i)] = categories.at(b(i));
      in_first += cls[static_cast<std::size_t>(i)] == 0;
    }
    const Eigen::Index small = in_first * 2 <= n ? 0 : 1;
    const Eigen::Index m = small == 0 ? in_first : n - in_first;
    const double share = static_cast<double>(m) / static_cast<double>(n);
    Eigen::VectorXd members(m);
    for (std::size_t p = 0; p < perms.size(); ++p) {
      Eigen::Index count = 0;
      double row_part = 0;
      for (Eigen::Index i = 0; i < n; ++i)
        if (cls[static_cast<std::size_t>(perms[p][static_cast<std::size_t>(i)])] == small) {
          members(count++) = a(i);
          row_part += row_sums(i);
        }
      double block = 0;
      for (Eigen::Index start = 0; start < m; start += kBlockRows) {
        const Eigen::Index rows = std::min(kBlockRows, m - start);
        block += gram_block(members, start, rows, scale_a).sum();
      }
      const double value = weight * (block - 2.0 * share * row_part + share * share * total_sum) / nn;
      (p == 0 ? out.observed : out.null.emplace_back()) = value;
    }
    return out;
  }

  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, k_classes);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, categories.at(b(i))) = 1.0;
  const Eigen::MatrixXd centered = onehot.rowwise() - onehot.colwise().mean();

  const auto total = static_cast<Eigen::Index>(perms.size());
  Eigen::MatrixXd stacked(n, k_classes * total);
  for (Eigen::Index p = 0; p < total; ++p)
    for (Eigen::Index i = 0; i < n; ++i)
      stacked.block(i, p * k_classes, 1, k_classes) = centered.row(perms[p][static_cast<std::size_t>(i)]);

  std::vector<Eigen::MatrixXd> inner(static_cast<std::size_t>(total), Eigen::MatrixXd::Zero(k_classes, k_classes));
  for (Eigen::Index start = 0; start < n; start += kBlockRows) {
    const Eigen::Index rows = std::min(kBlockRows, n - start);
    const Eigen::MatrixXd kw = gram_block(a, start, rows, scale_a).matrix() * stacked;
    for (Eigen::Index p = 0; p < total; ++p)
      inner[p] += stacked.block(start, p * k_classes, rows, k_classes).transpose() *
                  kw.middleCols(p * k_classes, k_classes);
  }
  for (Eigen::Index p = 0; p < total; ++p) {
    const double value = g.cwiseProduct(inner[p]).sum() / nn;
    (p == 0 ? out.observed : out.null.emplace_back()) = value;
  }
  return out;
}

}  // namespace oqr
