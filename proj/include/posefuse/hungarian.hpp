#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include <Eigen/Core>

namespace posefuse {

/// Minimum-cost assignment on a rectangular cost matrix (shortest augmenting
/// paths with row/column potentials, O(n^2 m)). Returns, for every row, the
/// assigned column or -1. Every row is assigned when rows <= cols, and every
/// column otherwise.
inline std::vector<int> hungarian(const Eigen::MatrixXd& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  const auto m = static_cast<std::size_t>(cost.cols());
  std::vector<int> out(n, -1);
  if (n == 0 || m == 0) return out;
  if (n > m) {
    auto t = hungarian(cost.transpose());
    for (std::size_t c = 0; c < m; ++c)
      if (t[c] >= 0) out[static_cast<std::size_t>(t[c])] = static_cast<int>(c);
    return out;
  }
  const double inf = std::numeric_limits<double>::infinity();
  auto C = [&](std::size_t i, std::size_t j) {
    return cost(static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(j - 1));
  };
  // 1-based potentials; column 0 is the virtual start of each augmenting path.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<std::size_t> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = C(i0, j) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (std::size_t j = 1; j <= m; ++j)
    if (p[j] > 0) out[p[j] - 1] = static_cast<int>(j - 1);
  return out;
}

/// Maximum-weight variant: minimizes the negated matrix.
inline std::vector<int> hungarian_max(const Eigen::MatrixXd& weight) { return hungarian(-weight); }

}  // namespace posefuse
