#include "pcx/hungarian.hpp"

#include <cmath>
#include <limits>

#include "pcx/error.hpp"

namespace pcx {

std::vector<std::size_t> solve_assignment(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size();
  if (n == 0) return {};
  const std::size_t m = cost.front().size();
  if (m < n) throw InputError("assignment needs at least as many columns as rows");
  for (const auto& row : cost) {
    if (row.size() != m) throw InputError("ragged cost matrix");
    for (double c : row)
      if (!std::isfinite(c)) throw InputError("cost matrix contains a non-finite entry");
  }

  constexpr double inf = std::numeric_limits<double>::infinity();
  // 1-based potentials; column 0 is the virtual source of each augmentation.
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> match(m + 1, 0), way(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    match[0] = i;
    std::size_t j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<bool> used(m + 1, false);
    do {
      used[j0] = true;
      const std::size_t i0 = match[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
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
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<std::size_t> columns(n);
  for (std::size_t j = 1; j <= m; ++j)
    if (match[j] != 0) columns[match[j] - 1] = j - 1;
  return columns;
}

double assignment_cost(const std::vector<std::vector<double>>& cost, const std::vector<std::size_t>& columns) {
  double total = 0.0;
  for (std::size_t i = 0; i < columns.size(); ++i) total += cost.at(i).at(columns[i]);
  return total;
}

}  // namespace pcx
