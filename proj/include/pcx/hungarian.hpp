#pragma once

#include <cstddef>
#include <vector>

namespace pcx {

/// Minimum-cost assignment of rows to distinct columns (rows <= columns),
/// O(rows^2 * columns) with row and column potentials. Returns the column of
/// each row.
std::vector<std::size_t> solve_assignment(const std::vector<std::vector<double>>& cost);

double assignment_cost(const std::vector<std::vector<double>>& cost, const std::vector<std::size_t>& columns);

}  // namespace pcx
