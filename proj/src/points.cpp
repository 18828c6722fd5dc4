#include "pcx/points.hpp"

#include <cmath>

#include "pcx/error.hpp"

namespace pcx {

Points points_from_tensor(const Tensor& matrix) {
  if (matrix.rank() != 2) throw InputError("expected a samples x concepts matrix, got " + shape_str(matrix.shape()));
  const std::size_t rows = matrix.dim(0), cols = matrix.dim(1);
  Points out(rows, Vector(cols));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r][c] = matrix[r * cols + c];
  return out;
}

Tensor tensor_from_points(const Points& points) {
  if (points.empty()) throw InputError("cannot store an empty matrix");
  const std::size_t cols = points.front().size();
  std::vector<float> data;
  data.reserve(points.size() * cols);
  for (const auto& row : points) {
    if (row.size() != cols) throw InputError("ragged concept matrix");
    for (double v : row) data.push_back(static_cast<float>(v));
  }
  return Tensor({points.size(), cols}, std::move(data));
}

double dot(const Vector& a, const Vector& b) {
  if (a.size() != b.size()) throw InputError("dimension mismatch in dot product");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(const Vector& a) { return std::sqrt(dot(a, a)); }

double cosine_similarity(const Vector& a, const Vector& b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) throw NumericalError("cosine similarity of a zero-norm vector");
  return dot(a, b) / (na * nb);
}

Vector mean_of(const Points& points) {
  if (points.empty()) throw InputError("mean of an empty point set");
  Vector m(points.front().size(), 0.0);
  for (const auto& p : points)
    for (std::size_t i = 0; i < m.size(); ++i) m[i] += p[i];
  for (auto& v : m) v /= static_cast<double>(points.size());
  return m;
}

}  // namespace pcx
