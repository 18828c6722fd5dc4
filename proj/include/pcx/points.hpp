#pragma once

#include <cstddef>
#include <vector>

#include "pcx/tensor.hpp"

namespace pcx {

using Vector = std::vector<double>;
/// Row-per-sample matrix of concept vectors.
using Points = std::vector<Vector>;

Points points_from_tensor(const Tensor& matrix);
Tensor tensor_from_points(const Points& points);

double dot(const Vector& a, const Vector& b);
double norm(const Vector& a);
double cosine_similarity(const Vector& a, const Vector& b);
Vector mean_of(const Points& points);

}  // namespace pcx
