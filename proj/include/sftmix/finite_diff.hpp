#pragma once

#include <functional>

#include "sftmix/dense_array.hpp"

namespace sftmix {

// Central-difference gradient (f(x+h*e_i) - f(x-h*e_i)) / (2h) per coordinate.
// Verification oracle only; keep it independent of the autodiff path.
DenseArray finite_diff_grad(const std::function<double(const DenseArray&)>& f,
                            const DenseArray& x, double h);

// max_i |a_i - b_i| / (|a_i| + |b_i| + floor); the floor keeps structurally
// tiny coordinates from dominating the ratio.
double max_rel_err(const DenseArray& a, const DenseArray& b, double floor = 1e-6);

}  // namespace sftmix
