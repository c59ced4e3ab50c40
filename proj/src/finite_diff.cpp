#include "sftmix/finite_diff.hpp"

#include <cmath>

#include "sftmix/errors.hpp"

namespace sftmix {

DenseArray finite_diff_grad(const std::function<double(const DenseArray&)>& f,
                            const DenseArray& x, double h) {
  if (!(h > 0.0)) throw InvalidInputError("finite_diff_grad: step size must be positive");
  DenseArray grad(x.shape());
  DenseArray probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_rel_err(const DenseArray& a, const DenseArray& b, double floor) {
  if (!a.same_shape(b)) throw ShapeError("max_rel_err: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::abs(a[i]) + std::abs(b[i]) + floor;
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

}  // namespace sftmix
