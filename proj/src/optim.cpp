#include "ucrn/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ucrn {

void Optimizer::step(const std::vector<Tensor>& params) {
  for (const Tensor& p : params)
    if (!p.has_grad())
      throw std::runtime_error("optimizer: parameter with shape " + shape_str(p.shape()) +
                               " has no accumulated gradient");
  ++step_count_;
  const double t = static_cast<double>(step_count_);
  const double bc1 = 1.0 - std::pow(kBeta1, t);
  const double bc2 = 1.0 - std::pow(kBeta2, t);
  for (const Tensor& cp : params) {
    Tensor p = cp;
    double* w = p.data();
    const std::vector<double>& g = p.grad();
    const std::size_t n = p.numel();
    if (kind_ == Kind::sgd) {
      for (std::size_t i = 0; i < n; ++i) w[i] -= lr_ * g[i];
    } else {
      Moments& mo = moments_[p.raw()];
      if (mo.m.empty()) {
        mo.m.assign(n, 0.0);
        mo.v.assign(n, 0.0);
      }
      for (std::size_t i = 0; i < n; ++i) {
        mo.m[i] = kBeta1 * mo.m[i] + (1.0 - kBeta1) * g[i];
        mo.v[i] = kBeta2 * mo.v[i] + (1.0 - kBeta2) * g[i] * g[i];
        const double mhat = mo.m[i] / bc1;
        const double vhat = mo.v[i] / bc2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + kEps);
      }
    }
    p.zero_grad();
  }
}

}  // namespace ucrn
