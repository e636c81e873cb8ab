#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace clothfit {

// Adam over a flat parameter array. Step lengths are close to `lr` per
// coordinate regardless of the gradient's scale.
template <class Scalar>
class Adam {
 public:
  Adam(std::size_t size, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), m_(size, Scalar(0)), v_(size, Scalar(0)) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  std::size_t size() const { return m_.size(); }
  long steps() const { return t_; }

  void step(Scalar* x, const Scalar* grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    const Scalar a = static_cast<Scalar>(lr_ / c1);
    const Scalar b1 = static_cast<Scalar>(beta1_), b2 = static_cast<Scalar>(beta2_);
    const Scalar inv_c2 = static_cast<Scalar>(1.0 / c2), eps = static_cast<Scalar>(eps_);
    for (std::size_t i = 0; i < m_.size(); ++i) {
      const Scalar g = grad[i];
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g * g;
      x[i] -= a * m_[i] / (std::sqrt(v_[i] * inv_c2) + eps);
    }
  }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Scalar> m_, v_;
};

}  // namespace clothfit
