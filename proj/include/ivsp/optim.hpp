#pragma once

#include <cmath>
#include <vector>

#include "ivsp/tensor.hpp"

namespace ivsp {

// Adam with bias correction, applied in place. Every parameter must carry a
// gradient when step() runs; grads are left untouched (call zero_grad()).
class Adam {
public:
  explicit Adam(std::vector<Tensor> params, double lr = 1e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Tensor& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  int64_t step_count() const { return t_; }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Tensor& p = params_[i];
      if (!p.has_grad()) throw Error("Adam::step: parameter " + std::to_string(i) +
                                     " has no gradient");
      auto g = p.grad();
      auto d = p.data();
      for (size_t j = 0; j < d.size(); ++j) {
        double gj = g[j];
        m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * gj;
        v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * gj * gj;
        double mhat = m_[i][j] / bc1;
        double vhat = v_[i][j] / bc2;
        d[j] = static_cast<float>(d[j] - lr_ * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  const std::vector<Tensor>& params() const { return params_; }

private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace ivsp
