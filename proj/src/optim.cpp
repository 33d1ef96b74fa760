#include "gsopt/optim.hpp"

#include <cmath>

namespace gsopt {

void Optimizer::step(const std::vector<ParamRef>& params,
                     const std::vector<Tensor>& grads) {
  if (params.size() != grads.size())
    raise(ErrorKind::Shape, "optimizer step: " + std::to_string(params.size()) +
                                " params vs " + std::to_string(grads.size()) +
                                " grads");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i].value->same_shape(grads[i]))
      raise(ErrorKind::Shape,
            "gradient shape mismatch for parameter '" + params[i].name + "'");
    if (!grads[i].all_finite())
      raise(ErrorKind::Training,
            "non-finite gradient for parameter '" + params[i].name + "'");
  }
  ++t_;
  apply(params, grads);
}

void SgdMomentum::apply(const std::vector<ParamRef>& params,
                        const std::vector<Tensor>& grads) {
  if (vel_.empty())
    for (const ParamRef& p : params) vel_.emplace_back(p.value->shape());
  if (vel_.size() != params.size())
    raise(ErrorKind::Contract, "sgd: slot count does not match param count");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].value;
    Tensor& v = vel_[i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      p[j] -= lr_ * v[j];
    }
  }
}

void Adam::apply(const std::vector<ParamRef>& params,
                 const std::vector<Tensor>& grads) {
  const std::size_t n = params.size();
  if (slots_.empty()) {
    slots_.reserve(2 * n);
    for (const ParamRef& p : params) slots_.emplace_back(p.value->shape());
    for (const ParamRef& p : params) slots_.emplace_back(p.value->shape());
  }
  if (slots_.size() != 2 * n)
    raise(ErrorKind::Contract, "adam: slot count does not match param count");
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < n; ++i) {
    Tensor& p = *params[i].value;
    Tensor& m = slots_[i];
    Tensor& v = slots_[n + i];
    const Tensor& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / c1;
      const double vhat = v[j] / c2;
      p[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr,
                                          double momentum) {
  if (kind == "sgd") return std::make_unique<SgdMomentum>(lr, momentum);
  if (kind == "adam") return std::make_unique<Adam>(lr);
  raise(ErrorKind::Config, "unknown optimizer kind: " + kind);
}

}  // namespace gsopt
