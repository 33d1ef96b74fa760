#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gsopt/tensor.hpp"

namespace gsopt {

// Named view of a model parameter. Models hand out stable pointers into
// their own storage; the optimizer updates in place.
struct ParamRef {
  std::string name;
  Tensor* value = nullptr;
};

// Base optimizer. step() validates every gradient (shape + finiteness)
// before touching any weight, and aborts naming the offending parameter,
// so a NaN can never silently poison a model.
class Optimizer {
 public:
  virtual ~Optimizer() = default;

  void step(const std::vector<ParamRef>& params,
            const std::vector<Tensor>& grads);

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  std::uint64_t updates() const { return t_; }
  void set_updates(std::uint64_t t) { t_ = t; }

  // Slot tensors in a fixed order (momentum/moment buffers), exposed for
  // checkpointing. Empty until the first step unless restored.
  virtual std::vector<Tensor>& slots() = 0;
  virtual std::string kind() const = 0;

 protected:
  explicit Optimizer(double lr) : lr_(lr) {}
  virtual void apply(const std::vector<ParamRef>& params,
                     const std::vector<Tensor>& grads) = 0;

  double lr_;
  std::uint64_t t_ = 0;
};

// SGD with classical momentum: v <- mu*v + g, p <- p - lr*v.
class SgdMomentum : public Optimizer {
 public:
  SgdMomentum(double lr, double momentum)
      : Optimizer(lr), momentum_(momentum) {}

  std::vector<Tensor>& slots() override { return vel_; }
  std::string kind() const override { return "sgd"; }

 private:
  void apply(const std::vector<ParamRef>& params,
             const std::vector<Tensor>& grads) override;

  double momentum_;
  std::vector<Tensor> vel_;  // one velocity buffer per parameter
};

class Adam : public Optimizer {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : Optimizer(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  std::vector<Tensor>& slots() override { return slots_; }
  std::string kind() const override { return "adam"; }

 private:
  void apply(const std::vector<ParamRef>& params,
             const std::vector<Tensor>& grads) override;

  double beta1_, beta2_, eps_;
  std::vector<Tensor> slots_;  // [m_0..m_{n-1}, v_0..v_{n-1}]
};

// kind is "sgd" or "adam"; momentum only applies to sgd.
std::unique_ptr<Optimizer> make_optimizer(const std::string& kind, double lr,
                                          double momentum = 0.9);

}  // namespace gsopt
