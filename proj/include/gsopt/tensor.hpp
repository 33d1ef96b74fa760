#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "gsopt/common.hpp"

namespace gsopt {

// Dense row-major tensor of doubles. Value semantics throughout; shape is a
// plain dimension list (rank up to 4 in practice: [N,C,H,W] for images).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)),
        data_(count(shape_), fill) {}

  static Tensor from(std::vector<std::size_t> shape, std::vector<double> data);
  static Tensor scalar(double v) { return from({1}, {v}); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& raw() { return data_; }
  const std::vector<double>& raw() const { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  // 2D accessors (rows = dim0, cols = dim1).
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const {
    return data_[r * shape_[1] + c];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  std::string shape_str() const;

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const;

  static std::size_t count(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

[[noreturn]] void shape_mismatch(const std::string& op, const Tensor& a,
                                 const Tensor& b);

// --- Dense kernels -----------------------------------------------------------
//
// Each kernel has an OpenMP implementation and a serial reference. The
// parallel variants split work per output element with a fixed inner
// summation order, so results are bit-identical to the reference for any
// worker count. Tests assert that equality; the bench tool compares runtimes.

// C[m,n] = A[m,k] * B[k,n]
void matmul(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_reference(const Tensor& a, const Tensor& b, Tensor& out);
Tensor matmul(const Tensor& a, const Tensor& b);

// C[m,n] = A[m,k] * B[n,k]^T
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out);
// C[k,n] = A[m,k]^T * B[m,n]
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out);

// 2D convolution, stride 1. input [N,Cin,H,W], kernel [Cout,Cin,kh,kw],
// output [N,Cout,H+2p-kh+1,W+2p-kw+1].
void conv2d_forward(const Tensor& input, const Tensor& kernel,
                    const Tensor& bias, std::size_t pad, Tensor& out);
void conv2d_forward_reference(const Tensor& input, const Tensor& kernel,
                              const Tensor& bias, std::size_t pad, Tensor& out);
void conv2d_backward(const Tensor& input, const Tensor& kernel,
                     const Tensor& grad_out, std::size_t pad,
                     Tensor& grad_input, Tensor& grad_kernel,
                     Tensor& grad_bias);

}  // namespace gsopt
