#pragma once

#include <functional>
#include <vector>

#include "gsopt/common.hpp"
#include "gsopt/tensor.hpp"

namespace gsopt {

using NodeId = int;

// Reverse-mode computation tape. Nodes are appended in construction order;
// backward() walks the tape in reverse, so construction order is the
// topological order. Single-threaded per tape; distinct tapes are
// independent. Heavy primitives (conv, matmul) reuse the tensor kernels,
// which parallelize internally with fixed reduction order.
class Tape {
 public:
  NodeId leaf(Tensor value, bool needs_grad = false);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  Tensor& grad(NodeId id);
  bool needs_grad(NodeId id) const { return nodes_[id].needs_grad; }
  std::size_t node_count() const { return nodes_.size(); }

  // Seeds the root gradient with 1 (root must be scalar) and runs the tape
  // backward. Gradients accumulate; call once per tape in normal use.
  void backward(NodeId root);
  // Seeds the root gradient with an explicit tensor (for injecting external
  // gradients at an intermediate output).
  void backward_with(NodeId root, const Tensor& seed);

  // --- elementwise -----------------------------------------------------
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  // Sigmoid on columns [col0, cols) of a 2D tensor, identity elsewhere.
  NodeId sigmoid_cols(NodeId a, std::size_t col0);
  // Inverted dropout: train mode zeroes units with probability p and scales
  // survivors by 1/(1-p); eval mode is the identity.
  NodeId dropout(NodeId a, double p, bool train, Rng& rng);

  // --- linear algebra --------------------------------------------------
  NodeId matmul(NodeId a, NodeId b);
  // x:[m,in] * W:[out,in]^T + b:[out]  ->  [m,out]
  NodeId linear(NodeId x, NodeId w, NodeId b);

  // --- image ops (NCHW) ------------------------------------------------
  NodeId conv2d(NodeId x, NodeId k, NodeId b, std::size_t pad);
  NodeId maxpool2(NodeId x);
  NodeId avgpool2(NodeId x);
  NodeId upsample_nn2(NodeId x);
  NodeId concat_channels(NodeId a, NodeId b);
  NodeId flatten(NodeId x);
  NodeId global_avg_pool(NodeId x);  // [N,C,H,W] -> [N,C]

  // --- losses (scalar outputs) ----------------------------------------
  // Mean over rows of CE(softmax(logits[r]), labels[r]).
  NodeId softmax_cross_entropy(NodeId logits, std::vector<int> labels);
  // Per-pixel CE for [N,K,H,W] logits with labels of length N*H*W; mean
  // over all pixels.
  NodeId softmax_cross_entropy_map(NodeId logits, std::vector<int> labels);
  // Sum over rows of CE of columns [col0,col1) against per-row labels.
  NodeId softmax_ce_cols(NodeId x, std::size_t col0, std::size_t col1,
                         std::vector<int> labels);
  // Sum of |x(r,c) - target(r,c-col0)| over columns [col0,col1).
  NodeId l1_cols(NodeId x, std::size_t col0, std::size_t col1, Tensor target);
  NodeId l1_loss(NodeId pred, Tensor target);  // sum of absolute errors
  NodeId mse_loss(NodeId pred, Tensor target);  // mean of squared errors
  NodeId sum(NodeId a);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool grad_ready = false;
    std::function<void(Tape&)> backward;
  };

  NodeId push(Tensor value, bool needs_grad, std::function<void(Tape&)> bwd);
  void run_backward(NodeId root);
  void check_finite(NodeId id) const;

  std::vector<Node> nodes_;
};

}  // namespace gsopt
