#pragma once

#include <string>
#include <vector>

#include "gsopt/common.hpp"
#include "gsopt/optim.hpp"
#include "gsopt/scene_graph.hpp"
#include "gsopt/tape.hpp"
#include "gsopt/tensor.hpp"

namespace gsopt {

// One graph-convolution layer: separate weight matrices for the node's own
// features and for information flowing down from parents and up from
// children, each [out, in], plus a bias [out].
struct GraphConvParams {
  Tensor w_self, w_td, w_bu;
  Tensor bias;
};

// Per-node predictions in one [n_nodes, a_in] matrix: class logits in
// columns [0, n_classes), continuous means squashed to [0,1] by sigmoid in
// columns [n_classes, a_in).
struct NodePrediction {
  Tensor values;
  std::size_t n_classes = 0;
};

// Encoder/decoder GCN over scene graphs: a_in -> hidden -> bottleneck ->
// hidden -> a_in, relu on hidden layers, sigmoid on the continuous output
// slots. After autoencoder pretraining the encoder is frozen and only the
// decoder keeps training.
class TransformerModel {
 public:
  TransformerModel(std::size_t a_in, std::size_t n_classes, double sigma = 0.02,
                   std::size_t hidden = 16, std::size_t bottleneck = 10);

  std::size_t a_in() const { return a_in_; }
  std::size_t n_classes() const { return n_classes_; }
  std::size_t hidden() const { return hidden_; }
  std::size_t bottleneck() const { return bottleneck_; }

  double sigma() const { return sigma_; }
  void set_sigma(double s);

  bool frozen() const { return frozen_; }
  void set_frozen(bool f) { frozen_ = f; }

  // Uniform Glorot-style init; biases stay zero. Fixed parameter order, so
  // one seed pins every weight.
  void init(Rng& rng);

  // All 16 parameters in a fixed order (enc1, enc2, dec1, dec2; w_self,
  // w_td, w_bu, bias within each layer).
  std::vector<ParamRef> params();
  // Decoder-only view when the encoder is frozen.
  std::vector<ParamRef> trainable_params();

  void save(const std::string& path, const std::string& dtype = "f32") const;
  static TransformerModel load(const std::string& path);

  GraphConvParams enc1, enc2, dec1, dec2;

 private:
  std::size_t a_in_, n_classes_, hidden_, bottleneck_;
  double sigma_;
  bool frozen_ = false;
};

// Registers one leaf per parameter in params() order; encoder leaves skip
// gradient tracking while the model is frozen. Sharing the returned ids
// across several forwards on the same tape accumulates batch gradients.
std::vector<NodeId> register_params(Tape& tape, const TransformerModel& model);

// Forward pass over explicit per-node parent/child lists (the equivariance
// tests drive this entry directly; graphs are trees but the rule never
// assumes it). Returns the [n_nodes, a_in] output node.
NodeId gcn_forward_with(Tape& tape, const TransformerModel& model,
                        const std::vector<NodeId>& param_ids,
                        const Tensor& attrs,
                        const std::vector<std::vector<int>>& parents,
                        const std::vector<std::vector<int>>& children);
NodeId gcn_forward_with(Tape& tape, const TransformerModel& model,
                        const std::vector<NodeId>& param_ids,
                        const SceneGraph& graph);

// Single-graph convenience: fresh leaves plus one forward.
struct GcnTape {
  NodeId output = -1;            // [n_nodes, a_in]
  std::vector<NodeId> param_ids;
};
GcnTape gcn_forward_tape(Tape& tape, const TransformerModel& model,
                         const SceneGraph& graph);
NodePrediction gcn_forward(const TransformerModel& model,
                           const SceneGraph& graph);

// Identity-reconstruction loss: summed softmax cross-entropy of the class
// logits against the true class plus summed L1 over all continuous slots.
NodeId autoencoder_loss_tape(Tape& tape, NodeId pred, const SceneGraph& target);
double autoencoder_loss(const NodePrediction& pred, const SceneGraph& target);

enum class SampleMode { Deterministic, Stochastic };

struct SampledAttrs {
  Tensor values;           // [n_nodes, a_in]
  double log_prob = 0.0;   // meaningful only when has_log_prob
  bool has_log_prob = false;
};

// Draws attribute values from the per-slot normal centered on the predicted
// means. Deterministic mode returns the means themselves (no density);
// stochastic mode perturbs every mutable slot with sigma-scaled noise and
// accumulates the log-density of the draw. Immutable slots pass through
// from the graph unchanged.
SampledAttrs sample_attributes(const TransformerModel& model,
                               const NodePrediction& pred,
                               const SceneGraph& graph, SampleMode mode,
                               Rng* rng = nullptr);

// Log-density of fixed sampled values under means; the sum runs over
// mutable slots only. mask is the graph's flat mask_matrix().
double log_prob_attrs(const Tensor& sampled, const Tensor& means,
                      const std::vector<std::uint8_t>& mask, double sigma);
// Same quantity on the tape, differentiable through the predicted means.
NodeId log_prob_tape(Tape& tape, NodeId pred, const Tensor& sampled,
                     const std::vector<std::uint8_t>& mask, double sigma);
// Batch total; equals the sum of per-sample log_probs.
double log_prob_batch(const std::vector<Tensor>& samples,
                      const std::vector<NodePrediction>& predictions,
                      const std::vector<std::vector<std::uint8_t>>& masks,
                      double sigma);

// Gradients aligned with trainable_params(), read off the tape after
// backward(). param_ids must come from register_params (params() order).
std::vector<Tensor> collect_grads(Tape& tape,
                                  const std::vector<NodeId>& param_ids,
                                  const TransformerModel& model);

struct PretrainStage {
  int epochs = 8;
  double lr = 1e-3;
};

struct PretrainConfig {
  std::vector<PretrainStage> stages = {{8, 1e-3}};
  int batch_size = 8;
  int samples_per_epoch = 500;
  std::string optimizer = "adam";
  double momentum = 0.9;  // sgd stages only
};

// Trains the autoencoder on freshly sampled scenes, freezes the encoder,
// and returns the mean per-slot continuous reconstruction error over a
// fresh validation batch.
double pretrain_autoencoder(TransformerModel& model, const Grammar& grammar,
                            const PretrainConfig& cfg, Rng& rng);

}  // namespace gsopt
