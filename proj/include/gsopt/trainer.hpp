#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "gsopt/features.hpp"
#include "gsopt/mmd.hpp"
#include "gsopt/task.hpp"
#include "gsopt/transformer.hpp"

namespace gsopt {

// Exponential moving average of past validation scores. The first observed
// score initializes the average, so the first advantage is exactly zero.
struct BaselineState {
  double value = 0.0;
  bool initialized = false;
  double decay = 0.9;  // in [0, 1)
  double min_seen = 0.0, max_seen = 0.0;

  double advantage(double score) const {
    return initialized ? score - value : 0.0;
  }
  void update(double score);

  nlohmann::json to_json() const;
  static BaselineState from_json(const nlohmann::json& doc);
};

struct ReinforceResult {
  double loss = 0.0;       // -(score - b) * log_prob, with b before update
  double advantage = 0.0;  // score - b (zero for the first observation)
};

// Score-function surrogate: seeds -(lambda * advantage) into the log-prob
// node and runs the tape backward, so gradients reach the model only
// through the log-density of the draw. The baseline is updated afterwards.
ReinforceResult reinforce_backward(Tape& tape, NodeId log_prob, double score,
                                   BaselineState& baseline,
                                   double lambda = 1.0);

// Meta-loop hyperparameters. One epoch draws iters_per_epoch batches of
// batch_size scene graphs (500/epoch for the mnist experiments, 100 for
// aerial).
struct ExperimentConfig {
  std::string experiment_id = "mnist-rot";
  int meta_epochs = 100;     // E_m
  int iters_per_epoch = 10;  // I_m
  int batch_size = 50;       // B_m

  double lambda_mmd = 1.0;
  double lambda_task = 1.0;

  std::string meta_optimizer = "adam";
  double meta_lr = 1e-3;
  double meta_momentum = 0.9;

  int task_epochs = 2;  // task-net epochs per meta epoch (2 mnist, 8 aerial)
  TaskTrainConfig task;

  double fd_step = 0.01;
  FdScheme fd_scheme = FdScheme::RenderJvp;
  KernelConfig kernel;        // bandwidth policy for the distribution loss
  double noise_sigma = 0.02;  // stddev of stochastic attribute draws
  double baseline_decay = 0.9;

  // Distribution-only phases step the optimizer per minibatch; joint
  // training takes a single step per meta epoch.
  bool step_per_minibatch = false;
  int aa_samples = 1;
  std::uint64_t seed = 0;

  std::size_t samples_per_epoch() const {
    return static_cast<std::size_t>(iters_per_epoch) * batch_size;
  }
  void validate() const;  // Config error on violation

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& doc);
};

// One metrics record per meta epoch (streamed to JSONL by callers).
struct MetaEpochMetrics {
  std::string phase;
  int epoch = 0;              // 1-based, global across phases
  double mmd_loss = 0.0;      // epoch mean of the minibatch estimates
  double task_score = -1.0;   // -1 while the task term is inactive
  double baseline = 0.0;      // moving average after this epoch's update
  double reinforce_loss = 0.0;
  double wall_time = 0.0;     // seconds (excluded from determinism checks)
  int fd_renders = 0;         // renderer evaluations spent on the mmd term
  int log_prob_grads = 0;     // log-prob backward passes this epoch

  nlohmann::json to_json() const;
};

// Either downstream net, selected by the experiment kind.
using TaskNet = std::variant<MnistClassifier, SmallUNet>;

double evaluate_task(const TaskNet& net, const ValidationSet& v);
double evaluate_task(const TaskNet& net, const LabeledSet& test);

// Renders + labels for a batch of (transformed) scene graphs.
LabeledSet render_labeled(const std::vector<SceneGraph>& graphs,
                          const Grammar& grammar, const AssetLibrary& assets,
                          const RenderConfig& config);

// Runs the meta-training loop for one model: per iteration, sample graphs,
// rewrite their mutable attributes with the transformer, render, and
// accumulate the distribution loss gradient; per epoch, retrain the task
// net on the epoch's renders, score it on V, and add the score-function
// term. The model's encoder must already be frozen (pretrained).
class MetaTrainer {
 public:
  MetaTrainer(TransformerModel& model, const Grammar& grammar,
              const AssetLibrary& assets, const FeatureExtractor& extractor,
              Tensor target_features, TaskNet* tasknet,
              const ValidationSet* validation, ExperimentConfig config);

  const ExperimentConfig& config() const { return cfg_; }
  const BaselineState& baseline() const { return baseline_; }
  int epochs_done() const { return epoch_; }
  // Cumulative counters backing the gradient-isolation invariants.
  long total_fd_renders() const { return total_fd_renders_; }
  long total_log_prob_grads() const { return total_log_prob_grads_; }

  MetaEpochMetrics run_epoch(const std::string& phase);

  // Phase switches: run_experiment lowers lambda_task to zero during the
  // distribution-only warmup and restores it for joint epochs.
  void set_lambda(double mmd, double task) {
    if (mmd < 0.0 || task < 0.0)
      raise(ErrorKind::Config, "loss weights must be >= 0");
    cfg_.lambda_mmd = mmd;
    cfg_.lambda_task = task;
  }
  void set_step_per_minibatch(bool v) { cfg_.step_per_minibatch = v; }

  // Rewrites freshly sampled graphs with the current model (deterministic
  // attribute means — no exploration noise).
  std::vector<SceneGraph> transform_samples(std::size_t count);

  // Everything needed to resume bit-identically: model + task weights,
  // optimizer slots, baseline, rng stream, epoch counter.
  void save_checkpoint(const std::string& path) const;
  void restore_checkpoint(const std::string& path);

 private:
  void accumulate(std::vector<Tensor>& into, const std::vector<Tensor>& add);
  void step(const std::vector<Tensor>& grads);

  TransformerModel& model_;
  const Grammar& grammar_;
  const AssetLibrary& assets_;
  const FeatureExtractor& extractor_;
  Tensor target_features_;
  TaskNet* tasknet_;
  const ValidationSet* validation_;
  ExperimentConfig cfg_;
  RenderConfig render_cfg_;
  std::unique_ptr<Optimizer> opt_;
  BaselineState baseline_;
  Rng rng_;
  int epoch_ = 0;
  long total_fd_renders_ = 0;
  long total_log_prob_grads_ = 0;
};

// Full experiment protocol: pretrain the autoencoder, run the phase
// schedule, then score datasets rendered from the untransformed grammar
// (baseline) and from the trained model (final) with freshly trained task
// nets on the held-out test set.
struct PhaseSchedule {
  int dist_epochs = 0;    // distribution-only warmup (per-minibatch steps)
  int joint_epochs = 100;
};

struct RunHooks {
  // Called after every meta epoch (metrics streaming, checkpoints).
  std::function<void(const MetaTrainer&, const MetaEpochMetrics&)> on_epoch;
};

struct ExperimentReport {
  std::string experiment_id;
  double pretrain_error = 0.0;   // mean per-slot reconstruction error
  double baseline_score = 0.0;   // task net trained on raw grammar renders
  double final_score = 0.0;      // task net trained on transformed renders
  std::vector<MetaEpochMetrics> metrics;

  nlohmann::json to_json() const;
};

struct RunSpec {
  Grammar grammar;          // training grammar the model rewrites
  AssetLibrary assets;
  TargetData target;        // from make_target_dataset
  ExperimentConfig config;
  PretrainConfig pretrain;
  PhaseSchedule schedule;
  // Channel count is derived from the experiment kind; multi_scale and seed
  // are honored as given.
  FeatureExtractor::Config features;
  int eval_task_epochs = 20;  // budget for the baseline/final comparisons
};

ExperimentReport run_experiment(TransformerModel& model, const RunSpec& spec,
                                const RunHooks& hooks = {});

}  // namespace gsopt
