#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"

#include "gsopt/assets.hpp"
#include "gsopt/grammar.hpp"
#include "gsopt/image.hpp"
#include "gsopt/optim.hpp"
#include "gsopt/renderer.hpp"
#include "gsopt/tape.hpp"

namespace gsopt {

// Labeled image set for a downstream task: digit classes for Mnist,
// per-pixel class maps for Aerial.
struct LabeledSet {
  ExperimentKind kind = ExperimentKind::Mnist;
  std::vector<Image> images;
  std::vector<int> labels;         // one digit class per image (mnist)
  std::vector<Tensor> label_maps;  // one [h,w] class map per image (aerial)

  std::size_t size() const { return images.size(); }
};

// The labeled validation data V plus the unlabeled target image pool X_R
// the distribution objective matches against.
struct ValidationSet {
  LabeledSet data;
  std::vector<Image> pool;
};

// Digit classifier: two conv+pool stages (8 and 16 filters, 3x3) into three
// fully connected layers of widths 50, 100 and 10, with dropout 0.5 on the
// hidden fully connected outputs in train mode.
class MnistClassifier {
 public:
  explicit MnistClassifier(std::size_t in_h = 32, std::size_t in_w = 32);

  std::size_t in_h() const { return in_h_; }
  std::size_t in_w() const { return in_w_; }

  void init(Rng& rng);
  std::vector<ParamRef> params();

  // Class logits for a batch already stacked as [B,1,H,W]; param_ids must
  // come from register_params on the same tape. Dropout draws from rng in
  // train mode only.
  NodeId forward(Tape& tape, const std::vector<NodeId>& param_ids,
                 NodeId input, bool train, Rng& rng) const;

  Tensor logits(const std::vector<Image>& batch) const;  // eval mode, [B,10]
  std::vector<int> predict(const std::vector<Image>& batch) const;

  void save(const std::string& path, const std::string& dtype = "f32") const;
  static MnistClassifier load(const std::string& path);

 private:
  std::size_t in_h_, in_w_, flat_;
  Tensor k1_, cb1_, k2_, cb2_;  // conv stages
  Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

// Segmentation net: 2 down and 2 up stages with skip concatenations plus a
// two-conv head — seven 3x3 conv layers of widths 16-32-64-32-16-16-C.
class SmallUNet {
 public:
  explicit SmallUNet(std::size_t n_classes = 5, std::size_t in_c = 3);

  std::size_t n_classes() const { return n_classes_; }
  std::size_t in_c() const { return in_c_; }

  void init(Rng& rng);
  std::vector<ParamRef> params();

  // Per-pixel logits [B,C,H,W] for input [B,in_c,H,W]; spatial dims must be
  // divisible by 4 (two pooling stages).
  NodeId forward(Tape& tape, const std::vector<NodeId>& param_ids,
                 NodeId input) const;

  Tensor logits(const std::vector<Image>& batch) const;
  Tensor predict(const Image& image) const;  // [h,w] argmax class map

  void save(const std::string& path, const std::string& dtype = "f32") const;
  static SmallUNet load(const std::string& path);

 private:
  std::size_t n_classes_, in_c_;
  Tensor k1_, b1_, k2_, b2_, k3_, b3_;  // encoder + bottleneck
  Tensor k4_, b4_, k5_, b5_;            // decoder
  Tensor k6_, b6_, k7_, b7_;            // head
};

// Parameter leaves on the tape in params() order; gradients accumulate on
// the shared leaves across batch items.
std::vector<NodeId> register_params(Tape& tape, MnistClassifier& net);
std::vector<NodeId> register_params(Tape& tape, SmallUNet& net);

// Gray images stacked as [B,1,H,W] (rgb as [B,3,H,W]).
Tensor stack_batch(const std::vector<Image>& batch);

struct TaskTrainConfig {
  std::string optimizer = "sgd";
  double lr = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 50;
};

// Warm-start training: resumes from the current weights (0 epochs leaves
// them bit-identical), shuffles per epoch from the seed, applies no
// augmentation. Returns the mean training loss of the final epoch.
double train_task_net(MnistClassifier& net, const LabeledSet& data, int epochs,
                      const TaskTrainConfig& cfg, std::uint64_t seed);
double train_task_net(SmallUNet& net, const LabeledSet& data, int epochs,
                      const TaskTrainConfig& cfg, std::uint64_t seed);

// Mean eval-mode loss over the whole set (cross entropy; per-pixel mean for
// segmentation).
double task_loss(const MnistClassifier& net, const LabeledSet& data);
double task_loss(const SmallUNet& net, const LabeledSet& data);

// Validation score: classification accuracy (mnist) or mean IoU over the
// classes present in the ground truth (aerial). Deterministic.
double evaluate(const MnistClassifier& net, const ValidationSet& v);
double evaluate(const SmallUNet& net, const ValidationSet& v);

struct IouReport {
  std::vector<double> per_class;  // -1 for classes absent from ground truth
  std::vector<bool> present;
  double mean = 0.0;              // over present classes
};

// Set-level IoU: intersections and unions accumulate over all pixels of the
// set before the ratio is taken.
IouReport iou_from_maps(const std::vector<Tensor>& pred,
                        const std::vector<Tensor>& gt, std::size_t n_classes);
IouReport evaluate_iou(const SmallUNet& net, const LabeledSet& data);

// Canvas and mode each experiment's target data is rendered with.
RenderConfig target_render_config(const std::string& experiment_id);

struct TargetData {
  ValidationSet val;  // V with its unlabeled pool X_R
  LabeledSet test;    // held-out set of equal size, disjoint from V
  // Scene graphs behind each subset, for attribute read-back and export.
  std::vector<SceneGraph> val_graphs, pool_graphs, test_graphs;
};

// Samples and renders target data from a target grammar (whose priors pin
// the target configuration: digits rotated 90 deg and centered, or moved to
// the bottom-left corner; aerial cars within +-5 deg of their road). V
// holds 1000 samples for the mnist experiments and 100 for aerial; the test
// set and pool match V's size, with disjoint provenance id ranges.
TargetData make_target_dataset(const std::string& experiment_id,
                               const Grammar& grammar,
                               const AssetLibrary& assets, std::uint64_t seed);

nlohmann::json score_record(const std::string& experiment, int epoch,
                            const std::string& metric, double value,
                            std::uint64_t seed);
nlohmann::json iou_table(const IouReport& report,
                         const std::vector<std::string>& class_names);

}  // namespace gsopt
