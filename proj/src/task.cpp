#include "gsopt/task.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gsopt/checkpoint.hpp"
#include "gsopt/scene_graph.hpp"

namespace gsopt {

namespace {

Tensor he_conv(Rng& rng, std::size_t out_c, std::size_t in_c) {
  Tensor k({out_c, in_c, 3, 3});
  const double std = std::sqrt(2.0 / static_cast<double>(in_c * 9));
  for (std::size_t i = 0; i < k.size(); ++i) k[i] = std * rng.normal();
  return k;
}

Tensor he_fc(Rng& rng, std::size_t out, std::size_t in) {
  Tensor w({out, in});
  const double std = std::sqrt(2.0 / static_cast<double>(in));
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = std * rng.normal();
  return w;
}

std::vector<Tensor> collect_grads(Tape& tape, const std::vector<NodeId>& ids) {
  std::vector<Tensor> grads;
  grads.reserve(ids.size());
  for (NodeId id : ids) grads.push_back(tape.grad(id));
  return grads;
}

void shuffle_indices(std::vector<std::size_t>& idx, Rng& rng) {
  for (std::size_t i = idx.size(); i > 1; --i)
    std::swap(idx[i - 1], idx[rng.uniform_index(i)]);
}

}  // namespace

Tensor stack_batch(const std::vector<Image>& batch) {
  if (batch.empty()) raise(ErrorKind::Shape, "stack_batch: empty batch");
  const std::size_t h = batch[0].h, w = batch[0].w, c = batch[0].c;
  Tensor x({batch.size(), c, h, w});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Image& img = batch[i];
    if (img.h != h || img.w != w || img.c != c)
      raise(ErrorKind::Shape, "stack_batch: mixed image shapes in batch");
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x2 = 0; x2 < w; ++x2)
          x[((i * c + ch) * h + y) * w + x2] = img.at(y, x2, ch);
  }
  return x;
}

// --- MnistClassifier -------------------------------------------------------

MnistClassifier::MnistClassifier(std::size_t in_h, std::size_t in_w)
    : in_h_(in_h), in_w_(in_w) {
  if (in_h % 4 || in_w % 4 || in_h < 8 || in_w < 8)
    raise(ErrorKind::Config,
          "classifier input dims must be multiples of 4, at least 8");
  flat_ = 16 * (in_h / 4) * (in_w / 4);
  k1_ = Tensor({8, 1, 3, 3});
  cb1_ = Tensor({8});
  k2_ = Tensor({16, 8, 3, 3});
  cb2_ = Tensor({16});
  w1_ = Tensor({50, flat_});
  b1_ = Tensor({50});
  w2_ = Tensor({100, 50});
  b2_ = Tensor({100});
  w3_ = Tensor({10, 100});
  b3_ = Tensor({10});
}

void MnistClassifier::init(Rng& rng) {
  k1_ = he_conv(rng, 8, 1);
  k2_ = he_conv(rng, 16, 8);
  w1_ = he_fc(rng, 50, flat_);
  w2_ = he_fc(rng, 100, 50);
  w3_ = he_fc(rng, 10, 100);
  for (Tensor* b : {&cb1_, &cb2_, &b1_, &b2_, &b3_})
    for (std::size_t i = 0; i < b->size(); ++i) (*b)[i] = 0.0;
}

std::vector<ParamRef> MnistClassifier::params() {
  return {{"conv1.w", &k1_}, {"conv1.b", &cb1_}, {"conv2.w", &k2_},
          {"conv2.b", &cb2_}, {"fc1.w", &w1_},   {"fc1.b", &b1_},
          {"fc2.w", &w2_},    {"fc2.b", &b2_},   {"fc3.w", &w3_},
          {"fc3.b", &b3_}};
}

std::vector<NodeId> register_params(Tape& tape, MnistClassifier& net) {
  std::vector<NodeId> ids;
  for (const ParamRef& p : net.params()) ids.push_back(tape.leaf(*p.value, true));
  return ids;
}

NodeId MnistClassifier::forward(Tape& t, const std::vector<NodeId>& p,
                                NodeId input, bool train, Rng& rng) const {
  if (p.size() != 10)
    raise(ErrorKind::Contract, "param_ids must come from register_params");
  NodeId x = t.maxpool2(t.relu(t.conv2d(input, p[0], p[1], 1)));
  x = t.maxpool2(t.relu(t.conv2d(x, p[2], p[3], 1)));
  x = t.flatten(x);
  x = t.dropout(t.relu(t.linear(x, p[4], p[5])), 0.5, train, rng);
  x = t.dropout(t.relu(t.linear(x, p[6], p[7])), 0.5, train, rng);
  return t.linear(x, p[8], p[9]);
}

Tensor MnistClassifier::logits(const std::vector<Image>& batch) const {
  Tape t;
  std::vector<NodeId> ids;
  auto& self = const_cast<MnistClassifier&>(*this);
  for (const ParamRef& p : self.params()) ids.push_back(t.leaf(*p.value));
  Rng unused(0);
  const NodeId out =
      forward(t, ids, t.leaf(stack_batch(batch)), false, unused);
  return t.value(out);
}

std::vector<int> MnistClassifier::predict(const std::vector<Image>& batch) const {
  const Tensor l = logits(batch);
  std::vector<int> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 10; ++c)
      if (l[i * 10 + c] > l[i * 10 + best]) best = c;
    out[i] = static_cast<int>(best);
  }
  return out;
}

void MnistClassifier::save(const std::string& path,
                           const std::string& dtype) const {
  CheckpointWriter w;
  w.set_meta({{"kind", "mnist_classifier"}, {"in_h", in_h_}, {"in_w", in_w_}});
  auto& self = const_cast<MnistClassifier&>(*this);
  for (const ParamRef& p : self.params()) w.add(p.name, *p.value, dtype);
  w.save(path);
}

MnistClassifier MnistClassifier::load(const std::string& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.meta().value("kind", "") != std::string("mnist_classifier"))
    raise(ErrorKind::Data, "checkpoint is not a classifier model");
  MnistClassifier net(ckpt.meta().at("in_h").get<std::size_t>(),
                      ckpt.meta().at("in_w").get<std::size_t>());
  for (ParamRef& p : net.params()) {
    if (!ckpt.has(p.name))
      raise(ErrorKind::Data, "checkpoint missing tensor " + p.name);
    const Tensor& t = ckpt.tensor(p.name);
    if (!t.same_shape(*p.value))
      raise(ErrorKind::Data, "checkpoint tensor shape mismatch for " + p.name);
    *p.value = t;
  }
  return net;
}

// --- SmallUNet -------------------------------------------------------------

SmallUNet::SmallUNet(std::size_t n_classes, std::size_t in_c)
    : n_classes_(n_classes), in_c_(in_c) {
  if (n_classes < 2) raise(ErrorKind::Config, "segmentation needs >= 2 classes");
  if (in_c < 1 || in_c > 4)
    raise(ErrorKind::Config, "unet input channels must be in [1, 4]");
  k1_ = Tensor({16, in_c, 3, 3});
  b1_ = Tensor({16});
  k2_ = Tensor({32, 16, 3, 3});
  b2_ = Tensor({32});
  k3_ = Tensor({64, 32, 3, 3});
  b3_ = Tensor({64});
  k4_ = Tensor({32, 96, 3, 3});  // up(bottleneck) ++ skip from stage 2
  b4_ = Tensor({32});
  k5_ = Tensor({16, 48, 3, 3});  // up(dec1) ++ skip from stage 1
  b5_ = Tensor({16});
  k6_ = Tensor({16, 16, 3, 3});
  b6_ = Tensor({16});
  k7_ = Tensor({n_classes, 16, 3, 3});
  b7_ = Tensor({n_classes});
}

void SmallUNet::init(Rng& rng) {
  k1_ = he_conv(rng, 16, in_c_);
  k2_ = he_conv(rng, 32, 16);
  k3_ = he_conv(rng, 64, 32);
  k4_ = he_conv(rng, 32, 96);
  k5_ = he_conv(rng, 16, 48);
  k6_ = he_conv(rng, 16, 16);
  k7_ = he_conv(rng, n_classes_, 16);
  for (Tensor* b : {&b1_, &b2_, &b3_, &b4_, &b5_, &b6_, &b7_})
    for (std::size_t i = 0; i < b->size(); ++i) (*b)[i] = 0.0;
}

std::vector<ParamRef> SmallUNet::params() {
  return {{"enc1.w", &k1_}, {"enc1.b", &b1_}, {"enc2.w", &k2_},
          {"enc2.b", &b2_}, {"mid.w", &k3_},  {"mid.b", &b3_},
          {"dec1.w", &k4_}, {"dec1.b", &b4_}, {"dec2.w", &k5_},
          {"dec2.b", &b5_}, {"head.w", &k6_}, {"head.b", &b6_},
          {"out.w", &k7_},  {"out.b", &b7_}};
}

std::vector<NodeId> register_params(Tape& tape, SmallUNet& net) {
  std::vector<NodeId> ids;
  for (const ParamRef& p : net.params()) ids.push_back(tape.leaf(*p.value, true));
  return ids;
}

NodeId SmallUNet::forward(Tape& t, const std::vector<NodeId>& p,
                          NodeId input) const {
  if (p.size() != 14)
    raise(ErrorKind::Contract, "param_ids must come from register_params");
  const Tensor& v = t.value(input);
  if (v.rank() != 4 || v.dim(2) % 4 || v.dim(3) % 4)
    raise(ErrorKind::Shape, "unet input spatial dims must be multiples of 4");
  const NodeId c1 = t.relu(t.conv2d(input, p[0], p[1], 1));
  const NodeId c2 = t.relu(t.conv2d(t.maxpool2(c1), p[2], p[3], 1));
  const NodeId mid = t.relu(t.conv2d(t.maxpool2(c2), p[4], p[5], 1));
  const NodeId d1 = t.relu(t.conv2d(
      t.concat_channels(t.upsample_nn2(mid), c2), p[6], p[7], 1));
  const NodeId d2 = t.relu(t.conv2d(
      t.concat_channels(t.upsample_nn2(d1), c1), p[8], p[9], 1));
  const NodeId head = t.relu(t.conv2d(d2, p[10], p[11], 1));
  return t.conv2d(head, p[12], p[13], 1);
}

Tensor SmallUNet::logits(const std::vector<Image>& batch) const {
  Tape t;
  std::vector<NodeId> ids;
  auto& self = const_cast<SmallUNet&>(*this);
  for (const ParamRef& p : self.params()) ids.push_back(t.leaf(*p.value));
  return t.value(forward(t, ids, t.leaf(stack_batch(batch))));
}

Tensor SmallUNet::predict(const Image& image) const {
  const Tensor l = logits({image});  // [1,C,H,W]
  const std::size_t h = image.h, w = image.w;
  Tensor map({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < n_classes_; ++c)
        if (l[(c * h + y) * w + x] > l[(best * h + y) * w + x]) best = c;
      map.at(y, x) = static_cast<double>(best);
    }
  return map;
}

void SmallUNet::save(const std::string& path, const std::string& dtype) const {
  CheckpointWriter w;
  w.set_meta(
      {{"kind", "unet"}, {"n_classes", n_classes_}, {"in_c", in_c_}});
  auto& self = const_cast<SmallUNet&>(*this);
  for (const ParamRef& p : self.params()) w.add(p.name, *p.value, dtype);
  w.save(path);
}

SmallUNet SmallUNet::load(const std::string& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  if (ckpt.meta().value("kind", "") != std::string("unet"))
    raise(ErrorKind::Data, "checkpoint is not a segmentation model");
  SmallUNet net(ckpt.meta().at("n_classes").get<std::size_t>(),
                ckpt.meta().at("in_c").get<std::size_t>());
  for (ParamRef& p : net.params()) {
    if (!ckpt.has(p.name))
      raise(ErrorKind::Data, "checkpoint missing tensor " + p.name);
    const Tensor& t = ckpt.tensor(p.name);
    if (!t.same_shape(*p.value))
      raise(ErrorKind::Data, "checkpoint tensor shape mismatch for " + p.name);
    *p.value = t;
  }
  return net;
}

// --- training --------------------------------------------------------------

namespace {

void check_mnist_data(const MnistClassifier& net, const LabeledSet& data) {
  if (data.images.empty()) raise(ErrorKind::Data, "empty task dataset");
  if (data.kind != ExperimentKind::Mnist)
    raise(ErrorKind::Data, "classifier expects mnist-style data");
  if (data.labels.size() != data.images.size())
    raise(ErrorKind::Data, "dataset labels do not cover the images");
  for (const Image& img : data.images)
    if (img.h != net.in_h() || img.w != net.in_w() || img.c != 1)
      raise(ErrorKind::Data, "image size does not match the classifier input");
  for (int y : data.labels)
    if (y < 0 || y > 9)
      raise(ErrorKind::Data, "label out of class range: " + std::to_string(y));
}

void check_aerial_data(const SmallUNet& net, const LabeledSet& data) {
  if (data.images.empty()) raise(ErrorKind::Data, "empty task dataset");
  if (data.kind != ExperimentKind::Aerial)
    raise(ErrorKind::Data, "segmentation net expects aerial-style data");
  if (data.label_maps.size() != data.images.size())
    raise(ErrorKind::Data, "dataset label maps do not cover the images");
  for (std::size_t i = 0; i < data.images.size(); ++i) {
    const Image& img = data.images[i];
    if (img.c != net.in_c())
      raise(ErrorKind::Data, "image channels do not match the net input");
    const Tensor& m = data.label_maps[i];
    if (m.rank() != 2 || m.dim(0) != img.h || m.dim(1) != img.w)
      raise(ErrorKind::Data, "label map does not match its image");
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double v = m[j];
      if (v < 0 || v >= static_cast<double>(net.n_classes()) ||
          v != std::floor(v))
        raise(ErrorKind::Data, "label out of class range: " + std::to_string(v));
    }
  }
}

template <typename BatchLoss>
double run_epochs(const std::vector<ParamRef>& params, std::size_t n_items,
                  int epochs, const TaskTrainConfig& cfg, std::uint64_t seed,
                  BatchLoss&& batch_loss) {
  if (epochs < 0) raise(ErrorKind::Contract, "epochs must be >= 0");
  if (cfg.batch_size == 0) raise(ErrorKind::Config, "batch size must be >= 1");
  if (epochs == 0) return 0.0;

  auto opt = make_optimizer(cfg.optimizer, cfg.lr, cfg.momentum);
  Rng rng(seed);
  std::vector<std::size_t> order(n_items);
  std::iota(order.begin(), order.end(), 0);

  double last_epoch_loss = 0.0;
  for (int epoch = 0; epoch < epochs; ++epoch) {
    shuffle_indices(order, rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n_items; start += cfg.batch_size) {
      const std::size_t end = std::min(n_items, start + cfg.batch_size);
      const std::vector<std::size_t> batch(order.begin() + start,
                                           order.begin() + end);
      loss_sum += batch_loss(batch, params, *opt, rng) * batch.size();
    }
    last_epoch_loss = loss_sum / n_items;
  }
  return last_epoch_loss;
}

}  // namespace

double train_task_net(MnistClassifier& net, const LabeledSet& data, int epochs,
                      const TaskTrainConfig& cfg, std::uint64_t seed) {
  check_mnist_data(net, data);
  const std::vector<ParamRef> params = net.params();
  return run_epochs(
      params, data.size(), epochs, cfg, seed,
      [&](const std::vector<std::size_t>& batch,
          const std::vector<ParamRef>& prefs, Optimizer& opt, Rng& rng) {
        std::vector<Image> imgs;
        std::vector<int> labels;
        for (std::size_t i : batch) {
          imgs.push_back(data.images[i]);
          labels.push_back(data.labels[i]);
        }
        Tape t;
        std::vector<NodeId> ids;
        for (const ParamRef& p : prefs) ids.push_back(t.leaf(*p.value, true));
        const NodeId logits =
            net.forward(t, ids, t.leaf(stack_batch(imgs)), true, rng);
        const NodeId loss = t.softmax_cross_entropy(logits, labels);
        t.backward(loss);
        opt.step(prefs, collect_grads(t, ids));
        return t.value(loss)[0];
      });
}

double train_task_net(SmallUNet& net, const LabeledSet& data, int epochs,
                      const TaskTrainConfig& cfg, std::uint64_t seed) {
  check_aerial_data(net, data);
  const std::vector<ParamRef> params = net.params();
  return run_epochs(
      params, data.size(), epochs, cfg, seed,
      [&](const std::vector<std::size_t>& batch,
          const std::vector<ParamRef>& prefs, Optimizer& opt, Rng&) {
        std::vector<Image> imgs;
        std::vector<int> labels;
        for (std::size_t i : batch) {
          imgs.push_back(data.images[i]);
          const Tensor& m = data.label_maps[i];
          for (std::size_t j = 0; j < m.size(); ++j)
            labels.push_back(static_cast<int>(m[j]));
        }
        Tape t;
        std::vector<NodeId> ids;
        for (const ParamRef& p : prefs) ids.push_back(t.leaf(*p.value, true));
        const NodeId logits = net.forward(t, ids, t.leaf(stack_batch(imgs)));
        const NodeId loss = t.softmax_cross_entropy_map(logits, labels);
        t.backward(loss);
        opt.step(prefs, collect_grads(t, ids));
        return t.value(loss)[0];
      });
}

// --- evaluation ------------------------------------------------------------

namespace {
constexpr std::size_t kEvalChunk = 128;
}

double task_loss(const MnistClassifier& net, const LabeledSet& data) {
  check_mnist_data(net, data);
  double sum = 0.0;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const std::size_t end = std::min(data.size(), start + kEvalChunk);
    const std::vector<Image> chunk(data.images.begin() + start,
                                   data.images.begin() + end);
    const std::vector<int> labels(data.labels.begin() + start,
                                  data.labels.begin() + end);
    Tape t;
    std::vector<NodeId> ids;
    auto& self = const_cast<MnistClassifier&>(net);
    for (const ParamRef& p : self.params()) ids.push_back(t.leaf(*p.value));
    Rng unused(0);
    const NodeId logits =
        net.forward(t, ids, t.leaf(stack_batch(chunk)), false, unused);
    sum += t.value(t.softmax_cross_entropy(logits, labels))[0] * chunk.size();
  }
  return sum / data.size();
}

double task_loss(const SmallUNet& net, const LabeledSet& data) {
  check_aerial_data(net, data);
  double sum = 0.0;
  for (std::size_t start = 0; start < data.size(); start += kEvalChunk) {
    const std::size_t end = std::min(data.size(), start + kEvalChunk);
    const std::vector<Image> chunk(data.images.begin() + start,
                                   data.images.begin() + end);
    std::vector<int> labels;
    for (std::size_t i = start; i < end; ++i) {
      const Tensor& m = data.label_maps[i];
      for (std::size_t j = 0; j < m.size(); ++j)
        labels.push_back(static_cast<int>(m[j]));
    }
    Tape t;
    std::vector<NodeId> ids;
    auto& self = const_cast<SmallUNet&>(net);
    for (const ParamRef& p : self.params()) ids.push_back(t.leaf(*p.value));
    const NodeId logits = net.forward(t, ids, t.leaf(stack_batch(chunk)));
    sum += t.value(t.softmax_cross_entropy_map(logits, labels))[0] *
           chunk.size();
  }
  return sum / data.size();
}

double evaluate(const MnistClassifier& net, const ValidationSet& v) {
  check_mnist_data(net, v.data);
  std::size_t correct = 0;
  for (std::size_t start = 0; start < v.data.size(); start += kEvalChunk) {
    const std::size_t end = std::min(v.data.size(), start + kEvalChunk);
    const std::vector<Image> chunk(v.data.images.begin() + start,
                                   v.data.images.begin() + end);
    const std::vector<int> pred = net.predict(chunk);
    for (std::size_t i = 0; i < pred.size(); ++i)
      if (pred[i] == v.data.labels[start + i]) ++correct;
  }
  return static_cast<double>(correct) / v.data.size();
}

IouReport iou_from_maps(const std::vector<Tensor>& pred,
                        const std::vector<Tensor>& gt,
                        std::size_t n_classes) {
  if (pred.size() != gt.size() || gt.empty())
    raise(ErrorKind::Shape, "iou: prediction/ground-truth count mismatch");
  std::vector<std::size_t> inter(n_classes, 0), uni(n_classes, 0);
  std::vector<bool> present(n_classes, false);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    if (!pred[i].same_shape(gt[i]))
      raise(ErrorKind::Shape, "iou: map shape mismatch");
    for (std::size_t j = 0; j < gt[i].size(); ++j) {
      const double pv = pred[i][j], gv = gt[i][j];
      if (pv < 0 || pv >= static_cast<double>(n_classes) || gv < 0 ||
          gv >= static_cast<double>(n_classes))
        raise(ErrorKind::Data, "iou: class id out of range");
      const std::size_t p = static_cast<std::size_t>(pv);
      const std::size_t g = static_cast<std::size_t>(gv);
      present[g] = true;
      if (p == g) {
        ++inter[p];
        ++uni[p];
      } else {
        ++uni[p];
        ++uni[g];
      }
    }
  }
  IouReport report;
  report.per_class.assign(n_classes, -1.0);
  report.present = present;
  double sum = 0.0;
  std::size_t n_present = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (!present[c]) continue;
    report.per_class[c] =
        uni[c] ? static_cast<double>(inter[c]) / uni[c] : 0.0;
    sum += report.per_class[c];
    ++n_present;
  }
  report.mean = n_present ? sum / n_present : 0.0;
  return report;
}

IouReport evaluate_iou(const SmallUNet& net, const LabeledSet& data) {
  check_aerial_data(net, data);
  std::vector<Tensor> preds;
  preds.reserve(data.size());
  for (const Image& img : data.images) preds.push_back(net.predict(img));
  return iou_from_maps(preds, data.label_maps, net.n_classes());
}

double evaluate(const SmallUNet& net, const ValidationSet& v) {
  return evaluate_iou(net, v.data).mean;
}

// --- target datasets -------------------------------------------------------

RenderConfig target_render_config(const std::string& experiment_id) {
  RenderConfig rc;
  if (experiment_id == "mnist-rot") {
    rc.canvas_h = rc.canvas_w = 32;
    rc.kind = ExperimentKind::Mnist;
  } else if (experiment_id == "mnist-rot-trans") {
    rc.canvas_h = rc.canvas_w = 64;
    rc.kind = ExperimentKind::Mnist;
  } else if (experiment_id == "aerial") {
    rc.canvas_h = rc.canvas_w = 128;
    rc.kind = ExperimentKind::Aerial;
  } else {
    raise(ErrorKind::Config, "unknown experiment id: " + experiment_id);
  }
  return rc;
}

TargetData make_target_dataset(const std::string& experiment_id,
                               const Grammar& grammar,
                               const AssetLibrary& assets,
                               std::uint64_t seed) {
  const RenderConfig rc = target_render_config(experiment_id);
  const bool aerial = rc.kind == ExperimentKind::Aerial;
  const std::size_t n = aerial ? 100 : 1000;

  Rng root(seed);
  Rng val_rng = root.fork();
  Rng pool_rng = root.fork();
  Rng test_rng = root.fork();

  // Disjoint by construction: separate sample streams and non-overlapping
  // provenance id ranges (V: [0,n), pool: [n,2n), test: [2n,3n)).
  const auto emit = [&](Rng& rng, std::size_t id0, std::size_t count,
                        std::vector<SceneGraph>& graphs, LabeledSet* labeled,
                        std::vector<Image>* pool) {
    for (std::size_t i = 0; i < count; ++i) {
      SceneGraph graph = sample_scene_graph(grammar, rng);
      graph.id = static_cast<int>(id0 + i);
      RenderedSample sample = render(graph, grammar, assets, rc);
      graphs.push_back(std::move(graph));
      if (pool) {
        pool->push_back(std::move(sample.image));
        continue;
      }
      labeled->images.push_back(std::move(sample.image));
      if (aerial)
        labeled->label_maps.push_back(std::move(sample.label_map));
      else
        labeled->labels.push_back(sample.class_label);
    }
  };

  TargetData out;
  out.val.data.kind = rc.kind;
  out.test.kind = rc.kind;
  emit(val_rng, 0, n, out.val_graphs, &out.val.data, nullptr);
  emit(pool_rng, n, n, out.pool_graphs, nullptr, &out.val.pool);
  emit(test_rng, 2 * n, n, out.test_graphs, &out.test, nullptr);
  return out;
}

nlohmann::json score_record(const std::string& experiment, int epoch,
                            const std::string& metric, double value,
                            std::uint64_t seed) {
  return {{"experiment", experiment},
          {"epoch", epoch},
          {"metric", metric},
          {"value", value},
          {"seed", seed}};
}

nlohmann::json iou_table(const IouReport& report,
                         const std::vector<std::string>& class_names) {
  if (class_names.size() != report.per_class.size())
    raise(ErrorKind::Shape, "iou table: class name count mismatch");
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t c = 0; c < class_names.size(); ++c)
    per[class_names[c]] =
        report.present[c] ? nlohmann::json(report.per_class[c])
                          : nlohmann::json();
  return {{"per_class", per}, {"mean", report.mean}};
}

}  // namespace gsopt
