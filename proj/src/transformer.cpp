#include "gsopt/transformer.hpp"

#include <cmath>
#include <utility>

#include "gsopt/checkpoint.hpp"

namespace gsopt {

namespace {

constexpr double kLogSqrt2Pi = 0.91893853320467274178;  // log(sqrt(2*pi))

GraphConvParams make_layer(std::size_t out, std::size_t in) {
  GraphConvParams p;
  p.w_self = Tensor({out, in});
  p.w_td = Tensor({out, in});
  p.w_bu = Tensor({out, in});
  p.bias = Tensor({out});
  return p;
}

// Mean-aggregation matrix: row v holds 1/|N(v)| at each neighbor column.
Tensor mean_agg(const std::vector<std::vector<int>>& neighbors,
                std::size_t n) {
  Tensor a({n, n});
  for (std::size_t v = 0; v < n; ++v) {
    const auto& nb = neighbors[v];
    if (nb.empty()) continue;
    const double w = 1.0 / static_cast<double>(nb.size());
    for (int u : nb) {
      if (u < 0 || static_cast<std::size_t>(u) >= n)
        raise(ErrorKind::Structural,
              "neighbor id " + std::to_string(u) + " out of range");
      a.at(v, static_cast<std::size_t>(u)) = w;
    }
  }
  return a;
}

// h' = W_self*h + W_td*mean(parents) + W_bu*mean(children) + bias.
NodeId layer_forward(Tape& t, NodeId h, NodeId agg_p, NodeId agg_c,
                     NodeId w_self, NodeId w_td, NodeId w_bu, NodeId bias,
                     std::size_t out_width) {
  const NodeId zero = t.leaf(Tensor({out_width}));
  const NodeId own = t.linear(h, w_self, bias);
  const NodeId top = t.linear(t.matmul(agg_p, h), w_td, zero);
  const NodeId bottom = t.linear(t.matmul(agg_c, h), w_bu, zero);
  return t.add(t.add(own, top), bottom);
}

}  // namespace

TransformerModel::TransformerModel(std::size_t a_in, std::size_t n_classes,
                                   double sigma, std::size_t hidden,
                                   std::size_t bottleneck)
    : a_in_(a_in),
      n_classes_(n_classes),
      hidden_(hidden),
      bottleneck_(bottleneck),
      sigma_(sigma) {
  if (a_in == 0 || n_classes == 0 || n_classes >= a_in)
    raise(ErrorKind::Config, "transformer widths: need 0 < n_classes < a_in");
  if (hidden == 0 || bottleneck == 0)
    raise(ErrorKind::Config, "transformer widths must be positive");
  set_sigma(sigma);
  enc1 = make_layer(hidden_, a_in_);
  enc2 = make_layer(bottleneck_, hidden_);
  dec1 = make_layer(hidden_, bottleneck_);
  dec2 = make_layer(a_in_, hidden_);
}

void TransformerModel::set_sigma(double s) {
  if (!(s > 0.0))
    raise(ErrorKind::Config, "sampling sigma must be positive");
  sigma_ = s;
}

void TransformerModel::init(Rng& rng) {
  for (ParamRef& p : params()) {
    Tensor& t = *p.value;
    if (t.rank() == 1) {
      t.fill(0.0);
      continue;
    }
    const double limit = std::sqrt(6.0 / (t.dim(0) + t.dim(1)));
    for (std::size_t i = 0; i < t.size(); ++i)
      t[i] = rng.uniform(-limit, limit);
  }
}

std::vector<ParamRef> TransformerModel::params() {
  std::vector<ParamRef> out;
  const auto layer = [&](const std::string& name, GraphConvParams& l) {
    out.push_back({name + ".w_self", &l.w_self});
    out.push_back({name + ".w_td", &l.w_td});
    out.push_back({name + ".w_bu", &l.w_bu});
    out.push_back({name + ".bias", &l.bias});
  };
  layer("enc1", enc1);
  layer("enc2", enc2);
  layer("dec1", dec1);
  layer("dec2", dec2);
  return out;
}

std::vector<ParamRef> TransformerModel::trainable_params() {
  std::vector<ParamRef> all = params();
  if (!frozen_) return all;
  return {all.begin() + 8, all.end()};  // drop the two encoder layers
}

void TransformerModel::save(const std::string& path,
                            const std::string& dtype) const {
  CheckpointWriter w;
  w.set_meta({{"kind", "transformer"},
              {"a_in", a_in_},
              {"n_classes", n_classes_},
              {"hidden", hidden_},
              {"bottleneck", bottleneck_},
              {"sigma", sigma_},
              {"frozen", frozen_}});
  auto& self = const_cast<TransformerModel&>(*this);
  for (const ParamRef& p : self.params()) w.add(p.name, *p.value, dtype);
  w.save(path);
}

TransformerModel TransformerModel::load(const std::string& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  const nlohmann::json& m = ckpt.meta();
  if (m.value("kind", "") != std::string("transformer"))
    raise(ErrorKind::Data, "checkpoint is not a transformer model");
  TransformerModel model(m.at("a_in").get<std::size_t>(),
                         m.at("n_classes").get<std::size_t>(),
                         m.at("sigma").get<double>(),
                         m.at("hidden").get<std::size_t>(),
                         m.at("bottleneck").get<std::size_t>());
  model.set_frozen(m.value("frozen", false));
  for (ParamRef& p : model.params()) {
    if (!ckpt.has(p.name))
      raise(ErrorKind::Data, "checkpoint missing tensor " + p.name);
    const Tensor& t = ckpt.tensor(p.name);
    if (!t.same_shape(*p.value))
      raise(ErrorKind::Data, "checkpoint tensor " + p.name + " has shape " +
                                 t.shape_str() + ", expected " +
                                 p.value->shape_str());
    *p.value = t;
  }
  return model;
}

std::vector<NodeId> register_params(Tape& tape,
                                    const TransformerModel& model) {
  auto& self = const_cast<TransformerModel&>(model);
  std::vector<NodeId> ids;
  std::size_t k = 0;
  for (const ParamRef& p : self.params()) {
    const bool encoder = k < 8;
    ids.push_back(tape.leaf(*p.value, !(encoder && model.frozen())));
    ++k;
  }
  return ids;
}

NodeId gcn_forward_with(Tape& tape, const TransformerModel& model,
                        const std::vector<NodeId>& param_ids,
                        const Tensor& attrs,
                        const std::vector<std::vector<int>>& parents,
                        const std::vector<std::vector<int>>& children) {
  if (attrs.rank() != 2 || attrs.dim(1) != model.a_in())
    raise(ErrorKind::Shape, "attribute matrix " + attrs.shape_str() +
                                " does not match a_in " +
                                std::to_string(model.a_in()));
  const std::size_t n = attrs.dim(0);
  if (parents.size() != n || children.size() != n)
    raise(ErrorKind::Shape, "neighbor lists must cover every node");
  if (param_ids.size() != 16)
    raise(ErrorKind::Contract, "param_ids must come from register_params");

  const NodeId agg_p = tape.leaf(mean_agg(parents, n));
  const NodeId agg_c = tape.leaf(mean_agg(children, n));

  NodeId h = tape.leaf(attrs);
  const std::size_t widths[4] = {model.hidden(), model.bottleneck(),
                                 model.hidden(), model.a_in()};
  for (std::size_t l = 0; l < 4; ++l) {
    h = layer_forward(tape, h, agg_p, agg_c, param_ids[l * 4 + 0],
                      param_ids[l * 4 + 1], param_ids[l * 4 + 2],
                      param_ids[l * 4 + 3], widths[l]);
    if (l < 3) h = tape.relu(h);
  }
  return tape.sigmoid_cols(h, model.n_classes());
}

NodeId gcn_forward_with(Tape& tape, const TransformerModel& model,
                        const std::vector<NodeId>& param_ids,
                        const SceneGraph& graph) {
  const std::size_t n = graph.nodes.size();
  std::vector<std::vector<int>> parents(n), children(n);
  for (std::size_t v = 0; v < n; ++v) {
    const int p = graph.parent_of(static_cast<int>(v));
    if (p >= 0) parents[v].push_back(p);
    children[v] = graph.children_of(static_cast<int>(v));
  }
  return gcn_forward_with(tape, model, param_ids, graph.attr_matrix(),
                          parents, children);
}

GcnTape gcn_forward_tape(Tape& tape, const TransformerModel& model,
                         const SceneGraph& graph) {
  GcnTape out;
  out.param_ids = register_params(tape, model);
  out.output = gcn_forward_with(tape, model, out.param_ids, graph);
  return out;
}

NodePrediction gcn_forward(const TransformerModel& model,
                           const SceneGraph& graph) {
  Tape tape;
  const GcnTape fwd = gcn_forward_tape(tape, model, graph);
  return {tape.value(fwd.output), model.n_classes()};
}

NodeId autoencoder_loss_tape(Tape& tape, NodeId pred,
                             const SceneGraph& target) {
  const Tensor& v = tape.value(pred);
  const std::size_t n = target.nodes.size();
  const std::size_t a_in = target.a_in();
  const std::size_t n_classes = target.classes.size();
  if (v.rank() != 2 || v.dim(0) != n || v.dim(1) != a_in)
    raise(ErrorKind::Shape, "prediction shape " + v.shape_str() +
                                " does not match the target graph");
  std::vector<int> labels(n);
  Tensor cont({n, kNumContinuous});
  for (std::size_t i = 0; i < n; ++i) {
    labels[i] = target.nodes[i].class_id;
    for (std::size_t c = 0; c < kNumContinuous; ++c)
      cont.at(i, c) = target.nodes[i].attrs[n_classes + c];
  }
  const NodeId ce = tape.softmax_ce_cols(pred, 0, n_classes, labels);
  const NodeId l1 = tape.l1_cols(pred, n_classes, a_in, std::move(cont));
  return tape.add(ce, l1);
}

double autoencoder_loss(const NodePrediction& pred, const SceneGraph& target) {
  Tape tape;
  const NodeId p = tape.leaf(pred.values);
  return tape.value(autoencoder_loss_tape(tape, p, target))[0];
}

SampledAttrs sample_attributes(const TransformerModel& model,
                               const NodePrediction& pred,
                               const SceneGraph& graph, SampleMode mode,
                               Rng* rng) {
  const std::size_t n = graph.nodes.size();
  const std::size_t a_in = graph.a_in();
  if (pred.values.rank() != 2 || pred.values.dim(0) != n ||
      pred.values.dim(1) != a_in)
    raise(ErrorKind::Shape, "prediction shape " + pred.values.shape_str() +
                                " does not match the graph");
  const double sigma = model.sigma();
  if (mode == SampleMode::Stochastic) {
    if (!(sigma > 0.0))
      raise(ErrorKind::Config, "stochastic sampling needs sigma > 0");
    if (rng == nullptr)
      raise(ErrorKind::Contract, "stochastic sampling needs an rng");
  }

  SampledAttrs out;
  out.values = graph.attr_matrix();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < a_in; ++a) {
      if (!graph.nodes[i].mask[a]) continue;
      const double mean = pred.values.at(i, a);
      if (mode == SampleMode::Deterministic) {
        out.values.at(i, a) = mean;
      } else {
        const double eps = rng->normal();
        out.values.at(i, a) = mean + sigma * eps;
        out.log_prob += -0.5 * eps * eps - std::log(sigma) - kLogSqrt2Pi;
      }
    }
  out.has_log_prob = mode == SampleMode::Stochastic;
  return out;
}

double log_prob_attrs(const Tensor& sampled, const Tensor& means,
                      const std::vector<std::uint8_t>& mask, double sigma) {
  if (!sampled.same_shape(means) || sampled.size() != mask.size())
    raise(ErrorKind::Shape, "log_prob: sample/mean/mask sizes disagree");
  if (!(sigma > 0.0)) raise(ErrorKind::Config, "sigma must be positive");
  double lp = 0.0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    const double d = (sampled[i] - means[i]) / sigma;
    lp += -0.5 * d * d - std::log(sigma) - kLogSqrt2Pi;
  }
  return lp;
}

NodeId log_prob_tape(Tape& tape, NodeId pred, const Tensor& sampled,
                     const std::vector<std::uint8_t>& mask, double sigma) {
  const Tensor& v = tape.value(pred);
  if (!v.same_shape(sampled) || v.size() != mask.size())
    raise(ErrorKind::Shape, "log_prob: sample/mean/mask sizes disagree");
  if (!(sigma > 0.0)) raise(ErrorKind::Config, "sigma must be positive");
  Tensor mask_t(v.shape());
  std::size_t count = 0;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) {
      mask_t[i] = 1.0;
      ++count;
    }
  const NodeId diff =
      tape.mul(tape.sub(tape.leaf(sampled), pred), tape.leaf(mask_t));
  const NodeId ssq = tape.sum(tape.mul(diff, diff));
  const NodeId quad = tape.scale(ssq, -0.5 / (sigma * sigma));
  const double constant =
      -static_cast<double>(count) * (std::log(sigma) + kLogSqrt2Pi);
  return tape.add(quad, tape.leaf(Tensor::scalar(constant)));
}

double log_prob_batch(const std::vector<Tensor>& samples,
                      const std::vector<NodePrediction>& predictions,
                      const std::vector<std::vector<std::uint8_t>>& masks,
                      double sigma) {
  if (samples.size() != predictions.size() || samples.size() != masks.size())
    raise(ErrorKind::Shape, "log_prob_batch: batch sizes disagree");
  double total = 0.0;
  for (std::size_t b = 0; b < samples.size(); ++b)
    total +=
        log_prob_attrs(samples[b], predictions[b].values, masks[b], sigma);
  return total;
}

std::vector<Tensor> collect_grads(Tape& tape,
                                  const std::vector<NodeId>& param_ids,
                                  const TransformerModel& model) {
  if (param_ids.size() != 16)
    raise(ErrorKind::Contract, "param_ids must come from register_params");
  std::vector<Tensor> grads;
  const std::size_t first = model.frozen() ? 8 : 0;
  for (std::size_t k = first; k < param_ids.size(); ++k)
    grads.push_back(tape.grad(param_ids[k]));
  return grads;
}

double pretrain_autoencoder(TransformerModel& model, const Grammar& grammar,
                            const PretrainConfig& cfg, Rng& rng) {
  if (cfg.stages.empty() || cfg.batch_size <= 0 || cfg.samples_per_epoch <= 0)
    raise(ErrorKind::Config, "pretrain schedule is empty or degenerate");
  if (model.frozen())
    raise(ErrorKind::Config, "cannot pretrain a frozen encoder");

  auto optimizer =
      make_optimizer(cfg.optimizer, cfg.stages.front().lr, cfg.momentum);
  for (const PretrainStage& stage : cfg.stages) {
    optimizer->set_lr(stage.lr);
    for (int epoch = 0; epoch < stage.epochs; ++epoch) {
      std::vector<SceneGraph> scenes;
      scenes.reserve(cfg.samples_per_epoch);
      for (int i = 0; i < cfg.samples_per_epoch; ++i)
        scenes.push_back(sample_scene_graph(grammar, rng));
      for (std::size_t start = 0; start < scenes.size();
           start += cfg.batch_size) {
        const std::size_t stop =
            std::min(scenes.size(), start + cfg.batch_size);
        Tape tape;
        const std::vector<NodeId> ids = register_params(tape, model);
        NodeId total = -1;
        for (std::size_t i = start; i < stop; ++i) {
          const NodeId out = gcn_forward_with(tape, model, ids, scenes[i]);
          const NodeId loss = autoencoder_loss_tape(tape, out, scenes[i]);
          total = total < 0 ? loss : tape.add(total, loss);
        }
        const NodeId mean =
            tape.scale(total, 1.0 / static_cast<double>(stop - start));
        tape.backward(mean);
        optimizer->step(model.trainable_params(),
                        collect_grads(tape, ids, model));
      }
    }
  }

  // Fresh-sample validation: mean |prediction - target| per continuous slot.
  const int val_n = 200;
  double err = 0.0;
  std::size_t slots = 0;
  for (int i = 0; i < val_n; ++i) {
    const SceneGraph s = sample_scene_graph(grammar, rng);
    const NodePrediction pred = gcn_forward(model, s);
    for (std::size_t v = 0; v < s.nodes.size(); ++v)
      for (std::size_t c = 0; c < kNumContinuous; ++c) {
        const std::size_t col = s.classes.size() + c;
        err += std::abs(pred.values.at(v, col) - s.nodes[v].attrs[col]);
        ++slots;
      }
  }
  model.set_frozen(true);
  return err / static_cast<double>(slots);
}

}  // namespace gsopt
