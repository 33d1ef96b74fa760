#include "gsopt/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>

#include "gsopt/checkpoint.hpp"
#include "gsopt/renderer.hpp"

namespace gsopt {

// --- baseline --------------------------------------------------------------

void BaselineState::update(double score) {
  if (!std::isfinite(score))
    raise(ErrorKind::Training, "baseline update with non-finite score");
  if (!initialized) {
    value = min_seen = max_seen = score;
    initialized = true;
    return;
  }
  value = decay * value + (1.0 - decay) * score;
  min_seen = std::min(min_seen, score);
  max_seen = std::max(max_seen, score);
}

nlohmann::json BaselineState::to_json() const {
  return {{"value", value},
          {"initialized", initialized},
          {"decay", decay},
          {"min_seen", min_seen},
          {"max_seen", max_seen}};
}

BaselineState BaselineState::from_json(const nlohmann::json& doc) {
  BaselineState b;
  b.value = doc.at("value").get<double>();
  b.initialized = doc.at("initialized").get<bool>();
  b.decay = doc.at("decay").get<double>();
  b.min_seen = doc.at("min_seen").get<double>();
  b.max_seen = doc.at("max_seen").get<double>();
  return b;
}

ReinforceResult reinforce_backward(Tape& tape, NodeId log_prob, double score,
                                   BaselineState& baseline, double lambda) {
  const Tensor& lp = tape.value(log_prob);
  if (lp.size() != 1)
    raise(ErrorKind::Shape, "score-function term needs a scalar log-prob");
  if (!std::isfinite(score))
    raise(ErrorKind::Training, "non-finite validation score");
  ReinforceResult r;
  r.advantage = baseline.advantage(score);
  r.loss = -r.advantage * lp[0];
  Tensor seed = lp;
  seed[0] = -lambda * r.advantage;
  tape.backward_with(log_prob, seed);
  baseline.update(score);
  return r;
}

// --- config ----------------------------------------------------------------

void ExperimentConfig::validate() const {
  target_render_config(experiment_id);  // Config error on unknown id
  if (meta_epochs < 1 || iters_per_epoch < 1 || batch_size < 1)
    raise(ErrorKind::Config, "meta-loop counts must be >= 1");
  if (task_epochs < 1)
    raise(ErrorKind::Config, "task epochs per meta epoch must be >= 1");
  if (meta_lr <= 0.0 || task.lr <= 0.0)
    raise(ErrorKind::Config, "learning rates must be > 0");
  if (lambda_mmd < 0.0 || lambda_task < 0.0)
    raise(ErrorKind::Config, "loss weights must be >= 0");
  if (fd_step <= 0.0)
    raise(ErrorKind::Config, "finite-difference step must be > 0");
  if (noise_sigma <= 0.0)
    raise(ErrorKind::Config, "sampling noise sigma must be > 0");
  if (baseline_decay < 0.0 || baseline_decay >= 1.0)
    raise(ErrorKind::Config, "baseline decay must lie in [0, 1)");
  if (aa_samples < 1 || aa_samples > 8)
    raise(ErrorKind::Config, "aa_samples must lie in [1, 8]");
  if (task.batch_size < 1)
    raise(ErrorKind::Config, "task batch size must be >= 1");
  if (kernel.bandwidth == KernelConfig::Bandwidth::Fixed &&
      kernel.sigma <= 0.0)
    raise(ErrorKind::Config, "fixed kernel bandwidth must be > 0");
}

nlohmann::json ExperimentConfig::to_json() const {
  return {
      {"experiment_id", experiment_id},
      {"meta_epochs", meta_epochs},
      {"iters_per_epoch", iters_per_epoch},
      {"batch_size", batch_size},
      {"lambda_mmd", lambda_mmd},
      {"lambda_task", lambda_task},
      {"meta_optimizer", meta_optimizer},
      {"meta_lr", meta_lr},
      {"meta_momentum", meta_momentum},
      {"task_epochs", task_epochs},
      {"task",
       {{"optimizer", task.optimizer},
        {"lr", task.lr},
        {"momentum", task.momentum},
        {"batch_size", task.batch_size}}},
      {"fd_step", fd_step},
      {"fd_scheme",
       fd_scheme == FdScheme::RenderJvp ? "render-jvp" : "full-fd"},
      {"kernel",
       {{"bandwidth",
         kernel.bandwidth == KernelConfig::Bandwidth::Median ? "median"
                                                             : "fixed"},
        {"sigma", kernel.sigma}}},
      {"noise_sigma", noise_sigma},
      {"baseline_decay", baseline_decay},
      {"step_per_minibatch", step_per_minibatch},
      {"aa_samples", aa_samples},
      {"seed", seed},
  };
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& doc) {
  ExperimentConfig c;
  c.experiment_id = doc.value("experiment_id", c.experiment_id);
  c.meta_epochs = doc.value("meta_epochs", c.meta_epochs);
  c.iters_per_epoch = doc.value("iters_per_epoch", c.iters_per_epoch);
  c.batch_size = doc.value("batch_size", c.batch_size);
  c.lambda_mmd = doc.value("lambda_mmd", c.lambda_mmd);
  c.lambda_task = doc.value("lambda_task", c.lambda_task);
  c.meta_optimizer = doc.value("meta_optimizer", c.meta_optimizer);
  c.meta_lr = doc.value("meta_lr", c.meta_lr);
  c.meta_momentum = doc.value("meta_momentum", c.meta_momentum);
  c.task_epochs = doc.value("task_epochs", c.task_epochs);
  if (doc.contains("task")) {
    const nlohmann::json& t = doc.at("task");
    c.task.optimizer = t.value("optimizer", c.task.optimizer);
    c.task.lr = t.value("lr", c.task.lr);
    c.task.momentum = t.value("momentum", c.task.momentum);
    c.task.batch_size = t.value("batch_size", c.task.batch_size);
  }
  c.fd_step = doc.value("fd_step", c.fd_step);
  if (doc.contains("fd_scheme")) {
    const std::string s = doc.at("fd_scheme").get<std::string>();
    if (s == "render-jvp")
      c.fd_scheme = FdScheme::RenderJvp;
    else if (s == "full-fd")
      c.fd_scheme = FdScheme::FullFd;
    else
      raise(ErrorKind::Config, "unknown fd scheme: " + s);
  }
  if (doc.contains("kernel")) {
    const nlohmann::json& k = doc.at("kernel");
    const std::string b = k.value("bandwidth", std::string("median"));
    if (b == "median")
      c.kernel.bandwidth = KernelConfig::Bandwidth::Median;
    else if (b == "fixed")
      c.kernel.bandwidth = KernelConfig::Bandwidth::Fixed;
    else
      raise(ErrorKind::Config, "unknown kernel bandwidth policy: " + b);
    c.kernel.sigma = k.value("sigma", c.kernel.sigma);
  }
  c.noise_sigma = doc.value("noise_sigma", c.noise_sigma);
  c.baseline_decay = doc.value("baseline_decay", c.baseline_decay);
  c.step_per_minibatch = doc.value("step_per_minibatch", c.step_per_minibatch);
  c.aa_samples = doc.value("aa_samples", c.aa_samples);
  c.seed = doc.value("seed", c.seed);
  return c;
}

nlohmann::json MetaEpochMetrics::to_json() const {
  return {{"phase", phase},
          {"epoch", epoch},
          {"mmd_loss", mmd_loss},
          {"task_score", task_score},
          {"baseline", baseline},
          {"reinforce_loss", reinforce_loss},
          {"wall_time", wall_time},
          {"fd_renders", fd_renders},
          {"log_prob_grads", log_prob_grads}};
}

// --- task-net plumbing -----------------------------------------------------

double evaluate_task(const TaskNet& net, const ValidationSet& v) {
  return std::visit([&](const auto& n) { return evaluate(n, v); }, net);
}

double evaluate_task(const TaskNet& net, const LabeledSet& test) {
  ValidationSet wrap;
  wrap.data = test;
  return evaluate_task(net, wrap);
}

LabeledSet render_labeled(const std::vector<SceneGraph>& graphs,
                          const Grammar& grammar, const AssetLibrary& assets,
                          const RenderConfig& config) {
  LabeledSet set;
  set.kind = config.kind;
  std::vector<RenderedSample> samples =
      render_batch(graphs, grammar, assets, config);
  for (RenderedSample& s : samples) {
    set.images.push_back(std::move(s.image));
    if (config.kind == ExperimentKind::Aerial)
      set.label_maps.push_back(std::move(s.label_map));
    else
      set.labels.push_back(s.class_label);
  }
  return set;
}

namespace {

double train_tasknet(TaskNet& net, const LabeledSet& data, int epochs,
                     const TaskTrainConfig& cfg, std::uint64_t seed) {
  return std::visit(
      [&](auto& n) { return train_task_net(n, data, epochs, cfg, seed); },
      net);
}

std::vector<ParamRef> tasknet_params(TaskNet& net) {
  return std::visit([](auto& n) { return n.params(); }, net);
}

}  // namespace

// --- meta trainer ----------------------------------------------------------

MetaTrainer::MetaTrainer(TransformerModel& model, const Grammar& grammar,
                         const AssetLibrary& assets,
                         const FeatureExtractor& extractor,
                         Tensor target_features, TaskNet* tasknet,
                         const ValidationSet* validation,
                         ExperimentConfig config)
    : model_(model),
      grammar_(grammar),
      assets_(assets),
      extractor_(extractor),
      target_features_(std::move(target_features)),
      tasknet_(tasknet),
      validation_(validation),
      cfg_(std::move(config)),
      rng_(cfg_.seed) {
  cfg_.validate();
  if (!model_.frozen())
    raise(ErrorKind::Contract,
          "meta training requires a pretrained model (frozen encoder)");
  if (model_.a_in() != grammar_.a_in())
    raise(ErrorKind::Shape, "model width does not match the grammar");
  if (target_features_.rank() != 2 || target_features_.dim(0) == 0)
    raise(ErrorKind::Shape, "target features must be a non-empty [N,D]");
  if (target_features_.dim(1) != extractor_.width())
    raise(ErrorKind::Shape,
          "target feature width does not match the extractor");
  if (cfg_.lambda_task > 0.0 && (!tasknet_ || !validation_))
    raise(ErrorKind::Config,
          "the task term needs a task net and validation data");
  render_cfg_ = target_render_config(cfg_.experiment_id);
  render_cfg_.aa_samples = cfg_.aa_samples;
  model_.set_sigma(cfg_.noise_sigma);
  baseline_.decay = cfg_.baseline_decay;
  opt_ = make_optimizer(cfg_.meta_optimizer, cfg_.meta_lr, cfg_.meta_momentum);
}

void MetaTrainer::accumulate(std::vector<Tensor>& into,
                             const std::vector<Tensor>& add) {
  if (into.empty()) {
    into = add;
    return;
  }
  if (into.size() != add.size())
    raise(ErrorKind::Contract, "gradient accumulator size mismatch");
  for (std::size_t i = 0; i < into.size(); ++i)
    for (std::size_t j = 0; j < into[i].size(); ++j) into[i][j] += add[i][j];
}

void MetaTrainer::step(const std::vector<Tensor>& grads) {
  if (grads.empty()) return;
  opt_->step(model_.trainable_params(), grads);
}

MetaEpochMetrics MetaTrainer::run_epoch(const std::string& phase) {
  const auto t0 = std::chrono::steady_clock::now();
  MetaEpochMetrics m;
  m.phase = phase;
  m.epoch = ++epoch_;

  const bool use_mmd = cfg_.lambda_mmd > 0.0;
  const bool use_task = cfg_.lambda_task > 0.0;
  const std::size_t n_samples = cfg_.samples_per_epoch();

  std::vector<Tensor> epoch_grads;
  std::vector<SceneGraph> originals, transformed_all;
  std::vector<Tensor> sampled_all;
  originals.reserve(n_samples);
  transformed_all.reserve(n_samples);
  sampled_all.reserve(n_samples);
  double mmd_sum = 0.0;

  for (int it = 0; it < cfg_.iters_per_epoch; ++it) {
    try {
      std::deque<Tape> tapes;
      std::vector<GcnTape> forwards;
      std::vector<SceneGraph> batch, batch_transformed;
      for (int b = 0; b < cfg_.batch_size; ++b) {
        SceneGraph graph = sample_scene_graph(grammar_, rng_);
        graph.id = static_cast<int>(((epoch_ - 1) * cfg_.iters_per_epoch +
                                     it) *
                                        cfg_.batch_size +
                                    b);
        Tape& tape = tapes.emplace_back();
        forwards.push_back(gcn_forward_tape(tape, model_, graph));
        NodePrediction pred{tape.value(forwards.back().output),
                            grammar_.n_classes()};
        const SampleMode mode =
            use_task ? SampleMode::Stochastic : SampleMode::Deterministic;
        SampledAttrs s = sample_attributes(model_, pred, graph, mode, &rng_);
        if (use_task && !s.has_log_prob)
          raise(ErrorKind::Contract,
                "score-function term needs stochastic samples");
        batch_transformed.push_back(apply_transform(graph, s.values));
        batch.push_back(std::move(graph));
        sampled_all.push_back(std::move(s.values));
      }

      std::vector<Tensor> iter_grads;
      if (use_mmd) {
        const MmdAttrGrads res = mmd2_attr_grad(
            batch_transformed, grammar_, assets_, render_cfg_,
            target_features_, extractor_, cfg_.kernel, cfg_.fd_step,
            cfg_.fd_scheme);
        if (!std::isfinite(res.loss))
          raise(ErrorKind::Training, "distribution loss diverged");
        mmd_sum += res.loss;
        m.fd_renders += res.renders;
        for (std::size_t j = 0; j < batch.size(); ++j) {
          Tensor seed = res.grads[j].grad;  // [n_nodes, a_in]
          for (std::size_t k = 0; k < seed.size(); ++k)
            seed[k] *= cfg_.lambda_mmd;
          tapes[j].backward_with(forwards[j].output, seed);
          accumulate(iter_grads, collect_grads(tapes[j],
                                               forwards[j].param_ids, model_));
        }
      }

      if (cfg_.step_per_minibatch)
        step(iter_grads);
      else
        accumulate(epoch_grads, iter_grads);

      for (std::size_t j = 0; j < batch.size(); ++j) {
        originals.push_back(std::move(batch[j]));
        transformed_all.push_back(std::move(batch_transformed[j]));
      }
    } catch (const Error& e) {
      raise(e.kind(), "epoch " + std::to_string(epoch_) + " iteration " +
                          std::to_string(it) + ": " + e.what());
    }
  }
  m.mmd_loss = use_mmd ? mmd_sum / cfg_.iters_per_epoch : 0.0;
  total_fd_renders_ += m.fd_renders;

  if (use_task) {
    const LabeledSet data =
        render_labeled(transformed_all, grammar_, assets_, render_cfg_);
    const std::uint64_t task_seed = rng_.next_u64();
    train_tasknet(*tasknet_, data, cfg_.task_epochs, cfg_.task, task_seed);
    const double score = evaluate_task(*tasknet_, *validation_);
    m.task_score = score;

    // One tape holds every sample's log-density; the surrogate seeds all of
    // them with the same advantage.
    Tape tape;
    const std::vector<NodeId> param_ids = register_params(tape, model_);
    NodeId total_lp = -1;
    for (std::size_t j = 0; j < originals.size(); ++j) {
      const NodeId out =
          gcn_forward_with(tape, model_, param_ids, originals[j]);
      const NodeId lp =
          log_prob_tape(tape, out, sampled_all[j],
                        originals[j].mask_matrix(), cfg_.noise_sigma);
      total_lp = j == 0 ? lp : tape.add(total_lp, lp);
    }
    const ReinforceResult r = reinforce_backward(tape, total_lp, score,
                                                 baseline_, cfg_.lambda_task);
    m.reinforce_loss = cfg_.lambda_task * r.loss;
    m.log_prob_grads = static_cast<int>(originals.size());
    total_log_prob_grads_ += m.log_prob_grads;
    accumulate(epoch_grads, collect_grads(tape, param_ids, model_));
  }
  m.baseline = baseline_.value;

  if (!cfg_.step_per_minibatch) step(epoch_grads);

  m.wall_time =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return m;
}

std::vector<SceneGraph> MetaTrainer::transform_samples(std::size_t count) {
  std::vector<SceneGraph> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    SceneGraph graph = sample_scene_graph(grammar_, rng_);
    graph.id = static_cast<int>(i);
    const NodePrediction pred = gcn_forward(model_, graph);
    const SampledAttrs s = sample_attributes(model_, pred, graph,
                                             SampleMode::Deterministic);
    out.push_back(apply_transform(graph, s.values));
  }
  return out;
}

void MetaTrainer::save_checkpoint(const std::string& path) const {
  CheckpointWriter w;
  nlohmann::json meta = {
      {"kind", "meta_trainer"},
      {"experiment_id", cfg_.experiment_id},
      {"epoch", epoch_},
      {"baseline", baseline_.to_json()},
      {"rng", rng_.serialize()},
      {"optimizer", {{"kind", opt_->kind()}, {"updates", opt_->updates()}}},
      {"fd_renders", total_fd_renders_},
      {"log_prob_grads", total_log_prob_grads_},
      {"has_task", tasknet_ != nullptr},
  };
  for (const ParamRef& p : model_.params())
    w.add("model." + p.name, *p.value, "f64");
  if (tasknet_)
    for (const ParamRef& p : tasknet_params(*tasknet_))
      w.add("task." + p.name, *p.value, "f64");
  const std::vector<Tensor>& slots = opt_->slots();
  meta["optimizer"]["n_slots"] = slots.size();
  for (std::size_t i = 0; i < slots.size(); ++i)
    w.add("opt.slot" + std::to_string(i), slots[i], "f64");
  w.set_meta(meta);
  w.save(path);
}

void MetaTrainer::restore_checkpoint(const std::string& path) {
  const Checkpoint ckpt = Checkpoint::load(path);
  const nlohmann::json& meta = ckpt.meta();
  if (meta.value("kind", "") != std::string("meta_trainer"))
    raise(ErrorKind::Data, "checkpoint is not a meta-trainer state");
  if (meta.value("experiment_id", "") != cfg_.experiment_id)
    raise(ErrorKind::Data, "checkpoint belongs to a different experiment");
  const nlohmann::json& opt_meta = meta.at("optimizer");
  if (opt_meta.at("kind").get<std::string>() != opt_->kind())
    raise(ErrorKind::Data, "checkpoint optimizer kind mismatch");

  for (ParamRef& p : model_.params()) {
    const std::string key = "model." + p.name;
    if (!ckpt.has(key)) raise(ErrorKind::Data, "checkpoint missing " + key);
    *p.value = ckpt.tensor(key);
  }
  if (tasknet_ && meta.value("has_task", false))
    for (ParamRef& p : tasknet_params(*tasknet_)) {
      const std::string key = "task." + p.name;
      if (!ckpt.has(key)) raise(ErrorKind::Data, "checkpoint missing " + key);
      *p.value = ckpt.tensor(key);
    }
  std::vector<Tensor>& slots = opt_->slots();
  slots.clear();
  const std::size_t n_slots = opt_meta.at("n_slots").get<std::size_t>();
  for (std::size_t i = 0; i < n_slots; ++i)
    slots.push_back(ckpt.tensor("opt.slot" + std::to_string(i)));
  opt_->set_updates(opt_meta.at("updates").get<std::uint64_t>());

  baseline_ = BaselineState::from_json(meta.at("baseline"));
  rng_ = Rng::deserialize(meta.at("rng").get<std::string>());
  epoch_ = meta.at("epoch").get<int>();
  total_fd_renders_ = meta.at("fd_renders").get<long>();
  total_log_prob_grads_ = meta.at("log_prob_grads").get<long>();
}

// --- full experiment -------------------------------------------------------

namespace {

TaskNet make_tasknet(const RenderConfig& rc, const Grammar& grammar,
                     Rng& rng) {
  if (rc.kind == ExperimentKind::Aerial) {
    SmallUNet net(grammar.n_classes(), 3);
    net.init(rng);
    return net;
  }
  MnistClassifier net(rc.canvas_h, rc.canvas_w);
  net.init(rng);
  return net;
}

// Grammar samples rendered without any transformer rewriting.
std::vector<SceneGraph> raw_samples(const Grammar& grammar, std::size_t count,
                                    Rng& rng) {
  std::vector<SceneGraph> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(sample_scene_graph(grammar, rng));
    out.back().id = static_cast<int>(i);
  }
  return out;
}

double score_on_test(const std::vector<SceneGraph>& graphs,
                     const RunSpec& spec, const RenderConfig& rc, Rng& rng) {
  const LabeledSet data =
      render_labeled(graphs, spec.grammar, spec.assets, rc);
  TaskNet net = make_tasknet(rc, spec.grammar, rng);
  train_tasknet(net, data, spec.eval_task_epochs, spec.config.task,
                rng.next_u64());
  return evaluate_task(net, spec.target.test);
}

}  // namespace

nlohmann::json ExperimentReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const MetaEpochMetrics& m : metrics) arr.push_back(m.to_json());
  return {{"experiment_id", experiment_id},
          {"pretrain_error", pretrain_error},
          {"baseline_score", baseline_score},
          {"final_score", final_score},
          {"metrics", arr}};
}

ExperimentReport run_experiment(TransformerModel& model, const RunSpec& spec,
                                const RunHooks& hooks) {
  spec.config.validate();
  ExperimentReport report;
  report.experiment_id = spec.config.experiment_id;
  const RenderConfig rc = [&] {
    RenderConfig c = target_render_config(spec.config.experiment_id);
    c.aa_samples = spec.config.aa_samples;
    return c;
  }();

  Rng root(spec.config.seed);
  Rng pretrain_rng = root.fork();
  Rng tasknet_rng = root.fork();
  Rng eval_rng = root.fork();

  report.pretrain_error =
      pretrain_autoencoder(model, spec.grammar, spec.pretrain, pretrain_rng);

  FeatureExtractor::Config fx_cfg = spec.features;
  fx_cfg.channels = rc.kind == ExperimentKind::Aerial ? 3 : 1;
  const FeatureExtractor extractor(fx_cfg);
  const Tensor target_features = extractor.extract(spec.target.val.pool);

  TaskNet tasknet = make_tasknet(rc, spec.grammar, tasknet_rng);
  ExperimentConfig cfg = spec.config;
  cfg.seed = root.next_u64();
  MetaTrainer trainer(model, spec.grammar, spec.assets, extractor,
                      target_features, &tasknet, &spec.target.val, cfg);

  const auto run_phase = [&](const std::string& phase, int epochs,
                             double l_mmd, double l_task, bool per_batch) {
    trainer.set_lambda(l_mmd, l_task);
    trainer.set_step_per_minibatch(per_batch);
    for (int e = 0; e < epochs; ++e) {
      const MetaEpochMetrics m = trainer.run_epoch(phase);
      report.metrics.push_back(m);
      if (hooks.on_epoch) hooks.on_epoch(trainer, m);
    }
  };
  run_phase("distribution", spec.schedule.dist_epochs, spec.config.lambda_mmd,
            0.0, true);
  run_phase("joint", spec.schedule.joint_epochs, spec.config.lambda_mmd,
            spec.config.lambda_task, spec.config.step_per_minibatch);

  const std::size_t n = spec.config.samples_per_epoch();
  report.baseline_score =
      score_on_test(raw_samples(spec.grammar, n, eval_rng), spec, rc,
                    eval_rng);
  report.final_score =
      score_on_test(trainer.transform_samples(n), spec, rc, eval_rng);
  return report;
}

}  // namespace gsopt
