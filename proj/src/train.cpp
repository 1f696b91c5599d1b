#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "gmn/checkpoint.hpp"
#include "gmn/errors.hpp"
#include "gmn/train.hpp"

namespace gmn {

NLOHMANN_JSON_SERIALIZE_ENUM(LrSchedule, {{LrSchedule::Constant, "constant"}, {LrSchedule::Cosine, "cosine"}})
NLOHMANN_JSON_SERIALIZE_ENUM(LossWeightRule::Kind, {{LossWeightRule::Kind::Uniform, "uniform"},
                                                    {LossWeightRule::Kind::Balanced, "balanced"}})
NLOHMANN_JSON_SERIALIZE_ENUM(SceneStyle, {{SceneStyle::Clean, "clean"}, {SceneStyle::Shifted, "shifted"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ShapeFamily, {{ShapeFamily::Disk, "disk"},
                                           {ShapeFamily::Square, "square"},
                                           {ShapeFamily::Triangle, "triangle"},
                                           {ShapeFamily::Cross, "cross"},
                                           {ShapeFamily::Ring, "ring"},
                                           {ShapeFamily::Diamond, "diamond"}})

// ---------------------------------------------------------------------------
// Loss

torch::Tensor loss_weights(const torch::Tensor& target, const LossWeightRule& rule) {
  if (rule.kind == LossWeightRule::Kind::Uniform) return torch::ones_like(target);
  if (!(rule.positive_share > 0.0 && rule.positive_share < 1.0)) {
    throw InvalidArgument("positive_share must lie in (0, 1)");
  }
  const auto t = target.dim() == 2 ? target.view({1, 1, target.size(0), target.size(1)}) : target;
  const auto support = (t > rule.support_threshold).to(t.scalar_type());
  const double cells = static_cast<double>(t.size(-1) * t.size(-2));
  const auto npos = support.sum({1, 2, 3}, /*keepdim=*/true);
  const auto nneg = cells - npos;
  const auto balanced = support * (rule.positive_share * cells / npos.clamp_min(1.0)) +
                        (1.0 - support) * ((1.0 - rule.positive_share) * cells / nneg.clamp_min(1.0));
  const auto degenerate = (npos == 0) | (nneg == 0);
  auto w = torch::where(degenerate, torch::ones_like(t), balanced);
  return w.view(target.sizes());
}

torch::Tensor weighted_mse_loss(const torch::Tensor& pred, const torch::Tensor& target,
                                const LossWeightRule& rule) {
  if (pred.sizes() != target.sizes()) {
    throw InvalidArgument("prediction and target shapes differ");
  }
  const auto w = loss_weights(target.detach(), rule);
  return (w * (pred - target).square()).sum() / w.sum();
}

double weighted_mse_loss(const DensityMap& pred, const DensityMap& target, const LossWeightRule& rule) {
  if (pred.values.size() != target.values.size()) {
    throw InvalidArgument("prediction and target shapes differ");
  }
  return weighted_mse_loss(mat_to_tensor(pred.values).to(torch::kFloat64),
                           mat_to_tensor(target.values).to(torch::kFloat64), rule)
      .item<double>();
}

// ---------------------------------------------------------------------------
// Config

void to_json(nlohmann::json& j, const SyntheticCorpusSpec& c) {
  j = {{"scenes", c.scenes},
       {"width", c.width},
       {"height", c.height},
       {"min_instances", c.min_instances},
       {"max_instances", c.max_instances},
       {"max_distractors", c.max_distractors},
       {"object_size", c.object_size},
       {"min_separation", c.min_separation},
       {"noise", c.noise},
       {"style", c.style},
       {"families", c.families},
       {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, SyntheticCorpusSpec& c) {
  const SyntheticCorpusSpec d;
  c.scenes = j.value("scenes", d.scenes);
  c.width = j.value("width", d.width);
  c.height = j.value("height", d.height);
  c.min_instances = j.value("min_instances", d.min_instances);
  c.max_instances = j.value("max_instances", d.max_instances);
  c.max_distractors = j.value("max_distractors", d.max_distractors);
  c.object_size = j.value("object_size", d.object_size);
  c.min_separation = j.value("min_separation", d.min_separation);
  c.noise = j.value("noise", d.noise);
  c.style = j.value("style", d.style);
  c.families = j.value("families", d.families);
  c.seed = j.value("seed", d.seed);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"mode", to_string(c.mode)},
       {"steps", c.steps},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"schedule", c.schedule},
       {"weight_decay", c.weight_decay},
       {"positive_ratio", c.positive_ratio},
       {"loss", {{"rule", c.loss.kind},
                 {"support_threshold", c.loss.support_threshold},
                 {"positive_share", c.loss.positive_share}}},
       {"augment", {{"hflip_probability", c.augment.hflip_probability},
                    {"max_rotation_deg", c.augment.max_rotation_deg},
                    {"min_zoom", c.augment.min_zoom},
                    {"max_zoom", c.augment.max_zoom}}},
       {"target", {{"sigma_cells", c.target.sigma_cells}, {"density_scale", c.target.density_scale}}},
       {"model", c.model},
       {"seed", c.seed},
       {"log_every", c.log_every},
       {"checkpoint_every", c.checkpoint_every},
       {"checkpoint_path", c.checkpoint_path},
       {"log_path", c.log_path}};
  if (c.synthetic) j["synthetic"] = *c.synthetic;
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.mode = train_mode_from_string(j.value("mode", to_string(d.mode)));
  c.steps = j.value("steps", d.steps);
  c.batch_size = j.value("batch_size", d.batch_size);
  c.learning_rate = j.value("learning_rate", d.learning_rate);
  c.schedule = j.value("schedule", d.schedule);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.positive_ratio = j.value("positive_ratio", d.positive_ratio);
  if (j.contains("loss")) {
    const auto& l = j["loss"];
    c.loss.kind = l.value("rule", d.loss.kind);
    c.loss.support_threshold = l.value("support_threshold", d.loss.support_threshold);
    c.loss.positive_share = l.value("positive_share", d.loss.positive_share);
  }
  if (j.contains("augment")) {
    const auto& a = j["augment"];
    c.augment.hflip_probability = a.value("hflip_probability", d.augment.hflip_probability);
    c.augment.max_rotation_deg = a.value("max_rotation_deg", d.augment.max_rotation_deg);
    c.augment.min_zoom = a.value("min_zoom", d.augment.min_zoom);
    c.augment.max_zoom = a.value("max_zoom", d.augment.max_zoom);
  }
  if (j.contains("target")) {
    c.target.sigma_cells = j["target"].value("sigma_cells", d.target.sigma_cells);
    c.target.density_scale = j["target"].value("density_scale", d.target.density_scale);
  }
  if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
  if (j.contains("width")) c.model = model_config_for_width(j["width"].get<std::string>());
  c.seed = j.value("seed", d.seed);
  c.log_every = j.value("log_every", d.log_every);
  c.checkpoint_every = j.value("checkpoint_every", d.checkpoint_every);
  c.checkpoint_path = j.value("checkpoint_path", d.checkpoint_path);
  c.log_path = j.value("log_path", d.log_path);
  if (j.contains("synthetic")) c.synthetic = j["synthetic"].get<SyntheticCorpusSpec>();
  if (c.steps < 0 || c.batch_size <= 0) throw InvalidArgument("steps >= 0 and batch_size > 0 required");
}

TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open train config " + path);
  try {
    return nlohmann::json::parse(in).get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid train config: ") + e.what(), 0);
  }
}

// ---------------------------------------------------------------------------
// Data

Manifest synthetic_manifest(const SyntheticCorpusSpec& spec) {
  if (spec.min_instances < 1 || spec.max_instances < spec.min_instances) {
    throw InvalidArgument("need 1 <= min_instances <= max_instances");
  }
  std::vector<ShapeFamily> families = spec.families;
  if (families.empty()) {
    for (int f = 0; f < kShapeFamilyCount; ++f) families.push_back(static_cast<ShapeFamily>(f));
  }
  if (families.size() < 2) throw InvalidArgument("synthetic corpus needs at least two shape families");
  Rng rng(spec.seed);
  std::uniform_int_distribution<int> count(spec.min_instances, spec.max_instances);
  std::uniform_int_distribution<int> distractors(0, spec.max_distractors);
  std::uniform_int_distribution<std::size_t> family(0, families.size() - 1);

  Manifest manifest;
  int next_track = 0;
  for (int i = 0; i < spec.scenes; ++i) {
    SyntheticSceneSpec s;
    s.width = spec.width;
    s.height = spec.height;
    s.n = count(rng);
    s.family = families[family(rng)];
    do {
      s.distractor_family = families[family(rng)];
    } while (s.distractor_family == s.family);
    s.distractors = distractors(rng);
    s.object_size = spec.object_size;
    s.min_separation = spec.min_separation;
    s.noise = spec.noise;
    s.style = spec.style;
    s.seed = rng();
    const SyntheticScene scene = generate_synthetic_scene(s);
    Frame frame;
    frame.image = scene.image;
    frame.image_path = scene.image.source_id;
    frame.boxes = scene.records();
    for (auto& r : frame.boxes) r.track_id += next_track;
    next_track += static_cast<int>(frame.boxes.size());
    manifest.frames.push_back(std::move(frame));
  }
  return manifest;
}

Batch make_batch(const std::vector<PairSample>& samples) {
  if (samples.empty()) throw InvalidArgument("empty batch");
  std::vector<Image> searches, patches;
  std::vector<torch::Tensor> targets;
  for (const auto& s : samples) {
    searches.push_back(pad_to_multiple(s.search, 8));
    patches.push_back(s.exemplar);
    targets.push_back(mat_to_tensor(s.target.values).unsqueeze(0).unsqueeze(0));
  }
  return {images_to_tensor(searches), images_to_tensor(patches), torch::cat(targets, 0)};
}

// ---------------------------------------------------------------------------
// Optimisation

Trainer::Trainer(GmnNetwork net, const TrainConfig& config)
    : net_(std::move(net)), config_(config), partition_(partition_parameters(*net_, config.mode)) {
  for (auto& [name, t] : partition_.frozen) t.set_requires_grad(false);
  std::vector<torch::Tensor> params;
  for (auto& [name, t] : partition_.trainable) {
    t.set_requires_grad(true);
    params.push_back(t);
  }
  optimizer_ = std::make_unique<torch::optim::Adam>(
      params, torch::optim::AdamOptions(config.learning_rate).weight_decay(config.weight_decay));
}

double Trainer::learning_rate() const {
  if (config_.schedule == LrSchedule::Constant || config_.steps <= 0) return config_.learning_rate;
  const double progress = std::min(1.0, static_cast<double>(step_) / config_.steps);
  return config_.learning_rate * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

double Trainer::step(const Batch& batch) {
  const double lr = learning_rate();
  for (auto& group : optimizer_->param_groups()) {
    static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
  }
  net_->train();
  optimizer_->zero_grad();
  const auto pred = net_->forward(batch.images, batch.patches);
  const auto loss = weighted_mse_loss(pred, batch.targets, config_.loss);
  const double value = loss.item<double>();
  if (!std::isfinite(value)) {
    throw DivergenceError("non-finite loss at step " + std::to_string(step_) + " (lr " +
                          std::to_string(lr) + ", mode " + to_string(config_.mode) + ")");
  }
  loss.backward();
  optimizer_->step();
  ++step_;
  return value;
}

namespace {

TrainResult run_loop(GmnNetwork net, const Manifest& manifest, const TrainConfig& config,
                     const LogCallback& on_log) {
  Rng rng(config.seed);
  Trainer trainer(net, config);
  std::ofstream log_file;
  if (!config.log_path.empty()) {
    log_file.open(config.log_path, std::ios::app);
    if (!log_file) throw Error("cannot open training log " + config.log_path);
  }
  TrainResult result;
  result.net = net;
  for (int step = 0; step < config.steps; ++step) {
    std::vector<PairSample> samples;
    samples.reserve(config.batch_size);
    for (int i = 0; i < config.batch_size; ++i) {
      samples.push_back(augment(sample_pair(manifest, rng, config.positive_ratio, config.target),
                                config.augment, rng, config.target));
    }
    const double lr = trainer.learning_rate();
    const double loss = trainer.step(make_batch(samples));
    const bool last = step + 1 == config.steps;
    if (config.log_every > 0 && (step % config.log_every == 0 || last)) {
      const LogRecord rec{step, loss, lr, config.mode};
      result.log.push_back(rec);
      if (log_file) {
        log_file << nlohmann::json{{"step", rec.step}, {"loss", rec.loss}, {"lr", rec.lr},
                                   {"mode", to_string(rec.mode)}}
                        .dump()
                 << '\n';
        log_file.flush();
      }
      if (on_log) on_log(rec);
    }
    const bool periodic = config.checkpoint_every > 0 && (step + 1) % config.checkpoint_every == 0;
    if (!config.checkpoint_path.empty() && (periodic || last)) {
      CheckpointMeta meta;
      meta.step = step + 1;
      meta.mode = config.mode;
      meta.extra = {{"train_config", config}};
      save_checkpoint(*net, config.checkpoint_path, meta);
    }
  }
  net->eval();
  return result;
}

}  // namespace

TrainResult pretrain(const TrainConfig& config, const Manifest& manifest, GmnNetwork init,
                     const LogCallback& on_log) {
  if (config.mode != TrainMode::Pretrain) throw InvalidArgument("pretrain requires mode=pretrain");
  torch::manual_seed(config.seed);
  GmnNetwork net = init.is_empty() ? GmnNetwork(config.model) : init;
  return run_loop(net, manifest, config, on_log);
}

TrainResult adapt(GmnNetwork net, const Manifest& manifest, const TrainConfig& config,
                  const LogCallback& on_log) {
  if (config.mode != TrainMode::Adapt) throw InvalidArgument("adapt requires mode=adapt");
  if (net.is_empty()) throw InvalidArgument("adapt needs a network");
  torch::manual_seed(config.seed);
  if (!net->has_adapters()) net->insert_adapters();
  return run_loop(net, manifest, config, on_log);
}

}  // namespace gmn
