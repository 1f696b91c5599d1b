#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "gmn/annotations.hpp"
#include "gmn/density.hpp"
#include "gmn/model.hpp"
#include "gmn/synthetic.hpp"

namespace gmn {

using Rng = std::mt19937_64;

enum class Polarity { Positive, Negative };

/// One training unit: 63x63 exemplar, 255x255 search crop and its 64x64
/// density target. `dots` are the counted instance centres in search-crop
/// pixels (empty for negatives).
struct PairSample {
  Image exemplar;
  Image search;
  DensityMap target;
  Polarity polarity = Polarity::Positive;
  std::vector<Point> dots;
  int class_id = 0;
};

/// Positive: exemplar and search frame share a track; every same-class
/// box inside the crop is rendered into the target. Negative: the search
/// frame holds no instance of the exemplar's class and the target is zero.
/// Throws InvalidArgument when the manifest cannot provide the pair.
PairSample sample_pair(const Manifest& manifest, Rng& rng, Polarity polarity,
                       const GaussianTargetOptions& target = {});
PairSample sample_pair(const Manifest& manifest, Rng& rng, double positive_ratio,
                       const GaussianTargetOptions& target = {});

struct AugmentSpec {
  double hflip_probability = 0.5;
  double max_rotation_deg = 20.0;  // clipped below 25
  double min_zoom = 0.8;           // clipped to [0.8, 1.25]
  double max_zoom = 1.25;
};

struct AugmentParams {
  bool flip = false;
  double rotation_deg = 0.0;
  double zoom = 1.0;
};

AugmentParams sample_augment_params(const AugmentSpec& spec, Rng& rng);

/// Flips/rotates/zooms the search crop about its centre, moves the dots
/// with it (dropping those that leave the crop) and re-renders the target.
/// The exemplar is only flipped.
PairSample apply_augment(const PairSample& sample, const AugmentParams& params,
                         const GaussianTargetOptions& target = {});
PairSample augment(const PairSample& sample, const AugmentSpec& spec, Rng& rng,
                   const GaussianTargetOptions& target = {});

/// Per-cell loss weights. Balanced: cells whose target exceeds
/// `support_threshold` share `positive_share` of the weight mass, the rest
/// share the remainder. Samples without (or with only) support fall back to
/// uniform weights.
struct LossWeightRule {
  enum class Kind { Uniform, Balanced };
  Kind kind = Kind::Balanced;
  double support_threshold = 0.05;
  double positive_share = 0.5;
};

/// `target` is N x 1 x H x W (or H x W); returns weights of the same shape.
torch::Tensor loss_weights(const torch::Tensor& target, const LossWeightRule& rule);
/// sum(w * (pred - target)^2) / sum(w). Throws InvalidArgument on shape mismatch.
torch::Tensor weighted_mse_loss(const torch::Tensor& pred, const torch::Tensor& target,
                                const LossWeightRule& rule);
double weighted_mse_loss(const DensityMap& pred, const DensityMap& target, const LossWeightRule& rule);

enum class LrSchedule { Constant, Cosine };

struct SyntheticCorpusSpec {
  int scenes = 200;
  int width = 320;
  int height = 320;
  int min_instances = 3;
  int max_instances = 10;
  int max_distractors = 3;
  double object_size = 36.0;
  double min_separation = 52.0;
  double noise = 0.02;
  SceneStyle style = SceneStyle::Clean;
  std::vector<ShapeFamily> families;  // empty = all
  std::uint64_t seed = 0;
};

struct TrainConfig {
  TrainMode mode = TrainMode::Pretrain;
  int steps = 1000;
  int batch_size = 8;
  double learning_rate = 1e-4;
  LrSchedule schedule = LrSchedule::Constant;
  double weight_decay = 0.0;
  double positive_ratio = 0.5;
  LossWeightRule loss;
  AugmentSpec augment;
  GaussianTargetOptions target;
  ModelConfig model;
  std::uint64_t seed = 0;
  int log_every = 10;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::string checkpoint_path;
  std::string log_path;       // JSONL: step, loss, lr, mode
  std::optional<SyntheticCorpusSpec> synthetic;  // data source when no manifest is given
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const SyntheticCorpusSpec& c);
void from_json(const nlohmann::json& j, SyntheticCorpusSpec& c);
TrainConfig load_train_config(const std::string& path);

/// In-memory manifest of generated scenes; one frame per scene.
Manifest synthetic_manifest(const SyntheticCorpusSpec& spec);

struct Batch {
  torch::Tensor images;   // N x 3 x 256 x 256 (search crops padded to a multiple of 8)
  torch::Tensor patches;  // N x 3 x 63 x 63
  torch::Tensor targets;  // N x 1 x 64 x 64
};

Batch make_batch(const std::vector<PairSample>& samples);

struct LogRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  TrainMode mode = TrainMode::Pretrain;
};

/// Single-writer optimiser over the trainable partition of `net`. Frozen
/// parameters get requires_grad(false) and never enter the optimiser.
class Trainer {
 public:
  Trainer(GmnNetwork net, const TrainConfig& config);
  /// One gradient step; returns the loss before the update. Throws
  /// DivergenceError on a non-finite loss.
  double step(const Batch& batch);
  double learning_rate() const;
  std::int64_t steps_taken() const { return step_; }
  GmnNetwork& net() { return net_; }
  const ParameterPartition& partition() const { return partition_; }

 private:
  GmnNetwork net_;
  TrainConfig config_;
  ParameterPartition partition_;
  std::unique_ptr<torch::optim::Adam> optimizer_;
  std::int64_t step_ = 0;
};

struct TrainResult {
  GmnNetwork net{nullptr};
  std::vector<LogRecord> log;
};

using LogCallback = std::function<void(const LogRecord&)>;

/// Trains every parameter on sampled, augmented pairs. A fresh network is
/// built from config.model (seeded by config.seed) unless `init` is given.
TrainResult pretrain(const TrainConfig& config, const Manifest& manifest, GmnNetwork init = nullptr,
                     const LogCallback& on_log = {});

/// Inserts adapters if missing, then trains only the adapt-mode partition.
TrainResult adapt(GmnNetwork net, const Manifest& manifest, const TrainConfig& config,
                  const LogCallback& on_log = {});

}  // namespace gmn
