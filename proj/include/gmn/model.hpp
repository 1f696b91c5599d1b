#pragma once

#include <atomic>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "gmn/image.hpp"

namespace gmn {

/// Channel plan of the network. Every full-width channel count (64, 128,
/// 256, 512 and the 256-wide matching head) is multiplied by
/// width_num / width_den, which must yield integers.
struct ModelConfig {
  int width_num = 1;
  int width_den = 1;
  bool adapters_enabled = false;
  double norm_eps = 1e-5;
  double norm_momentum = 0.1;

  int channels(int full_width) const;
  /// Throws InvalidArgument if the multiplier is outside (0, 1] or does not
  /// divide every channel count.
  void validate() const;
  int embedding_channels() const { return channels(512); }
  std::string width_string() const;
};

/// Parses "1", "1/8", "0.125".
ModelConfig model_config_for_width(const std::string& width);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// ResNet bottleneck: 1x1 -> 3x3 (stride) -> 1x1 with identity or
/// projection shortcut. An optional 1x1 residual adapter runs in parallel
/// with the 3x3 conv; its output is added before bn2.
class BottleneckImpl : public torch::nn::Module {
 public:
  BottleneckImpl(int in_channels, int mid_channels, int out_channels, int stride,
                 const ModelConfig& config);
  torch::Tensor forward(const torch::Tensor& x);
  void insert_adapter();
  bool has_adapter() const { return !adapter.is_empty(); }

  torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, conv3{nullptr}, projection{nullptr};
  torch::nn::BatchNorm2d bn1{nullptr}, bn2{nullptr}, bn3{nullptr}, projection_bn{nullptr};
  torch::nn::Conv2d adapter{nullptr};

 private:
  int mid_channels_;
  int stride_;
};
TORCH_MODULE(Bottleneck);

/// Intermediate activations of one embedding stream, for shape checks.
struct StreamTrace {
  torch::Tensor stem, pooled, stage1, stage2;
};

/// conv 7x7/2 -> maxpool 3x3/2 -> 3 bottlenecks (64, 256) -> 4 bottlenecks
/// (128, 512, stride 2). Output stride 8.
class EmbeddingStreamImpl : public torch::nn::Module {
 public:
  explicit EmbeddingStreamImpl(const ModelConfig& config);
  torch::Tensor forward(const torch::Tensor& x);
  StreamTrace trace(const torch::Tensor& x);
  std::vector<Bottleneck> blocks() const;

  torch::nn::Conv2d stem{nullptr};
  torch::nn::BatchNorm2d stem_bn{nullptr};
  torch::nn::ModuleList stage1{nullptr}, stage2{nullptr};
};
TORCH_MODULE(EmbeddingStream);

/// conv 3x3 + BN + ReLU, transposed conv 3x3/2 + BN + ReLU, linear 3x3
/// prediction conv to one channel.
class MatchingHeadImpl : public torch::nn::Module {
 public:
  MatchingHeadImpl(int in_channels, const ModelConfig& config);
  torch::Tensor forward(const torch::Tensor& x);
  /// Relation-module activation after the transposed conv.
  torch::Tensor relation(const torch::Tensor& x);

  torch::nn::Conv2d relation_conv{nullptr};
  torch::nn::BatchNorm2d relation_bn{nullptr};
  torch::nn::ConvTranspose2d upsample{nullptr};
  torch::nn::BatchNorm2d upsample_bn{nullptr};
  torch::nn::Conv2d predict{nullptr};
};
TORCH_MODULE(MatchingHead);

struct ForwardTrace {
  StreamTrace exemplar, image;
  torch::Tensor exemplar_pooled;  // N x C x 1 x 1, before normalisation
  torch::Tensor concatenated;     // N x 2C x h x w
  torch::Tensor relation;         // N x C_head x 2h x 2w
  torch::Tensor output;           // N x 1 x 2h x 2w
};

class GmnNetworkImpl : public torch::nn::Module {
 public:
  explicit GmnNetworkImpl(ModelConfig config = {});

  /// N x 3 x 63 x 63 patches -> N x C unit vectors.
  torch::Tensor embed_exemplar(const torch::Tensor& patches);
  /// N x 3 x H x W (H, W multiples of 8) -> N x C x H/8 x W/8, unit norm per position.
  torch::Tensor embed_image(const torch::Tensor& images);
  /// Broadcast v over f, concatenate, run the matching head.
  torch::Tensor match(const torch::Tensor& v, const torch::Tensor& f);
  torch::Tensor forward(const torch::Tensor& images, const torch::Tensor& patches);
  ForwardTrace trace(const torch::Tensor& images, const torch::Tensor& patches);

  /// Adds zero-initialised adapters at every 3x3 conv of both streams.
  /// Throws InvalidArgument if adapters are already present.
  void insert_adapters();
  bool has_adapters() const { return config_.adapters_enabled; }
  int adapter_site_count() const;

  const ModelConfig& config() const { return config_; }
  std::uint64_t embedding_calls() const { return embedding_calls_.load(); }

  EmbeddingStream exemplar_stream{nullptr};
  EmbeddingStream image_stream{nullptr};
  MatchingHead head{nullptr};

 private:
  ModelConfig config_;
  std::atomic<std::uint64_t> embedding_calls_{0};
};
TORCH_MODULE(GmnNetwork);

enum class TrainMode { Pretrain, Adapt };
std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

using NamedTensor = std::pair<std::string, torch::Tensor>;

struct ParameterPartition {
  std::vector<NamedTensor> trainable;
  std::vector<NamedTensor> frozen;
};

/// Pretrain: everything trainable. Adapt: adapters plus every batch-norm
/// affine parameter trainable, all conv weights and biases frozen.
/// Throws InvalidArgument for adapt mode without adapters.
ParameterPartition partition_parameters(GmnNetworkImpl& net, TrainMode mode);

std::int64_t count_parameters(const std::vector<NamedTensor>& tensors);
std::int64_t count_parameters(GmnNetworkImpl& net);

/// HxWx3 float image -> 1 x 3 x H x W tensor.
torch::Tensor image_to_tensor(const Image& image);
torch::Tensor images_to_tensor(const std::vector<Image>& images);
/// 2-D (or 1 x 1 x H x W) tensor -> float matrix copy.
cv::Mat1f tensor_to_mat(const torch::Tensor& map);
torch::Tensor mat_to_tensor(const cv::Mat1f& map);

}  // namespace gmn
