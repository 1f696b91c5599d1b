#include "gmn/model.hpp"

#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "gmn/errors.hpp"

namespace gmn {
namespace {

namespace nn = torch::nn;

// Channel counts that appear in the network at full width.
constexpr int kFullWidthChannels[] = {64, 128, 256, 512};

// Fixed input normalisation; pixels arrive in [0, 1].
constexpr double kPixelMean = 0.45;
constexpr double kPixelStd = 0.25;

nn::Conv2d conv(int in, int out, int kernel, int stride = 1, int padding = 0, bool bias = false) {
  return nn::Conv2d(nn::Conv2dOptions(in, out, kernel).stride(stride).padding(padding).bias(bias));
}

nn::BatchNorm2d norm(int channels, const ModelConfig& config) {
  return nn::BatchNorm2d(
      nn::BatchNorm2dOptions(channels).eps(config.norm_eps).momentum(config.norm_momentum));
}

void init_conv(nn::Conv2d& c) {
  nn::init::kaiming_normal_(c->weight, 0.0, torch::kFanOut, torch::kReLU);
}

torch::Tensor normalize_pixels(const torch::Tensor& x) { return (x - kPixelMean) / kPixelStd; }

}  // namespace

int ModelConfig::channels(int full_width) const {
  const long long scaled = static_cast<long long>(full_width) * width_num;
  if (scaled % width_den != 0) {
    throw InvalidArgument("width " + width_string() + " does not divide channel count " +
                          std::to_string(full_width));
  }
  return static_cast<int>(scaled / width_den);
}

void ModelConfig::validate() const {
  if (width_num <= 0 || width_den <= 0 || width_num > width_den) {
    throw InvalidArgument("width multiplier must lie in (0, 1], got " + width_string());
  }
  for (int c : kFullWidthChannels) {
    if (channels(c) <= 0) throw InvalidArgument("width multiplier yields an empty layer");
  }
  if (!(norm_eps > 0)) throw InvalidArgument("normalization epsilon must be positive");
}

std::string ModelConfig::width_string() const {
  return width_den == 1 ? std::to_string(width_num)
                        : std::to_string(width_num) + "/" + std::to_string(width_den);
}

ModelConfig model_config_for_width(const std::string& width) {
  ModelConfig config;
  const auto slash = width.find('/');
  try {
    if (slash != std::string::npos) {
      config.width_num = std::stoi(width.substr(0, slash));
      config.width_den = std::stoi(width.substr(slash + 1));
    } else if (width.find('.') != std::string::npos) {
      const double v = std::stod(width);
      // Rationals with power-of-two denominators cover the practical cases.
      config.width_den = 64;
      config.width_num = static_cast<int>(std::lround(v * 64));
      if (std::abs(config.width_num / 64.0 - v) > 1e-9) {
        throw InvalidArgument("width " + width + " is not a multiple of 1/64");
      }
    } else {
      config.width_num = std::stoi(width);
    }
  } catch (const std::logic_error&) {
    throw InvalidArgument("cannot parse width '" + width + "'");
  }
  const int g = std::gcd(config.width_num, config.width_den);
  if (g > 0) {
    config.width_num /= g;
    config.width_den /= g;
  }
  config.validate();
  return config;
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"width_num", c.width_num},
       {"width_den", c.width_den},
       {"adapters_enabled", c.adapters_enabled},
       {"norm_eps", c.norm_eps},
       {"norm_momentum", c.norm_momentum}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.width_num = j.at("width_num").get<int>();
  c.width_den = j.at("width_den").get<int>();
  c.adapters_enabled = j.value("adapters_enabled", false);
  c.norm_eps = j.value("norm_eps", 1e-5);
  c.norm_momentum = j.value("norm_momentum", 0.1);
}

// ---------------------------------------------------------------------------

BottleneckImpl::BottleneckImpl(int in_channels, int mid_channels, int out_channels, int stride,
                               const ModelConfig& config)
    : mid_channels_(mid_channels), stride_(stride) {
  conv1 = register_module("conv1", conv(in_channels, mid_channels, 1));
  bn1 = register_module("bn1", norm(mid_channels, config));
  conv2 = register_module("conv2", conv(mid_channels, mid_channels, 3, stride, 1));
  bn2 = register_module("bn2", norm(mid_channels, config));
  conv3 = register_module("conv3", conv(mid_channels, out_channels, 1));
  bn3 = register_module("bn3", norm(out_channels, config));
  if (stride != 1 || in_channels != out_channels) {
    projection = register_module("projection", conv(in_channels, out_channels, 1, stride));
    projection_bn = register_module("projection_bn", norm(out_channels, config));
    init_conv(projection);
  }
  init_conv(conv1);
  init_conv(conv2);
  init_conv(conv3);
  // Residual branch starts close to identity.
  nn::init::constant_(bn3->weight, 0.2);
}

void BottleneckImpl::insert_adapter() {
  if (has_adapter()) throw InvalidArgument("adapter already present");
  adapter = register_module("adapter", conv(mid_channels_, mid_channels_, 1, stride_));
  torch::NoGradGuard guard;
  adapter->weight.zero_();
}

torch::Tensor BottleneckImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(bn1(conv1(x)));
  auto z = conv2(y);
  if (has_adapter()) z = z + adapter(y);
  y = torch::relu(bn2(z));
  y = bn3(conv3(y));
  const auto shortcut = projection.is_empty() ? x : projection_bn(projection(x));
  return torch::relu(y + shortcut);
}

// ---------------------------------------------------------------------------

EmbeddingStreamImpl::EmbeddingStreamImpl(const ModelConfig& config) {
  const int c64 = config.channels(64), c128 = config.channels(128);
  const int c256 = config.channels(256), c512 = config.channels(512);
  stem = register_module("stem", conv(3, c64, 7, 2, 3));
  stem_bn = register_module("stem_bn", norm(c64, config));
  init_conv(stem);
  stage1 = register_module("stage1", nn::ModuleList());
  for (int i = 0; i < 3; ++i) stage1->push_back(Bottleneck(i == 0 ? c64 : c256, c64, c256, 1, config));
  stage2 = register_module("stage2", nn::ModuleList());
  for (int i = 0; i < 4; ++i) {
    stage2->push_back(Bottleneck(i == 0 ? c256 : c512, c128, c512, i == 0 ? 2 : 1, config));
  }
}

StreamTrace EmbeddingStreamImpl::trace(const torch::Tensor& x) {
  StreamTrace t;
  t.stem = torch::relu(stem_bn(stem(normalize_pixels(x))));
  t.pooled = torch::max_pool2d(t.stem, 3, 2, 1);
  auto y = t.pooled;
  for (const auto& m : *stage1) y = m->as<BottleneckImpl>()->forward(y);
  t.stage1 = y;
  for (const auto& m : *stage2) y = m->as<BottleneckImpl>()->forward(y);
  t.stage2 = y;
  return t;
}

torch::Tensor EmbeddingStreamImpl::forward(const torch::Tensor& x) { return trace(x).stage2; }

std::vector<Bottleneck> EmbeddingStreamImpl::blocks() const {
  std::vector<Bottleneck> out;
  for (const auto* list : {&stage1, &stage2}) {
    for (const auto& m : **list) out.emplace_back(std::dynamic_pointer_cast<BottleneckImpl>(m));
  }
  return out;
}

// ---------------------------------------------------------------------------

MatchingHeadImpl::MatchingHeadImpl(int in_channels, const ModelConfig& config) {
  const int c = config.channels(256);
  relation_conv = register_module("relation_conv", conv(in_channels, c, 3, 1, 1));
  relation_bn = register_module("relation_bn", norm(c, config));
  upsample = register_module(
      "upsample", nn::ConvTranspose2d(
                      nn::ConvTranspose2dOptions(c, c, 3).stride(2).padding(1).output_padding(1).bias(false)));
  upsample_bn = register_module("upsample_bn", norm(c, config));
  predict = register_module("predict", conv(c, 1, 3, 1, 1, true));
  init_conv(relation_conv);
  nn::init::kaiming_normal_(upsample->weight, 0.0, torch::kFanIn, torch::kReLU);
  nn::init::normal_(predict->weight, 0.0, 0.01);
  nn::init::zeros_(predict->bias);
}

torch::Tensor MatchingHeadImpl::relation(const torch::Tensor& x) {
  auto y = torch::relu(relation_bn(relation_conv(x)));
  return torch::relu(upsample_bn(upsample(y)));
}

torch::Tensor MatchingHeadImpl::forward(const torch::Tensor& x) { return predict(relation(x)); }

// ---------------------------------------------------------------------------

GmnNetworkImpl::GmnNetworkImpl(ModelConfig config) : config_(config) {
  config_.validate();
  const bool adapters = config_.adapters_enabled;
  config_.adapters_enabled = false;
  exemplar_stream = register_module("exemplar_stream", EmbeddingStream(config_));
  image_stream = register_module("image_stream", EmbeddingStream(config_));
  head = register_module("head", MatchingHead(2 * config_.embedding_channels(), config_));
  if (adapters) insert_adapters();
}

torch::Tensor GmnNetworkImpl::embed_exemplar(const torch::Tensor& patches) {
  if (patches.dim() != 4 || patches.size(1) != 3 || patches.size(2) != kExemplarSize ||
      patches.size(3) != kExemplarSize) {
    throw InvalidArgument("exemplar batch must be N x 3 x 63 x 63");
  }
  const auto features = exemplar_stream->forward(patches);
  const auto pooled = std::get<0>(features.flatten(2).max(2));
  return torch::nn::functional::normalize(pooled,
                                          torch::nn::functional::NormalizeFuncOptions().dim(1));
}

torch::Tensor GmnNetworkImpl::embed_image(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(1) != 3) throw InvalidArgument("image batch must be N x 3 x H x W");
  if (images.size(2) < kExemplarSize || images.size(3) < kExemplarSize) {
    throw InvalidArgument("image must be at least 63x63");
  }
  if (images.size(2) % 8 != 0 || images.size(3) % 8 != 0) {
    throw InvalidArgument("image sides must be multiples of 8; pad before embedding");
  }
  ++embedding_calls_;
  const auto features = image_stream->forward(images);
  return torch::nn::functional::normalize(features,
                                          torch::nn::functional::NormalizeFuncOptions().dim(1));
}

torch::Tensor GmnNetworkImpl::match(const torch::Tensor& v, const torch::Tensor& f) {
  if (v.dim() != 2 || f.dim() != 4) throw InvalidArgument("match expects v: N x C, f: N x C x h x w");
  if (v.size(1) != f.size(1)) {
    throw InvalidArgument("channel mismatch: exemplar " + std::to_string(v.size(1)) + " vs image " +
                          std::to_string(f.size(1)));
  }
  if (v.size(0) != f.size(0) && v.size(0) != 1 && f.size(0) != 1) {
    throw InvalidArgument("batch size mismatch between exemplar and image");
  }
  const auto n = std::max(v.size(0), f.size(0));
  const auto broadcast = v.view({v.size(0), v.size(1), 1, 1}).expand({n, v.size(1), f.size(2), f.size(3)});
  return head->forward(torch::cat({broadcast, f.expand({n, -1, -1, -1})}, 1));
}

torch::Tensor GmnNetworkImpl::forward(const torch::Tensor& images, const torch::Tensor& patches) {
  return match(embed_exemplar(patches), embed_image(images));
}

ForwardTrace GmnNetworkImpl::trace(const torch::Tensor& images, const torch::Tensor& patches) {
  ForwardTrace t;
  t.exemplar = exemplar_stream->trace(patches);
  t.image = image_stream->trace(images);
  t.exemplar_pooled = std::get<0>(t.exemplar.stage2.flatten(2).max(2)).unsqueeze(2).unsqueeze(3);
  namespace F = torch::nn::functional;
  const auto v = F::normalize(t.exemplar_pooled, F::NormalizeFuncOptions().dim(1));
  const auto f = F::normalize(t.image.stage2, F::NormalizeFuncOptions().dim(1));
  t.concatenated = torch::cat({v.expand({-1, -1, f.size(2), f.size(3)}), f}, 1);
  t.relation = head->relation(t.concatenated);
  t.output = head->predict(t.relation);
  return t;
}

void GmnNetworkImpl::insert_adapters() {
  if (config_.adapters_enabled) throw InvalidArgument("adapters already inserted");
  for (auto* stream : {&exemplar_stream, &image_stream}) {
    for (auto& block : (*stream)->blocks()) block->insert_adapter();
  }
  config_.adapters_enabled = true;
}

int GmnNetworkImpl::adapter_site_count() const {
  int sites = 0;
  for (const auto* stream : {&exemplar_stream, &image_stream}) {
    for (const auto& block : (*stream)->blocks()) sites += block->has_adapter() ? 1 : 0;
  }
  return sites;
}

// ---------------------------------------------------------------------------

std::string to_string(TrainMode mode) { return mode == TrainMode::Pretrain ? "pretrain" : "adapt"; }

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "pretrain") return TrainMode::Pretrain;
  if (s == "adapt") return TrainMode::Adapt;
  throw InvalidArgument("mode must be 'pretrain' or 'adapt', got '" + s + "'");
}

ParameterPartition partition_parameters(GmnNetworkImpl& net, TrainMode mode) {
  ParameterPartition out;
  const auto params = net.named_parameters(/*recurse=*/true);
  if (mode == TrainMode::Pretrain) {
    for (const auto& p : params) out.trainable.emplace_back(p.key(), p.value());
    return out;
  }
  if (!net.has_adapters()) throw InvalidArgument("adapt mode requires inserted adapters");
  std::vector<std::string> norm_prefixes;
  for (const auto& m : net.named_modules("", /*include_self=*/false)) {
    if (m.value()->as<torch::nn::BatchNorm2dImpl>() != nullptr) norm_prefixes.push_back(m.key() + ".");
  }
  auto starts_with = [](const std::string& s, const std::string& prefix) {
    return s.compare(0, prefix.size(), prefix) == 0;
  };
  for (const auto& p : params) {
    const std::string& name = p.key();
    bool trainable = name.find(".adapter.") != std::string::npos;
    for (const auto& prefix : norm_prefixes) trainable = trainable || starts_with(name, prefix);
    (trainable ? out.trainable : out.frozen).emplace_back(name, p.value());
  }
  return out;
}

std::int64_t count_parameters(const std::vector<NamedTensor>& tensors) {
  std::int64_t n = 0;
  for (const auto& t : tensors) n += t.second.numel();
  return n;
}

std::int64_t count_parameters(GmnNetworkImpl& net) {
  std::int64_t n = 0;
  for (const auto& p : net.parameters()) n += p.numel();
  return n;
}

torch::Tensor image_to_tensor(const Image& image) {
  validate_image(image, 1);
  cv::Mat contiguous = image.pixels.isContinuous() ? image.pixels : image.pixels.clone();
  auto hwc = torch::from_blob(contiguous.data, {image.height(), image.width(), 3}, torch::kFloat32);
  return hwc.permute({2, 0, 1}).unsqueeze(0).contiguous();
}

torch::Tensor images_to_tensor(const std::vector<Image>& images) {
  std::vector<torch::Tensor> parts;
  parts.reserve(images.size());
  for (const auto& im : images) parts.push_back(image_to_tensor(im));
  return torch::cat(parts, 0);
}

cv::Mat1f tensor_to_mat(const torch::Tensor& map) {
  auto t = map.detach().to(torch::kFloat32).contiguous();
  while (t.dim() > 2) {
    if (t.size(0) != 1) throw InvalidArgument("expected a single map");
    t = t.squeeze(0);
  }
  cv::Mat1f out(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)));
  std::memcpy(out.data, t.data_ptr<float>(), sizeof(float) * t.numel());
  return out;
}

torch::Tensor mat_to_tensor(const cv::Mat1f& map) {
  cv::Mat1f c = map.isContinuous() ? map : map.clone();
  return torch::from_blob(c.data, {c.rows, c.cols}, torch::kFloat32).clone();
}

}  // namespace gmn
