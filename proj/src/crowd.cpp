#include "gmn/crowd.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <nlohmann/json.hpp>
#include <opencv2/imgproc.hpp>

#include "gmn/errors.hpp"

namespace gmn {

int PatchClassSpec::class_of(long long count) const {
  if (count < 0) throw InvalidArgument("person count must be non-negative");
  return static_cast<int>(std::min<long long>(count / bin_width, n_classes - 1));
}

double PatchClassSpec::center(int class_index) const {
  if (class_index < 0 || class_index >= n_classes) throw InvalidArgument("class index out of range");
  return static_cast<double>(class_index) * bin_width;
}

void PatchClassSpec::validate() const {
  if (patch_size < 8 || patch_size % 8 != 0) throw InvalidArgument("patch size must be a multiple of 8");
  if (n_classes < 2) throw InvalidArgument("need at least two classes");
  if (bin_width < 1) throw InvalidArgument("bin width must be >= 1");
}

void to_json(nlohmann::json& j, const LabeledPatch& p) {
  j = {{"x", p.x}, {"y", p.y}, {"count", p.count}, {"class", p.class_index}};
}

std::vector<LabeledPatch> quantize_patches(const Image& image, const std::vector<Point>& dots,
                                           const PatchClassSpec& spec) {
  spec.validate();
  const int size = spec.patch_size;
  if (image.height() < size || image.width() < size) {
    throw InvalidArgument("image smaller than one " + std::to_string(size) + "px tile");
  }
  const int rows = image.height() / size, cols = image.width() / size;
  std::vector<int> counts(static_cast<std::size_t>(rows) * cols, 0);
  for (const Point& p : dots) {
    const int c = static_cast<int>(std::floor(p.x / size));
    const int r = static_cast<int>(std::floor(p.y / size));
    if (p.x >= 0 && p.y >= 0 && r < rows && c < cols) ++counts[static_cast<std::size_t>(r) * cols + c];
  }
  std::vector<LabeledPatch> out;
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      LabeledPatch p;
      p.x = c * size;
      p.y = r * size;
      p.pixels.pixels = image.pixels(cv::Rect(p.x, p.y, size, size)).clone();
      p.pixels.source_id = image.source_id;
      p.count = counts[static_cast<std::size_t>(r) * cols + c];
      p.class_index = spec.class_of(p.count);
      out.push_back(std::move(p));
    }
  }
  return out;
}

Image patch_exemplar(const Image& patch) {
  if (patch.height() == kExemplarSize && patch.width() == kExemplarSize) return patch;
  Image out;
  cv::resize(patch.pixels, out.pixels, cv::Size(kExemplarSize, kExemplarSize), 0, 0, cv::INTER_AREA);
  out.source_id = patch.source_id;
  return out;
}

std::vector<PatchPair> sample_patch_pairs(const std::vector<LabeledPatch>& patches, int n,
                                          std::mt19937_64& rng) {
  std::map<int, std::vector<const LabeledPatch*>> by_class;
  for (const auto& p : patches) by_class[p.class_index].push_back(&p);
  if (by_class.size() < 2) throw InvalidArgument("patch matcher needs at least two classes");
  std::vector<int> classes;
  for (const auto& [c, list] : by_class) classes.push_back(c);
  std::uniform_int_distribution<std::size_t> pick_class(0, classes.size() - 1);
  auto pick = [&](int c) {
    const auto& list = by_class[c];
    std::uniform_int_distribution<std::size_t> d(0, list.size() - 1);
    return list[d(rng)];
  };
  std::vector<PatchPair> pairs;
  for (int i = 0; i < n; ++i) {
    const int a = classes[pick_class(rng)];
    if (i % 2 == 0) {
      pairs.push_back({pick(a), pick(a), 1.0f});
    } else {
      int b = a;
      while (b == a) b = classes[pick_class(rng)];
      pairs.push_back({pick(a), pick(b), 0.0f});
    }
  }
  return pairs;
}

torch::Tensor same_class_logits(GmnNetworkImpl& net, const torch::Tensor& search_patches,
                                const torch::Tensor& exemplar_patches) {
  return net.forward(search_patches, exemplar_patches).mean({1, 2, 3});
}

namespace {

struct PairTensors {
  torch::Tensor search, exemplar, target;
};

PairTensors to_tensors(const std::vector<PatchPair>& pairs) {
  std::vector<Image> search, exemplar;
  std::vector<float> target;
  for (const auto& p : pairs) {
    search.push_back(p.search->pixels);
    exemplar.push_back(patch_exemplar(p.exemplar->pixels));
    target.push_back(p.target);
  }
  return {images_to_tensor(search), images_to_tensor(exemplar), torch::tensor(target)};
}

double bce_step(GmnNetworkImpl& net, torch::optim::Adam& opt, const PairTensors& batch) {
  net.train();
  opt.zero_grad();
  const auto logits = same_class_logits(net, batch.search, batch.exemplar);
  const auto loss = torch::binary_cross_entropy_with_logits(logits, batch.target);
  const double value = loss.item<double>();
  if (!std::isfinite(value)) throw DivergenceError("non-finite patch matcher loss");
  loss.backward();
  opt.step();
  return value;
}

}  // namespace

GmnNetwork train_patch_matcher(const std::vector<LabeledPatch>& patches, const PatchMatcherConfig& config,
                               const std::function<void(int, double)>& on_step) {
  std::mt19937_64 rng(config.seed);
  sample_patch_pairs(patches, 2, rng);  // validates class coverage up front
  torch::manual_seed(config.seed);
  GmnNetwork net(config.model);
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  for (int step = 0; step < config.steps; ++step) {
    const double loss = bce_step(*net, opt, to_tensors(sample_patch_pairs(patches, config.batch_size, rng)));
    if (on_step) on_step(step, loss);
  }
  net->eval();
  return net;
}

GmnNetwork train_patch_matcher_on_pairs(const std::vector<PatchPair>& pairs, const PatchMatcherConfig& config) {
  if (pairs.empty()) throw InvalidArgument("no pairs to train on");
  torch::manual_seed(config.seed);
  GmnNetwork net(config.model);
  torch::optim::Adam opt(net->parameters(), torch::optim::AdamOptions(config.learning_rate));
  const PairTensors batch = to_tensors(pairs);
  for (int step = 0; step < config.steps; ++step) bce_step(*net, opt, batch);
  net->eval();
  return net;
}

std::vector<double> pair_scores(GmnNetworkImpl& net, const std::vector<PatchPair>& pairs) {
  torch::NoGradGuard guard;
  net.eval();
  const PairTensors batch = to_tensors(pairs);
  const auto p = torch::sigmoid(same_class_logits(net, batch.search, batch.exemplar)).to(torch::kFloat64);
  return {p.data_ptr<double>(), p.data_ptr<double>() + p.numel()};
}

int classify_scores(const std::vector<double>& scores) {
  if (scores.empty()) throw InvalidArgument("no class scores");
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
    if (scores[i] > scores[best]) best = i;
  }
  return best;
}

std::vector<double> class_scores(GmnNetworkImpl& net, const Image& patch,
                                 const std::vector<Image>& class_exemplars) {
  if (class_exemplars.empty()) throw InvalidArgument("no class exemplars");
  torch::NoGradGuard guard;
  net.eval();
  std::vector<Image> exemplars;
  for (const auto& e : class_exemplars) {
    if (e.empty()) throw InvalidArgument("missing class exemplar");
    exemplars.push_back(patch_exemplar(e));
  }
  const auto search = image_to_tensor(patch).expand({static_cast<long>(exemplars.size()), -1, -1, -1});
  const auto p = torch::sigmoid(same_class_logits(net, search.contiguous(), images_to_tensor(exemplars)))
                     .to(torch::kFloat64);
  return {p.data_ptr<double>(), p.data_ptr<double>() + p.numel()};
}

int classify_patch(GmnNetworkImpl& net, const Image& patch, const std::vector<Image>& class_exemplars,
                   const PatchClassSpec& spec) {
  if (static_cast<int>(class_exemplars.size()) != spec.n_classes) {
    throw InvalidArgument("need one exemplar per class (" + std::to_string(spec.n_classes) + "), got " +
                          std::to_string(class_exemplars.size()));
  }
  return classify_scores(class_scores(net, patch, class_exemplars));
}

double count_from_classes(const std::vector<int>& classes, const PatchClassSpec& spec) {
  double total = 0.0;
  for (int c : classes) total += spec.center(c);
  return total;
}

double count_image_by_patches(GmnNetworkImpl& net, const Image& image,
                              const std::vector<Image>& class_exemplars, const PatchClassSpec& spec) {
  std::vector<int> classes;
  for (const auto& tile : quantize_patches(image, {}, spec)) {
    classes.push_back(classify_patch(net, tile.pixels, class_exemplars, spec));
  }
  return count_from_classes(classes, spec);
}

namespace {

void paint_heads(cv::Mat& canvas, cv::Rect area, int count, std::mt19937_64& rng, std::vector<Point>* dots) {
  std::uniform_real_distribution<double> radius(1.8, 2.8);
  std::uniform_real_distribution<float> shade(0.05f, 0.25f);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (int k = 0; k < count; ++k) {
    const double r = radius(rng);
    const double x = area.x + r + u01(rng) * (area.width - 2 * r);
    const double y = area.y + r + u01(rng) * (area.height - 2 * r);
    const float s = shade(rng);
    constexpr int kShift = 4;
    cv::circle(canvas, cv::Point(static_cast<int>(std::lround(x * 16)), static_cast<int>(std::lround(y * 16))),
               static_cast<int>(std::lround(r * 16)), cv::Scalar(s, s * 0.9f, s * 0.8f), cv::FILLED,
               cv::LINE_8, kShift);
    if (dots) dots->push_back({x, y});
  }
}

cv::Mat crowd_background(int width, int height, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> level(0.45f, 0.75f);
  cv::Mat canvas(height, width, CV_32FC3, cv::Scalar::all(level(rng)));
  cv::Mat noise(height, width, CV_32FC3);
  cv::RNG local(rng());
  local.fill(noise, cv::RNG::NORMAL, 0.0, 0.03);
  canvas += noise;
  return canvas;
}

}  // namespace

std::vector<LabeledPatch> synthetic_crowd_patches(int n, const PatchClassSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> cls(0, spec.n_classes - 1);
  std::vector<LabeledPatch> out;
  for (int i = 0; i < n; ++i) {
    const int c = cls(rng);
    std::uniform_int_distribution<int> within(c * spec.bin_width, (c + 1) * spec.bin_width - 1);
    LabeledPatch p;
    p.count = within(rng);
    p.class_index = spec.class_of(p.count);
    cv::Mat canvas = crowd_background(spec.patch_size, spec.patch_size, rng);
    paint_heads(canvas, cv::Rect(0, 0, spec.patch_size, spec.patch_size), p.count, rng, nullptr);
    cv::min(cv::max(canvas, 0.0), 1.0, canvas);
    p.pixels.pixels = canvas;
    p.pixels.source_id = "crowd-" + std::to_string(seed) + "-" + std::to_string(i);
    out.push_back(std::move(p));
  }
  return out;
}

CrowdScene synthetic_crowd_scene(int width, int height, int max_per_tile, const PatchClassSpec& spec,
                                 std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  CrowdScene scene;
  cv::Mat canvas = crowd_background(width, height, rng);
  std::uniform_int_distribution<int> count(0, max_per_tile);
  for (int y = 0; y + spec.patch_size <= height; y += spec.patch_size) {
    for (int x = 0; x + spec.patch_size <= width; x += spec.patch_size) {
      paint_heads(canvas, cv::Rect(x, y, spec.patch_size, spec.patch_size), count(rng), rng, &scene.dots);
    }
  }
  cv::min(cv::max(canvas, 0.0), 1.0, canvas);
  scene.image.pixels = canvas;
  scene.image.source_id = "crowd-scene-" + std::to_string(seed);
  return scene;
}

}  // namespace gmn
