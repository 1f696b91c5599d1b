#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <nlohmann/json_fwd.hpp>
#include <torch/torch.h>

#include "gmn/image.hpp"
#include "gmn/model.hpp"

namespace gmn {

/// Fixed-width count bins: class k holds counts [k * bin_width, (k+1) * bin_width),
/// the top class absorbs everything above. Class centres are k * bin_width.
struct PatchClassSpec {
  int patch_size = 64;
  int n_classes = 10;
  int bin_width = 5;

  int class_of(long long count) const;
  double center(int class_index) const;
  void validate() const;
};

struct LabeledPatch {
  int x = 0;  // tile offset in the source image
  int y = 0;
  Image pixels;
  int count = 0;
  int class_index = 0;
};

void to_json(nlohmann::json& j, const LabeledPatch& p);  // index record without pixels

/// Non-overlapping tiles in row-major order; right/bottom remainders are
/// dropped. Throws InvalidArgument for images smaller than one tile.
std::vector<LabeledPatch> quantize_patches(const Image& image, const std::vector<Point>& dots,
                                           const PatchClassSpec& spec = {});

/// Exemplar-stream input for a patch (resampled to 63x63).
Image patch_exemplar(const Image& patch);

struct PatchPair {
  const LabeledPatch* exemplar = nullptr;
  const LabeledPatch* search = nullptr;
  float target = 0.0f;  // 1 if same class
};

/// Half same-class, half different-class pairs (as far as the data allows).
std::vector<PatchPair> sample_patch_pairs(const std::vector<LabeledPatch>& patches, int n,
                                          std::mt19937_64& rng);

struct PatchMatcherConfig {
  int steps = 1500;
  int batch_size = 16;
  double learning_rate = 1e-3;
  ModelConfig model;
  std::uint64_t seed = 0;
};

/// Same-class logit: mean of the similarity map of (exemplar, search).
torch::Tensor same_class_logits(GmnNetworkImpl& net, const torch::Tensor& search_patches,
                                const torch::Tensor& exemplar_patches);

/// Trains on freshly sampled pairs each step. Throws InvalidArgument when
/// fewer than two classes are present.
GmnNetwork train_patch_matcher(const std::vector<LabeledPatch>& patches, const PatchMatcherConfig& config,
                               const std::function<void(int, double)>& on_step = {});

/// Trains repeatedly on a fixed pair list (optimisation sanity check).
GmnNetwork train_patch_matcher_on_pairs(const std::vector<PatchPair>& pairs, const PatchMatcherConfig& config);

/// Sigmoid scores for each pair.
std::vector<double> pair_scores(GmnNetworkImpl& net, const std::vector<PatchPair>& pairs);

/// Argmax with ties resolved to the lowest class index.
int classify_scores(const std::vector<double>& scores);

/// One exemplar patch per class; returns per-class response of `patch`.
std::vector<double> class_scores(GmnNetworkImpl& net, const Image& patch,
                                 const std::vector<Image>& class_exemplars);
int classify_patch(GmnNetworkImpl& net, const Image& patch, const std::vector<Image>& class_exemplars,
                   const PatchClassSpec& spec = {});

/// Sum of class centres.
double count_from_classes(const std::vector<int>& classes, const PatchClassSpec& spec = {});
double count_image_by_patches(GmnNetworkImpl& net, const Image& image,
                              const std::vector<Image>& class_exemplars, const PatchClassSpec& spec = {});

/// Synthetic crowd texture patches: class drawn uniformly, count uniform
/// within the class bin, small dark "heads" scattered over a noisy
/// background.
std::vector<LabeledPatch> synthetic_crowd_patches(int n, const PatchClassSpec& spec, std::uint64_t seed);

/// Synthetic crowd image with spatially varying density and its dot set.
struct CrowdScene {
  Image image;
  std::vector<Point> dots;
};
CrowdScene synthetic_crowd_scene(int width, int height, int max_per_tile, const PatchClassSpec& spec,
                                 std::uint64_t seed);

}  // namespace gmn
