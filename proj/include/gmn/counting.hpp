#pragma once

#include <optional>
#include <string>
#include <vector>

#include "gmn/density.hpp"
#include "gmn/image.hpp"
#include "gmn/model.hpp"

namespace gmn {

inline constexpr double kDefaultThreshold = 2.75;
inline constexpr double kDefaultMinDistance = 8.0;

enum class CountMode { LocalMax, Integral };
std::string to_string(CountMode mode);
CountMode count_mode_from_string(const std::string& s);

struct Detection {
  double x = 0.0;  // input pixels
  double y = 0.0;
  double score = 0.0;
};

struct DetectionSet {
  std::vector<Detection> detections;
  double threshold = kDefaultThreshold;
  double min_distance = kDefaultMinDistance;
};

struct CountResult {
  CountMode mode = CountMode::LocalMax;
  double count = 0.0;
  std::vector<Detection> detections;  // local-max mode only
  double threshold = kDefaultThreshold;
  double min_distance = kDefaultMinDistance;
};

/// Dense similarity of `exemplar_patch` (63x63) over `image`. The image is
/// edge-padded on the right/bottom to a multiple of 8, so cell (i, j) sits
/// at input pixel (4j + 2, 4i + 2).
DensityMap infer_similarity(GmnNetworkImpl& net, const Image& image, const Image& exemplar_patch);

/// Cells above `threshold` that are maxima of their 8-neighbourhood. A
/// plateau of equal values counts once, at its lexicographically smallest
/// (row, col) cell, provided no neighbour of the plateau is higher. Peaks
/// are then suppressed greedily in descending score order so that kept
/// peaks are at least `min_distance` input pixels apart.
DetectionSet detect_local_maxima(const DensityMap& map, double threshold, double min_distance);

/// Sum of the map with negatives clamped to zero, divided by `density_scale`.
double integral_count(const DensityMap& map, double density_scale = kDensityScale);

struct CountOptions {
  CountMode mode = CountMode::LocalMax;
  double threshold = kDefaultThreshold;
  std::optional<double> min_distance;  // default: object radius hint, else 8 px
  double density_scale = kDensityScale;
};

/// Full pipeline for an exemplar box on `exemplar_source`: the exemplar
/// box fixes the resampling scale, `image` is resampled by it, and the
/// resulting map is expressed in `image`'s original pixel coordinates.
DensityMap similarity_for_exemplar(GmnNetworkImpl& net, const Image& image,
                                   const Image& exemplar_source, const BBox& box);

/// Applies a counting mode to an existing map. `radius_hint` feeds the
/// default suppression distance.
CountResult count_from_map(const DensityMap& map, const CountOptions& options,
                           std::optional<double> radius_hint = {});

CountResult count(GmnNetworkImpl& net, const Image& image, const BBox& exemplar_box,
                  const CountOptions& options = {});
CountResult count(GmnNetworkImpl& net, const Image& image, const Image& exemplar_source,
                  const BBox& exemplar_box, const CountOptions& options = {});

}  // namespace gmn

#include <nlohmann/json_fwd.hpp>

namespace gmn {

/// {"mode", "count", "threshold", "min_distance", "detections": [{x, y, score}]}
void to_json(nlohmann::json& j, const CountResult& r);
void to_json(nlohmann::json& j, const Detection& d);
void from_json(const nlohmann::json& j, Detection& d);

}  // namespace gmn
