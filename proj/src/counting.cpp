#include "gmn/counting.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gmn/errors.hpp"
#include "gmn/geometry.hpp"

namespace gmn {

std::string to_string(CountMode mode) { return mode == CountMode::LocalMax ? "localmax" : "integral"; }

CountMode count_mode_from_string(const std::string& s) {
  if (s == "localmax" || s == "local-max") return CountMode::LocalMax;
  if (s == "integral") return CountMode::Integral;
  throw InvalidArgument("mode must be 'localmax' or 'integral', got '" + s + "'");
}

DensityMap infer_similarity(GmnNetworkImpl& net, const Image& image, const Image& exemplar_patch) {
  validate_image(image);
  if (exemplar_patch.height() != kExemplarSize || exemplar_patch.width() != kExemplarSize) {
    throw InvalidArgument("exemplar patch must be 63x63");
  }
  torch::NoGradGuard no_grad;
  net.eval();
  const Image padded = pad_to_multiple(image, 8);
  const auto out = net.forward(image_to_tensor(padded), image_to_tensor(exemplar_patch));
  DensityMap map;
  map.values = tensor_to_mat(out);
  return map;
}

DetectionSet detect_local_maxima(const DensityMap& map, double threshold, double min_distance) {
  if (min_distance < 0) throw InvalidArgument("min_distance must be >= 0");
  DetectionSet out;
  out.threshold = threshold;
  out.min_distance = min_distance;
  const int rows = map.rows(), cols = map.cols();
  if (rows == 0 || cols == 0) return out;
  const cv::Mat1f& v = map.values;

  struct Peak {
    int row, col;
    float score;
  };
  std::vector<Peak> peaks;
  cv::Mat1b visited = cv::Mat1b::zeros(rows, cols);
  std::vector<cv::Point> stack, plateau;

  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const float value = v(i, j);
      if (visited(i, j) || !(value > threshold)) continue;
      // Flood the plateau of cells equal to `value`; it is a maximum iff
      // no 8-neighbour of the plateau is higher.
      bool is_max = true;
      stack.assign(1, {j, i});
      plateau.clear();
      visited(i, j) = 1;
      while (!stack.empty()) {
        const cv::Point p = stack.back();
        stack.pop_back();
        plateau.push_back(p);
        for (int di = -1; di <= 1; ++di) {
          for (int dj = -1; dj <= 1; ++dj) {
            const int r = p.y + di, c = p.x + dj;
            if ((di == 0 && dj == 0) || r < 0 || c < 0 || r >= rows || c >= cols) continue;
            if (v(r, c) > value) {
              is_max = false;
            } else if (v(r, c) == value && !visited(r, c)) {
              visited(r, c) = 1;
              stack.push_back({c, r});
            }
          }
        }
      }
      if (!is_max) continue;
      const cv::Point first = *std::min_element(plateau.begin(), plateau.end(), [](auto a, auto b) {
        return a.y != b.y ? a.y < b.y : a.x < b.x;
      });
      peaks.push_back({first.y, first.x, value});
    }
  }

  std::stable_sort(peaks.begin(), peaks.end(), [](const Peak& a, const Peak& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.row != b.row ? a.row < b.row : a.col < b.col;
  });
  for (const Peak& p : peaks) {
    const Point px = map.cell_to_pixel(p.row, p.col);
    const bool suppressed = std::any_of(out.detections.begin(), out.detections.end(), [&](const Detection& d) {
      return std::hypot(d.x - px.x, d.y - px.y) < min_distance;
    });
    if (!suppressed) out.detections.push_back({px.x, px.y, p.score});
  }
  return out;
}

double integral_count(const DensityMap& map, double density_scale) {
  if (!(density_scale > 0)) throw InvalidArgument("density scale must be positive");
  if (map.values.empty()) return 0.0;
  cv::Mat1f clamped;
  cv::max(map.values, 0.0, clamped);
  return cv::sum(clamped)[0] / density_scale;
}

DensityMap similarity_for_exemplar(GmnNetworkImpl& net, const Image& image,
                                   const Image& exemplar_source, const BBox& box) {
  validate_image(image);
  const ScaleSpec scale = compute_exemplar_scale(box);
  const Image patch = crop_exemplar(exemplar_source, box);
  const double ls = scale.linear_scale;
  const Image scaled = ls == 1.0 ? image : rescale_image(image, ls).image;
  DensityMap map = infer_similarity(net, pad_to_multiple(scaled, 8, 64), patch);
  // Drop cells that only cover edge padding.
  const int rows = std::min(map.rows(), (scaled.height() + kOutputStride - 1) / kOutputStride);
  const int cols = std::min(map.cols(), (scaled.width() + kOutputStride - 1) / kOutputStride);
  map.values = map.values(cv::Rect(0, 0, cols, rows)).clone();
  map.stride /= ls;
  map.offset_x /= ls;
  map.offset_y /= ls;
  return map;
}

CountResult count_from_map(const DensityMap& map, const CountOptions& options,
                           std::optional<double> radius_hint) {
  CountResult result;
  result.mode = options.mode;
  result.threshold = options.threshold;
  result.min_distance = options.min_distance.value_or(radius_hint.value_or(kDefaultMinDistance));
  if (options.mode == CountMode::Integral) {
    result.count = integral_count(map, options.density_scale);
    return result;
  }
  auto set = detect_local_maxima(map, options.threshold, result.min_distance);
  result.detections = std::move(set.detections);
  result.count = static_cast<double>(result.detections.size());
  return result;
}

CountResult count(GmnNetworkImpl& net, const Image& image, const BBox& exemplar_box,
                  const CountOptions& options) {
  return count(net, image, image, exemplar_box, options);
}

CountResult count(GmnNetworkImpl& net, const Image& image, const Image& exemplar_source,
                  const BBox& exemplar_box, const CountOptions& options) {
  const DensityMap map = similarity_for_exemplar(net, image, exemplar_source, exemplar_box);
  return count_from_map(map, options);
}

}  // namespace gmn

#include <nlohmann/json.hpp>

namespace gmn {

void to_json(nlohmann::json& j, const Detection& d) { j = {{"x", d.x}, {"y", d.y}, {"score", d.score}}; }

void from_json(const nlohmann::json& j, Detection& d) {
  d.x = j.at("x").get<double>();
  d.y = j.at("y").get<double>();
  d.score = j.value("score", 0.0);
}

void to_json(nlohmann::json& j, const CountResult& r) {
  j = {{"mode", to_string(r.mode)},
       {"count", r.count},
       {"threshold", r.threshold},
       {"min_distance", r.min_distance},
       {"detections", r.detections}};
}

}  // namespace gmn
