#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "gmn/image.hpp"

namespace gmn {

inline constexpr double kDensityScale = 100.0;
inline constexpr int kOutputStride = 4;

/// Single-channel map on a regular grid. Cell (row i, col j) sits at input
/// pixel (offset_x + stride * j, offset_y + stride * i). Used both for
/// network output and rendered density targets.
struct DensityMap {
  cv::Mat1f values;
  double stride = kOutputStride;
  double offset_x = kOutputStride / 2.0;
  double offset_y = kOutputStride / 2.0;

  int rows() const { return values.rows; }
  int cols() const { return values.cols; }
  Point cell_to_pixel(double row, double col) const {
    return {offset_x + stride * col, offset_y + stride * row};
  }
  /// Continuous cell coordinates (x = column, y = row).
  Point pixel_to_cell(Point p) const {
    return {(p.x - offset_x) / stride, (p.y - offset_y) / stride};
  }
  double sum() const;
};

/// Grid of a stride-4 map covering an image of the given size after
/// padding to a multiple of 8.
cv::Size output_grid_for(int image_height, int image_width);

struct GaussianTargetOptions {
  double sigma_cells = 2.0;
  double density_scale = kDensityScale;
  double stride = kOutputStride;
  double offset = kOutputStride / 2.0;
};

/// Sums one isotropic Gaussian of mass `density_scale` per dot (dots in
/// input-pixel coordinates) on a rows x cols grid.
DensityMap render_gaussian_target(const std::vector<Point>& dots, cv::Size grid,
                                  const GaussianTargetOptions& options = {});

/// Little-endian float32 grid behind a 16-byte header: "GMND", u32 H, u32 W, u32 0.
std::vector<std::uint8_t> encode_gmnd(const DensityMap& map);
DensityMap decode_gmnd(const std::vector<std::uint8_t>& bytes);
/// Writes `path` plus `path + ".json"` carrying stride and offset.
void save_gmnd(const DensityMap& map, const std::string& path);
DensityMap load_gmnd(const std::string& path);

/// 8-bit colour heatmap (PNG bytes) of the map, min-max normalised.
std::vector<std::uint8_t> encode_heatmap_png(const DensityMap& map);

}  // namespace gmn
