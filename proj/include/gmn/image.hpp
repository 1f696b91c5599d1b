#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

namespace gmn {

inline constexpr int kExemplarSize = 63;
inline constexpr int kSearchSize = 255;

/// RGB image with float pixels in [0, 1] (CV_32FC3, channel order R,G,B).
struct Image {
  cv::Mat pixels;
  std::string source_id;

  int height() const { return pixels.rows; }
  int width() const { return pixels.cols; }
  bool empty() const { return pixels.empty(); }
  cv::Vec3f at(int y, int x) const { return pixels.at<cv::Vec3f>(y, x); }
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Axis-aligned box; (x, y) is the top-left pixel, the box covers
/// pixels [x, x + w) x [y, y + h).
struct BBox {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  /// Pixel-centre convention: a 63-wide box starting at 0 is centred on pixel 31.
  Point center() const { return {x + (w - 1.0) / 2.0, y + (h - 1.0) / 2.0}; }
  bool intersects(int width, int height) const {
    return x < width && y < height && x + w > 0 && y + h > 0;
  }
};

/// Throws InvalidArgument when the pixel buffer is not a finite CV_32FC3 image.
void validate_image(const Image& image, int min_side = kExemplarSize);

/// Wraps an 8-bit BGR OpenCV matrix (as returned by imread) as an Image.
Image image_from_bgr8(const cv::Mat& bgr, std::string source_id = {});
cv::Mat image_to_bgr8(const Image& image);

Image load_image(const std::string& path);
Image decode_image(std::span<const std::uint8_t> bytes, std::string source_id = {});
void save_image(const Image& image, const std::string& path);

/// Replicates the right/bottom edge so both sides become multiples of
/// `multiple` and at least `min_side`.
Image pad_to_multiple(const Image& image, int multiple, int min_side = 0);

}  // namespace gmn
