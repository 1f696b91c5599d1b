#include "gmn/geometry.hpp"

#include <cmath>

#include <opencv2/imgproc.hpp>

#include "gmn/errors.hpp"

namespace gmn {
namespace {

void check_box(const BBox& box) {
  if (!(box.w > 0.0) || !(box.h > 0.0) || !std::isfinite(box.x) || !std::isfinite(box.y)) {
    throw InvalidArgument("degenerate box: width and height must be positive");
  }
}

void check_box_in(const Image& image, const BBox& box) {
  check_box(box);
  if (!box.intersects(image.width(), image.height())) {
    throw InvalidArgument("box does not intersect the image");
  }
}

// Transform that scales by `scale` and puts the scaled box centre on
// (half, half) of the output.
CropTransform centred_transform(const BBox& box, double scale, double half) {
  const Point c = box.center();
  return {scale, half - scale * c.x, half - scale * c.y};
}

}  // namespace

ScaleSpec compute_exemplar_scale(const BBox& box) {
  check_box(box);
  const double target = static_cast<double>(kExemplarSize) * kExemplarSize;
  const double s = target / (box.w * box.h);
  return {s, std::sqrt(s)};
}

Image warp_affine(const Image& image, const cv::Matx23d& source_to_dest, cv::Size out_size) {
  Image out;
  out.source_id = image.source_id;
  // Downsampling with plain bilinear taps aliases; pre-blur to roughly the
  // destination's Nyquist limit.
  const double scale = std::sqrt(std::abs(source_to_dest(0, 0) * source_to_dest(1, 1) -
                                          source_to_dest(0, 1) * source_to_dest(1, 0)));
  cv::Mat source = image.pixels;
  if (scale < 0.75) {
    const double sigma = 0.5 * std::sqrt(1.0 / (scale * scale) - 1.0);
    cv::GaussianBlur(image.pixels, source, cv::Size(), sigma, sigma, cv::BORDER_REPLICATE);
  }
  cv::warpAffine(source, out.pixels, cv::Mat(source_to_dest), out_size, cv::INTER_LINEAR,
                 cv::BORDER_REPLICATE);
  return out;
}

Image crop_exemplar(const Image& image, const BBox& box) {
  check_box_in(image, box);
  const ScaleSpec scale = compute_exemplar_scale(box);
  const CropTransform t = centred_transform(box, scale.linear_scale, (kExemplarSize - 1) / 2.0);
  const cv::Matx23d m(t.scale, 0, t.offset_x, 0, t.scale, t.offset_y);
  return warp_affine(image, m, cv::Size(kExemplarSize, kExemplarSize));
}

SearchCrop crop_search_region(const Image& image, const BBox& box, int size) {
  check_box_in(image, box);
  if (size <= 0) throw InvalidArgument("search crop size must be positive");
  const ScaleSpec scale = compute_exemplar_scale(box);
  const CropTransform t = centred_transform(box, scale.linear_scale, (size - 1) / 2.0);
  const cv::Matx23d m(t.scale, 0, t.offset_x, 0, t.scale, t.offset_y);
  return {warp_affine(image, m, cv::Size(size, size)), t};
}

SearchCrop rescale_image(const Image& image, double scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) throw InvalidArgument("scale must be positive");
  const int w = static_cast<int>(std::ceil(image.width() * scale - 1e-9));
  const int h = static_cast<int>(std::ceil(image.height() * scale - 1e-9));
  const cv::Matx23d m(scale, 0, 0, 0, scale, 0);
  return {warp_affine(image, m, cv::Size(std::max(w, 1), std::max(h, 1))), {scale, 0.0, 0.0}};
}

}  // namespace gmn
