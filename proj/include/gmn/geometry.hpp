#pragma once

#include "gmn/image.hpp"

namespace gmn {

/// Resampling factors that bring an exemplar box to the 63x63 patch area.
/// `area_scale` solves area_scale * w * h = 63^2; images are resampled by
/// `linear_scale` = sqrt(area_scale) along each axis.
struct ScaleSpec {
  double area_scale = 1.0;
  double linear_scale = 1.0;
};

ScaleSpec compute_exemplar_scale(const BBox& box);

/// Similarity transform p' = scale * p + offset taking source pixels to
/// crop pixels.
struct CropTransform {
  double scale = 1.0;
  double offset_x = 0.0;
  double offset_y = 0.0;

  Point apply(Point p) const { return {scale * p.x + offset_x, scale * p.y + offset_y}; }
  Point invert(Point p) const { return {(p.x - offset_x) / scale, (p.y - offset_y) / scale}; }
};

/// 63x63 patch centred on the box centre after resampling by the box's
/// linear scale. Out-of-image area is edge-replicated.
Image crop_exemplar(const Image& image, const BBox& box);

struct SearchCrop {
  Image image;
  CropTransform transform;
};

/// `size` x `size` crop centred on the scaled box centre, using the same
/// linear scale as crop_exemplar.
SearchCrop crop_search_region(const Image& image, const BBox& box, int size = kSearchSize);

/// Resamples the whole image by `scale` so that source pixel p lands on
/// scale * p. Output size is ceil(scale * side).
SearchCrop rescale_image(const Image& image, double scale);

/// Applies an arbitrary 2x3 affine (source -> destination) with bilinear
/// sampling and edge replication.
Image warp_affine(const Image& image, const cv::Matx23d& source_to_dest, cv::Size out_size);

}  // namespace gmn
