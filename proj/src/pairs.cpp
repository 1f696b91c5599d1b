#include <algorithm>
#include <cmath>
#include <numbers>

#include <opencv2/core.hpp>

#include "gmn/errors.hpp"
#include "gmn/geometry.hpp"
#include "gmn/train.hpp"

namespace gmn {
namespace {

constexpr double kMaxRotationDeg = 24.99;
constexpr double kMinZoom = 0.8;
constexpr double kMaxZoom = 1.25;

Image frame_image(const Frame& frame) {
  if (!frame.image.empty()) return frame.image;
  return load_image(frame.image_path);
}

template <typename T>
const T& pick(const std::vector<T>& items, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, items.size() - 1);
  return items[d(rng)];
}

struct BoxRef {
  std::size_t frame;
  std::size_t box;
};

std::vector<BoxRef> all_boxes(const Manifest& manifest) {
  std::vector<BoxRef> out;
  for (std::size_t f = 0; f < manifest.frames.size(); ++f) {
    for (std::size_t b = 0; b < manifest.frames[f].boxes.size(); ++b) out.push_back({f, b});
  }
  return out;
}

// Box centred on `centre_box` with the exemplar's extent, so the search
// frame is scaled by the exemplar's scale.
BBox recentre(const BBox& exemplar, const BBox& centre_box) {
  const Point c = centre_box.center();
  return {c.x - (exemplar.w - 1) / 2.0, c.y - (exemplar.h - 1) / 2.0, exemplar.w, exemplar.h};
}

bool inside_crop(Point p, int size) {
  return p.x >= -0.5 && p.y >= -0.5 && p.x < size - 0.5 && p.y < size - 0.5;
}

}  // namespace

PairSample sample_pair(const Manifest& manifest, Rng& rng, Polarity polarity,
                       const GaussianTargetOptions& target) {
  const auto boxes = all_boxes(manifest);
  if (boxes.empty()) throw InvalidArgument("manifest has no boxes");
  const BoxRef ex = pick(boxes, rng);
  const Frame& ex_frame = manifest.frames[ex.frame];
  const BoxRecord& ex_rec = ex_frame.boxes[ex.box];

  PairSample sample;
  sample.polarity = polarity;
  sample.class_id = ex_rec.class_id;
  const Image ex_image = frame_image(ex_frame);
  sample.exemplar = crop_exemplar(ex_image, ex_rec.box);
  const cv::Size grid = output_grid_for(kSearchSize, kSearchSize);

  if (polarity == Polarity::Positive) {
    // Any frame carrying the same track is a valid search frame.
    std::vector<BoxRef> same_track;
    if (ex_rec.track_id >= 0) {
      for (const BoxRef& r : boxes) {
        const BoxRecord& rec = manifest.frames[r.frame].boxes[r.box];
        if (rec.track_id == ex_rec.track_id && rec.class_id == ex_rec.class_id) same_track.push_back(r);
      }
    } else {
      same_track.push_back(ex);
    }
    const BoxRef search_ref = pick(same_track, rng);
    const Frame& search_frame = manifest.frames[search_ref.frame];
    const Image search_image = search_ref.frame == ex.frame ? ex_image : frame_image(search_frame);
    const BBox centre = recentre(ex_rec.box, search_frame.boxes[search_ref.box].box);
    SearchCrop crop = crop_search_region(search_image, centre);
    for (const BoxRecord& rec : search_frame.boxes) {
      if (rec.class_id != ex_rec.class_id) continue;
      const Point p = crop.transform.apply(rec.box.center());
      if (inside_crop(p, kSearchSize)) sample.dots.push_back(p);
    }
    sample.search = std::move(crop.image);
    sample.target = render_gaussian_target(sample.dots, grid, target);
    return sample;
  }

  std::vector<std::size_t> other_frames;
  for (std::size_t f = 0; f < manifest.frames.size(); ++f) {
    const auto& fb = manifest.frames[f].boxes;
    const bool has_class = std::any_of(fb.begin(), fb.end(), [&](const BoxRecord& r) {
      return r.class_id == ex_rec.class_id;
    });
    if (!has_class && !fb.empty()) other_frames.push_back(f);
  }
  if (other_frames.empty()) {
    throw InvalidArgument("negative pair requested but no frame lacks class " +
                          std::to_string(ex_rec.class_id));
  }
  const Frame& search_frame = manifest.frames[pick(other_frames, rng)];
  const BBox centre = recentre(ex_rec.box, pick(search_frame.boxes, rng).box);
  sample.search = crop_search_region(frame_image(search_frame), centre).image;
  sample.target = render_gaussian_target({}, grid, target);
  return sample;
}

PairSample sample_pair(const Manifest& manifest, Rng& rng, double positive_ratio,
                       const GaussianTargetOptions& target) {
  std::bernoulli_distribution positive(std::clamp(positive_ratio, 0.0, 1.0));
  return sample_pair(manifest, rng, positive(rng) ? Polarity::Positive : Polarity::Negative, target);
}

AugmentParams sample_augment_params(const AugmentSpec& spec, Rng& rng) {
  AugmentParams p;
  std::bernoulli_distribution flip(std::clamp(spec.hflip_probability, 0.0, 1.0));
  p.flip = flip(rng);
  const double rot = std::clamp(std::abs(spec.max_rotation_deg), 0.0, kMaxRotationDeg);
  if (rot > 0) {
    std::uniform_real_distribution<double> angle(-rot, rot);
    p.rotation_deg = angle(rng);
  }
  double lo = std::clamp(std::min(spec.min_zoom, spec.max_zoom), kMinZoom, kMaxZoom);
  double hi = std::clamp(std::max(spec.min_zoom, spec.max_zoom), kMinZoom, kMaxZoom);
  if (hi > lo) {
    // Log-uniform so that zooming in and out are equally likely.
    std::uniform_real_distribution<double> z(std::log(lo), std::log(hi));
    p.zoom = std::exp(z(rng));
  } else {
    p.zoom = lo;
  }
  return p;
}

PairSample apply_augment(const PairSample& sample, const AugmentParams& params,
                         const GaussianTargetOptions& target) {
  if (!params.flip && params.rotation_deg == 0.0 && params.zoom == 1.0) return sample;
  PairSample out = sample;
  const int size = sample.search.width();
  const double c = (size - 1) / 2.0;
  // Source -> destination: optional mirror, then rotate+zoom about the centre.
  const double t = params.rotation_deg * std::numbers::pi / 180.0;
  const double a = params.zoom * std::cos(t), b = params.zoom * std::sin(t);
  const double fx = params.flip ? -1.0 : 1.0;
  const double fo = params.flip ? 2.0 * c : 0.0;
  // x' = c + a*(fx*x + fo - c) - b*(y - c);  y' = c + b*(fx*x + fo - c) + a*(y - c)
  const cv::Matx23d m(a * fx, -b, c + a * (fo - c) + b * c,  //
                      b * fx, a, c + b * (fo - c) - a * c);
  out.search = warp_affine(sample.search, m, sample.search.pixels.size());
  out.dots.clear();
  for (const Point& p : sample.dots) {
    const Point q{m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2), m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2)};
    if (inside_crop(q, size)) out.dots.push_back(q);
  }
  if (params.flip) {
    cv::Mat mirrored;
    cv::flip(sample.exemplar.pixels, mirrored, 1);
    out.exemplar.pixels = mirrored;
  }
  out.target = render_gaussian_target(out.dots, sample.target.values.size(), target);
  return out;
}

PairSample augment(const PairSample& sample, const AugmentSpec& spec, Rng& rng,
                   const GaussianTargetOptions& target) {
  return apply_augment(sample, sample_augment_params(spec, rng), target);
}

}  // namespace gmn
