#include "gmn/synthetic.hpp"

#include <array>
#include <cmath>
#include <numbers>
#include <random>

#include <opencv2/imgproc.hpp>

#include "gmn/errors.hpp"

namespace gmn {
namespace {

constexpr int kSubpixelBits = 4;
constexpr int kPlacementTriesPerInstance = 2000;
constexpr int kPlacementRestarts = 25;

// Base colours per family on the clean background (RGB).
const std::array<cv::Vec3f, kShapeFamilyCount> kPalette = {{
    {0.90f, 0.25f, 0.20f},  // disk
    {0.20f, 0.45f, 0.90f},  // square
    {0.95f, 0.80f, 0.15f},  // triangle
    {0.25f, 0.80f, 0.30f},  // cross
    {0.85f, 0.35f, 0.85f},  // ring
    {0.20f, 0.85f, 0.85f},  // diamond
}};

struct Instance {
  Point centre;
  double size = 0.0;
  double angle = 0.0;  // radians
  ShapeFamily family = ShapeFamily::Disk;
  bool counted = true;
};

std::vector<cv::Point2d> outline(const Instance& inst) {
  const double r = inst.size / 2.0;
  std::vector<cv::Point2d> pts;
  switch (inst.family) {
    case ShapeFamily::Square:
      pts = {{-0.8 * r, -0.8 * r}, {0.8 * r, -0.8 * r}, {0.8 * r, 0.8 * r}, {-0.8 * r, 0.8 * r}};
      break;
    case ShapeFamily::Triangle:
      for (int k = 0; k < 3; ++k) {
        const double a = -std::numbers::pi / 2 + k * 2 * std::numbers::pi / 3;
        pts.emplace_back(r * std::cos(a), r * std::sin(a) + 0.15 * r);
      }
      break;
    case ShapeFamily::Cross: {
      const double t = r / 3.0;
      pts = {{-t, -r}, {t, -r}, {t, -t}, {r, -t}, {r, t},   {t, t},
             {t, r},   {-t, r}, {-t, t}, {-r, t}, {-r, -t}, {-t, -t}};
      break;
    }
    case ShapeFamily::Diamond:
      pts = {{0, -r}, {0.6 * r, 0}, {0, r}, {-0.6 * r, 0}};
      break;
    case ShapeFamily::Disk:
    case ShapeFamily::Ring:
      for (int k = 0; k < 48; ++k) {
        const double a = k * 2 * std::numbers::pi / 48;
        pts.emplace_back(r * std::cos(a), r * std::sin(a));
      }
      break;
  }
  const double c = std::cos(inst.angle), s = std::sin(inst.angle);
  for (auto& p : pts) {
    p = {inst.centre.x + c * p.x - s * p.y, inst.centre.y + s * p.x + c * p.y};
  }
  return pts;
}

BBox bounding_box(const std::vector<cv::Point2d>& pts) {
  double x0 = pts[0].x, x1 = pts[0].x, y0 = pts[0].y, y1 = pts[0].y;
  for (const auto& p : pts) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return {std::floor(x0), std::floor(y0), std::ceil(x1) - std::floor(x0) + 1,
          std::ceil(y1) - std::floor(y0) + 1};
}

void paint(cv::Mat& canvas, const Instance& inst, const cv::Vec3f& colour) {
  cv::Mat1b mask = cv::Mat1b::zeros(canvas.size());
  const auto pts = outline(inst);
  std::vector<cv::Point> fixed;
  for (const auto& p : pts) {
    fixed.emplace_back(static_cast<int>(std::lround(p.x * (1 << kSubpixelBits))),
                       static_cast<int>(std::lround(p.y * (1 << kSubpixelBits))));
  }
  if (inst.family == ShapeFamily::Ring) {
    const int thickness = std::max(2, static_cast<int>(std::lround(inst.size / 6.0)));
    // Stroke centred inside the outer radius.
    Instance inner = inst;
    inner.size = inst.size - thickness;
    std::vector<cv::Point> ring;
    for (const auto& p : outline(inner)) {
      ring.emplace_back(static_cast<int>(std::lround(p.x * (1 << kSubpixelBits))),
                        static_cast<int>(std::lround(p.y * (1 << kSubpixelBits))));
    }
    cv::polylines(mask, std::vector<std::vector<cv::Point>>{ring}, true, 255, thickness, cv::LINE_AA,
                  kSubpixelBits);
  } else {
    cv::fillPoly(mask, std::vector<std::vector<cv::Point>>{fixed}, 255, cv::LINE_AA, kSubpixelBits);
  }
  const cv::Rect roi = cv::boundingRect(mask);
  for (int y = roi.y; y < roi.y + roi.height; ++y) {
    const std::uint8_t* m = mask[y];
    auto* px = canvas.ptr<cv::Vec3f>(y);
    for (int x = roi.x; x < roi.x + roi.width; ++x) {
      const float a = m[x] / 255.0f;
      if (a > 0.0f) px[x] = px[x] * (1.0f - a) + colour * a;
    }
  }
}

cv::Mat background(const SyntheticSceneSpec& spec, std::mt19937_64& rng) {
  cv::Mat canvas(spec.height, spec.width, CV_32FC3);
  if (spec.style == SceneStyle::Clean) {
    std::uniform_real_distribution<float> level(0.40f, 0.55f);
    canvas.setTo(cv::Scalar::all(level(rng)));
    return canvas;
  }
  // Dark, blotchy texture: smoothed noise at two scales.
  cv::Mat1f coarse(spec.height, spec.width), fine(spec.height, spec.width);
  std::normal_distribution<float> n01(0.0f, 1.0f);
  for (int y = 0; y < spec.height; ++y) {
    for (int x = 0; x < spec.width; ++x) {
      coarse(y, x) = n01(rng);
      fine(y, x) = n01(rng);
    }
  }
  cv::GaussianBlur(coarse, coarse, cv::Size(), 12.0);
  cv::GaussianBlur(fine, fine, cv::Size(), 1.5);
  double lo, hi;
  cv::minMaxLoc(coarse, &lo, &hi);
  coarse = (coarse - lo) / std::max(hi - lo, 1e-6);
  for (int y = 0; y < spec.height; ++y) {
    auto* px = canvas.ptr<cv::Vec3f>(y);
    for (int x = 0; x < spec.width; ++x) {
      const float v = 0.12f + 0.22f * coarse(y, x) + 0.10f * fine(y, x);
      px[x] = {v * 0.9f, v, v * 0.8f};
    }
  }
  return canvas;
}

cv::Vec3f instance_colour(const SyntheticSceneSpec& spec, ShapeFamily family, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> jitter(-0.08f, 0.08f);
  cv::Vec3f base = kPalette[static_cast<int>(family)];
  if (spec.style == SceneStyle::Shifted) {
    // Desaturate and pull towards the background.
    const float grey = (base[0] + base[1] + base[2]) / 3.0f;
    base = cv::Vec3f(0.35f + 0.3f * grey, 0.40f + 0.3f * grey, 0.30f + 0.3f * grey) +
           0.25f * (base - cv::Vec3f(grey, grey, grey));
  }
  for (int c = 0; c < 3; ++c) base[c] = std::clamp(base[c] + jitter(rng), 0.0f, 1.0f);
  return base;
}

bool try_place(const SyntheticSceneSpec& spec, std::mt19937_64& rng,
               std::vector<Instance>& placed) {
  const int total = spec.n + spec.distractors;
  std::uniform_real_distribution<double> scale(1.0 - spec.scale_jitter, 1.0 + spec.scale_jitter);
  std::uniform_real_distribution<double> angle(-spec.rotation_jitter_deg, spec.rotation_jitter_deg);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  placed.clear();
  for (int k = 0; k < total; ++k) {
    Instance inst;
    inst.counted = k < spec.n;
    inst.family = inst.counted ? spec.family : spec.distractor_family;
    inst.size = spec.object_size * scale(rng);
    inst.angle = angle(rng) * std::numbers::pi / 180.0;
    const double margin = inst.size / 2.0 + 1.0;
    if (spec.width <= 2 * margin || spec.height <= 2 * margin) return false;
    bool ok = false;
    for (int attempt = 0; attempt < kPlacementTriesPerInstance && !ok; ++attempt) {
      inst.centre = {margin + u01(rng) * (spec.width - 1 - 2 * margin),
                     margin + u01(rng) * (spec.height - 1 - 2 * margin)};
      ok = true;
      for (const Instance& other : placed) {
        if (std::hypot(other.centre.x - inst.centre.x, other.centre.y - inst.centre.y) <
            spec.min_separation) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) return false;
    placed.push_back(inst);
  }
  return true;
}

}  // namespace

std::vector<BoxRecord> SyntheticScene::records() const {
  std::vector<BoxRecord> out;
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    out.push_back({image.source_id, boxes[i], static_cast<int>(i), class_id, 0});
  }
  for (std::size_t i = 0; i < distractor_boxes.size(); ++i) {
    out.push_back({image.source_id, distractor_boxes[i], static_cast<int>(boxes.size() + i),
                   distractor_class_id, 0});
  }
  return out;
}

SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec) {
  if (spec.n < 0 || spec.distractors < 0) throw InvalidArgument("instance counts must be >= 0");
  if (spec.min_separation < 0) throw InvalidArgument("min separation must be >= 0");
  if (spec.width < kExemplarSize || spec.height < kExemplarSize) {
    throw InvalidArgument("canvas must be at least 63x63");
  }
  if (!(spec.object_size > 2.0)) throw InvalidArgument("object size must exceed 2 px");
  if (spec.scale_jitter < 0 || spec.scale_jitter >= 1) throw InvalidArgument("scale jitter in [0,1)");

  std::mt19937_64 rng(spec.seed);
  SyntheticScene scene;
  scene.image.pixels = background(spec, rng);
  scene.image.source_id = "synthetic-" + std::to_string(spec.seed);
  scene.class_id = static_cast<int>(spec.family);
  scene.distractor_class_id = static_cast<int>(spec.distractor_family);

  std::vector<Instance> placed;
  bool ok = false;
  for (int restart = 0; restart < kPlacementRestarts && !ok; ++restart) ok = try_place(spec, rng, placed);
  if (!ok) {
    throw PlacementError("cannot place " + std::to_string(spec.n + spec.distractors) +
                         " instances with separation " + std::to_string(spec.min_separation) +
                         " on a " + std::to_string(spec.width) + "x" + std::to_string(spec.height) +
                         " canvas");
  }

  for (const Instance& inst : placed) {
    paint(scene.image.pixels, inst, instance_colour(spec, inst.family, rng));
    const BBox box = bounding_box(outline(inst));
    if (inst.counted) {
      scene.dots.points.push_back(inst.centre);
      scene.boxes.push_back(box);
    } else {
      scene.distractor_boxes.push_back(box);
    }
  }
  if (!scene.boxes.empty()) scene.dots.object_radius_hint = mean_object_radius(scene.boxes);

  if (spec.noise > 0) {
    cv::Mat noise(scene.image.pixels.size(), CV_32FC3);
    std::normal_distribution<float> n01(0.0f, static_cast<float>(spec.noise));
    for (int y = 0; y < noise.rows; ++y) {
      auto* px = noise.ptr<cv::Vec3f>(y);
      for (int x = 0; x < noise.cols; ++x) px[x] = {n01(rng), n01(rng), n01(rng)};
    }
    scene.image.pixels += noise;
  }
  cv::min(cv::max(scene.image.pixels, 0.0), 1.0, scene.image.pixels);
  return scene;
}

}  // namespace gmn
