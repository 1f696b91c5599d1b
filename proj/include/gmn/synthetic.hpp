#pragma once

#include <cstdint>
#include <vector>

#include "gmn/annotations.hpp"
#include "gmn/image.hpp"

namespace gmn {

enum class ShapeFamily { Disk, Square, Triangle, Cross, Ring, Diamond };
inline constexpr int kShapeFamilyCount = 6;

/// Visual domain of the rendered scene. `Shifted` swaps to a textured dark
/// background with desaturated, low-contrast objects.
enum class SceneStyle { Clean, Shifted };

struct SyntheticSceneSpec {
  int width = 320;
  int height = 320;
  int n = 8;
  ShapeFamily family = ShapeFamily::Disk;
  double min_separation = 40.0;
  double object_size = 28.0;       // nominal bounding extent in pixels
  double scale_jitter = 0.15;      // relative, uniform in [1-j, 1+j]
  double rotation_jitter_deg = 30.0;
  int distractors = 0;
  ShapeFamily distractor_family = ShapeFamily::Square;
  double noise = 0.02;
  SceneStyle style = SceneStyle::Clean;
  std::uint64_t seed = 0;
};

struct SyntheticScene {
  Image image;
  DotAnnotationSet dots;          // centres of the n counted instances
  std::vector<BBox> boxes;        // boxes of the counted instances
  std::vector<BBox> distractor_boxes;
  int class_id = 0;               // == static_cast<int>(family)
  int distractor_class_id = 0;

  /// Box records for both instance kinds; track ids are instance indices.
  std::vector<BoxRecord> records() const;
};

/// Deterministic for a fixed spec. Throws PlacementError when the
/// instances cannot be placed at the requested separation.
SyntheticScene generate_synthetic_scene(const SyntheticSceneSpec& spec);

}  // namespace gmn
