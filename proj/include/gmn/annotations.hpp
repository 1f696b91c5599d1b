#pragma once

#include <optional>
#include <string>
#include <vector>

#include <opencv2/core.hpp>

#include "gmn/image.hpp"

namespace gmn {

struct DotAnnotationSet {
  std::vector<Point> points;
  std::optional<double> object_radius_hint;
};

/// One line of a box-jsonl file. The same record describes video-track
/// annotations when `track_id` and `frame` are meaningful.
struct BoxRecord {
  std::string image;
  BBox box;
  int track_id = -1;
  int class_id = 0;
  int frame = 0;
};

/// Boxes of one image, as used for pair sampling.
struct Frame {
  std::string image_path;
  Image image;  // may be empty; then image_path is loaded on demand
  std::vector<BoxRecord> boxes;
};

struct Manifest {
  std::vector<Frame> frames;
};

/// `x,y` header then one point per row. `bounds` (width x height), when
/// given, rejects points outside the image.
DotAnnotationSet load_dot_csv(const std::string& path, std::optional<cv::Size> bounds = {});
DotAnnotationSet parse_dot_csv(const std::string& text, std::optional<cv::Size> bounds = {});
void save_dot_csv(const DotAnnotationSet& dots, const std::string& path);

std::vector<BoxRecord> load_box_jsonl(const std::string& path, std::optional<cv::Size> bounds = {});
std::vector<BoxRecord> parse_box_jsonl(const std::string& text, std::optional<cv::Size> bounds = {});
void save_box_jsonl(const std::vector<BoxRecord>& records, const std::string& path);

/// Groups box-jsonl records by image. Relative image paths resolve against
/// the manifest's directory.
Manifest load_video_manifest(const std::string& path);

/// Radius estimate for matching tolerance: mean(sqrt(w*h)) / 2.
double mean_object_radius(const std::vector<BBox>& boxes);

}  // namespace gmn
