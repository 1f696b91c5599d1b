#include "gmn/annotations.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gmn/errors.hpp"

namespace gmn {
namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw NotFound("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

double parse_number(std::string_view field, std::size_t line, const char* name) {
  field = trim(field);
  double value = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(value)) {
    throw ParseError("field '" + std::string(name) + "' is not a number: '" + std::string(field) + "'",
                     line);
  }
  return value;
}

void check_point(Point p, const std::optional<cv::Size>& bounds, std::size_t line) {
  if (!bounds) return;
  if (p.x < 0 || p.y < 0 || p.x >= bounds->width || p.y >= bounds->height) {
    throw ValidationError("point (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                          ") outside image bounds at line " + std::to_string(line));
  }
}

}  // namespace

DotAnnotationSet parse_dot_csv(const std::string& text, std::optional<cv::Size> bounds) {
  DotAnnotationSet dots;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  bool header_seen = false;
  while (std::getline(in, raw)) {
    ++line;
    std::string_view row = trim(raw);
    if (row.empty()) continue;
    if (!header_seen) {
      std::string compact;
      for (char c : row) {
        if (!std::isspace(static_cast<unsigned char>(c))) compact += static_cast<char>(std::tolower(c));
      }
      if (compact != "x,y") throw ParseError("expected header 'x,y'", line);
      header_seen = true;
      continue;
    }
    const auto comma = row.find(',');
    if (comma == std::string_view::npos || row.find(',', comma + 1) != std::string_view::npos) {
      throw ParseError("expected two comma-separated fields", line);
    }
    const Point p{parse_number(row.substr(0, comma), line, "x"),
                  parse_number(row.substr(comma + 1), line, "y")};
    check_point(p, bounds, line);
    dots.points.push_back(p);
  }
  if (!header_seen) throw ParseError("missing 'x,y' header", 1);
  return dots;
}

DotAnnotationSet load_dot_csv(const std::string& path, std::optional<cv::Size> bounds) {
  return parse_dot_csv(read_file(path), bounds);
}

void save_dot_csv(const DotAnnotationSet& dots, const std::string& path) {
  std::ofstream out(path);
  out << "x,y\n";
  out.precision(10);
  for (const Point& p : dots.points) out << p.x << ',' << p.y << '\n';
  if (!out) throw Error("cannot write " + path);
}

std::vector<BoxRecord> parse_box_jsonl(const std::string& text, std::optional<cv::Size> bounds) {
  std::vector<BoxRecord> records;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    if (trim(raw).empty()) continue;
    BoxRecord r;
    try {
      const auto j = nlohmann::json::parse(raw);
      r.image = j.value("image", std::string{});
      r.box = {j.at("x").get<double>(), j.at("y").get<double>(), j.at("w").get<double>(),
               j.at("h").get<double>()};
      r.track_id = j.value("track_id", -1);
      r.class_id = j.value("class_id", 0);
      r.frame = j.value("frame", 0);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed box record: ") + e.what(), line);
    }
    if (!(r.box.w > 0) || !(r.box.h > 0)) throw ParseError("box width/height must be positive", line);
    if (bounds && !r.box.intersects(bounds->width, bounds->height)) {
      throw ValidationError("box outside image bounds at line " + std::to_string(line));
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::vector<BoxRecord> load_box_jsonl(const std::string& path, std::optional<cv::Size> bounds) {
  return parse_box_jsonl(read_file(path), bounds);
}

void save_box_jsonl(const std::vector<BoxRecord>& records, const std::string& path) {
  std::ofstream out(path);
  for (const BoxRecord& r : records) {
    nlohmann::json j = {{"image", r.image}, {"x", r.box.x},        {"y", r.box.y},
                        {"w", r.box.w},     {"h", r.box.h},        {"track_id", r.track_id},
                        {"class_id", r.class_id}, {"frame", r.frame}};
    out << j.dump() << '\n';
  }
  if (!out) throw Error("cannot write " + path);
}

Manifest load_video_manifest(const std::string& path) {
  const auto records = load_box_jsonl(path);
  const std::filesystem::path base = std::filesystem::path(path).parent_path();
  Manifest manifest;
  std::map<std::string, std::size_t> index;
  for (const BoxRecord& r : records) {
    if (r.image.empty()) throw ParseError("manifest record without image path", 0);
    auto [it, inserted] = index.try_emplace(r.image, manifest.frames.size());
    if (inserted) {
      Frame frame;
      const std::filesystem::path p(r.image);
      frame.image_path = p.is_absolute() ? p.string() : (base / p).string();
      manifest.frames.push_back(std::move(frame));
    }
    manifest.frames[it->second].boxes.push_back(r);
  }
  return manifest;
}

double mean_object_radius(const std::vector<BBox>& boxes) {
  if (boxes.empty()) throw InvalidArgument("cannot estimate a radius without boxes");
  double total = 0.0;
  for (const BBox& b : boxes) total += std::sqrt(b.w * b.h);
  return total / static_cast<double>(boxes.size()) / 2.0;
}

}  // namespace gmn
