#include "gmn/density.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>

#include <nlohmann/json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gmn/errors.hpp"

namespace gmn {
namespace {

constexpr char kMagic[4] = {'G', 'M', 'N', 'D'};
constexpr std::size_t kHeaderBytes = 16;

static_assert(std::endian::native == std::endian::little,
              "GMND serialization assumes a little-endian host");

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
         std::uint32_t(p[3]) << 24;
}

}  // namespace

double DensityMap::sum() const { return values.empty() ? 0.0 : cv::sum(values)[0]; }

cv::Size output_grid_for(int image_height, int image_width) {
  auto cells = [](int side) { return (side + 7) / 8 * 2; };
  return {cells(image_width), cells(image_height)};
}

DensityMap render_gaussian_target(const std::vector<Point>& dots, cv::Size grid,
                                  const GaussianTargetOptions& options) {
  if (!(options.sigma_cells > 0.0)) throw InvalidArgument("sigma must be positive");
  if (!(options.stride > 0.0)) throw InvalidArgument("stride must be positive");
  DensityMap map;
  map.values = cv::Mat1f::zeros(grid.height, grid.width);
  map.stride = options.stride;
  map.offset_x = options.offset;
  map.offset_y = options.offset;

  const double sigma = options.sigma_cells;
  const double norm = options.density_scale / (2.0 * std::numbers::pi * sigma * sigma);
  const int radius = static_cast<int>(std::ceil(5.0 * sigma));
  for (const Point& p : dots) {
    const Point c = map.pixel_to_cell(p);
    const int ci = static_cast<int>(std::lround(c.y));
    const int cj = static_cast<int>(std::lround(c.x));
    for (int i = std::max(0, ci - radius); i <= std::min(grid.height - 1, ci + radius); ++i) {
      const double dy = i - c.y;
      float* row = map.values[i];
      for (int j = std::max(0, cj - radius); j <= std::min(grid.width - 1, cj + radius); ++j) {
        const double dx = j - c.x;
        row[j] += static_cast<float>(norm * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)));
      }
    }
  }
  return map;
}

std::vector<std::uint8_t> encode_gmnd(const DensityMap& map) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(map.rows()));
  put_u32(out, static_cast<std::uint32_t>(map.cols()));
  put_u32(out, 0);
  const std::size_t payload = static_cast<std::size_t>(map.rows()) * map.cols() * sizeof(float);
  out.resize(kHeaderBytes + payload);
  for (int i = 0; i < map.rows(); ++i) {
    std::memcpy(out.data() + kHeaderBytes + std::size_t(i) * map.cols() * sizeof(float),
                map.values[i], map.cols() * sizeof(float));
  }
  return out;
}

DensityMap decode_gmnd(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError("not a GMND density map", 0);
  }
  const std::uint32_t h = get_u32(bytes.data() + 4);
  const std::uint32_t w = get_u32(bytes.data() + 8);
  if (bytes.size() != kHeaderBytes + std::size_t(h) * w * sizeof(float)) {
    throw ParseError("GMND payload size does not match its header", 0);
  }
  DensityMap map;
  map.values = cv::Mat1f(static_cast<int>(h), static_cast<int>(w));
  for (std::uint32_t i = 0; i < h; ++i) {
    std::memcpy(map.values[i], bytes.data() + kHeaderBytes + std::size_t(i) * w * sizeof(float),
                w * sizeof(float));
  }
  return map;
}

void save_gmnd(const DensityMap& map, const std::string& path) {
  const auto bytes = encode_gmnd(map);
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("cannot write " + path);
  nlohmann::json sidecar = {{"stride", map.stride},
                            {"offset", {{"x", map.offset_x}, {"y", map.offset_y}}},
                            {"height", map.rows()},
                            {"width", map.cols()}};
  std::ofstream side(path + ".json");
  side << sidecar.dump(2) << '\n';
}

DensityMap load_gmnd(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFound("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  DensityMap map = decode_gmnd(bytes);
  std::ifstream side(path + ".json");
  if (side) {
    const auto j = nlohmann::json::parse(side);
    map.stride = j.at("stride").get<double>();
    map.offset_x = j.at("offset").at("x").get<double>();
    map.offset_y = j.at("offset").at("y").get<double>();
  }
  return map;
}

std::vector<std::uint8_t> encode_heatmap_png(const DensityMap& map) {
  cv::Mat normalized;
  cv::normalize(map.values, normalized, 0, 255, cv::NORM_MINMAX, CV_8U);
  cv::Mat colour;
  cv::applyColorMap(normalized, colour, cv::COLORMAP_JET);
  std::vector<std::uint8_t> png;
  cv::imencode(".png", colour, png);
  return png;
}

}  // namespace gmn
