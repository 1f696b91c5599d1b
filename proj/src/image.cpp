#include "gmn/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gmn/errors.hpp"

namespace gmn {

void validate_image(const Image& image, int min_side) {
  if (image.empty() || image.pixels.type() != CV_32FC3) {
    throw InvalidArgument("image must be a non-empty CV_32FC3 matrix");
  }
  if (image.height() < min_side || image.width() < min_side) {
    throw InvalidArgument("image is " + std::to_string(image.height()) + "x" +
                          std::to_string(image.width()) + ", need at least " +
                          std::to_string(min_side) + " per side");
  }
  if (!cv::checkRange(image.pixels)) {
    throw InvalidArgument("image contains non-finite values");
  }
}

Image image_from_bgr8(const cv::Mat& bgr, std::string source_id) {
  cv::Mat rgb;
  if (bgr.channels() == 1) {
    cv::cvtColor(bgr, rgb, cv::COLOR_GRAY2RGB);
  } else if (bgr.channels() == 4) {
    cv::cvtColor(bgr, rgb, cv::COLOR_BGRA2RGB);
  } else {
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  }
  Image out;
  const double scale = bgr.depth() == CV_16U ? 1.0 / 65535.0 : 1.0 / 255.0;
  rgb.convertTo(out.pixels, CV_32FC3, scale);
  out.source_id = std::move(source_id);
  return out;
}

cv::Mat image_to_bgr8(const Image& image) {
  cv::Mat bgr;
  cv::cvtColor(image.pixels, bgr, cv::COLOR_RGB2BGR);
  cv::Mat out;
  bgr.convertTo(out, CV_8UC3, 255.0);
  return out;
}

Image load_image(const std::string& path) {
  cv::Mat raw = cv::imread(path, cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw InvalidArgument("cannot decode image " + path);
  return image_from_bgr8(raw, path);
}

Image decode_image(std::span<const std::uint8_t> bytes, std::string source_id) {
  if (bytes.empty()) throw InvalidArgument("empty image payload");
  cv::Mat buffer(1, static_cast<int>(bytes.size()), CV_8U, const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat raw = cv::imdecode(buffer, cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw InvalidArgument("payload is not a decodable PNG/JPEG image");
  return image_from_bgr8(raw, std::move(source_id));
}

void save_image(const Image& image, const std::string& path) {
  if (!cv::imwrite(path, image_to_bgr8(image))) throw Error("cannot write image " + path);
}

Image pad_to_multiple(const Image& image, int multiple, int min_side) {
  auto target = [&](int side) {
    const int padded = (std::max(side, min_side) + multiple - 1) / multiple * multiple;
    return padded;
  };
  const int bottom = target(image.height()) - image.height();
  const int right = target(image.width()) - image.width();
  if (bottom == 0 && right == 0) return image;
  Image out;
  out.source_id = image.source_id;
  cv::copyMakeBorder(image.pixels, out.pixels, 0, bottom, 0, right, cv::BORDER_REPLICATE);
  return out;
}

}  // namespace gmn
