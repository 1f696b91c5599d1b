#include "test_support.hpp"

#include <algorithm>
#include <random>

#include <nlohmann/json.hpp>

#include "gmn/counting.hpp"
#include "gmn/errors.hpp"
#include "gmn/model.hpp"

using namespace gmn;

namespace {

DensityMap zeros(int rows, int cols) {
  DensityMap m;
  m.values = cv::Mat1f::zeros(rows, cols);
  return m;
}

// Straightforward reference for maps without ties: strict 8-neighbourhood
// maxima above T, then keep greedily by score.
std::vector<Detection> reference_peaks(const DensityMap& m, double t, double min_distance) {
  std::vector<Detection> cand;
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) {
      const float v = m.values(i, j);
      if (!(v > t)) continue;
      bool best = true;
      for (int di = -1; di <= 1; ++di)
        for (int dj = -1; dj <= 1; ++dj) {
          const int r = i + di, c = j + dj;
          if ((di || dj) && r >= 0 && c >= 0 && r < m.rows() && c < m.cols() && m.values(r, c) >= v) best = false;
        }
      if (best) cand.push_back({m.offset_x + m.stride * j, m.offset_y + m.stride * i, v});
    }
  std::sort(cand.begin(), cand.end(), [](auto& a, auto& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (const auto& c : cand) {
    bool ok = true;
    for (const auto& k : kept) ok &= std::hypot(k.x - c.x, k.y - c.y) >= min_distance;
    if (ok) kept.push_back(c);
  }
  return kept;
}

GmnNetwork tiny_net(std::uint64_t seed) {
  torch::manual_seed(seed);
  GmnNetwork net(model_config_for_width("1/8"));
  net->eval();
  return net;
}

Image noise_image(int w, int h, unsigned seed) {
  Image img;
  img.pixels.create(h, w, CV_32FC3);
  cv::RNG rng(seed);
  rng.fill(img.pixels, cv::RNG::UNIFORM, 0.0, 1.0);
  return img;
}

}  // namespace

TEST_CASE("single bump gives one detection at its centre") {
  const DensityMap m = [] {
    DensityMap d = render_gaussian_target({{4 * 20 + 2, 4 * 12 + 2}}, {40, 30});
    d.values *= 5.0f / static_cast<float>(cv::norm(d.values, cv::NORM_INF));
    return d;
  }();
  const auto set = detect_local_maxima(m, 2.75, 8);
  REQUIRE(set.detections.size() == 1);
  CHECK(std::abs(set.detections[0].x - 82) <= 4);
  CHECK(std::abs(set.detections[0].y - 50) <= 4);
  CHECK(set.detections[0].score == doctest::Approx(5.0));
  CHECK(set.threshold == 2.75);
  CHECK(detect_local_maxima(m, 5.0, 8).detections.empty());
}

TEST_CASE("values at or below the threshold give nothing") {
  DensityMap m = zeros(10, 10);
  m.values.setTo(2.75f);
  CHECK(detect_local_maxima(m, 2.75, 0).detections.empty());
  CHECK(detect_local_maxima(zeros(0, 0), 0, 0).detections.empty());
  CHECK_THROWS_AS(detect_local_maxima(m, 1, -1), InvalidArgument);
}

TEST_CASE("close peaks keep the higher one") {
  DensityMap m = zeros(9, 12);
  m.stride = 1.5;
  m.offset_x = m.offset_y = 0;
  m.values(4, 5) = 4.0f;
  m.values(4, 7) = 6.0f;  // 3 px to the right
  const auto set = detect_local_maxima(m, 1.0, 10);
  REQUIRE(set.detections.size() == 1);
  CHECK(set.detections[0].score == 6.0);
  CHECK(set.detections[0].x == doctest::Approx(10.5));
  CHECK(detect_local_maxima(m, 1.0, 2).detections.size() == 2);
}

TEST_CASE("plateau counts once at its first cell") {
  DensityMap m = zeros(8, 8);
  m.values(3, 4) = m.values(3, 5) = m.values(4, 4) = m.values(4, 5) = 3.0f;
  auto set = detect_local_maxima(m, 1.0, 0);
  REQUIRE(set.detections.size() == 1);
  CHECK(set.detections[0].x == m.cell_to_pixel(3, 4).x);
  CHECK(set.detections[0].y == m.cell_to_pixel(3, 4).y);
  // A higher neighbour disqualifies the whole plateau.
  m.values(5, 6) = 4.0f;
  set = detect_local_maxima(m, 1.0, 0);
  REQUIRE(set.detections.size() == 1);
  CHECK(set.detections[0].score == 4.0);
}

TEST_CASE("local maxima match the reference on random maps") {
  std::mt19937 rng(21);
  std::uniform_real_distribution<float> value(0, 5);
  std::uniform_real_distribution<double> dist(0, 30);
  for (int trial = 0; trial < 300; ++trial) {
    DensityMap m = zeros(12 + trial % 7, 9 + trial % 5);
    for (int i = 0; i < m.rows(); ++i)
      for (int j = 0; j < m.cols(); ++j) m.values(i, j) = value(rng);
    const double t = value(rng), d = dist(rng);
    const auto got = detect_local_maxima(m, t, d).detections;
    const auto want = reference_peaks(m, t, d);
    REQUIRE(got.size() == want.size());
    for (std::size_t k = 0; k < got.size(); ++k) {
      CHECK(got[k].x == want[k].x);
      CHECK(got[k].y == want[k].y);
    }
    for (std::size_t a = 0; a < got.size(); ++a)
      for (std::size_t b = a + 1; b < got.size(); ++b)
        CHECK(std::hypot(got[a].x - got[b].x, got[a].y - got[b].y) >= d);
  }
}

TEST_CASE("raising the threshold never adds detections") {
  std::mt19937 rng(4);
  std::uniform_real_distribution<float> value(0, 5);
  for (int trial = 0; trial < 50; ++trial) {
    DensityMap m = zeros(20, 20);
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j) m.values(i, j) = value(rng);
    std::size_t previous = SIZE_MAX;
    for (double t = 0; t <= 5; t += 0.25) {
      const std::size_t n = detect_local_maxima(m, t, 6).detections.size();
      CHECK(n <= previous);
      previous = n;
    }
  }
}

TEST_CASE("detections map back to their cells") {
  DensityMap m = zeros(30, 30);
  m.stride = 4 / 1.75;
  m.offset_x = m.offset_y = 2 / 1.75;
  m.values(7, 19) = 3.0f;
  const auto d = detect_local_maxima(m, 1, 0).detections.at(0);
  const Point cell = m.pixel_to_cell({d.x, d.y});
  CHECK(cell.x == doctest::Approx(19));
  CHECK(cell.y == doctest::Approx(7));
}

TEST_CASE("integral count") {
  CHECK(integral_count(zeros(16, 16)) == 0.0);
  const DensityMap three = render_gaussian_target({{60, 60}, {140, 60}, {100, 150}}, {64, 64});
  CHECK(integral_count(three) == doctest::Approx(3.0).epsilon(0.02));
  DensityMap art = render_gaussian_target({{130, 130}}, {64, 64});
  art.values(cv::Rect(0, 0, 10, 10)).setTo(-50.0f);
  CHECK(integral_count(art) == doctest::Approx(1.0).epsilon(0.02));
  CHECK_THROWS_AS(integral_count(art, 0.0), InvalidArgument);
}

TEST_CASE("count modes and json") {
  CHECK(count_mode_from_string("localmax") == CountMode::LocalMax);
  CHECK(count_mode_from_string("local-max") == CountMode::LocalMax);
  CHECK(count_mode_from_string("integral") == CountMode::Integral);
  CHECK_THROWS_AS(count_mode_from_string("sum"), InvalidArgument);
  CHECK(to_string(CountMode::Integral) == "integral");

  DensityMap m = render_gaussian_target({{60, 60}, {140, 60}}, {64, 64});
  CountOptions o;
  o.threshold = 1.0;
  auto r = count_from_map(m, o, 12.0);
  CHECK(r.count == 2.0);
  CHECK(r.min_distance == 12.0);
  CHECK(count_from_map(m, o).min_distance == kDefaultMinDistance);
  o.min_distance = 3.0;
  CHECK(count_from_map(m, o, 12.0).min_distance == 3.0);
  o.mode = CountMode::Integral;
  r = count_from_map(m, o);
  CHECK(r.count == doctest::Approx(2.0).epsilon(0.02));
  CHECK(r.detections.empty());

  o.mode = CountMode::LocalMax;
  const nlohmann::json j = count_from_map(m, o);
  CHECK(j["mode"] == "localmax");
  CHECK(j["count"] == 2.0);
  CHECK(j["detections"].size() == 2);
  CHECK(j["detections"][0].get<Detection>().score > 1.0);
}

TEST_CASE("inference map sizes") {
  GmnNetwork net = tiny_net(1);
  const Image patch = noise_image(63, 63, 1);
  CHECK(infer_similarity(*net, noise_image(255, 255, 2), patch).values.size() == cv::Size(64, 64));
  CHECK(infer_similarity(*net, noise_image(1024, 768, 3), patch).values.size() == cv::Size(256, 192));
  const Image img = noise_image(200, 150, 4);
  const DensityMap a = infer_similarity(*net, img, patch);
  const DensityMap b = infer_similarity(*net, img, patch);
  CHECK(cv::norm(a.values, b.values, cv::NORM_INF) == 0.0);
  CHECK_THROWS_AS(infer_similarity(*net, noise_image(50, 100, 5), patch), InvalidArgument);
  CHECK_THROWS_AS(infer_similarity(*net, img, noise_image(64, 64, 6)), InvalidArgument);
}

TEST_CASE("exemplar scale sets the map geometry") {
  GmnNetwork net = tiny_net(2);
  const Image img = noise_image(300, 200, 7);
  // 36x36 box: linear scale 1.75.
  const DensityMap m = similarity_for_exemplar(*net, img, img, {50, 60, 36, 36});
  CHECK(m.stride == doctest::Approx(4 / 1.75));
  CHECK(m.offset_x == doctest::Approx(2 / 1.75));
  CHECK(m.cols() == static_cast<int>(std::ceil(std::ceil(300 * 1.75) / 4)));
  CHECK(m.rows() == static_cast<int>(std::ceil(std::ceil(200 * 1.75) / 4)));
  // A large box shrinks the image; the map still covers it.
  const DensityMap s = similarity_for_exemplar(*net, img, img, {0, 0, 200, 200});
  CHECK(s.cell_to_pixel(s.rows() - 1, s.cols() - 1).x >= 300 - s.stride);
}

TEST_CASE("zero head counts nothing") {
  GmnNetwork net = tiny_net(3);
  {
    torch::NoGradGuard g;
    for (auto& p : net->head->parameters()) p.zero_();
  }
  const Image img = noise_image(160, 160, 8);
  CountOptions o;
  CHECK(count(*net, img, {40, 40, 40, 40}, o).count == 0.0);
  o.mode = CountMode::Integral;
  CHECK(count(*net, img, {40, 40, 40, 40}, o).count == 0.0);
}
