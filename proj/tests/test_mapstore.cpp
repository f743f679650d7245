#include <filesystem>
#include <fstream>

#include "bevloc/mapstore.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bevloc;

namespace {

std::string tmp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

map::GeoRaster checkerboard(int n, double m_per_px = 0.229) {
  map::GeoRaster m;
  m.pixels = nn::Tensor({3, n, n});
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        m.pixels.at3(ch, r, c) = static_cast<float>(((r + c + ch) % 2) * 200 + 20) / 255.f;
  m.geo = {1000.0, 2000.0, m_per_px};
  return m;
}

map::GeoRaster noise_map(int n, std::uint64_t seed, double m_per_px = 0.229) {
  map::GeoRaster m;
  m.pixels = nn::Tensor({3, n, n});
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c)
        m.pixels.at3(ch, r, c) =
            static_cast<float>(std::round(255.0 * hash_unit(seed, ch, r * n + c, 0)) / 255.0);
  m.geo = {1000.0, 2000.0, m_per_px};
  return m;
}

}  // namespace

TEST_SUITE("mapstore") {

TEST_CASE("load/save round-trips a quantized raster bit-exactly") {
  const map::GeoRaster original = checkerboard(100);
  const std::string png = tmp_path("map_roundtrip.png");
  const std::string meta = tmp_path("map_roundtrip.json");
  map::save_map(original, png, meta);
  const map::GeoRaster loaded = map::load_map(png, meta);
  REQUIRE(loaded.rows() == 100);
  REQUIRE(loaded.cols() == 100);
  CHECK(loaded.geo.m_per_px == doctest::Approx(0.229));
  // 100 px at 0.229 m/px spans 22.9 m
  CHECK(loaded.cols() * loaded.geo.m_per_px == doctest::Approx(22.9));
  for (std::size_t i = 0; i < original.pixels.data.size(); ++i)
    CHECK(loaded.pixels.data[i] == original.pixels.data[i]);

  // save again: byte-identical files
  const std::string png2 = tmp_path("map_roundtrip2.png");
  map::save_map(loaded, png2, tmp_path("map_roundtrip2.json"));
  std::ifstream a(png, std::ios::binary), b(png2, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)), {});
  const std::string bytes_b((std::istreambuf_iterator<char>(b)), {});
  CHECK(bytes_a == bytes_b);
}

TEST_CASE("missing metadata keys produce a load error") {
  const std::string png = tmp_path("map_meta.png");
  const std::string meta = tmp_path("map_meta.json");
  map::save_map(checkerboard(16), png, meta);
  {
    std::ofstream os(meta);
    os << R"({"origin_easting": 1.0, "origin_northing": 2.0})";
  }
  CHECK_THROWS_AS(map::load_map(png, meta), Error);
}

TEST_CASE("azimuth-0 crop at an integer center is an exact sub-array copy") {
  const map::GeoRaster m = noise_map(64, 1);
  // center on pixel (31, 31)
  const geometry::Pose2 center{m.geo.origin_easting + 31 * m.geo.m_per_px,
                               m.geo.origin_northing - 31 * m.geo.m_per_px, 0.0};
  const int out = 21;
  const nn::Tensor crop = map::crop_rotated(m, center, out);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < out; ++r)
      for (int c = 0; c < out; ++c)
        CHECK(crop.at3(ch, r, c) == m.pixels.at3(ch, 31 - out / 2 + r, 31 - out / 2 + c));
}

TEST_CASE("azimuth pi on a symmetric pattern equals the azimuth-0 crop") {
  // build a 180-degree symmetric pattern around the center pixel
  map::GeoRaster m = checkerboard(41);
  const int n = 41;
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < n; ++c) {
        const float v = m.pixels.at3(ch, r, c);
        m.pixels.at3(ch, n - 1 - r, n - 1 - c) = v;
      }
  const geometry::Pose2 base{m.geo.origin_easting + 20 * m.geo.m_per_px,
                             m.geo.origin_northing - 20 * m.geo.m_per_px, 0.0};
  geometry::Pose2 flipped = base;
  flipped.azimuth = geometry::kPi;
  const nn::Tensor a = map::crop_rotated(m, base, 15);
  const nn::Tensor b = map::crop_rotated(m, flipped, 15);
  for (std::size_t i = 0; i < a.data.size(); ++i)
    CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-6));
}

TEST_CASE("azimuth pi/2 matches the quarter-turn array oracle on the interior") {
  const map::GeoRaster m = noise_map(64, 2);
  const geometry::Pose2 base{m.geo.origin_easting + 31 * m.geo.m_per_px,
                             m.geo.origin_northing - 31 * m.geo.m_per_px, 0.0};
  geometry::Pose2 turned = base;
  turned.azimuth = geometry::kPi / 2;
  const int out = 17;
  const nn::Tensor a = map::crop_rotated(m, base, out);
  const nn::Tensor b = map::crop_rotated(m, turned, out);
  const nn::Tensor expect = oracles::rotate90_ccw(a);
  for (int ch = 0; ch < 3; ++ch)
    for (int r = 1; r < out - 1; ++r)
      for (int c = 1; c < out - 1; ++c)
        CHECK(b.at3(ch, r, c) == doctest::Approx(expect.at3(ch, r, c)).epsilon(1e-6));
}

TEST_CASE("pixels sampled outside the raster are zero") {
  const map::GeoRaster m = noise_map(16, 3);
  const geometry::Pose2 outside{m.geo.origin_easting, m.geo.origin_northing, 0.0};
  const nn::Tensor crop = map::crop_rotated(m, outside, 9);  // top-left corner
  CHECK(crop.at3(0, 0, 0) == 0.0f);  // above-left of the raster
}

TEST_CASE("label_for_pose delegates to crop_rotated") {
  const map::GeoRaster m = noise_map(128, 4);
  const geometry::Pose2 pose{m.geo.origin_easting + 60 * m.geo.m_per_px,
                             m.geo.origin_northing - 70 * m.geo.m_per_px, 0.83};
  const nn::Tensor a = map::label_for_pose(m, pose, 32);
  const nn::Tensor b = map::crop_rotated(m, pose, 32);
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == b.data[i]);
}

TEST_CASE("search_region reproduces the published pixel counts") {
  const map::GeoRaster m = noise_map(1200, 5);
  const geometry::Pose2 prior{m.geo.origin_easting + 600 * m.geo.m_per_px,
                              m.geo.origin_northing - 600 * m.geo.m_per_px, 0.4};
  const map::SearchRegion r200 = map::search_region(m, prior, 200.0);
  CHECK(r200.size_px == 874);
  const map::SearchRegion r100 = map::search_region(m, prior, 100.0);
  CHECK(r100.size_px == 437);
}

TEST_CASE("search_region geo round-trips its center to the prior within half a pixel") {
  const map::GeoRaster m = noise_map(600, 6);
  Rng rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    const geometry::Pose2 prior{m.geo.origin_easting + rng.uniform(150, 450) * m.geo.m_per_px,
                                m.geo.origin_northing - rng.uniform(150, 450) * m.geo.m_per_px,
                                rng.uniform(-3, 3)};
    const map::SearchRegion region = map::search_region(m, prior, 50.0);
    const double center = 0.5 * (region.size_px - 1);
    double e, n;
    geometry::pixel_to_utm(region.geo, center, center, &e, &n);
    CHECK(std::abs(e - prior.easting) <= 0.5 * m.geo.m_per_px + 1e-9);
    CHECK(std::abs(n - prior.northing) <= 0.5 * m.geo.m_per_px + 1e-9);
  }
}

TEST_CASE("search_region zero-pads beyond the raster and copies pixels inside") {
  const map::GeoRaster m = noise_map(64, 8);
  const geometry::Pose2 corner{m.geo.origin_easting + 2 * m.geo.m_per_px,
                               m.geo.origin_northing - 2 * m.geo.m_per_px, 0.0};
  const map::SearchRegion region = map::search_region(m, corner, 10.0);
  // top-left of the region is outside the raster
  CHECK(region.pixels.at3(0, 0, 0) == 0.0f);
  // its center matches the raster content at the prior
  const double center = 0.5 * (region.size_px - 1);
  const auto px = geometry::utm_to_pixel(region.geo, corner);
  const int rr = static_cast<int>(std::lround(px.row));
  const int cc = static_cast<int>(std::lround(px.col));
  CHECK(region.pixels.at3(1, rr, cc) == m.pixels.at3(1, 2, 2));
  (void)center;
}

}  // TEST_SUITE
