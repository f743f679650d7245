#include <filesystem>

#include "bevloc/dataset.hpp"
#include "bevloc/registration.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bevloc;

namespace {

nn::Tensor random_image(int h, int w, Rng& rng) {
  nn::Tensor t({h, w});
  for (float& v : t.data) v = static_cast<float>(rng.uniform());
  return t;
}

nn::Tensor crop(const nn::Tensor& img, int r0, int c0, int size) {
  nn::Tensor t({size, size});
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) t.at2(r, c) = img.at2(r0 + r, c0 + c);
  return t;
}

}  // namespace

TEST_SUITE("registration") {

TEST_CASE("to_gray applies the luminance weights") {
  nn::Tensor rgb({3, 1, 1});
  rgb.data = {1.0f, 0.5f, 0.25f};
  const nn::Tensor g = reg::to_gray(rgb);
  CHECK(g.data[0] == doctest::Approx(0.299 + 0.587 * 0.5 + 0.114 * 0.25));
}

TEST_CASE("a template equal to a window scores exactly 1 there") {
  Rng rng(1);
  const nn::Tensor region = random_image(40, 40, rng);
  const nn::Tensor tpl = crop(region, 12, 7, 16);
  const reg::ScoreMap m = reg::ncc_map(tpl, {}, region);
  CHECK(m.at(12, 7) == doctest::Approx(1.0).epsilon(1e-6));
  // and it is the global argmax
  double best = -2;
  int br = -1, bc = -1;
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      if (m.at(r, c) > best) {
        best = m.at(r, c);
        br = r;
        bc = c;
      }
  CHECK(br == 12);
  CHECK(bc == 7);
}

TEST_CASE("an anti-correlated template scores -1") {
  Rng rng(2);
  const nn::Tensor region = random_image(30, 30, rng);
  nn::Tensor tpl = crop(region, 5, 5, 10);
  double mean = 0;
  for (float v : tpl.data) mean += v;
  mean /= tpl.numel();
  for (float& v : tpl.data) v = static_cast<float>(-(v - mean));
  const reg::ScoreMap m = reg::ncc_map(tpl, {}, region);
  CHECK(m.at(5, 5) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("NCC is invariant to positive affine intensity changes") {
  Rng rng(3);
  const nn::Tensor region = random_image(32, 32, rng);
  const nn::Tensor tpl = crop(region, 3, 9, 12);
  nn::Tensor scaled = region;
  for (float& v : scaled.data) v = 0.4f * v + 0.3f;
  const reg::ScoreMap a = reg::ncc_map(tpl, {}, region);
  const reg::ScoreMap b = reg::ncc_map(tpl, {}, scaled);
  for (std::size_t i = 0; i < a.scores.size(); ++i)
    CHECK(a.scores[i] == doctest::Approx(b.scores[i]).epsilon(1e-6));
}

TEST_CASE("degenerate constant template is an explicit error") {
  const nn::Tensor tpl = nn::Tensor::full({8, 8}, 0.5f);
  Rng rng(4);
  const nn::Tensor region = random_image(16, 16, rng);
  CHECK_THROWS_AS(reg::ncc_map(tpl, {}, region), Error);
  CHECK_THROWS_AS(reg::ncc_map_fast(tpl, region), Error);
}

TEST_CASE("zero-variance windows score 0") {
  Rng rng(5);
  nn::Tensor region = nn::Tensor::full({24, 24}, 0.7f);
  // one textured corner
  for (int r = 16; r < 24; ++r)
    for (int c = 16; c < 24; ++c) region.at2(r, c) = static_cast<float>(rng.uniform());
  const nn::Tensor tpl = crop(region, 16, 16, 8);
  const reg::ScoreMap m = reg::ncc_map(tpl, {}, region);
  CHECK(m.at(0, 0) == 0.0);
  const reg::ScoreMap f = reg::ncc_map_fast(tpl, region);
  CHECK(f.at(0, 0) == 0.0);
}

TEST_CASE("constant region scores 0 everywhere on the fast path") {
  Rng rng(6);
  const nn::Tensor tpl = random_image(8, 8, rng);
  const nn::Tensor region = nn::Tensor::full({32, 32}, 0.25f);
  const reg::ScoreMap m = reg::ncc_map_fast(tpl, region);
  for (double v : m.scores) CHECK(v == 0.0);
}

TEST_CASE("scores stay within [-1, 1] plus slack") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const int t = 4 + static_cast<int>(rng.uniform_int(12));
    const int R = t + 4 + static_cast<int>(rng.uniform_int(24));
    const nn::Tensor region = random_image(R, R, rng);
    const nn::Tensor tpl = random_image(t, t, rng);
    for (const double v : reg::ncc_map_fast(tpl, region).scores) {
      CHECK(v <= 1.0 + 1e-6);
      CHECK(v >= -1.0 - 1e-6);
    }
  }
}

TEST_CASE("fast path equals the brute-force reference on random cases") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int t = 4 + static_cast<int>(rng.uniform_int(13));
    const int R = t + static_cast<int>(rng.uniform_int(49));
    const nn::Tensor region = random_image(R, R, rng);
    const nn::Tensor tpl = random_image(t, t, rng);
    const reg::ScoreMap ref = reg::ncc_map(tpl, {}, region);
    const reg::ScoreMap fast = reg::ncc_map_fast(tpl, region);
    REQUIRE(ref.rows == fast.rows);
    REQUIRE(ref.cols == fast.cols);
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.scores.size(); ++i)
      worst = std::max(worst, std::abs(ref.scores[i] - fast.scores[i]));
    CHECK(worst < 1e-5);
  }
}

TEST_CASE("the masked fast-path overload falls back on non-rectangular masks") {
  Rng rng(9);
  const nn::Tensor region = random_image(24, 24, rng);
  const nn::Tensor tpl = crop(region, 4, 4, 10);
  std::vector<std::uint8_t> mask(100, 1);
  mask[0] = 0;  // knock out a corner
  const reg::ScoreMap a = reg::ncc_map_fast(tpl, mask, region);
  const reg::ScoreMap b = reg::ncc_map(tpl, mask, region);
  for (std::size_t i = 0; i < a.scores.size(); ++i) CHECK(a.scores[i] == b.scores[i]);
}

TEST_CASE("next_fast_size returns 7-smooth sizes") {
  CHECK(reg::next_fast_size(874) == 875);
  CHECK(reg::next_fast_size(1) == 1);
  CHECK(reg::next_fast_size(97) == 98);
  for (int n : {13, 100, 511, 874}) {
    int s = reg::next_fast_size(n);
    CHECK(s >= n);
    for (int f : {2, 3, 5, 7})
      while (s % f == 0) s /= f;
    CHECK(s == 1);
  }
}

TEST_CASE("rotation by azimuth 0 is the identity with a full mask") {
  Rng rng(10);
  const nn::Tensor img = random_image(33, 33, rng);
  const reg::RotatedTemplate rot = reg::rotate_to_north_up(img, 0.0);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    CHECK(rot.image.data[i] == img.data[i]);
    CHECK(rot.mask[i] == 1);
  }
}

TEST_CASE("the inscribed square of a 224 template is 158 px") {
  CHECK(reg::inscribed_square_side(224) == 158);
  // the crop stays valid for every angle
  Rng rng(11);
  const nn::Tensor img = random_image(224, 224, rng);
  for (double az : {0.3, 1.1, 2.2, -0.7, 3.0}) {
    const reg::RotatedTemplate rot = reg::rotate_to_north_up(img, az);
    const int side = 158, m0 = (224 - side) / 2;
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c)
        CHECK(rot.mask[static_cast<std::size_t>(r + m0) * 224 + (c + m0)] == 1);
  }
}

TEST_CASE("tie-breaking picks the smallest row then column") {
  // two identical copies of the template inside a flat region
  nn::Tensor region = nn::Tensor::full({24, 40}, 0.5f);
  Rng rng(12);
  nn::Tensor tpl = random_image(6, 6, rng);
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c) {
      region.at2(8 + r, 4 + c) = tpl.at2(r, c);
      region.at2(8 + r, 24 + c) = tpl.at2(r, c);
    }
  const reg::ScoreMap m = reg::ncc_map(tpl, {}, region);
  CHECK(m.at(8, 4) == doctest::Approx(m.at(8, 24)).epsilon(1e-12));
  int br = -1, bc = -1;
  double best = -2;
  for (int r = 0; r < m.rows; ++r)
    for (int c = 0; c < m.cols; ++c)
      if (m.at(r, c) > best) {
        best = m.at(r, c);
        br = r;
        bc = c;
      }
  CHECK(br == 8);
  CHECK(bc == 4);
}

namespace {

data::SynthWorld quick_world(std::uint64_t seed) {
  data::SynthConfig cfg;
  cfg.seed = seed;
  cfg.size_m = 180.0;
  cfg.margin_m = 55.0;
  cfg.frames = 12;
  cfg.texture_scale_m = 6.0;
  return data::synth_world(cfg);
}

}  // namespace

TEST_CASE("oracle self-match localizes exactly at an integer-pixel pose") {
  const data::SynthWorld world = quick_world(21);
  // snap a pose onto an integer map pixel, heading north
  geometry::Pose2 pose = world.trajectory[5];
  const auto px = geometry::utm_to_pixel(world.raster.geo, pose);
  geometry::pixel_to_utm(world.raster.geo, std::round(px.row), std::round(px.col),
                         &pose.easting, &pose.northing);
  pose.azimuth = 0.0;
  const nn::Tensor bev = map::crop_rotated(world.raster, pose, 224);
  nn::Tensor rgb = bev;
  reg::LocalizeOptions opt;
  opt.extent_m = 90.0;
  const reg::MatchResult res = reg::localize(rgb, pose, world.raster, opt);
  const double err = std::hypot(res.position.easting - pose.easting,
                                res.position.northing - pose.northing);
  CHECK(err <= 0.5 * world.raster.geo.m_per_px);
  CHECK(res.peak_score > 0.99);
  CHECK_FALSE(res.low_confidence);
}

TEST_CASE("rotated oracle renders localize within a pixel") {
  const data::SynthWorld world = quick_world(22);
  geometry::Pose2 pose = world.trajectory[6];
  pose.azimuth = geometry::kPi / 3;
  const nn::Tensor bev = map::crop_rotated(world.raster, pose, 224);
  reg::LocalizeOptions opt;
  opt.extent_m = 90.0;
  const reg::MatchResult res = reg::localize(bev, pose, world.raster, opt);
  const double err = std::hypot(res.position.easting - pose.easting,
                                res.position.northing - pose.northing);
  CHECK(err <= 1.0 * world.raster.geo.m_per_px);
}

TEST_CASE("noisy oracle renders stay within 3 px over a short run") {
  const data::SynthWorld world = quick_world(23);
  Rng rng(24);
  double worst = 0.0;
  for (std::size_t i = 0; i < world.trajectory.size(); ++i) {
    const nn::Tensor bev = data::oracle_render(world, i, 0.1, 0.02, rng, 224);
    reg::LocalizeOptions opt;
    opt.extent_m = 90.0;
    const reg::MatchResult res = reg::localize(bev, world.trajectory[i], world.raster, opt);
    worst = std::max(worst, std::hypot(res.position.easting - world.trajectory[i].easting,
                                       res.position.northing - world.trajectory[i].northing));
  }
  CHECK(worst <= 3.0 * world.raster.geo.m_per_px);
}

TEST_CASE("the argmax is invariant to positive affine changes of the BEV image") {
  const data::SynthWorld world = quick_world(25);
  const geometry::Pose2 pose = world.trajectory[3];
  const nn::Tensor bev = map::crop_rotated(world.raster, pose, 224);
  nn::Tensor scaled = bev;
  for (float& v : scaled.data) v = 0.55f * v + 0.2f;
  reg::LocalizeOptions opt;
  opt.extent_m = 90.0;
  const reg::MatchResult a = reg::localize(bev, pose, world.raster, opt);
  const reg::MatchResult b = reg::localize(scaled, pose, world.raster, opt);
  CHECK(a.peak_row == b.peak_row);
  CHECK(a.peak_col == b.peak_col);
}

TEST_CASE("reference-path localization with the rotation mask agrees with the fast path") {
  const data::SynthWorld world = quick_world(26);
  geometry::Pose2 pose = world.trajectory[8];
  pose.azimuth = 0.9;
  const nn::Tensor bev = map::crop_rotated(world.raster, pose, 96);
  reg::LocalizeOptions fast{60.0, true};
  reg::LocalizeOptions ref{60.0, false};
  const reg::MatchResult a = reg::localize(bev, pose, world.raster, fast);
  const reg::MatchResult b = reg::localize(bev, pose, world.raster, ref);
  CHECK(std::hypot(a.position.easting - b.position.easting,
                   a.position.northing - b.position.northing) <=
        2.0 * world.raster.geo.m_per_px);
}

TEST_CASE("prior outside the map is rejected") {
  const data::SynthWorld world = quick_world(27);
  nn::Tensor bev({3, 224, 224});
  geometry::Pose2 outside{world.raster.geo.origin_easting - 50.0,
                          world.raster.geo.origin_northing + 50.0, 0.0};
  CHECK_THROWS_AS(reg::localize(bev, outside, world.raster, {}), Error);
}

TEST_CASE("prediction CSV round-trips") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "preds.csv").string();
  std::vector<reg::PredictionRow> rows = {{0.0, 1.5, 2.5, 0.9, true},
                                          {0.333, -7.25, 100.125, -0.4, false}};
  reg::write_predictions_csv(path, rows);
  const auto loaded = reg::read_predictions_csv(path);
  REQUIRE(loaded.size() == 2);
  CHECK(loaded[0].easting == doctest::Approx(1.5));
  CHECK(loaded[1].timestamp == doctest::Approx(0.333));
  CHECK(loaded[1].valid == false);
  fs::remove(path);
}

}  // TEST_SUITE
