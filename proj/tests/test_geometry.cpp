#include <cmath>

#include "bevloc/geometry.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace bevloc;
using geometry::BevGridSpec;
using geometry::Pose2;
using geometry::PoseDelta;

TEST_SUITE("geometry") {

TEST_CASE("wrap_angle stays in [-pi, pi)") {
  CHECK(geometry::wrap_angle(0.0) == doctest::Approx(0.0));
  CHECK(geometry::wrap_angle(geometry::kPi) == doctest::Approx(-geometry::kPi));
  CHECK(geometry::wrap_angle(-geometry::kPi) == doctest::Approx(-geometry::kPi));
  CHECK(geometry::wrap_angle(3.0 * geometry::kPi) == doctest::Approx(-geometry::kPi));
  Rng rng(3);
  for (int i = 0; i < 200; ++i) {
    const double w = geometry::wrap_angle(rng.uniform(-50.0, 50.0));
    CHECK(w >= -geometry::kPi);
    CHECK(w < geometry::kPi);
  }
}

TEST_CASE("pose_delta of identical poses is zero") {
  const Pose2 p{312.5, -77.25, 1.234};
  const PoseDelta d = geometry::pose_delta(p, p);
  CHECK(d.dx == 0.0);
  CHECK(d.dy == 0.0);
  CHECK(d.dtheta == 0.0);
}

TEST_CASE("pure translation preserves the norm") {
  const Pose2 prev{0, 0, 0};
  const Pose2 cur{2, 0, 0};
  const PoseDelta d = geometry::pose_delta(cur, prev);
  CHECK(std::hypot(d.dx, d.dy) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(d.dtheta == 0.0);
  // moving east while heading north is motion to the vehicle's right
  CHECK(d.dy == doctest::Approx(-2.0));
}

TEST_CASE("pose_delta matches the homogeneous-matrix oracle") {
  const Pose2 prev{100, 50, geometry::kPi / 2};
  const Pose2 cur{100, 52, geometry::kPi / 2};
  const PoseDelta d = geometry::pose_delta(cur, prev);
  const auto o = oracles::pose_delta_matrix(cur.easting, cur.northing, cur.azimuth, prev.easting,
                                            prev.northing, prev.azimuth);
  CHECK(d.dx == doctest::Approx(o.dx).epsilon(1e-12));
  CHECK(d.dy == doctest::Approx(o.dy).epsilon(1e-12));
  CHECK(d.dtheta == doctest::Approx(o.dtheta).epsilon(1e-12));

  Rng rng(11);
  for (int i = 0; i < 100; ++i) {
    const Pose2 a{rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(-3.1, 3.1)};
    const Pose2 b{rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(-3.1, 3.1)};
    const PoseDelta dd = geometry::pose_delta(a, b);
    const auto oo = oracles::pose_delta_matrix(a.easting, a.northing, a.azimuth, b.easting,
                                               b.northing, b.azimuth);
    CHECK(dd.dx == doctest::Approx(oo.dx).epsilon(1e-9));
    CHECK(dd.dy == doctest::Approx(oo.dy).epsilon(1e-9));
    CHECK(std::abs(geometry::wrap_angle(dd.dtheta - oo.dtheta)) < 1e-9);
  }
}

TEST_CASE("pose_delta rejects non-finite inputs") {
  const Pose2 bad{std::nan(""), 0, 0};
  CHECK_THROWS_AS(geometry::pose_delta(bad, Pose2{}), Error);
}

TEST_CASE("warp_grid identity maps every cell to itself") {
  BevGridSpec spec;
  const geometry::SampleGrid g = geometry::warp_grid(spec, PoseDelta{0, 0, 0});
  for (int r = 0; r < spec.cells_l; ++r)
    for (int c = 0; c < spec.cells_w; ++c) {
      const int i = r * spec.cells_w + c;
      CHECK(g.row_at(i) == static_cast<double>(r));
      CHECK(g.col_at(i) == static_cast<double>(c));
      CHECK(g.in_bounds[static_cast<std::size_t>(i)]);
    }
}

TEST_CASE("warp_grid unit forward translation shifts one cell") {
  BevGridSpec spec;
  const geometry::SampleGrid g =
      geometry::warp_grid(spec, PoseDelta{spec.cell_l(), 0.0, 0.0});
  for (int r = 0; r < spec.cells_l; ++r)
    for (int c = 0; c < spec.cells_w; ++c) {
      const int i = r * spec.cells_w + c;
      CHECK(g.row_at(i) == doctest::Approx(r - 1.0).epsilon(1e-12));
      CHECK(g.col_at(i) == doctest::Approx(static_cast<double>(c)).epsilon(1e-12));
    }
}

TEST_CASE("warp then relative inverse composes to the identity map") {
  BevGridSpec spec;
  const PoseDelta d{1.3, -0.7, 0.2};
  geometry::PoseDelta inv = geometry::inverse_delta(d);
  const geometry::SampleGrid g1 = geometry::warp_grid(spec, d);
  const geometry::SampleGrid g2 = geometry::warp_grid(spec, inv);

  // affine extension of g1 evaluated at g2's continuous outputs
  const double s00r = g1.row_at(0), s00c = g1.col_at(0);
  const double drr = g1.row_at(spec.cells_w) - s00r;   // d(source)/d(target row)
  const double drc = g1.col_at(spec.cells_w) - s00c;
  const double dcr = g1.row_at(1) - s00r;              // d(source)/d(target col)
  const double dcc = g1.col_at(1) - s00c;
  for (int r = 2; r < spec.cells_l - 2; ++r)
    for (int c = 2; c < spec.cells_w - 2; ++c) {
      const int i = r * spec.cells_w + c;
      const double mr = g2.row_at(i), mc = g2.col_at(i);
      const double rr = s00r + mr * drr + mc * dcr;
      const double cc = s00c + mr * drc + mc * dcc;
      CHECK(rr == doctest::Approx(static_cast<double>(r)).epsilon(1e-9));
      CHECK(cc == doctest::Approx(static_cast<double>(c)).epsilon(1e-9));
    }
}

TEST_CASE("bilinear_sample basics") {
  nn::Tensor64 f = nn::Tensor64::from({1, 2, 2}, {0, 1, 2, 3});
  geometry::SampleGrid g;
  g.rows = 1;
  g.cols = 1;
  g.pts = {0.5, 0.5};
  g.in_bounds = {1};
  CHECK(geometry::bilinear_sample(f, g).data[0] == doctest::Approx(1.5));
  g.pts = {0.0, 1.0};
  CHECK(geometry::bilinear_sample(f, g).data[0] == 1.0);  // exact at integers
}

TEST_CASE("bilinear_sample matches the scalar-loop oracle") {
  Rng rng(21);
  nn::Tensor64 f = oracles::random_tensor({3, 8, 8}, rng);
  geometry::SampleGrid g;
  g.rows = 50;
  g.cols = 1;
  for (int i = 0; i < 50; ++i) {
    g.pts.push_back(rng.uniform(-1.5, 8.5));
    g.pts.push_back(rng.uniform(-1.5, 8.5));
    g.in_bounds.push_back(1);
  }
  const nn::Tensor64 y = geometry::bilinear_sample(f, g);
  for (int ch = 0; ch < 3; ++ch)
    for (int i = 0; i < 50; ++i)
      CHECK(y.at3(ch, i, 0) ==
            doctest::Approx(oracles::bilinear_scalar(f, ch, g.pts[2 * i], g.pts[2 * i + 1]))
                .epsilon(1e-12));
}

TEST_CASE("bilinear_sample is linear in the feature argument") {
  Rng rng(22);
  nn::Tensor64 f = oracles::random_tensor({2, 6, 6}, rng);
  nn::Tensor64 g2 = oracles::random_tensor({2, 6, 6}, rng);
  geometry::SampleGrid grid;
  grid.rows = 20;
  grid.cols = 1;
  for (int i = 0; i < 20; ++i) {
    grid.pts.push_back(rng.uniform(-0.5, 6.0));
    grid.pts.push_back(rng.uniform(-0.5, 6.0));
    grid.in_bounds.push_back(1);
  }
  const double a = 0.7, b = -1.3;
  nn::Tensor64 combo = f;
  for (std::size_t i = 0; i < combo.data.size(); ++i)
    combo.data[i] = a * f.data[i] + b * g2.data[i];
  const nn::Tensor64 ys = geometry::bilinear_sample(combo, grid);
  const nn::Tensor64 yf = geometry::bilinear_sample(f, grid);
  const nn::Tensor64 yg = geometry::bilinear_sample(g2, grid);
  for (std::size_t i = 0; i < ys.data.size(); ++i)
    CHECK(ys.data[i] == doctest::Approx(a * yf.data[i] + b * yg.data[i]).epsilon(1e-12));
}

namespace {

// camera at `pos` looking along vehicle +x, image right = vehicle right
geometry::CameraModel axis_camera(double px, double py, double pz) {
  geometry::CameraModel cam;
  cam.fx = cam.fy = 100.0;
  cam.cx = cam.cy = 63.5;
  cam.image_w = cam.image_h = 128;
  const double rows[3][3] = {{0, -1, 0}, {0, 0, -1}, {1, 0, 0}};
  const double c[3] = {px, py, pz};
  for (int r = 0; r < 3; ++r) {
    double t = 0.0;
    for (int k = 0; k < 3; ++k) {
      cam.extrinsic[static_cast<std::size_t>(4 * r + k)] = rows[r][k];
      t += rows[r][k] * c[k];
    }
    cam.extrinsic[static_cast<std::size_t>(4 * r + 3)] = -t;
  }
  cam.extrinsic[12] = cam.extrinsic[13] = cam.extrinsic[14] = 0;
  cam.extrinsic[15] = 1;
  return cam;
}

}  // namespace

TEST_CASE("project_bev_points puts on-axis cells at the principal point") {
  BevGridSpec spec;
  spec.cells_l = 3;
  spec.cells_w = 3;
  spec.cells_h = 1;
  spec.length_m = 3;
  spec.width_m = 3;
  spec.height_m = 1;
  // center cell center is (0, 0, 0.5); put the camera 5 m behind it on-axis
  const geometry::CameraModel cam = axis_camera(-5.0, 0.0, 0.5);
  const geometry::ProjectedPoints pp = geometry::project_bev_points(spec, cam);
  const int center = (1 * 3 + 1) * 1;
  CHECK(pp.valid[static_cast<std::size_t>(center)]);
  CHECK(pp.pts[2 * static_cast<std::size_t>(center)] == doctest::Approx(63.5).epsilon(1e-12));
  CHECK(pp.pts[2 * static_cast<std::size_t>(center) + 1] == doctest::Approx(63.5).epsilon(1e-12));
}

TEST_CASE("points behind the camera are masked invalid") {
  BevGridSpec spec;
  spec.cells_l = 3;
  spec.cells_w = 3;
  spec.cells_h = 1;
  spec.length_m = 3;
  spec.width_m = 3;
  spec.height_m = 1;
  const geometry::CameraModel cam = axis_camera(5.0, 0.0, 0.5);  // all cells behind
  const geometry::ProjectedPoints pp = geometry::project_bev_points(spec, cam);
  for (auto v : pp.valid) CHECK_FALSE(v);
}

TEST_CASE("projection matches a homogeneous matrix oracle") {
  BevGridSpec spec;
  const geometry::CameraModel cam = axis_camera(-16.0, 0.3, 1.1);
  const geometry::ProjectedPoints pp = geometry::project_bev_points(spec, cam);
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    const int r = static_cast<int>(rng.uniform_int(spec.cells_l));
    const int c = static_cast<int>(rng.uniform_int(spec.cells_w));
    const int z = static_cast<int>(rng.uniform_int(spec.cells_h));
    const auto p = geometry::cell_center(spec, r, c, z);
    double cam_p[4] = {0, 0, 0, 0};
    for (int i = 0; i < 4; ++i)
      for (int k = 0; k < 4; ++k)
        cam_p[i] += cam.extrinsic[static_cast<std::size_t>(4 * i + k)] *
                    (k < 3 ? p[static_cast<std::size_t>(k)] : 1.0);
    const int idx = (r * spec.cells_w + c) * spec.cells_h + z;
    if (cam_p[2] > geometry::kMinProjectionDepth) {
      const double u = cam.fx * cam_p[0] / cam_p[2] + cam.cx;
      const double v = cam.fy * cam_p[1] / cam_p[2] + cam.cy;
      CHECK(pp.pts[2 * static_cast<std::size_t>(idx)] == doctest::Approx(v).epsilon(1e-9));
      CHECK(pp.pts[2 * static_cast<std::size_t>(idx) + 1] == doctest::Approx(u).epsilon(1e-9));
    } else {
      CHECK_FALSE(pp.valid[static_cast<std::size_t>(idx)]);
    }
  }
}

TEST_CASE("singular extrinsic rejected") {
  geometry::CameraModel cam = axis_camera(0, 0, 0);
  cam.extrinsic[0] = 2.0;  // breaks orthonormality
  CHECK_THROWS_AS(cam.validate(), Error);
}

TEST_CASE("utm/pixel conversions reproduce the production constants") {
  geometry::GeoTransform gt{590000.0, 4478000.0, 0.229};
  const auto origin = geometry::utm_to_pixel(gt, 590000.0, 4478000.0);
  CHECK(origin.row == 0.0);
  CHECK(origin.col == 0.0);

  // 25.648 m east of the origin is 112 px; 51.296 m is 224 px
  CHECK(geometry::utm_to_pixel(gt, 590000.0 + 25.648, 4478000.0).col ==
        doctest::Approx(112.0).epsilon(1e-9));
  CHECK(geometry::utm_to_pixel(gt, 590000.0 + 51.296, 4478000.0).col ==
        doctest::Approx(224.0).epsilon(1e-9));

  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    const double e = 590000.0 + rng.uniform(-4000, 4000);
    const double n = 4478000.0 + rng.uniform(-4000, 4000);
    const auto px = geometry::utm_to_pixel(gt, e, n);
    double e2, n2;
    geometry::pixel_to_utm(gt, px.row, px.col, &e2, &n2);
    CHECK(e2 == doctest::Approx(e).epsilon(1e-12));
    CHECK(n2 == doctest::Approx(n).epsilon(1e-12));
  }
}

TEST_CASE("meters_to_px_ceil reproduces the 874 px search region") {
  geometry::GeoTransform gt{0, 0, 0.229};
  CHECK(geometry::meters_to_px_ceil(gt, 200.0) == 874);
  CHECK(geometry::meters_to_px_ceil(gt, 0.0) == 0);
  CHECK(geometry::meters_to_px_ceil(gt, 100.0) == 437);  // ceil(436.68)
  CHECK_THROWS_AS(geometry::meters_to_px_ceil(gt, -1.0), Error);
}

TEST_CASE("default grid spec yields the production cell size") {
  BevGridSpec spec;
  CHECK(spec.cell_l() == doctest::Approx(0.916).epsilon(1e-12));
  CHECK(spec.cell_w() == doctest::Approx(0.916).epsilon(1e-12));
  CHECK(spec.cell_h() == doctest::Approx(0.4).epsilon(1e-12));
}

}  // TEST_SUITE
