#include "bevloc/geometry.hpp"

#include <cmath>

namespace bevloc::geometry {

namespace {

// keeps zero-delta warps at exactly integer coordinates despite the metric
// round trip through cell units
double snap_cell(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

double wrap_angle(double a) {
  if (!std::isfinite(a)) throw Error("wrap_angle: non-finite angle");
  double r = std::fmod(a + kPi, 2.0 * kPi);
  if (r < 0.0) r += 2.0 * kPi;
  return r - kPi;
}

bool Pose2::finite() const {
  return std::isfinite(easting) && std::isfinite(northing) && std::isfinite(azimuth);
}

PoseDelta pose_delta(const Pose2& current, const Pose2& previous) {
  if (!current.finite() || !previous.finite()) throw Error("pose_delta: non-finite pose");
  const double te = current.easting - previous.easting;
  const double tn = current.northing - previous.northing;
  const double s = std::sin(previous.azimuth);
  const double c = std::cos(previous.azimuth);
  // previous-frame axes in UTM: forward (sin a, cos a), left (-cos a, sin a)
  PoseDelta d;
  d.dx = te * s + tn * c;
  d.dy = -te * c + tn * s;
  d.dtheta = wrap_angle(current.azimuth - previous.azimuth);
  return d;
}

PoseDelta inverse_delta(const PoseDelta& d) {
  // Delta of the swapped pose pair: rotate the negated translation into the
  // other frame.
  const double c = std::cos(d.dtheta);
  const double s = std::sin(d.dtheta);
  PoseDelta inv;
  inv.dx = -(c * d.dx - s * d.dy);
  inv.dy = -(s * d.dx + c * d.dy);
  inv.dtheta = wrap_angle(-d.dtheta);
  return inv;
}

void BevGridSpec::validate() const {
  if (cells_l < 1 || cells_w < 1 || cells_h < 1) throw Error("BevGridSpec: cell counts must be >= 1");
  if (!(cell_l() > 0.0) || !(cell_w() > 0.0) || !(cell_h() > 0.0))
    throw Error("BevGridSpec: cell sizes must be strictly positive");
}

SampleGrid warp_grid(const BevGridSpec& spec, const PoseDelta& delta) {
  spec.validate();
  const int rows = spec.cells_l;
  const int cols = spec.cells_w;
  const double cr = 0.5 * (rows - 1);
  const double cc = 0.5 * (cols - 1);
  const double cl = spec.cell_l();
  const double cw = spec.cell_w();
  // source = R(-dtheta) * target + (dx, dy), in vehicle-frame meters
  const double c = std::cos(delta.dtheta);
  const double s = std::sin(delta.dtheta);

  SampleGrid g;
  g.rows = rows;
  g.cols = cols;
  g.pts.resize(static_cast<std::size_t>(rows) * cols * 2);
  g.in_bounds.resize(static_cast<std::size_t>(rows) * cols);
  std::size_t i = 0;
  for (int r = 0; r < rows; ++r) {
    const double x_fwd = (cr - r) * cl;
    for (int col = 0; col < cols; ++col, ++i) {
      const double y_left = (cc - col) * cw;
      const double xs = c * x_fwd + s * y_left + delta.dx;
      const double ys = -s * x_fwd + c * y_left + delta.dy;
      const double sr = snap_cell(cr - xs / cl);
      const double sc = snap_cell(cc - ys / cw);
      g.pts[2 * i] = sr;
      g.pts[2 * i + 1] = sc;
      g.in_bounds[i] = sr >= 0.0 && sr <= rows - 1 && sc >= 0.0 && sc <= cols - 1;
    }
  }
  return g;
}

void CameraModel::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw Error("CameraModel: focal lengths must be positive");
  if (image_w < 1 || image_h < 1) throw Error("CameraModel: image dimensions must be >= 1");
  // rotation block orthonormal to 1e-6
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k)
        dot += extrinsic[static_cast<std::size_t>(4 * k + i)] *
               extrinsic[static_cast<std::size_t>(4 * k + j)];
      const double expect = i == j ? 1.0 : 0.0;
      if (std::abs(dot - expect) > 1e-6)
        throw Error("CameraModel: extrinsic rotation block is not orthonormal");
    }
  }
}

std::array<double, 3> cell_center(const BevGridSpec& spec, int row, int col, int level) {
  const double cr = 0.5 * (spec.cells_l - 1);
  const double cc = 0.5 * (spec.cells_w - 1);
  return {(cr - row) * spec.cell_l(), (cc - col) * spec.cell_w(),
          (level + 0.5) * spec.cell_h()};
}

ProjectedPoints project_bev_points(const BevGridSpec& spec, const CameraModel& cam) {
  spec.validate();
  cam.validate();
  ProjectedPoints out;
  out.count = spec.cells_l * spec.cells_w * spec.cells_h;
  out.pts.resize(static_cast<std::size_t>(out.count) * 2);
  out.valid.resize(static_cast<std::size_t>(out.count));
  std::size_t i = 0;
  for (int r = 0; r < spec.cells_l; ++r) {
    for (int c = 0; c < spec.cells_w; ++c) {
      for (int z = 0; z < spec.cells_h; ++z, ++i) {
        const auto p = cell_center(spec, r, c, z);
        const double X = cam.extrinsic[0] * p[0] + cam.extrinsic[1] * p[1] +
                         cam.extrinsic[2] * p[2] + cam.extrinsic[3];
        const double Y = cam.extrinsic[4] * p[0] + cam.extrinsic[5] * p[1] +
                         cam.extrinsic[6] * p[2] + cam.extrinsic[7];
        const double Z = cam.extrinsic[8] * p[0] + cam.extrinsic[9] * p[1] +
                         cam.extrinsic[10] * p[2] + cam.extrinsic[11];
        if (Z <= kMinProjectionDepth) {
          out.pts[2 * i] = 0.0;
          out.pts[2 * i + 1] = 0.0;
          out.valid[i] = 0;
          continue;
        }
        const double u = cam.fx * X / Z + cam.cx;
        const double v = cam.fy * Y / Z + cam.cy;
        out.pts[2 * i] = v;
        out.pts[2 * i + 1] = u;
        out.valid[i] =
            u >= 0.0 && u <= cam.image_w - 1 && v >= 0.0 && v <= cam.image_h - 1;
      }
    }
  }
  return out;
}

void GeoTransform::validate() const {
  if (!(m_per_px > 0.0)) throw Error("GeoTransform: m_per_px must be positive");
  if (!std::isfinite(origin_easting) || !std::isfinite(origin_northing))
    throw Error("GeoTransform: non-finite origin");
}

PixelCoord utm_to_pixel(const GeoTransform& gt, double easting, double northing) {
  return {(gt.origin_northing - northing) / gt.m_per_px,
          (easting - gt.origin_easting) / gt.m_per_px};
}

void pixel_to_utm(const GeoTransform& gt, double row, double col, double* easting,
                  double* northing) {
  *easting = gt.origin_easting + col * gt.m_per_px;
  *northing = gt.origin_northing - row * gt.m_per_px;
}

int meters_to_px_ceil(const GeoTransform& gt, double meters) {
  if (meters < 0.0) throw Error("meters_to_px_ceil: negative extent");
  // guard against ratios that are integers up to rounding (e.g. 51.296/0.229)
  return static_cast<int>(std::ceil(meters / gt.m_per_px - 1e-9));
}

}  // namespace bevloc::geometry
