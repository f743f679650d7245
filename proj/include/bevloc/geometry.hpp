#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "bevloc/ops.hpp"
#include "bevloc/tensor.hpp"

namespace bevloc::geometry {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// wrap to [-pi, pi)
double wrap_angle(double a);

// Vehicle pose in UTM meters. Azimuth is the heading in radians, clockwise
// from map north. The vehicle frame is x forward, y left (proper SE(2)).
struct Pose2 {
  double easting = 0.0;
  double northing = 0.0;
  double azimuth = 0.0;

  Pose2 normalized() const { return {easting, northing, wrap_angle(azimuth)}; }
  bool finite() const;
};

// Relative motion expressed in the previous vehicle frame: dx forward meters,
// dy left meters, dtheta azimuth change (clockwise positive), wrapped.
struct PoseDelta {
  double dx = 0.0;
  double dy = 0.0;
  double dtheta = 0.0;
};

// relative motion of `current` in the `previous` vehicle frame
PoseDelta pose_delta(const Pose2& current, const Pose2& previous);
PoseDelta inverse_delta(const PoseDelta& d);

// BEV space around the vehicle: L forward extent, W lateral extent, H height,
// divided into cells_l x cells_w x cells_h cells. Vehicle sits at the grid
// center; row 0 is the far-forward edge, columns grow to the vehicle's right.
struct BevGridSpec {
  double length_m = 25.648;
  double width_m = 25.648;
  double height_m = 2.0;
  int cells_l = 28;
  int cells_w = 28;
  int cells_h = 5;

  double cell_l() const { return length_m / cells_l; }
  double cell_w() const { return width_m / cells_w; }
  double cell_h() const { return height_m / cells_h; }
  void validate() const;
};

// Continuous per-cell source coordinates in cell units, row-major over the
// target grid. in_bounds flags coordinates inside [0, rows-1] x [0, cols-1].
struct SampleGrid {
  int rows = 0;
  int cols = 0;
  std::vector<double> pts;  // (row, col) pairs
  std::vector<std::uint8_t> in_bounds;

  double row_at(int i) const { return pts[2 * static_cast<std::size_t>(i)]; }
  double col_at(int i) const { return pts[2 * static_cast<std::size_t>(i) + 1]; }
};

// source coordinates for resampling a feature anchored at the previous pose
// into the grid of the current pose, delta = pose_delta(current, previous)
SampleGrid warp_grid(const BevGridSpec& spec, const PoseDelta& delta);

// Pinhole camera with a rigid vehicle->camera transform (row-major 4x4).
struct CameraModel {
  double fx = 0.0, fy = 0.0, cx = 0.0, cy = 0.0;
  std::array<double, 16> extrinsic{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};
  int image_w = 0, image_h = 0;

  void validate() const;
};

inline constexpr double kMinProjectionDepth = 0.1;  // meters

// One 2D reference point per 3D grid cell, ordered ((row*cols_w + col)*cells_h + level).
// Points behind the camera or outside the image are masked invalid.
struct ProjectedPoints {
  int count = 0;
  std::vector<double> pts;  // (row, col) image pixels
  std::vector<std::uint8_t> valid;
};

ProjectedPoints project_bev_points(const BevGridSpec& spec, const CameraModel& cam);

// cell-center position in the vehicle frame (x forward, y left, z up)
std::array<double, 3> cell_center(const BevGridSpec& spec, int row, int col, int level);

// Georeference of a north-up raster: integer pixel coordinates are pixel
// centers, (0,0) is the top-left pixel; columns grow eastward, rows southward.
struct GeoTransform {
  double origin_easting = 0.0;
  double origin_northing = 0.0;
  double m_per_px = 1.0;

  void validate() const;
};

struct PixelCoord {
  double row = 0.0;
  double col = 0.0;
};

PixelCoord utm_to_pixel(const GeoTransform& gt, double easting, double northing);
inline PixelCoord utm_to_pixel(const GeoTransform& gt, const Pose2& p) {
  return utm_to_pixel(gt, p.easting, p.northing);
}
void pixel_to_utm(const GeoTransform& gt, double row, double col, double* easting,
                  double* northing);

int meters_to_px_ceil(const GeoTransform& gt, double meters);

// 4-neighbor bilinear interpolation of feature {C,H,W} at the grid points,
// zero padding outside; exact at integer coordinates. Output {C,rows,cols}.
template <typename T>
nn::TensorT<T> bilinear_sample(const nn::TensorT<T>& feature, const SampleGrid& grid) {
  if (feature.ndim() != 3) throw Error("bilinear_sample: feature must be {C,H,W}");
  const int n = grid.rows * grid.cols;
  nn::TensorT<T> pts({n, 2});
  for (int i = 0; i < 2 * n; ++i) {
    if (!std::isfinite(grid.pts[static_cast<std::size_t>(i)]))
      throw Error("bilinear_sample: non-finite sample point");
    pts.data[static_cast<std::size_t>(i)] = static_cast<T>(grid.pts[static_cast<std::size_t>(i)]);
  }
  nn::TensorT<T> flat = nn::grid_sample(feature, pts);
  return flat.reshaped({feature.shape[0], grid.rows, grid.cols});
}

}  // namespace bevloc::geometry
