#pragma once

#include <string>

#include "bevloc/geometry.hpp"
#include "bevloc/tensor.hpp"

namespace bevloc::map {

// Georeferenced north-up aerial raster. Pixels are RGB floats in [0,1].
struct GeoRaster {
  nn::Tensor pixels;  // {3, rows, cols}
  geometry::GeoTransform geo;

  int rows() const { return pixels.shape[1]; }
  int cols() const { return pixels.shape[2]; }
};

// Raster from an 8-bit PNG plus a JSON sidecar with keys origin_easting,
// origin_northing, m_per_px.
GeoRaster load_map(const std::string& image_path, const std::string& meta_path);
void save_map(const GeoRaster& map, const std::string& image_path, const std::string& meta_path);

// out_px x out_px crop centered at `center`, rotated so the vehicle heading
// points up, bilinear-resampled with zero fill outside the raster.
nn::Tensor crop_rotated(const GeoRaster& map, const geometry::Pose2& center, int out_px);

// training label: the rotated crop at the renderer's output size
nn::Tensor label_for_pose(const GeoRaster& map, const geometry::Pose2& pose, int out_px = 224);

// North-up, pixel-aligned square crop around the prior position with its own
// GeoTransform for converting match pixels back to UTM.
struct SearchRegion {
  nn::Tensor pixels;  // {3, size, size}
  geometry::GeoTransform geo;
  int size_px = 0;
};

SearchRegion search_region(const GeoRaster& map, const geometry::Pose2& prior, double extent_m);

}  // namespace bevloc::map
