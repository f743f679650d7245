#include "bevloc/mapstore.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "png_io.hpp"

namespace bevloc::map {

namespace {

using json = nlohmann::json;

// snap nearly-integer sample coordinates so pure-translation crops and
// zero-delta warps stay bit-exact
double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

float sample_bilinear_zero(const nn::Tensor& img, int channel, double row, double col) {
  const int h = img.shape[1], w = img.shape[2];
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const float* p = img.data.data() + static_cast<std::size_t>(channel) * plane;
  const int r0 = static_cast<int>(std::floor(row));
  const int c0 = static_cast<int>(std::floor(col));
  const double fr = row - r0;
  const double fc = col - c0;
  double acc = 0.0;
  auto tap = [&](int r, int c, double weight) {
    if (weight == 0.0 || r < 0 || r >= h || c < 0 || c >= w) return;
    acc += weight * p[static_cast<std::size_t>(r) * w + c];
  };
  tap(r0, c0, (1.0 - fr) * (1.0 - fc));
  tap(r0, c0 + 1, (1.0 - fr) * fc);
  tap(r0 + 1, c0, fr * (1.0 - fc));
  tap(r0 + 1, c0 + 1, fr * fc);
  return static_cast<float>(acc);
}

}  // namespace

GeoRaster load_map(const std::string& image_path, const std::string& meta_path) {
  std::ifstream is(meta_path);
  if (!is) throw Error("map: cannot open metadata " + meta_path);
  json meta = json::parse(is, nullptr, false);
  if (meta.is_discarded() || !meta.is_object())
    throw Error("map: metadata is not a JSON object: " + meta_path);
  for (const char* key : {"origin_easting", "origin_northing", "m_per_px"})
    if (!meta.contains(key) || !meta[key].is_number())
      throw Error(std::string("map: metadata missing numeric key ") + key);

  GeoRaster map;
  map.geo.origin_easting = meta["origin_easting"].get<double>();
  map.geo.origin_northing = meta["origin_northing"].get<double>();
  map.geo.m_per_px = meta["m_per_px"].get<double>();
  map.geo.validate();
  map.pixels = read_png_rgb(image_path);
  if (map.rows() < 1 || map.cols() < 1) throw Error("map: empty raster " + image_path);
  return map;
}

void save_map(const GeoRaster& map, const std::string& image_path, const std::string& meta_path) {
  write_png_rgb(image_path, map.pixels);
  json meta = {{"origin_easting", map.geo.origin_easting},
               {"origin_northing", map.geo.origin_northing},
               {"m_per_px", map.geo.m_per_px}};
  std::ofstream os(meta_path);
  if (!os) throw Error("map: cannot write metadata " + meta_path);
  os << meta.dump(2) << "\n";
}

nn::Tensor crop_rotated(const GeoRaster& map, const geometry::Pose2& center, int out_px) {
  if (out_px < 1) throw Error("crop_rotated: out_px must be >= 1");
  if (!center.finite()) throw Error("crop_rotated: non-finite center pose");
  const double mpp = map.geo.m_per_px;
  const double ctr = 0.5 * (out_px - 1);
  const double s = std::sin(center.azimuth);
  const double c = std::cos(center.azimuth);

  nn::Tensor out({3, out_px, out_px});
  const std::size_t plane = static_cast<std::size_t>(out_px) * out_px;
  for (int r = 0; r < out_px; ++r) {
    const double x_fwd = (ctr - r) * mpp;
    for (int col = 0; col < out_px; ++col) {
      const double y_right = (col - ctr) * mpp;
      const double e = center.easting + x_fwd * s + y_right * c;
      const double n = center.northing + x_fwd * c - y_right * s;
      const geometry::PixelCoord px = geometry::utm_to_pixel(map.geo, e, n);
      const double sr = snap(px.row);
      const double sc = snap(px.col);
      for (int ch = 0; ch < 3; ++ch)
        out.data[ch * plane + static_cast<std::size_t>(r) * out_px + col] =
            sample_bilinear_zero(map.pixels, ch, sr, sc);
    }
  }
  return out;
}

nn::Tensor label_for_pose(const GeoRaster& map, const geometry::Pose2& pose, int out_px) {
  return crop_rotated(map, pose, out_px);
}

SearchRegion search_region(const GeoRaster& map, const geometry::Pose2& prior, double extent_m) {
  if (!(extent_m > 0.0)) throw Error("search_region: extent must be positive");
  const int size = geometry::meters_to_px_ceil(map.geo, extent_m);
  if (size < 1) throw Error("search_region: extent smaller than one pixel");
  const geometry::PixelCoord center = geometry::utm_to_pixel(map.geo, prior);
  const long r0 = std::lround(center.row - 0.5 * (size - 1));
  const long c0 = std::lround(center.col - 0.5 * (size - 1));

  SearchRegion region;
  region.size_px = size;
  region.pixels = nn::Tensor({3, size, size});
  const std::size_t out_plane = static_cast<std::size_t>(size) * size;
  const std::size_t in_plane = static_cast<std::size_t>(map.rows()) * map.cols();
  for (int r = 0; r < size; ++r) {
    const long src_r = r0 + r;
    if (src_r < 0 || src_r >= map.rows()) continue;
    for (int c = 0; c < size; ++c) {
      const long src_c = c0 + c;
      if (src_c < 0 || src_c >= map.cols()) continue;
      for (int ch = 0; ch < 3; ++ch)
        region.pixels.data[ch * out_plane + static_cast<std::size_t>(r) * size + c] =
            map.pixels.data[ch * in_plane + static_cast<std::size_t>(src_r) * map.cols() + src_c];
    }
  }
  region.geo.origin_easting = map.geo.origin_easting + static_cast<double>(c0) * map.geo.m_per_px;
  region.geo.origin_northing = map.geo.origin_northing - static_cast<double>(r0) * map.geo.m_per_px;
  region.geo.m_per_px = map.geo.m_per_px;
  return region;
}

}  // namespace bevloc::map
