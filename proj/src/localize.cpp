#include <cmath>
#include <fstream>
#include <sstream>

#include "bevloc/registration.hpp"

namespace bevloc::reg {

namespace {

double snap(double v) {
  const double r = std::round(v);
  return std::abs(v - r) < 1e-9 ? r : v;
}

}  // namespace

RotatedTemplate rotate_to_north_up(const nn::Tensor& gray, double azimuth) {
  if (gray.ndim() != 2) throw Error("rotate_to_north_up: expected {H,W}");
  const int h = gray.shape[0], w = gray.shape[1];
  const double cr = 0.5 * (h - 1);
  const double cc = 0.5 * (w - 1);
  const double s = std::sin(azimuth);
  const double c = std::cos(azimuth);

  RotatedTemplate out;
  out.image = nn::Tensor({h, w});
  out.mask.assign(static_cast<std::size_t>(h) * w, 0);
  for (int r = 0; r < h; ++r) {
    const double north = cr - r;  // pixels toward map north
    for (int col = 0; col < w; ++col) {
      const double east = col - cc;
      // invert the heading-up frame: x forward, y right in source pixels
      const double x_fwd = east * s + north * c;
      const double y_right = east * c - north * s;
      const double sr = snap(cr - x_fwd);
      const double sc = snap(cc + y_right);
      const int r0 = static_cast<int>(std::floor(sr));
      const int c0 = static_cast<int>(std::floor(sc));
      const double fr = sr - r0;
      const double fc = sc - c0;
      const bool interior = r0 >= 0 && c0 >= 0 && (fr > 0.0 ? r0 + 1 : r0) < h &&
                            (fc > 0.0 ? c0 + 1 : c0) < w;
      const std::size_t oi = static_cast<std::size_t>(r) * w + col;
      if (!interior) continue;
      const float* p = gray.data.data();
      const double v00 = p[static_cast<std::size_t>(r0) * w + c0];
      const double v01 = fc > 0.0 ? p[static_cast<std::size_t>(r0) * w + c0 + 1] : 0.0;
      const double v10 = fr > 0.0 ? p[static_cast<std::size_t>(r0 + 1) * w + c0] : 0.0;
      const double v11 = (fr > 0.0 && fc > 0.0) ? p[static_cast<std::size_t>(r0 + 1) * w + c0 + 1] : 0.0;
      out.image.data[oi] = static_cast<float>((1.0 - fr) * ((1.0 - fc) * v00 + fc * v01) +
                                              fr * ((1.0 - fc) * v10 + fc * v11));
      out.mask[oi] = 1;
    }
  }
  return out;
}

int inscribed_square_side(int size) {
  return static_cast<int>(std::floor(static_cast<double>(size) / std::sqrt(2.0)));
}

MatchResult localize(const nn::Tensor& bev_rgb, const geometry::Pose2& prior,
                     const map::GeoRaster& map, const LocalizeOptions& opt) {
  if (!prior.finite()) throw Error("localize: non-finite prior");
  const geometry::PixelCoord pc = geometry::utm_to_pixel(map.geo, prior);
  if (pc.row < 0 || pc.row > map.rows() - 1 || pc.col < 0 || pc.col > map.cols() - 1)
    throw Error("localize: prior outside map bounds");

  const nn::Tensor gray = to_gray(bev_rgb);
  const RotatedTemplate rot = rotate_to_north_up(gray, prior.azimuth);
  const map::SearchRegion region = search_region(map, prior, opt.extent_m);
  const nn::Tensor region_gray = to_gray(region.pixels);

  ScoreMap scores;
  double template_center;  // template-center offset in region pixels
  if (opt.use_fast) {
    // center-crop to the inscribed axis-aligned square so the full-rectangle
    // mask requirement of the fast path holds for every rotation angle
    const int side = inscribed_square_side(gray.shape[0]);
    const int m0 = (gray.shape[0] - side) / 2;
    const int m1 = (gray.shape[1] - side) / 2;
    nn::Tensor tpl({side, side});
    for (int r = 0; r < side; ++r)
      for (int c = 0; c < side; ++c)
        tpl.at2(r, c) = rot.image.at2(r + m0, c + m1);
    scores = ncc_map_fast(tpl, region_gray);
    // vehicle pixel of the original image, expressed in crop coordinates
    template_center = 0.5 * (gray.shape[0] - 1) - m0;
  } else {
    scores = ncc_map(rot.image, rot.mask, region_gray);
    template_center = 0.5 * (gray.shape[0] - 1);
  }

  // argmax with deterministic tie-breaking: smallest row, then smallest col
  int best_r = 0, best_c = 0;
  double best = -2.0;
  for (int r = 0; r < scores.rows; ++r)
    for (int c = 0; c < scores.cols; ++c)
      if (scores.at(r, c) > best) {
        best = scores.at(r, c);
        best_r = r;
        best_c = c;
      }

  MatchResult res;
  res.peak_score = best;
  res.peak_row = best_r;
  res.peak_col = best_c;
  res.map_rows = scores.rows;
  res.map_cols = scores.cols;
  res.low_confidence =
      best_r == 0 || best_c == 0 || best_r == scores.rows - 1 || best_c == scores.cols - 1;
  double e, n;
  geometry::pixel_to_utm(region.geo, best_r + template_center, best_c + template_center, &e, &n);
  res.position = {e, n, prior.azimuth};
  return res;
}

void write_predictions_csv(const std::string& path, const std::vector<PredictionRow>& rows) {
  std::ofstream os(path);
  if (!os) throw Error("predictions: cannot open " + path + " for writing");
  os << "timestamp,pred_easting,pred_northing,peak_score,valid_flag\n";
  char buf[256];
  for (const PredictionRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%d\n", r.timestamp, r.easting,
                  r.northing, r.score, r.valid ? 1 : 0);
    os << buf;
  }
}

std::vector<PredictionRow> read_predictions_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("predictions: cannot open " + path);
  std::vector<PredictionRow> rows;
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("timestamp", 0) == 0) continue;
    }
    std::istringstream ss(line);
    std::string tok;
    PredictionRow r;
    double fields[4];
    for (int i = 0; i < 4; ++i) {
      if (!std::getline(ss, tok, ',')) throw Error("predictions: malformed row in " + path);
      fields[i] = std::stod(tok);
    }
    int valid = 1;
    if (std::getline(ss, tok, ',')) valid = std::stoi(tok);
    r.timestamp = fields[0];
    r.easting = fields[1];
    r.northing = fields[2];
    r.score = fields[3];
    r.valid = valid != 0;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace bevloc::reg
