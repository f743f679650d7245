#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "bevloc/geometry.hpp"
#include "bevloc/mapstore.hpp"
#include "bevloc/tensor.hpp"

namespace bevloc::reg {

// luminance 0.299 R + 0.587 G + 0.114 B
nn::Tensor to_gray(const nn::Tensor& rgb);

struct ScoreMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> scores;

  double at(int r, int c) const { return scores[static_cast<std::size_t>(r) * cols + c]; }
};

// Zero-normalized cross-correlation of a grayscale template over every
// placement in the region, statistics over valid-mask pixels only (empty mask
// = all valid). Zero-variance windows score 0; a constant template is an
// error. Reference path and semantics anchor.
ScoreMap ncc_map(const nn::Tensor& templ, const std::vector<std::uint8_t>& mask,
                 const nn::Tensor& region);

// Same values as ncc_map for a full-rectangle mask, via frequency-domain
// correlation for the numerator and integral images for the window moments.
ScoreMap ncc_map_fast(const nn::Tensor& templ, const nn::Tensor& region);

// masked variant: takes the fast path for a full-rectangle mask, otherwise
// falls back to the reference path
ScoreMap ncc_map_fast(const nn::Tensor& templ, const std::vector<std::uint8_t>& mask,
                      const nn::Tensor& region);

// smallest 2,3,5,7-smooth size >= n (FFT-friendly)
int next_fast_size(int n);

struct RotatedTemplate {
  nn::Tensor image;                 // {H,W}
  std::vector<std::uint8_t> mask;   // pixels whose bilinear support lies inside
};

// rotate a heading-up BEV image by the azimuth into the map's north-up frame
RotatedTemplate rotate_to_north_up(const nn::Tensor& gray, double azimuth);

// largest axis-aligned square centered in a rotated size x size template that
// stays valid for every rotation angle
int inscribed_square_side(int size);

struct MatchResult {
  geometry::Pose2 position;  // azimuth copied from the prior
  double peak_score = 0.0;
  int peak_row = 0;
  int peak_col = 0;
  int map_rows = 0;  // score map dims
  int map_cols = 0;
  bool low_confidence = false;  // peak on the score-map border
};

struct LocalizeOptions {
  double extent_m = 200.0;
  bool use_fast = true;  // inscribed-square fast path; reference path uses the full mask
};

MatchResult localize(const nn::Tensor& bev_rgb, const geometry::Pose2& prior,
                     const map::GeoRaster& map, const LocalizeOptions& opt = {});

struct PredictionRow {
  double timestamp = 0.0;
  double easting = 0.0;
  double northing = 0.0;
  double score = 0.0;
  bool valid = true;
};

void write_predictions_csv(const std::string& path, const std::vector<PredictionRow>& rows);
std::vector<PredictionRow> read_predictions_csv(const std::string& path);

}  // namespace bevloc::reg
