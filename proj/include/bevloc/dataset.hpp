#pragma once

#include <array>
#include <string>
#include <vector>

#include "bevloc/encoder.hpp"
#include "bevloc/mapstore.hpp"
#include "bevloc/rng.hpp"

namespace bevloc::data {

struct Frame {
  double timestamp = 0.0;
  std::string ts_token;  // verbatim CSV token, names the image files
  std::array<std::string, 3> image_paths;
  geometry::Pose2 pose;
};

struct Sequence {
  std::string dir;
  std::vector<Frame> frames;
  std::array<geometry::CameraModel, 3> cameras;
};

// poses.csv (timestamp,easting,northing,azimuth) + calib.json; image files at
// frames/<ts>_<view>.png are resolved lazily
Sequence load_sequence(const std::string& dir);

std::vector<std::pair<double, geometry::Pose2>> load_poses_csv(const std::string& path);

struct Sample {
  std::vector<Frame> window;  // past + current, time-ordered
  nn::Tensor label;           // {3,out,out}
  geometry::Pose2 pose;       // current pose
  double timestamp = 0.0;
};

// Uniformly samples `past_frames` frames without replacement from the
// trailing window [t-T, t); short windows duplicate the earliest frame, an
// empty window degenerates to the current frame alone.
Sample build_sample(const Sequence& seq, std::size_t index, const map::GeoRaster& map,
                    double window_seconds, int past_frames, Rng& rng, int label_px = 224);

// read the window's camera images from disk
std::vector<model::FrameInputT<float>> load_window_images(const Sample& sample);

// forward-looking trinocular rig used by synthetic fixtures and checks
std::array<geometry::CameraModel, 3> default_camera_rig(int image_w, int image_h);

// ---------------------------------------------------------------------------
// Synthetic desk-scale world: multi-octave value-noise raster with a smooth
// random trajectory that keeps clear of the borders.
// ---------------------------------------------------------------------------

struct SynthConfig {
  std::uint64_t seed = 7;
  double size_m = 560.0;
  double texture_scale_m = 8.0;  // base noise wavelength
  int frames = 100;
  double fps = 3.0;
  double speed_mps = 3.5;
  double margin_m = 140.0;  // minimum pose distance to any border
  double m_per_px = 0.229;
  double origin_easting = 500000.0;
  double origin_northing = 4480000.0;
};

struct SynthWorld {
  map::GeoRaster raster;
  std::vector<geometry::Pose2> trajectory;
  std::vector<double> timestamps;
};

SynthWorld synth_world(const SynthConfig& cfg);

// ground-truth map crop standing in for a neural render, optionally corrupted
// by additive Gaussian noise and a brightness offset
nn::Tensor oracle_render(const SynthWorld& world, std::size_t index, double noise_sigma,
                         double brightness, Rng& rng, int out_px = 224);

struct SynthWriteOptions {
  bool write_frames = true;  // ground-plane projective camera images
  bool write_oracle = true;
  double oracle_sigma = 0.0;
  double oracle_brightness = 0.0;
  int image_px = 224;  // camera image size
  int oracle_px = 224;
};

// map.png/map.json plus seq/{poses.csv,calib.json,frames/,oracle/}
void write_fixtures(const SynthWorld& world, const SynthConfig& cfg, const std::string& out_dir,
                    const SynthWriteOptions& opt);

// projective ground-plane view of the raster, used for synthetic camera frames
nn::Tensor render_camera_view(const map::GeoRaster& map, const geometry::Pose2& pose,
                              const geometry::CameraModel& cam);

}  // namespace bevloc::data
