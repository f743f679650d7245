#pragma once

#include "bevloc/dataset.hpp"
#include "bevloc/model.hpp"
#include "bevloc/registration.hpp"

namespace bevloc::pipeline {

struct LocalizeRunConfig {
  double extent_m = 200.0;
  bool oracle = false;  // map-crop renders instead of neural renders
  double oracle_sigma = 0.0;
  double oracle_brightness = 0.0;
  std::uint64_t seed = 0;
  int jobs = 1;  // <= 0: hardware concurrency, capped by BEVLOCATE_THREADS
  bool use_fast = true;
  int render_px = 224;
  double window_seconds = 5.0;
  int past_frames = 5;
};

struct LocalizeRunResult {
  std::vector<reg::PredictionRow> rows;  // frame order
  double seconds_per_frame = 0.0;
};

// Localize every frame of the sequence against the map, with the ground-truth
// pose as the search prior. `m` may be null in oracle mode. Rows come back in
// frame order regardless of worker completion order.
LocalizeRunResult localize_sequence(const model::BevModel* m, const data::Sequence& seq,
                                    const map::GeoRaster& map, const LocalizeRunConfig& cfg);

// effective worker count honoring the BEVLOCATE_THREADS cap
int resolve_jobs(int requested);

}  // namespace bevloc::pipeline
