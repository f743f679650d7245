#include "bevloc/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <mutex>
#include <thread>

namespace bevloc::pipeline {

int resolve_jobs(int requested) {
  int jobs = requested;
  if (jobs <= 0) jobs = static_cast<int>(std::thread::hardware_concurrency());
  if (jobs < 1) jobs = 1;
  if (const char* cap = std::getenv("BEVLOCATE_THREADS")) {
    const int limit = std::atoi(cap);
    if (limit >= 1 && jobs > limit) jobs = limit;
  }
  return jobs;
}

LocalizeRunResult localize_sequence(const model::BevModel* m, const data::Sequence& seq,
                                    const map::GeoRaster& map, const LocalizeRunConfig& cfg) {
  if (!cfg.oracle && !m) throw Error("localize: a model (or oracle mode) is required");
  if (seq.frames.empty()) throw Error("localize: empty sequence");

  const int jobs = resolve_jobs(cfg.jobs);
  const std::size_t n = seq.frames.size();
  LocalizeRunResult result;
  result.rows.resize(n);

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::string error_message;
  std::mutex error_mu;

  const auto t0 = std::chrono::steady_clock::now();
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n || failed.load()) return;
      try {
        const data::Frame& frame = seq.frames[i];
        nn::Tensor bev_rgb;
        if (cfg.oracle) {
          // per-frame RNG: identical output for any worker count
          Rng rng(hash_mix(cfg.seed ^ hash_mix(i + 1)));
          bev_rgb = map::crop_rotated(map, frame.pose, cfg.render_px);
          if (cfg.oracle_sigma != 0.0 || cfg.oracle_brightness != 0.0) {
            for (float& v : bev_rgb.data) {
              const double x = v + cfg.oracle_brightness + cfg.oracle_sigma * rng.normal();
              v = static_cast<float>(x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x));
            }
          }
        } else {
          Rng rng(hash_mix(cfg.seed ^ hash_mix(i + 1)));
          data::Sample sample = data::build_sample(seq, i, map, cfg.window_seconds,
                                                   cfg.past_frames, rng,
                                                   m->config().render_out_px());
          auto window = data::load_window_images(sample);
          bev_rgb = model::render_bev_image(*m, window).rgb;
        }
        reg::LocalizeOptions opt;
        opt.extent_m = cfg.extent_m;
        opt.use_fast = cfg.use_fast;
        const reg::MatchResult match = reg::localize(bev_rgb, frame.pose, map, opt);
        reg::PredictionRow row;
        row.timestamp = frame.timestamp;
        row.easting = match.position.easting;
        row.northing = match.position.northing;
        row.score = match.peak_score;
        row.valid = !match.low_confidence;
        result.rows[i] = row;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(error_mu);
        failed.store(true);
        if (error_message.empty()) error_message = e.what();
      }
    }
  };

  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failed.load()) throw Error("localize: " + error_message);

  const auto t1 = std::chrono::steady_clock::now();
  result.seconds_per_frame =
      std::chrono::duration<double>(t1 - t0).count() / static_cast<double>(n);
  return result;
}

}  // namespace bevloc::pipeline
