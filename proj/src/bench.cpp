#include "bevloc/bench.hpp"

#include <chrono>

#include "bevloc/registration.hpp"
#include "bevloc/rng.hpp"

namespace bevloc::reg {

BenchReport bench_ncc(int region_px, int template_px, int iterations, std::uint64_t seed) {
  if (iterations < 1) throw Error("bench: iterations must be >= 1");
  Rng rng(seed);
  nn::Tensor region({region_px, region_px});
  for (float& v : region.data) v = static_cast<float>(rng.uniform());
  nn::Tensor templ({template_px, template_px});
  for (float& v : templ.data) v = static_cast<float>(rng.uniform());

  BenchReport rep;
  rep.region_px = region_px;
  rep.template_px = template_px;
  rep.iterations = iterations;

  volatile double sink = 0.0;
  ScoreMap warm = ncc_map_fast(templ, region);  // plan creation
  sink += warm.scores[0];

  double total = 0.0, best = 1e300;
  for (int i = 0; i < iterations; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    ScoreMap s = ncc_map_fast(templ, region);
    const auto t1 = std::chrono::steady_clock::now();
    sink += s.scores[s.scores.size() / 2];
    const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    total += ms;
    best = std::min(best, ms);
  }
  rep.best_ms = best;
  rep.mean_ms = total / iterations;
  return rep;
}

}  // namespace bevloc::reg
