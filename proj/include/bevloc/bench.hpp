#pragma once

#include <cstdint>

namespace bevloc::reg {

struct BenchReport {
  int region_px = 0;
  int template_px = 0;
  int iterations = 0;
  double best_ms = 0.0;
  double mean_ms = 0.0;
};

// single-threaded ncc_map_fast latency on random textured inputs; the first
// (untimed) run absorbs FFT plan creation
BenchReport bench_ncc(int region_px, int template_px, int iterations, std::uint64_t seed);

}  // namespace bevloc::reg
