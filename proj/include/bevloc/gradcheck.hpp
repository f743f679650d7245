#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace bevloc::verify {

struct GradCheckRow {
  std::string name;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Central finite differences (step 1e-4, 64-bit) against every hand-written
// VJP, plus the composed encoder and encoder+renderer miniatures. Relative
// error uses a 1e-2 denominator floor so tiny derivatives compare at an
// absolute tolerance of tol * 1e-2.
std::vector<GradCheckRow> gradcheck_all(std::uint64_t seed);

bool all_passed(const std::vector<GradCheckRow>& rows);

}  // namespace bevloc::verify
