#pragma once

#include <array>
#include <string>
#include <vector>

#include "bevloc/tensor.hpp"

namespace bevloc::eval {

struct EvalReport {
  double ape_mean = 0.0;
  double ape_std = 0.0;  // population standard deviation
  double match_rate = 0.0;
  std::size_t n_frames = 0;
  double threshold_m = 10.0;
  double seconds_per_frame = 0.0;
};

// per-frame Euclidean absolute position error
std::vector<double> ape_series(const std::vector<std::array<double, 2>>& preds,
                               const std::vector<std::array<double, 2>>& gts);

// match rate counts errors strictly below the threshold
EvalReport summarize(const std::vector<double>& ape, double threshold_m = 10.0,
                     double seconds_per_frame = 0.0);

double sample_std(const std::vector<double>& ape);

// join a predictions CSV with poses.csv by timestamp (microsecond match)
EvalReport evaluate_csv(const std::string& pred_csv, const std::string& poses_csv,
                        double threshold_m, double seconds_per_frame = 0.0,
                        std::vector<double>* ape_out = nullptr);

void write_report_json(const EvalReport& r, const std::string& path);
std::string report_table(const EvalReport& r, bool verbose = false,
                         const std::vector<double>* ape = nullptr);

}  // namespace bevloc::eval
