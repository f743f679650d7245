#include "bevloc/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bevloc/dataset.hpp"
#include "bevloc/registration.hpp"

namespace bevloc::eval {

std::vector<double> ape_series(const std::vector<std::array<double, 2>>& preds,
                               const std::vector<std::array<double, 2>>& gts) {
  if (preds.size() != gts.size()) throw Error("ape_series: length mismatch");
  if (preds.empty()) throw Error("ape_series: empty series");
  std::vector<double> d(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i)
    d[i] = std::hypot(preds[i][0] - gts[i][0], preds[i][1] - gts[i][1]);
  return d;
}

EvalReport summarize(const std::vector<double>& ape, double threshold_m,
                     double seconds_per_frame) {
  if (ape.empty()) throw Error("summarize: empty series");
  EvalReport r;
  r.n_frames = ape.size();
  r.threshold_m = threshold_m;
  r.seconds_per_frame = seconds_per_frame;
  double sum = 0.0;
  std::size_t matches = 0;
  for (double d : ape) {
    sum += d;
    if (d < threshold_m) ++matches;
  }
  r.ape_mean = sum / static_cast<double>(ape.size());
  double var = 0.0;
  for (double d : ape) var += (d - r.ape_mean) * (d - r.ape_mean);
  r.ape_std = std::sqrt(var / static_cast<double>(ape.size()));
  r.match_rate = static_cast<double>(matches) / static_cast<double>(ape.size());
  return r;
}

double sample_std(const std::vector<double>& ape) {
  if (ape.size() < 2) return 0.0;
  double mean = 0.0;
  for (double d : ape) mean += d;
  mean /= static_cast<double>(ape.size());
  double var = 0.0;
  for (double d : ape) var += (d - mean) * (d - mean);
  return std::sqrt(var / static_cast<double>(ape.size() - 1));
}

EvalReport evaluate_csv(const std::string& pred_csv, const std::string& poses_csv,
                        double threshold_m, double seconds_per_frame,
                        std::vector<double>* ape_out) {
  const auto preds = reg::read_predictions_csv(pred_csv);
  const auto poses = data::load_poses_csv(poses_csv);
  std::map<long long, geometry::Pose2> by_ts;
  for (const auto& [ts, pose] : poses) by_ts[std::llround(ts * 1e6)] = pose;

  std::vector<std::array<double, 2>> p, g;
  for (const auto& row : preds) {
    auto it = by_ts.find(std::llround(row.timestamp * 1e6));
    if (it == by_ts.end())
      throw Error("evaluate: prediction timestamp not found in ground truth: " +
                  std::to_string(row.timestamp));
    p.push_back({row.easting, row.northing});
    g.push_back({it->second.easting, it->second.northing});
  }
  std::vector<double> ape = ape_series(p, g);
  if (ape_out) *ape_out = ape;
  return summarize(ape, threshold_m, seconds_per_frame);
}

void write_report_json(const EvalReport& r, const std::string& path) {
  nlohmann::json j = {{"ape_mean", r.ape_mean},
                      {"ape_std", r.ape_std},
                      {"match_rate", r.match_rate},
                      {"n_frames", r.n_frames},
                      {"threshold_m", r.threshold_m},
                      {"seconds_per_frame", r.seconds_per_frame}};
  std::ofstream os(path);
  if (!os) throw Error("report: cannot write " + path);
  os << j.dump(2) << "\n";
}

std::string report_table(const EvalReport& r, bool verbose, const std::vector<double>* ape) {
  std::ostringstream os;
  os << "frames            " << r.n_frames << "\n";
  os << "APE mean (m)      " << r.ape_mean << "\n";
  os << "APE std (m)       " << r.ape_std << "   (population)\n";
  os << "match rate        " << 100.0 * r.match_rate << " %  (threshold " << r.threshold_m
     << " m, strict <)\n";
  if (r.seconds_per_frame > 0.0)
    os << "sec / frame       " << r.seconds_per_frame << "\n";
  if (verbose && ape && !ape->empty()) {
    std::vector<double> sorted = *ape;
    std::sort(sorted.begin(), sorted.end());
    os << "APE median (m)    " << sorted[sorted.size() / 2] << "\n";
    os << "APE max (m)       " << sorted.back() << "\n";
    os << "APE std, sample   " << sample_std(*ape) << "\n";
  }
  return os.str();
}

}  // namespace bevloc::eval
