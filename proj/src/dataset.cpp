#include "bevloc/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "png_io.hpp"

namespace bevloc::data {

namespace {

using json = nlohmann::json;

geometry::CameraModel camera_from_json(const json& j) {
  geometry::CameraModel cam;
  cam.fx = j.at("fx").get<double>();
  cam.fy = j.at("fy").get<double>();
  cam.cx = j.at("cx").get<double>();
  cam.cy = j.at("cy").get<double>();
  cam.image_w = j.at("image_w").get<int>();
  cam.image_h = j.at("image_h").get<int>();
  const auto ext = j.at("extrinsic").get<std::vector<double>>();
  if (ext.size() != 16) throw Error("calib: extrinsic must hold 16 row-major floats");
  std::copy(ext.begin(), ext.end(), cam.extrinsic.begin());
  cam.validate();
  return cam;
}

}  // namespace

std::vector<std::pair<double, geometry::Pose2>> load_poses_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("poses: cannot open " + path);
  std::vector<std::pair<double, geometry::Pose2>> out;
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
    double fields[4];
    for (int i = 0; i < 4; ++i) {
      if (!std::getline(ss, tok, ',')) throw Error("poses: malformed row in " + path);
      fields[i] = std::stod(tok);
    }
    out.push_back({fields[0], geometry::Pose2{fields[1], fields[2],
                                              geometry::wrap_angle(fields[3])}});
  }
  return out;
}

Sequence load_sequence(const std::string& dir) {
  Sequence seq;
  seq.dir = dir;

  std::ifstream is(dir + "/poses.csv");
  if (!is) throw Error("sequence: cannot open " + dir + "/poses.csv");
  std::string line;
  bool first = true;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line.rfind("timestamp", 0) == 0) continue;
    }
    std::istringstream ss(line);
    std::string ts_tok, e_tok, n_tok, a_tok;
    if (!std::getline(ss, ts_tok, ',') || !std::getline(ss, e_tok, ',') ||
        !std::getline(ss, n_tok, ',') || !std::getline(ss, a_tok, ','))
      throw Error("sequence: malformed poses.csv row: " + line);
    Frame f;
    f.timestamp = std::stod(ts_tok);
    f.ts_token = ts_tok;
    f.pose = geometry::Pose2{std::stod(e_tok), std::stod(n_tok),
                             geometry::wrap_angle(std::stod(a_tok))};
    for (int v = 0; v < 3; ++v)
      f.image_paths[static_cast<std::size_t>(v)] =
          dir + "/frames/" + ts_tok + "_" + model::kViewNames[static_cast<std::size_t>(v)] + ".png";
    if (!seq.frames.empty() && !(f.timestamp > seq.frames.back().timestamp))
      throw Error("sequence: timestamps must be strictly increasing");
    seq.frames.push_back(std::move(f));
  }

  std::ifstream cs(dir + "/calib.json");
  if (!cs) throw Error("sequence: cannot open " + dir + "/calib.json");
  json calib = json::parse(cs, nullptr, false);
  if (calib.is_discarded()) throw Error("sequence: calib.json is not valid JSON");
  for (int v = 0; v < 3; ++v)
    seq.cameras[static_cast<std::size_t>(v)] =
        camera_from_json(calib.at(model::kViewNames[static_cast<std::size_t>(v)]));
  return seq;
}

Sample build_sample(const Sequence& seq, std::size_t index, const map::GeoRaster& map,
                    double window_seconds, int past_frames, Rng& rng, int label_px) {
  if (index >= seq.frames.size()) throw Error("build_sample: index out of range");
  if (past_frames < 0) throw Error("build_sample: negative frame count");
  const Frame& current = seq.frames[index];
  const double t0 = current.timestamp - window_seconds;

  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < index; ++i)
    if (seq.frames[i].timestamp >= t0 && seq.frames[i].timestamp < current.timestamp)
      candidates.push_back(i);

  Sample s;
  if (!candidates.empty() && past_frames > 0) {
    std::vector<std::size_t> chosen;
    if (candidates.size() <= static_cast<std::size_t>(past_frames)) {
      chosen = candidates;
      while (chosen.size() < static_cast<std::size_t>(past_frames))
        chosen.push_back(candidates.front());  // duplicate the earliest
    } else {
      // partial Fisher-Yates draw without replacement
      std::vector<std::size_t> pool = candidates;
      for (int k = 0; k < past_frames; ++k) {
        const std::size_t j =
            static_cast<std::size_t>(k) + rng.uniform_int(pool.size() - static_cast<std::size_t>(k));
        std::swap(pool[static_cast<std::size_t>(k)], pool[j]);
        chosen.push_back(pool[static_cast<std::size_t>(k)]);
      }
    }
    std::sort(chosen.begin(), chosen.end());
    for (std::size_t i : chosen) s.window.push_back(seq.frames[i]);
  }
  s.window.push_back(current);
  s.pose = current.pose;
  s.timestamp = current.timestamp;
  s.label = map::label_for_pose(map, current.pose, label_px);
  return s;
}

std::vector<model::FrameInputT<float>> load_window_images(const Sample& sample) {
  std::vector<model::FrameInputT<float>> inputs;
  inputs.reserve(sample.window.size());
  for (const Frame& f : sample.window) {
    model::FrameInputT<float> in;
    for (int v = 0; v < 3; ++v)
      in.images[static_cast<std::size_t>(v)] = map::read_png_rgb(f.image_paths[static_cast<std::size_t>(v)]);
    in.pose = f.pose;
    in.timestamp = f.timestamp;
    inputs.push_back(std::move(in));
  }
  return inputs;
}

std::array<geometry::CameraModel, 3> default_camera_rig(int image_w, int image_h) {
  // yaw: positive looks left; all three pitched down
  const double yaws[3] = {50.0 * geometry::kPi / 180.0, 0.0, -50.0 * geometry::kPi / 180.0};
  const double lat[3] = {0.4, 0.0, -0.4};  // mount offset, vehicle-left meters
  const double pitch = 22.0 * geometry::kPi / 180.0;
  const double height = 1.6;

  std::array<geometry::CameraModel, 3> rig;
  for (int v = 0; v < 3; ++v) {
    geometry::CameraModel cam;
    cam.image_w = image_w;
    cam.image_h = image_h;
    cam.fx = cam.fy = 0.67 * image_w;
    cam.cx = 0.5 * (image_w - 1);
    cam.cy = 0.5 * (image_h - 1);
    const double cy_ = std::cos(yaws[v]), sy = std::sin(yaws[v]);
    const double cp = std::cos(pitch), sp = std::sin(pitch);
    // camera axes in the vehicle frame (x fwd, y left, z up)
    const double zc[3] = {cp * cy_, cp * sy, -sp};   // optical axis
    const double xc[3] = {sy, -cy_, 0.0};            // image right
    const double yc[3] = {zc[1] * xc[2] - zc[2] * xc[1], zc[2] * xc[0] - zc[0] * xc[2],
                          zc[0] * xc[1] - zc[1] * xc[0]};  // image down
    const double center[3] = {0.4, lat[v], height};
    const double* rows[3] = {xc, yc, zc};
    for (int r = 0; r < 3; ++r) {
      double t = 0.0;
      for (int c = 0; c < 3; ++c) {
        cam.extrinsic[static_cast<std::size_t>(4 * r + c)] = rows[r][c];
        t += rows[r][c] * center[c];
      }
      cam.extrinsic[static_cast<std::size_t>(4 * r + 3)] = -t;
    }
    cam.extrinsic[12] = cam.extrinsic[13] = cam.extrinsic[14] = 0.0;
    cam.extrinsic[15] = 1.0;
    cam.validate();
    rig[static_cast<std::size_t>(v)] = cam;
  }
  return rig;
}

}  // namespace bevloc::data
