#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "bevloc/dataset.hpp"
#include "png_io.hpp"

namespace bevloc::data {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// one value-noise octave on a lattice of the given wavelength (pixels)
void add_octave(nn::Tensor& img, std::uint64_t seed, int channel, double wavelength,
                double amplitude) {
  const int h = img.shape[1], w = img.shape[2];
  const int lat_h = static_cast<int>(std::ceil(h / wavelength)) + 2;
  const int lat_w = static_cast<int>(std::ceil(w / wavelength)) + 2;
  std::vector<double> lattice(static_cast<std::size_t>(lat_h) * lat_w);
  for (int i = 0; i < lat_h; ++i)
    for (int j = 0; j < lat_w; ++j)
      lattice[static_cast<std::size_t>(i) * lat_w + j] = hash_unit(seed, channel, i, j);

  float* p = img.data.data() + static_cast<std::size_t>(channel) * h * w;
  for (int r = 0; r < h; ++r) {
    const double fy = r / wavelength;
    const int iy = static_cast<int>(fy);
    const double ty = smoothstep(fy - iy);
    const double* row0 = lattice.data() + static_cast<std::size_t>(iy) * lat_w;
    const double* row1 = row0 + lat_w;
    for (int c = 0; c < w; ++c) {
      const double fx = c / wavelength;
      const int ix = static_cast<int>(fx);
      const double tx = smoothstep(fx - ix);
      const double top = row0[ix] + tx * (row0[ix + 1] - row0[ix]);
      const double bot = row1[ix] + tx * (row1[ix + 1] - row1[ix]);
      p[static_cast<std::size_t>(r) * w + c] += static_cast<float>(amplitude * (top + ty * (bot - top)));
    }
  }
}

}  // namespace

SynthWorld synth_world(const SynthConfig& cfg) {
  if (!(cfg.size_m > 2.0 * cfg.margin_m))
    throw Error("synth_world: map smaller than twice the border margin");
  const int size_px = static_cast<int>(std::ceil(cfg.size_m / cfg.m_per_px));

  SynthWorld world;
  world.raster.pixels = nn::Tensor({3, size_px, size_px});
  world.raster.geo.origin_easting = cfg.origin_easting;
  world.raster.geo.origin_northing = cfg.origin_northing;
  world.raster.geo.m_per_px = cfg.m_per_px;

  const double base_wavelength = std::max(2.0, cfg.texture_scale_m / cfg.m_per_px);
  double amp_total = 0.0;
  for (int o = 0; o < 5; ++o) amp_total += std::pow(0.5, o);
  for (int ch = 0; ch < 3; ++ch)
    for (int o = 0; o < 5; ++o) {
      const double wavelength = std::max(2.0, base_wavelength / std::pow(2.0, o));
      add_octave(world.raster.pixels, cfg.seed + 11 * o, ch, wavelength, std::pow(0.5, o));
    }
  for (float& v : world.raster.pixels.data)
    v = static_cast<float>(0.08 + 0.84 * (v / amp_total));

  // smooth random walk; steer toward the map center near the safe-box edge
  Rng rng(cfg.seed ^ 0xA5C39E1Dull);
  const double east0 = cfg.origin_easting;
  const double north0 = cfg.origin_northing;
  const double lo = cfg.margin_m;
  const double hi = cfg.size_m - cfg.margin_m;
  double e = east0 + 0.5 * cfg.size_m;
  double n = north0 - 0.5 * cfg.size_m;
  double heading = rng.uniform(-geometry::kPi, geometry::kPi);
  const double dt = 1.0 / cfg.fps;

  for (int i = 0; i < cfg.frames; ++i) {
    world.trajectory.push_back(geometry::Pose2{e, n, geometry::wrap_angle(heading)});
    world.timestamps.push_back(i * dt);

    heading += 0.08 * rng.normal();
    const double speed = cfg.speed_mps * (0.9 + 0.2 * rng.uniform());
    double step_e = speed * dt * std::sin(heading);
    double step_n = speed * dt * std::cos(heading);
    int guard = 0;
    while ((e + step_e - east0 < lo || e + step_e - east0 > hi ||
            north0 - (n + step_n) < lo || north0 - (n + step_n) > hi) &&
           guard++ < 64) {
      const double to_center =
          std::atan2(east0 + 0.5 * cfg.size_m - e, north0 - 0.5 * cfg.size_m - n);
      heading += 0.35 * geometry::wrap_angle(to_center - heading);
      step_e = speed * dt * std::sin(heading);
      step_n = speed * dt * std::cos(heading);
    }
    e += step_e;
    n += step_n;
  }
  return world;
}

nn::Tensor oracle_render(const SynthWorld& world, std::size_t index, double noise_sigma,
                         double brightness, Rng& rng, int out_px) {
  if (index >= world.trajectory.size()) throw Error("oracle_render: index out of range");
  nn::Tensor img = map::crop_rotated(world.raster, world.trajectory[index], out_px);
  if (noise_sigma != 0.0 || brightness != 0.0) {
    for (float& v : img.data) {
      const double x = v + brightness + noise_sigma * rng.normal();
      v = static_cast<float>(x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x));
    }
  }
  return img;
}

nn::Tensor render_camera_view(const map::GeoRaster& map, const geometry::Pose2& pose,
                              const geometry::CameraModel& cam) {
  nn::Tensor img({3, cam.image_h, cam.image_w});
  const std::size_t plane = static_cast<std::size_t>(cam.image_h) * cam.image_w;
  // camera center and rotation rows from the vehicle->camera transform
  const auto& E = cam.extrinsic;
  // center c solves R c = -t
  double c_veh[3];
  for (int i = 0; i < 3; ++i) {
    c_veh[i] = 0.0;
    for (int r = 0; r < 3; ++r) c_veh[i] -= E[static_cast<std::size_t>(4 * r + i)] * E[static_cast<std::size_t>(4 * r + 3)];
  }
  const double sa = std::sin(pose.azimuth), ca = std::cos(pose.azimuth);
  const float sky[3] = {0.63f, 0.76f, 0.92f};
  const double max_range = 90.0;

  for (int v = 0; v < cam.image_h; ++v) {
    for (int u = 0; u < cam.image_w; ++u) {
      const double dc[3] = {(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
      double dv[3];  // ray in the vehicle frame: R^T d
      for (int i = 0; i < 3; ++i)
        dv[i] = E[static_cast<std::size_t>(i)] * dc[0] + E[static_cast<std::size_t>(4 + i)] * dc[1] +
                E[static_cast<std::size_t>(8 + i)] * dc[2];
      bool ground = dv[2] < -1e-9;
      double t = 0.0;
      if (ground) {
        t = -c_veh[2] / dv[2];
        ground = t > 0.0 && t < max_range / std::max(1e-9, std::hypot(dv[0], dv[1], dv[2]));
      }
      for (int ch = 0; ch < 3; ++ch) {
        float value = sky[ch] * (1.0f - 0.15f * static_cast<float>(v) / cam.image_h);
        if (ground) {
          const double gx = c_veh[0] + t * dv[0];
          const double gy = c_veh[1] + t * dv[1];
          const double ge = pose.easting + gx * sa - gy * ca;
          const double gn = pose.northing + gx * ca + gy * sa;
          const geometry::PixelCoord px = geometry::utm_to_pixel(map.geo, ge, gn);
          const int rr = static_cast<int>(std::lround(px.row));
          const int cc = static_cast<int>(std::lround(px.col));
          if (rr >= 0 && rr < map.rows() && cc >= 0 && cc < map.cols())
            value = map.pixels.data[static_cast<std::size_t>(ch) * map.rows() * map.cols() +
                                    static_cast<std::size_t>(rr) * map.cols() + cc];
          else
            value = 0.3f;
        }
        img.data[static_cast<std::size_t>(ch) * plane + static_cast<std::size_t>(v) * cam.image_w + u] = value;
      }
    }
  }
  return img;
}

namespace {

std::string ts_token(double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", t);
  return buf;
}

json camera_to_json(const geometry::CameraModel& cam) {
  return {{"fx", cam.fx},
          {"fy", cam.fy},
          {"cx", cam.cx},
          {"cy", cam.cy},
          {"image_w", cam.image_w},
          {"image_h", cam.image_h},
          {"extrinsic", std::vector<double>(cam.extrinsic.begin(), cam.extrinsic.end())}};
}

}  // namespace

void write_fixtures(const SynthWorld& world, const SynthConfig& cfg, const std::string& out_dir,
                    const SynthWriteOptions& opt) {
  fs::create_directories(out_dir);
  fs::create_directories(out_dir + "/seq");
  map::save_map(world.raster, out_dir + "/map.png", out_dir + "/map.json");

  std::ofstream poses(out_dir + "/seq/poses.csv");
  if (!poses) throw Error("synth: cannot write poses.csv");
  poses << "timestamp,easting,northing,azimuth\n";
  char buf[160];
  for (std::size_t i = 0; i < world.trajectory.size(); ++i) {
    const geometry::Pose2& p = world.trajectory[i];
    std::snprintf(buf, sizeof(buf), "%s,%.6f,%.6f,%.9f\n", ts_token(world.timestamps[i]).c_str(),
                  p.easting, p.northing, p.azimuth);
    poses << buf;
  }
  poses.close();

  const auto rig = default_camera_rig(opt.image_px, opt.image_px);
  json calib;
  for (int v = 0; v < 3; ++v)
    calib[model::kViewNames[static_cast<std::size_t>(v)]] = camera_to_json(rig[static_cast<std::size_t>(v)]);
  std::ofstream cj(out_dir + "/seq/calib.json");
  cj << calib.dump(2) << "\n";
  cj.close();

  if (opt.write_frames) {
    fs::create_directories(out_dir + "/seq/frames");
    for (std::size_t i = 0; i < world.trajectory.size(); ++i)
      for (int v = 0; v < 3; ++v) {
        const nn::Tensor img =
            render_camera_view(world.raster, world.trajectory[i], rig[static_cast<std::size_t>(v)]);
        map::write_png_rgb(out_dir + "/seq/frames/" + ts_token(world.timestamps[i]) + "_" +
                               model::kViewNames[static_cast<std::size_t>(v)] + ".png",
                           img);
      }
  }
  if (opt.write_oracle) {
    fs::create_directories(out_dir + "/seq/oracle");
    Rng rng(cfg.seed ^ 0x5EEDFACEull);
    for (std::size_t i = 0; i < world.trajectory.size(); ++i) {
      const nn::Tensor img =
          oracle_render(world, i, opt.oracle_sigma, opt.oracle_brightness, rng, opt.oracle_px);
      map::write_png_rgb(out_dir + "/seq/oracle/" + ts_token(world.timestamps[i]) + ".png", img);
    }
  }
}

}  // namespace bevloc::data
