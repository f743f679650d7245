// bevlocate command-line front end. Talks to the engine exclusively through
// the C API in bevlocate.h; every command writes one run_manifest.json into
// its output directory.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "bevlocate.h"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitVerification = 2;

int fail_api(const char* what, int code) {
  std::fprintf(stderr, "BEVLOC_ERROR code=%d where=%s msg=\"%s\"\n", code, what,
               bevloc_last_error());
  return code == BEVLOC_ERR_VERIFICATION ? kExitVerification : kExitUsage;
}

#define CHECK_API(expr)                                  \
  do {                                                   \
    const int rc_ = (expr);                              \
    if (rc_ != BEVLOC_OK) return fail_api(#expr, rc_);   \
  } while (0)

struct ManifestWriter {
  std::string out_dir;
  json config = json::object();
  std::string command;
  std::uint64_t seed = 0;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  std::vector<std::string> outputs;

  void write() const {
    json m = {{"command", command},
              {"config", config},
              {"seed", seed},
              {"build_id", std::string("bevlocate-") + bevloc_version()},
              {"timings", {{"seconds", std::chrono::duration<double>(
                                           std::chrono::steady_clock::now() - start)
                                           .count()}}},
              {"outputs", outputs}};
    std::ofstream os(out_dir + "/run_manifest.json");
    os << m.dump(2) << "\n";
  }
};

struct MapHandle {
  bevloc_map* p = nullptr;
  ~MapHandle() { bevloc_map_close(p); }
};
struct SeqHandle {
  bevloc_sequence* p = nullptr;
  ~SeqHandle() { bevloc_sequence_close(p); }
};
struct ModelHandle {
  bevloc_model* p = nullptr;
  ~ModelHandle() { bevloc_model_close(p); }
};

std::string ts_name(double t) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", t);
  return buf;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"bevlocate: BEV rendering and NCC cross-view localization"};
  app.require_subcommand(1);

  // ---- synth ----
  auto* synth = app.add_subcommand("synth", "generate a synthetic world and sequence fixtures");
  std::string synth_out;
  bevloc_synth_desc sd;
  bevloc_synth_desc_default(&sd);
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--seed", sd.seed, "world seed");
  synth->add_option("--size-m", sd.size_m, "map side length in meters");
  synth->add_option("--texture-m", sd.texture_scale_m, "base texture wavelength in meters");
  synth->add_option("--frames", sd.frames, "trajectory frame count");
  synth->add_option("--fps", sd.fps, "camera frame rate");
  synth->add_option("--speed", sd.speed_mps, "vehicle speed m/s");
  synth->add_option("--margin-m", sd.margin_m, "border margin for the trajectory");
  synth->add_option("--image-px", sd.image_px, "camera frame size (0 skips frame rendering)");
  synth->add_option("--oracle-sigma", sd.oracle_sigma, "noise sigma on emitted oracle renders");
  synth->add_option("--oracle-brightness", sd.oracle_brightness, "brightness offset on oracle renders");

  // ---- train ----
  auto* train = app.add_subcommand("train", "desk-scale supervised training");
  std::string train_data, train_map, train_meta, train_out, train_init, train_opt = "sgd";
  bool train_miniature = false;
  bevloc_train_desc td;
  bevloc_train_desc_default(&td);
  train->add_option("--data", train_data, "sequence directory")->required();
  train->add_option("--map", train_map, "aerial map PNG")->required();
  train->add_option("--meta", train_meta, "map metadata JSON")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--init-weights", train_init, "resume from a BRW1 checkpoint");
  train->add_flag("--miniature", train_miniature, "miniature model dimensions");
  train->add_option("--steps", td.steps, "optimizer steps");
  train->add_option("--lr", td.learning_rate, "learning rate");
  train->add_option("--batch", td.batch_size, "samples per step");
  train->add_option("--seed", td.seed, "training seed");
  train->add_option("--optimizer", train_opt, "sgd | momentum | adam");
  train->add_option("--window-s", td.window_seconds, "temporal window seconds");
  train->add_option("--past-frames", td.past_frames, "past frames per sample");
  train->add_option("--overfit", td.overfit_index, "repeat this sample index every step");

  // ---- render ----
  auto* render = app.add_subcommand("render", "render BEV images for sequence frames");
  std::string render_data, render_weights, render_out;
  std::vector<int> render_indices;
  bool render_all = false;
  double render_window_s = 5.0;
  int render_past = 5;
  std::uint64_t render_seed = 0;
  render->add_option("--data", render_data, "sequence directory")->required();
  render->add_option("--weights", render_weights, "BRW1 checkpoint")->required();
  render->add_option("--out", render_out, "output directory")->required();
  render->add_option("--index", render_indices, "frame indices (repeatable)");
  render->add_flag("--all", render_all, "render every frame");
  render->add_option("--window-s", render_window_s, "temporal window seconds");
  render->add_option("--past-frames", render_past, "past frames per window");
  render->add_option("--seed", render_seed, "window sampling seed");

  // ---- localize ----
  auto* localize = app.add_subcommand("localize", "register frames against the aerial map");
  std::string loc_map, loc_meta, loc_data, loc_out, loc_weights;
  bool loc_oracle = false, loc_reference = false;
  double loc_threshold = 10.0;
  bevloc_localize_desc ld;
  bevloc_localize_desc_default(&ld);
  localize->add_option("--map", loc_map, "aerial map PNG")->required();
  localize->add_option("--meta", loc_meta, "map metadata JSON")->required();
  localize->add_option("--data", loc_data, "sequence directory")->required();
  localize->add_option("--out", loc_out, "output directory")->required();
  localize->add_option("--weights", loc_weights, "BRW1 checkpoint (neural renders)");
  localize->add_flag("--oracle", loc_oracle, "map-crop oracle renders instead of a model");
  localize->add_option("--search-m", ld.search_extent_m, "search region extent in meters");
  localize->add_option("--threshold-m", loc_threshold, "match threshold echoed to the manifest");
  localize->add_option("--sigma", ld.oracle_sigma, "oracle render noise sigma");
  localize->add_option("--brightness", ld.oracle_brightness, "oracle render brightness offset");
  localize->add_option("--seed", ld.seed, "oracle corruption seed");
  localize->add_option("--jobs", ld.jobs, "worker threads (0 = auto)");
  localize->add_flag("--reference", loc_reference, "masked reference NCC path (slow)");
  localize->add_option("--window-s", ld.window_seconds, "temporal window seconds");
  localize->add_option("--past-frames", ld.past_frames, "past frames per window");

  // ---- eval ----
  auto* evalc = app.add_subcommand("eval", "APE statistics and match rate");
  std::string eval_pred, eval_poses, eval_out;
  double eval_threshold = 10.0, eval_spf = -1.0;
  evalc->add_option("--pred", eval_pred, "predictions CSV")->required();
  evalc->add_option("--poses", eval_poses, "ground-truth poses.csv")->required();
  evalc->add_option("--out", eval_out, "output directory")->required();
  evalc->add_option("--threshold-m", eval_threshold, "match threshold in meters");
  evalc->add_option("--seconds-per-frame", eval_spf,
                    "override timing (default: predictions manifest)");

  // ---- gradcheck ----
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every VJP");
  std::uint64_t grad_seed = 20240901;
  std::string grad_out;
  grad->add_option("--seed", grad_seed, "probe seed");
  grad->add_option("--out", grad_out, "optional output directory");

  // ---- bench ----
  auto* bench = app.add_subcommand("bench", "NCC fast-path latency");
  int bench_region = 874, bench_template = 158, bench_iters = 10;
  std::uint64_t bench_seed = 1;
  std::string bench_out;
  bench->add_option("--region-px", bench_region, "search region side");
  bench->add_option("--template-px", bench_template, "template side");
  bench->add_option("--iters", bench_iters, "timed iterations");
  bench->add_option("--seed", bench_seed, "texture seed");
  bench->add_option("--out", bench_out, "optional output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? kExitOk : kExitUsage;
  }

  if (synth->parsed()) {
    fs::create_directories(synth_out);
    ManifestWriter mw{synth_out};
    mw.command = "synth";
    mw.seed = sd.seed;
    mw.config = {{"size_m", sd.size_m},       {"texture_m", sd.texture_scale_m},
                 {"frames", sd.frames},       {"fps", sd.fps},
                 {"speed", sd.speed_mps},     {"margin_m", sd.margin_m},
                 {"image_px", sd.image_px},   {"oracle_sigma", sd.oracle_sigma},
                 {"oracle_brightness", sd.oracle_brightness}};
    CHECK_API(bevloc_synth_world(&sd, synth_out.c_str()));
    mw.outputs = {"map.png", "map.json", "seq/"};
    mw.write();
    std::printf("synthetic world written to %s (%d frames)\n", synth_out.c_str(), sd.frames);
    return kExitOk;
  }

  if (train->parsed()) {
    fs::create_directories(train_out);
    ManifestWriter mw{train_out};
    mw.command = "train";
    mw.seed = td.seed;
    if (train_opt == "sgd") td.optimizer = 0;
    else if (train_opt == "momentum") td.optimizer = 1;
    else if (train_opt == "adam") td.optimizer = 2;
    else {
      std::fprintf(stderr, "error: unknown optimizer '%s'\n", train_opt.c_str());
      return kExitUsage;
    }
    mw.config = {{"data", train_data},     {"map", train_map},
                 {"steps", td.steps},      {"lr", td.learning_rate},
                 {"batch", td.batch_size}, {"optimizer", train_opt},
                 {"window_s", td.window_seconds}, {"past_frames", td.past_frames},
                 {"overfit", td.overfit_index},   {"miniature", train_miniature},
                 {"init_weights", train_init}};

    MapHandle map;
    SeqHandle seq;
    ModelHandle model;
    CHECK_API(bevloc_map_open(train_map.c_str(), train_meta.c_str(), &map.p));
    CHECK_API(bevloc_sequence_open(train_data.c_str(), &seq.p));
    if (!train_init.empty()) {
      CHECK_API(bevloc_model_open(train_init.c_str(), &model.p));
    } else {
      bevloc_model_desc md;
      if (train_miniature)
        bevloc_model_desc_miniature(&md);
      else
        bevloc_model_desc_default(&md);
      md.seed = td.seed;
      CHECK_API(bevloc_model_create(&md, &model.p));
    }
    uint64_t enc = 0, ren = 0;
    bevloc_model_param_counts(model.p, &enc, &ren);
    std::printf("parameters: encoder %llu, renderer %llu, total %llu\n",
                static_cast<unsigned long long>(enc), static_cast<unsigned long long>(ren),
                static_cast<unsigned long long>(enc + ren));

    double first = 0.0, final = 0.0;
    const std::string loss_csv = train_out + "/loss.csv";
    CHECK_API(bevloc_train_run(model.p, seq.p, map.p, &td, loss_csv.c_str(), &first, &final));
    const std::string weights = train_out + "/weights.brw1";
    CHECK_API(bevloc_model_save(model.p, weights.c_str()));
    mw.outputs = {"weights.brw1", "loss.csv"};
    mw.write();
    std::printf("loss: first %.6f -> final %.6f (%d steps)\n", first, final, td.steps);
    return kExitOk;
  }

  if (render->parsed()) {
    fs::create_directories(render_out);
    ManifestWriter mw{render_out};
    mw.command = "render";
    mw.seed = render_seed;
    mw.config = {{"data", render_data}, {"weights", render_weights}, {"all", render_all}};

    SeqHandle seq;
    ModelHandle model;
    CHECK_API(bevloc_sequence_open(render_data.c_str(), &seq.p));
    CHECK_API(bevloc_model_open(render_weights.c_str(), &model.p));
    int32_t n = 0;
    bevloc_sequence_size(seq.p, &n);
    std::vector<int> indices = render_indices;
    if (render_all) {
      indices.clear();
      for (int i = 0; i < n; ++i) indices.push_back(i);
    }
    if (indices.empty()) {
      std::fprintf(stderr, "error: pass --index or --all\n");
      return kExitUsage;
    }
    for (int i : indices) {
      double ts = 0.0;
      CHECK_API(bevloc_sequence_timestamp(seq.p, i, &ts));
      const std::string out_png = render_out + "/bev_" + ts_name(ts) + ".png";
      CHECK_API(bevloc_render_frame(model.p, seq.p, i, render_window_s, render_past, render_seed,
                                    nullptr, out_png.c_str()));
      mw.outputs.push_back("bev_" + ts_name(ts) + ".png");
    }
    mw.write();
    std::printf("rendered %zu frame(s) to %s\n", indices.size(), render_out.c_str());
    return kExitOk;
  }

  if (localize->parsed()) {
    fs::create_directories(loc_out);
    ManifestWriter mw{loc_out};
    mw.command = "localize";
    mw.seed = ld.seed;
    ld.oracle = loc_oracle ? 1 : 0;
    ld.use_reference_ncc = loc_reference ? 1 : 0;
    if (!loc_oracle && loc_weights.empty()) {
      std::fprintf(stderr, "error: pass --weights or --oracle\n");
      return kExitUsage;
    }
    mw.config = {{"map", loc_map},         {"data", loc_data},
                 {"weights", loc_weights}, {"oracle", loc_oracle},
                 {"search_m", ld.search_extent_m}, {"threshold_m", loc_threshold},
                 {"sigma", ld.oracle_sigma}, {"brightness", ld.oracle_brightness},
                 {"jobs", ld.jobs},          {"reference_ncc", loc_reference}};

    MapHandle map;
    SeqHandle seq;
    ModelHandle model;
    CHECK_API(bevloc_map_open(loc_map.c_str(), loc_meta.c_str(), &map.p));
    CHECK_API(bevloc_sequence_open(loc_data.c_str(), &seq.p));
    if (!loc_weights.empty())
      CHECK_API(bevloc_model_open(loc_weights.c_str(), &model.p));

    const std::string pred_csv = loc_out + "/predictions.csv";
    double spf = 0.0;
    CHECK_API(bevloc_localize_run(model.p, seq.p, map.p, &ld, pred_csv.c_str(), &spf));
    mw.config["seconds_per_frame"] = spf;
    mw.outputs = {"predictions.csv"};
    mw.write();
    std::printf("predictions written to %s (%.3f s/frame)\n", pred_csv.c_str(), spf);
    return kExitOk;
  }

  if (evalc->parsed()) {
    fs::create_directories(eval_out);
    ManifestWriter mw{eval_out};
    mw.command = "eval";
    double spf = eval_spf;
    if (spf < 0.0) {
      spf = 0.0;
      // timing recorded by the localize run, if available
      const fs::path manifest = fs::path(eval_pred).parent_path() / "run_manifest.json";
      std::ifstream is(manifest);
      if (is) {
        json m = json::parse(is, nullptr, false);
        if (!m.is_discarded() && m.contains("config") &&
            m["config"].contains("seconds_per_frame"))
          spf = m["config"]["seconds_per_frame"].get<double>();
      }
    }
    mw.config = {{"pred", eval_pred},
                 {"poses", eval_poses},
                 {"threshold_m", eval_threshold},
                 {"seconds_per_frame", spf}};

    bevloc_eval_report report;
    CHECK_API(bevloc_evaluate(eval_pred.c_str(), eval_poses.c_str(), eval_threshold, spf, &report));
    char table[2048];
    CHECK_API(bevloc_evaluate_table(eval_pred.c_str(), eval_poses.c_str(), eval_threshold, spf,
                                    table, sizeof(table)));
    const std::string report_json = eval_out + "/report.json";
    CHECK_API(bevloc_eval_report_write(&report, report_json.c_str()));
    mw.outputs = {"report.json"};
    mw.write();
    std::fputs(table, stdout);
    return kExitOk;
  }

  if (grad->parsed()) {
    std::vector<bevloc_gradcheck_row> rows(64);
    int32_t count = 0;
    const int rc = bevloc_gradcheck_run(grad_seed, rows.data(), static_cast<int32_t>(rows.size()),
                                        &count);
    if (rc != BEVLOC_OK && rc != BEVLOC_ERR_VERIFICATION) return fail_api("gradcheck", rc);
    std::printf("%-28s %12s %10s  %s\n", "vjp", "max_rel_err", "tol", "status");
    bool ok = true;
    for (int32_t i = 0; i < count && i < static_cast<int32_t>(rows.size()); ++i) {
      std::printf("%-28s %12.3e %10.0e  %s\n", rows[i].name, rows[i].max_rel_err,
                  rows[i].tolerance, rows[i].pass ? "pass" : "FAIL");
      ok = ok && rows[i].pass;
    }
    if (!grad_out.empty()) {
      fs::create_directories(grad_out);
      ManifestWriter mw{grad_out};
      mw.command = "gradcheck";
      mw.seed = grad_seed;
      mw.config = {{"rows", count}, {"passed", ok}};
      mw.write();
    }
    std::printf("gradcheck: %s\n", ok ? "all passed" : "FAILURES");
    return ok ? kExitOk : kExitVerification;
  }

  if (bench->parsed()) {
    bevloc_bench_report report;
    CHECK_API(bevloc_bench_ncc(bench_region, bench_template, bench_iters, bench_seed, &report));
    std::printf("ncc_map_fast  region %dx%d  template %dx%d\n", report.region_px,
                report.region_px, report.template_px, report.template_px);
    std::printf("iterations %d  best %.2f ms  mean %.2f ms\n", report.iterations, report.best_ms,
                report.mean_ms);
    if (!bench_out.empty()) {
      fs::create_directories(bench_out);
      ManifestWriter mw{bench_out};
      mw.command = "bench";
      mw.seed = bench_seed;
      mw.config = {{"region_px", report.region_px},
                   {"template_px", report.template_px},
                   {"iterations", report.iterations},
                   {"best_ms", report.best_ms},
                   {"mean_ms", report.mean_ms}};
      mw.write();
    }
    return kExitOk;
  }

  return kExitUsage;
}
