#include "bevlocate.h"

#include <cstring>
#include <fstream>

#include "bevloc/bench.hpp"
#include "bevloc/dataset.hpp"
#include "bevloc/evaluation.hpp"
#include "bevloc/gradcheck.hpp"
#include "bevloc/model.hpp"
#include "bevloc/pipeline.hpp"
#include "bevloc/training.hpp"
#include "png_io.hpp"

using namespace bevloc;

struct bevloc_map {
  map::GeoRaster raster;
};

struct bevloc_sequence {
  data::Sequence seq;
};

struct bevloc_model {
  std::unique_ptr<model::BevModel> m;
  bool cameras_set = false;

  // projections are rig-dependent; set lazily from the sequence in use
  void ensure_cameras(const data::Sequence& seq) {
    if (cameras_set) return;
    m->set_cameras(seq.cameras);
    cameras_set = true;
  }
};

namespace {

thread_local std::string g_last_error;

int fail(int code, const std::string& message) {
  g_last_error = message;
  return code;
}

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    return fn();
  } catch (const Error& e) {
    return fail(BEVLOC_ERR_IO, e.what());
  } catch (const std::exception& e) {
    return fail(BEVLOC_ERR_INTERNAL, e.what());
  }
}

int require(bool cond, const char* what) {
  return cond ? BEVLOC_OK : fail(BEVLOC_ERR_INVALID_ARGUMENT, what);
}

model::ModelConfig config_from_desc(const bevloc_model_desc& d) {
  model::ModelConfig cfg;
  cfg.embed_dim = d.embed_dim;
  cfg.heads = d.heads;
  cfg.grid.cells_l = d.grid_l;
  cfg.grid.cells_w = d.grid_w;
  cfg.grid.cells_h = d.grid_h;
  cfg.grid.length_m = d.bev_length_m;
  cfg.grid.width_m = d.bev_width_m;
  cfg.grid.height_m = d.bev_height_m;
  cfg.image_h = cfg.image_w = d.image_px;
  cfg.patch_kernel = d.patch_kernel;
  cfg.render_base = d.render_base;
  return cfg;
}

}  // namespace

extern "C" {

const char* bevloc_version(void) { return "0.1.0"; }

const char* bevloc_last_error(void) { return g_last_error.c_str(); }

/* maps */

int bevloc_map_open(const char* image_png, const char* meta_json, bevloc_map** out) {
  if (int rc = require(image_png && meta_json && out, "map_open: null argument")) return rc;
  return guarded([&] {
    auto handle = std::make_unique<bevloc_map>();
    handle->raster = map::load_map(image_png, meta_json);
    *out = handle.release();
    return BEVLOC_OK;
  });
}

void bevloc_map_close(bevloc_map* map) { delete map; }

int bevloc_map_size(const bevloc_map* map, int32_t* rows, int32_t* cols) {
  if (int rc = require(map && rows && cols, "map_size: null argument")) return rc;
  *rows = map->raster.rows();
  *cols = map->raster.cols();
  return BEVLOC_OK;
}

int bevloc_map_geo(const bevloc_map* map, double* origin_easting, double* origin_northing,
                   double* m_per_px) {
  if (int rc = require(map && origin_easting && origin_northing && m_per_px,
                       "map_geo: null argument"))
    return rc;
  *origin_easting = map->raster.geo.origin_easting;
  *origin_northing = map->raster.geo.origin_northing;
  *m_per_px = map->raster.geo.m_per_px;
  return BEVLOC_OK;
}

/* sequences */

int bevloc_sequence_open(const char* dir, bevloc_sequence** out) {
  if (int rc = require(dir && out, "sequence_open: null argument")) return rc;
  return guarded([&] {
    auto handle = std::make_unique<bevloc_sequence>();
    handle->seq = data::load_sequence(dir);
    *out = handle.release();
    return BEVLOC_OK;
  });
}

void bevloc_sequence_close(bevloc_sequence* seq) { delete seq; }

int bevloc_sequence_size(const bevloc_sequence* seq, int32_t* frames) {
  if (int rc = require(seq && frames, "sequence_size: null argument")) return rc;
  *frames = static_cast<int32_t>(seq->seq.frames.size());
  return BEVLOC_OK;
}

int bevloc_sequence_timestamp(const bevloc_sequence* seq, int32_t index, double* timestamp) {
  if (int rc = require(seq && timestamp, "sequence_timestamp: null argument")) return rc;
  if (index < 0 || static_cast<std::size_t>(index) >= seq->seq.frames.size())
    return fail(BEVLOC_ERR_INVALID_ARGUMENT, "sequence_timestamp: index out of range");
  *timestamp = seq->seq.frames[static_cast<std::size_t>(index)].timestamp;
  return BEVLOC_OK;
}

/* models */

int bevloc_model_desc_default(bevloc_model_desc* desc) {
  if (int rc = require(desc != nullptr, "model_desc: null argument")) return rc;
  const model::ModelConfig cfg = model::ModelConfig::defaults();
  *desc = {cfg.embed_dim, cfg.heads,          cfg.grid.cells_l, cfg.grid.cells_w,
           cfg.grid.cells_h, cfg.grid.length_m, cfg.grid.width_m, cfg.grid.height_m,
           cfg.image_h,   cfg.patch_kernel,  cfg.render_base,  1};
  return BEVLOC_OK;
}

int bevloc_model_desc_miniature(bevloc_model_desc* desc) {
  if (int rc = require(desc != nullptr, "model_desc: null argument")) return rc;
  const model::ModelConfig cfg = model::ModelConfig::miniature();
  *desc = {cfg.embed_dim, cfg.heads,          cfg.grid.cells_l, cfg.grid.cells_w,
           cfg.grid.cells_h, cfg.grid.length_m, cfg.grid.width_m, cfg.grid.height_m,
           cfg.image_h,   cfg.patch_kernel,  cfg.render_base,  1};
  return BEVLOC_OK;
}

int bevloc_model_create(const bevloc_model_desc* desc, bevloc_model** out) {
  if (int rc = require(desc && out, "model_create: null argument")) return rc;
  return guarded([&] {
    auto handle = std::make_unique<bevloc_model>();
    handle->m = std::make_unique<model::BevModel>(config_from_desc(*desc));
    handle->m->init(desc->seed);
    *out = handle.release();
    return BEVLOC_OK;
  });
}

int bevloc_model_open(const char* weights_path, bevloc_model** out) {
  if (int rc = require(weights_path && out, "model_open: null argument")) return rc;
  return guarded([&] {
    auto handle = std::make_unique<bevloc_model>();
    handle->m = model::load_model(weights_path);
    *out = handle.release();
    return BEVLOC_OK;
  });
}

int bevloc_model_save(const bevloc_model* model, const char* weights_path) {
  if (int rc = require(model && weights_path, "model_save: null argument")) return rc;
  return guarded([&] {
    model::save_model(*model->m, weights_path);
    return BEVLOC_OK;
  });
}

void bevloc_model_close(bevloc_model* model) { delete model; }

int bevloc_model_param_counts(const bevloc_model* model, uint64_t* encoder_params,
                              uint64_t* renderer_params) {
  if (int rc = require(model && encoder_params && renderer_params,
                       "model_param_counts: null argument"))
    return rc;
  *encoder_params = model->m->encoder_param_count();
  *renderer_params = model->m->renderer_param_count();
  return BEVLOC_OK;
}

/* synth */

int bevloc_synth_desc_default(bevloc_synth_desc* desc) {
  if (int rc = require(desc != nullptr, "synth_desc: null argument")) return rc;
  const data::SynthConfig cfg;
  *desc = {cfg.seed, cfg.size_m, cfg.texture_scale_m, cfg.frames, cfg.fps,
           cfg.speed_mps, cfg.margin_m, 224, 0.0, 0.0};
  return BEVLOC_OK;
}

int bevloc_synth_world(const bevloc_synth_desc* desc, const char* out_dir) {
  if (int rc = require(desc && out_dir, "synth_world: null argument")) return rc;
  return guarded([&] {
    data::SynthConfig cfg;
    cfg.seed = desc->seed;
    cfg.size_m = desc->size_m;
    cfg.texture_scale_m = desc->texture_scale_m;
    cfg.frames = desc->frames;
    cfg.fps = desc->fps;
    cfg.speed_mps = desc->speed_mps;
    cfg.margin_m = desc->margin_m;
    data::SynthWorld world = data::synth_world(cfg);
    data::SynthWriteOptions opt;
    opt.write_frames = desc->image_px > 0;
    opt.image_px = desc->image_px > 0 ? desc->image_px : 224;
    opt.oracle_sigma = desc->oracle_sigma;
    opt.oracle_brightness = desc->oracle_brightness;
    data::write_fixtures(world, cfg, out_dir, opt);
    return BEVLOC_OK;
  });
}

/* train */

int bevloc_train_desc_default(bevloc_train_desc* desc) {
  if (int rc = require(desc != nullptr, "train_desc: null argument")) return rc;
  *desc = {4e-5, 500, 1, 1, 0, 5.0, 5, -1};
  return BEVLOC_OK;
}

int bevloc_train_run(bevloc_model* model, const bevloc_sequence* seq, const bevloc_map* map,
                     const bevloc_train_desc* desc, const char* loss_csv, double* first_loss,
                     double* final_loss) {
  if (int rc = require(model && seq && map && desc, "train_run: null argument")) return rc;
  return guarded([&] {
    model->ensure_cameras(seq->seq);
    train::TrainConfig cfg;
    cfg.learning_rate = desc->learning_rate;
    cfg.steps = desc->steps;
    cfg.batch_size = desc->batch_size;
    cfg.seed = desc->seed;
    cfg.optimizer = static_cast<train::TrainConfig::Optimizer>(desc->optimizer);
    cfg.window_seconds = desc->window_seconds;
    cfg.past_frames = desc->past_frames;
    cfg.validate();

    Rng rng(cfg.seed);
    train::Trainer trainer(*model->m, cfg);
    const int label_px = model->m->config().render_out_px();

    std::ofstream csv;
    if (loss_csv) {
      csv.open(loss_csv);
      if (!csv) throw Error("train: cannot write " + std::string(loss_csv));
      csv << "step,loss\n";
    }

    // the overfit path reuses one fixed sample; otherwise draw fresh samples
    train::TrainSample fixed;
    if (desc->overfit_index >= 0) {
      data::Sample s = data::build_sample(seq->seq, static_cast<std::size_t>(desc->overfit_index),
                                          map->raster, cfg.window_seconds, cfg.past_frames, rng,
                                          label_px);
      fixed.window = data::load_window_images(s);
      fixed.label = s.label;
    }

    double first = 0.0, last = 0.0;
    for (int step = 0; step < cfg.steps; ++step) {
      double loss;
      if (desc->overfit_index >= 0) {
        loss = trainer.train_step(fixed);
      } else {
        std::vector<train::TrainSample> batch(static_cast<std::size_t>(cfg.batch_size));
        std::vector<const train::TrainSample*> ptrs;
        for (int b = 0; b < cfg.batch_size; ++b) {
          const std::size_t idx = rng.uniform_int(seq->seq.frames.size());
          data::Sample s = data::build_sample(seq->seq, idx, map->raster, cfg.window_seconds,
                                              cfg.past_frames, rng, label_px);
          batch[static_cast<std::size_t>(b)].window = data::load_window_images(s);
          batch[static_cast<std::size_t>(b)].label = s.label;
          ptrs.push_back(&batch[static_cast<std::size_t>(b)]);
        }
        loss = trainer.train_batch(ptrs);
      }
      if (step == 0) first = loss;
      last = loss;
      if (csv.is_open()) csv << step << "," << loss << "\n";
    }
    if (first_loss) *first_loss = first;
    if (final_loss) *final_loss = last;
    return BEVLOC_OK;
  });
}

/* render */

int bevloc_render_frame(const bevloc_model* model, const bevloc_sequence* seq, int32_t index,
                        double window_seconds, int32_t past_frames, uint64_t seed,
                        const bevloc_map* /*map*/, const char* out_png) {
  if (int rc = require(model && seq && out_png, "render_frame: null argument")) return rc;
  if (index < 0 || static_cast<std::size_t>(index) >= seq->seq.frames.size())
    return fail(BEVLOC_ERR_INVALID_ARGUMENT, "render_frame: index out of range");
  return guarded([&] {
    const_cast<bevloc_model*>(model)->ensure_cameras(seq->seq);
    Rng rng(hash_mix(seed ^ hash_mix(static_cast<std::uint64_t>(index) + 1)));
    // window selection without a label (no map needed)
    const data::Sequence& s = seq->seq;
    std::vector<std::size_t> chosen;
    const data::Frame& current = s.frames[static_cast<std::size_t>(index)];
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < static_cast<std::size_t>(index); ++i)
      if (s.frames[i].timestamp >= current.timestamp - window_seconds &&
          s.frames[i].timestamp < current.timestamp)
        candidates.push_back(i);
    if (!candidates.empty() && past_frames > 0) {
      if (candidates.size() <= static_cast<std::size_t>(past_frames)) {
        chosen = candidates;
        while (chosen.size() < static_cast<std::size_t>(past_frames))
          chosen.push_back(candidates.front());
      } else {
        std::vector<std::size_t> pool = candidates;
        for (int k = 0; k < past_frames; ++k) {
          const std::size_t j =
              static_cast<std::size_t>(k) + rng.uniform_int(pool.size() - static_cast<std::size_t>(k));
          std::swap(pool[static_cast<std::size_t>(k)], pool[j]);
          chosen.push_back(pool[static_cast<std::size_t>(k)]);
        }
        std::sort(chosen.begin(), chosen.end());
      }
    }
    chosen.push_back(static_cast<std::size_t>(index));

    data::Sample sample;
    for (std::size_t i : chosen) sample.window.push_back(s.frames[i]);
    auto window = data::load_window_images(sample);
    const model::BevImage img = model::render_bev_image(*model->m, window);
    map::write_png_rgb(out_png, img.rgb);
    return BEVLOC_OK;
  });
}

/* localize */

int bevloc_localize_desc_default(bevloc_localize_desc* desc) {
  if (int rc = require(desc != nullptr, "localize_desc: null argument")) return rc;
  *desc = {200.0, 0, 0.0, 0.0, 0, 0, 0, 5.0, 5};
  return BEVLOC_OK;
}

int bevloc_localize_run(const bevloc_model* model, const bevloc_sequence* seq,
                        const bevloc_map* map, const bevloc_localize_desc* desc,
                        const char* out_csv, double* seconds_per_frame) {
  if (int rc = require(seq && map && desc && out_csv, "localize_run: null argument")) return rc;
  if (!desc->oracle && !model)
    return fail(BEVLOC_ERR_INVALID_ARGUMENT, "localize_run: model required unless oracle mode");
  return guarded([&] {
    pipeline::LocalizeRunConfig cfg;
    cfg.extent_m = desc->search_extent_m;
    cfg.oracle = desc->oracle != 0;
    cfg.oracle_sigma = desc->oracle_sigma;
    cfg.oracle_brightness = desc->oracle_brightness;
    cfg.seed = desc->seed;
    cfg.jobs = desc->jobs;
    cfg.use_fast = desc->use_reference_ncc == 0;
    cfg.window_seconds = desc->window_seconds;
    cfg.past_frames = desc->past_frames;
    if (model) {
      const_cast<bevloc_model*>(model)->ensure_cameras(seq->seq);
      cfg.render_px = model->m->config().render_out_px();
    }
    const model::BevModel* m = model && !cfg.oracle ? model->m.get() : nullptr;
    pipeline::LocalizeRunResult res = pipeline::localize_sequence(m, seq->seq, map->raster, cfg);
    reg::write_predictions_csv(out_csv, res.rows);
    if (seconds_per_frame) *seconds_per_frame = res.seconds_per_frame;
    return BEVLOC_OK;
  });
}

/* evaluate */

int bevloc_evaluate(const char* pred_csv, const char* poses_csv, double threshold_m,
                    double seconds_per_frame, bevloc_eval_report* report) {
  if (int rc = require(pred_csv && poses_csv && report, "evaluate: null argument")) return rc;
  return guarded([&] {
    const eval::EvalReport r = eval::evaluate_csv(pred_csv, poses_csv, threshold_m,
                                                  seconds_per_frame);
    *report = {r.ape_mean, r.ape_std, r.match_rate, static_cast<int64_t>(r.n_frames),
               r.threshold_m, r.seconds_per_frame};
    return BEVLOC_OK;
  });
}

int bevloc_evaluate_table(const char* pred_csv, const char* poses_csv, double threshold_m,
                          double seconds_per_frame, char* buf, size_t cap) {
  if (int rc = require(pred_csv && poses_csv && buf && cap > 0, "evaluate_table: null argument"))
    return rc;
  return guarded([&] {
    std::vector<double> ape;
    const eval::EvalReport r =
        eval::evaluate_csv(pred_csv, poses_csv, threshold_m, seconds_per_frame, &ape);
    const std::string table = eval::report_table(r, true, &ape);
    std::strncpy(buf, table.c_str(), cap - 1);
    buf[cap - 1] = '\0';
    return BEVLOC_OK;
  });
}

int bevloc_eval_report_write(const bevloc_eval_report* report, const char* json_path) {
  if (int rc = require(report && json_path, "report_write: null argument")) return rc;
  return guarded([&] {
    eval::EvalReport r;
    r.ape_mean = report->ape_mean;
    r.ape_std = report->ape_std;
    r.match_rate = report->match_rate;
    r.n_frames = static_cast<std::size_t>(report->n_frames);
    r.threshold_m = report->threshold_m;
    r.seconds_per_frame = report->seconds_per_frame;
    eval::write_report_json(r, json_path);
    return BEVLOC_OK;
  });
}

/* gradcheck */

int bevloc_gradcheck_run(uint64_t seed, bevloc_gradcheck_row* rows, int32_t capacity,
                         int32_t* count) {
  if (int rc = require(count != nullptr, "gradcheck: null count")) return rc;
  return guarded([&] {
    const auto result = verify::gradcheck_all(seed);
    *count = static_cast<int32_t>(result.size());
    if (rows) {
      const int32_t n = std::min<int32_t>(capacity, *count);
      for (int32_t i = 0; i < n; ++i) {
        const auto& r = result[static_cast<std::size_t>(i)];
        std::strncpy(rows[i].name, r.name.c_str(), sizeof(rows[i].name) - 1);
        rows[i].name[sizeof(rows[i].name) - 1] = '\0';
        rows[i].max_rel_err = r.max_rel_err;
        rows[i].tolerance = r.tolerance;
        rows[i].pass = r.pass ? 1 : 0;
      }
    }
    return verify::all_passed(result) ? BEVLOC_OK
                                      : fail(BEVLOC_ERR_VERIFICATION, "gradient check failed");
  });
}

/* bench */

int bevloc_bench_ncc(int32_t region_px, int32_t template_px, int32_t iterations, uint64_t seed,
                     bevloc_bench_report* report) {
  if (int rc = require(report != nullptr, "bench: null report")) return rc;
  return guarded([&] {
    const reg::BenchReport r = reg::bench_ncc(region_px, template_px, iterations, seed);
    *report = {r.region_px, r.template_px, r.iterations, r.best_ms, r.mean_ms};
    return BEVLOC_OK;
  });
}

}  // extern "C"
