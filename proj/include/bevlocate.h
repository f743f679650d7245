/*
 * bevlocate — C API of the cross-view BEV localization engine.
 *
 * All functions return BEVLOC_OK (0) on success or a BEVLOC_ERR_* code;
 * bevloc_last_error() holds a thread-local message for the most recent
 * failure on the calling thread. Handles are opaque and must be released
 * with their _close function.
 */
#ifndef BEVLOCATE_H
#define BEVLOCATE_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#define BEVLOC_OK 0
#define BEVLOC_ERR_INVALID_ARGUMENT 1
#define BEVLOC_ERR_IO 2
#define BEVLOC_ERR_VERIFICATION 3
#define BEVLOC_ERR_INTERNAL 4

const char* bevloc_version(void);
const char* bevloc_last_error(void);

/* ------------------------------------------------------------------ maps */

typedef struct bevloc_map bevloc_map;

int bevloc_map_open(const char* image_png, const char* meta_json, bevloc_map** out);
void bevloc_map_close(bevloc_map* map);
int bevloc_map_size(const bevloc_map* map, int32_t* rows, int32_t* cols);
int bevloc_map_geo(const bevloc_map* map, double* origin_easting, double* origin_northing,
                   double* m_per_px);

/* ------------------------------------------------------------- sequences */

typedef struct bevloc_sequence bevloc_sequence;

int bevloc_sequence_open(const char* dir, bevloc_sequence** out);
void bevloc_sequence_close(bevloc_sequence* seq);
int bevloc_sequence_size(const bevloc_sequence* seq, int32_t* frames);
int bevloc_sequence_timestamp(const bevloc_sequence* seq, int32_t index, double* timestamp);

/* ---------------------------------------------------------------- models */

typedef struct bevloc_model bevloc_model;

typedef struct bevloc_model_desc {
  int32_t embed_dim;
  int32_t heads;
  int32_t grid_l, grid_w, grid_h;
  double bev_length_m, bev_width_m, bev_height_m;
  int32_t image_px;
  int32_t patch_kernel;
  int32_t render_base;
  uint64_t seed;
} bevloc_model_desc;

/* production dimensions (64 x 28 x 28 BEV feature, 224 px renders) */
int bevloc_model_desc_default(bevloc_model_desc* desc);
/* desk-scale miniature (8 x 8 x 8 grid, 64 px renders) */
int bevloc_model_desc_miniature(bevloc_model_desc* desc);

int bevloc_model_create(const bevloc_model_desc* desc, bevloc_model** out);
int bevloc_model_open(const char* weights_path, bevloc_model** out);
int bevloc_model_save(const bevloc_model* model, const char* weights_path);
void bevloc_model_close(bevloc_model* model);
int bevloc_model_param_counts(const bevloc_model* model, uint64_t* encoder_params,
                              uint64_t* renderer_params);

/* --------------------------------------------------------------- commands */

typedef struct bevloc_synth_desc {
  uint64_t seed;
  double size_m;
  double texture_scale_m;
  int32_t frames;
  double fps;
  double speed_mps;
  double margin_m;
  int32_t image_px;      /* camera frame size; 0 disables frame rendering */
  double oracle_sigma;   /* corruption of the emitted oracle renders */
  double oracle_brightness;
} bevloc_synth_desc;

int bevloc_synth_desc_default(bevloc_synth_desc* desc);
int bevloc_synth_world(const bevloc_synth_desc* desc, const char* out_dir);

typedef struct bevloc_train_desc {
  double learning_rate;
  int32_t steps;
  int32_t batch_size;
  uint64_t seed;
  int32_t optimizer;      /* 0 sgd, 1 momentum, 2 adam */
  double window_seconds;
  int32_t past_frames;
  int32_t overfit_index;  /* >= 0: repeat this one sample every step */
} bevloc_train_desc;

int bevloc_train_desc_default(bevloc_train_desc* desc);
/* loss_csv may be NULL; first/final loss outputs may be NULL */
int bevloc_train_run(bevloc_model* model, const bevloc_sequence* seq, const bevloc_map* map,
                     const bevloc_train_desc* desc, const char* loss_csv, double* first_loss,
                     double* final_loss);

int bevloc_render_frame(const bevloc_model* model, const bevloc_sequence* seq, int32_t index,
                        double window_seconds, int32_t past_frames, uint64_t seed,
                        const bevloc_map* map /* labels offline; may be NULL */,
                        const char* out_png);

typedef struct bevloc_localize_desc {
  double search_extent_m; /* default 200 */
  int32_t oracle;         /* 1: map-crop renders instead of the model */
  double oracle_sigma;
  double oracle_brightness;
  uint64_t seed;
  int32_t jobs;           /* <= 0: auto; env BEVLOCATE_THREADS caps */
  int32_t use_reference_ncc; /* 1: masked reference path (slow) */
  double window_seconds;
  int32_t past_frames;
} bevloc_localize_desc;

int bevloc_localize_desc_default(bevloc_localize_desc* desc);
/* model may be NULL in oracle mode; writes the predictions CSV */
int bevloc_localize_run(const bevloc_model* model, const bevloc_sequence* seq,
                        const bevloc_map* map, const bevloc_localize_desc* desc,
                        const char* out_csv, double* seconds_per_frame);

typedef struct bevloc_eval_report {
  double ape_mean;
  double ape_std; /* population */
  double match_rate;
  int64_t n_frames;
  double threshold_m;
  double seconds_per_frame;
} bevloc_eval_report;

int bevloc_evaluate(const char* pred_csv, const char* poses_csv, double threshold_m,
                    double seconds_per_frame, bevloc_eval_report* report);
/* formatted table incl. median and sample std; truncates to `cap` bytes */
int bevloc_evaluate_table(const char* pred_csv, const char* poses_csv, double threshold_m,
                          double seconds_per_frame, char* buf, size_t cap);
int bevloc_eval_report_write(const bevloc_eval_report* report, const char* json_path);

typedef struct bevloc_gradcheck_row {
  char name[64];
  double max_rel_err;
  double tolerance;
  int32_t pass;
} bevloc_gradcheck_row;

/* fills up to `capacity` rows; *count receives the total row count */
int bevloc_gradcheck_run(uint64_t seed, bevloc_gradcheck_row* rows, int32_t capacity,
                         int32_t* count);

typedef struct bevloc_bench_report {
  int32_t region_px;
  int32_t template_px;
  int32_t iterations;
  double best_ms;
  double mean_ms;
} bevloc_bench_report;

int bevloc_bench_ncc(int32_t region_px, int32_t template_px, int32_t iterations, uint64_t seed,
                     bevloc_bench_report* report);

#ifdef __cplusplus
}
#endif

#endif /* BEVLOCATE_H */
