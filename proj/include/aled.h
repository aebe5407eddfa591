/* ALED: asynchronous LiDAR / event-camera depth fusion.
 *
 * C interface to the shared library. All functions return aled_status;
 * aled_last_error() describes the most recent failure on the calling thread.
 * Handles are opaque and must be released with the matching *_free call.
 */

#ifndef ALED_H
#define ALED_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum aled_status {
  ALED_OK = 0,
  ALED_ERR_USAGE = 1,   /* bad arguments or configuration */
  ALED_ERR_DATA = 2,    /* missing or corrupt files */
  ALED_ERR_NUMERIC = 3  /* non-finite values (diverged training, ...) */
} aled_status;

const char* aled_version(void);

/* Message for the last failing call on this thread; empty string otherwise. */
const char* aled_last_error(void);

/* Caps worker threads of the numeric backends; 1 gives bit-reproducible runs.
   Call before any other API function. */
void aled_set_num_threads(int n);

void aled_string_free(char* s);

/* ---- model handles ---- */

typedef struct aled_model aled_model;
typedef struct aled_state aled_state;

/* config_kv: flat "key = value" text (base_channels, bins, ...); NULL means
   defaults. The seed drives parameter initialization. */
aled_status aled_model_create(const char* config_kv, uint64_t seed, aled_model** out);
aled_status aled_model_load(const char* checkpoint_path, aled_model** out);
aled_status aled_model_save(const aled_model* model, const char* path);
int64_t aled_model_param_count(const aled_model* model);
void aled_model_free(aled_model* model);

/* Zeroed recurrent state for one sequence; width and height must be
   multiples of 8, max_range (meters) sets the depth normalization. States
   must not be shared between concurrent sequences. */
aled_status aled_state_create(const aled_model* model, int width, int height, double max_range,
                              aled_state** out);
void aled_state_free(aled_state* state);

typedef struct aled_event {
  int32_t x, y;
  int64_t t_us;
  int32_t polarity; /* +1 or -1 */
} aled_event;

/* One fusion step: optional LiDAR update (lidar_depth: width*height row-major
   meters, 0 = no measurement, NULL = skip), then the event update over
   [window_t0_us, window_t1_us], then prediction. Outputs are width*height
   row-major meters, clamped to [0, max_range]. */
aled_status aled_step(const aled_model* model, aled_state* state, const float* lidar_depth,
                      const aled_event* events, size_t event_count, int64_t window_t0_us,
                      int64_t window_t1_us, float* out_depth_bf, float* out_depth_af);

/* ---- dataset generation ---- */

typedef struct aled_gen_stats {
  uint64_t records, events, scans;
} aled_gen_stats;

/* scene: path to a scene JSON file, or "default" for the built-in desk-scale
   scene. seed_override >= 0 replaces the scene's seed. The parent of out_dir
   must exist. */
aled_status aled_generate_dataset(const char* scene, const char* out_dir, int64_t seed_override,
                                  aled_gen_stats* stats);

/* ---- training ---- */

typedef void (*aled_train_log_fn)(int epoch, int64_t step, double l_pw, double l_msg,
                                  double total, void* user);

/* Trains per the config (flat key = value text, NULL for defaults), writing
   checkpoint_epoch_NNN.ckpt, train_log.tsv and config_used.kv under out_dir.
   resume_checkpoint continues an earlier run. */
aled_status aled_train(const char* data_dir, const char* out_dir, const char* config_kv,
                       const char* resume_checkpoint, aled_train_log_fn log_fn, void* user);

/* ---- evaluation / inference ---- */

/* options_kv keys: cutoffs (comma-separated meters), tau, nn_only (0/1),
   oracle (0/1). checkpoint_path may be NULL for nn_only or oracle runs.
   *out_report receives the tab-separated tables; free with aled_string_free. */
aled_status aled_evaluate(const char* checkpoint_path, const char* data_dir,
                          const char* options_kv, char** out_report);

/* options_kv keys: tau, range ("lo:hi" meters for the color scale). Writes
   step_NNNN_{bf,af}.bin (float32 meters), per-step PNGs and infer.json. */
aled_status aled_infer(const char* checkpoint_path, const char* sequence_dir, const char* out_dir,
                       const char* options_kv);

/* Composes per-step panel figures inside a directory written by aled_infer. */
aled_status aled_render_figures(const char* infer_dir, const char* options_kv);

#ifdef __cplusplus
}
#endif

#endif /* ALED_H */
