#ifndef DFUSE_DFUSE_H
#define DFUSE_DFUSE_H

/*
 * C interface to the infrared/visible fusion library.
 *
 * Handles are opaque and owned by the caller once returned; release them with
 * the matching *_free function. Every fallible call returns a dfuse_status and
 * leaves a thread-local message readable through dfuse_last_error().
 * Images are planar float32 in [0,1] (channel-major, then rows).
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#  if defined(DFUSE_BUILDING_LIBRARY)
#    define DFUSE_API __declspec(dllexport)
#  else
#    define DFUSE_API __declspec(dllimport)
#  endif
#else
#  define DFUSE_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dfuse_status {
    DFUSE_OK = 0,
    DFUSE_E_INVALID_ARGUMENT = 1,
    DFUSE_E_INVALID_CHANNEL = 2,
    DFUSE_E_SHAPE_MISMATCH = 3,
    DFUSE_E_IO = 4,
    DFUSE_E_FORMAT = 5,
    DFUSE_E_CONFIG = 6,
    DFUSE_E_NUMERIC = 7,
    DFUSE_E_STATE = 8,
    DFUSE_E_VERSION = 9,
    DFUSE_E_INTERNAL = 100
} dfuse_status;

typedef struct dfuse_image dfuse_image;
typedef struct dfuse_model dfuse_model;

DFUSE_API const char* dfuse_version(void);
/* Message for the last failing call on this thread; empty string if none. */
DFUSE_API const char* dfuse_last_error(void);
DFUSE_API const char* dfuse_status_name(dfuse_status status);

/* ---- images ---- */

/* channels must be 1 or 3; data may be NULL for a zero image. */
DFUSE_API dfuse_status dfuse_image_create(int height, int width, int channels, const float* data, dfuse_image** out);
/* PNG or JPEG, 8-bit. */
DFUSE_API dfuse_status dfuse_image_load(const char* path, dfuse_image** out);
DFUSE_API dfuse_status dfuse_image_save_png(const dfuse_image* image, const char* path);
DFUSE_API int dfuse_image_height(const dfuse_image* image);
DFUSE_API int dfuse_image_width(const dfuse_image* image);
DFUSE_API int dfuse_image_channels(const dfuse_image* image);
DFUSE_API const float* dfuse_image_data(const dfuse_image* image);
DFUSE_API void dfuse_image_free(dfuse_image* image);

/* ---- models ---- */

typedef struct dfuse_model_info {
    int is_teacher;    /* 1: teacher stage checkpoint, 0: distilled student */
    int with_text;     /* 1 when fusion needs a category */
    int base_channels;
    int depths[4];
    int heads[4];
    int window;
    int text_dim;
    uint64_t step;
    uint64_t param_count;
} dfuse_model_info;

/* embeddings_path may be NULL (built-in category vectors). */
DFUSE_API dfuse_status dfuse_model_load(const char* checkpoint_path, const char* embeddings_path, dfuse_model** out);
DFUSE_API dfuse_status dfuse_model_info_get(const dfuse_model* model, dfuse_model_info* out);
/* category may be NULL for text-free models; required for teachers. Output is RGB. */
DFUSE_API dfuse_status dfuse_model_fuse(const dfuse_model* model, const dfuse_image* vis, const dfuse_image* ir,
                                        const char* category, dfuse_image** out);
DFUSE_API void dfuse_model_free(dfuse_model* model);

/* Learnable scalar count of a network configuration (depths: 4 entries). */
DFUSE_API dfuse_status dfuse_count_params(int base_channels, const int* depths, int with_text, uint64_t* out);

/* ---- metrics ---- */

typedef struct dfuse_metrics {
    double en;
    double mi;
    double sf;
    double vif;
    double qabf;
    double ssim_sum;
} dfuse_metrics;

DFUSE_API dfuse_status dfuse_evaluate(const dfuse_image* vis, const dfuse_image* ir, const dfuse_image* fused,
                                      dfuse_metrics* out);

/*
 * Fuse every pair of a dataset (directory or manifest.jsonl) and write the
 * per-image CSV and the Markdown summary. With copy_vis != 0 the visible
 * image is used as the fused output and model may be NULL.
 */
DFUSE_API dfuse_status dfuse_eval_dataset(const dfuse_model* model, const char* data_path, int copy_vis,
                                          const char* csv_path, const char* markdown_path, size_t* rows_out,
                                          dfuse_metrics* mean_out);

/* ---- data ---- */

typedef struct dfuse_synth_options {
    const char* src_root;    /* NULL or "" for procedural scenes */
    int procedural_count;
    int size;
    const char* categories;  /* comma-separated degradation names */
    uint64_t seed;
} dfuse_synth_options;

DFUSE_API void dfuse_synth_options_default(dfuse_synth_options* opt);
DFUSE_API dfuse_status dfuse_make_synthetic(const dfuse_synth_options* opt, const char* out_root, size_t* records_out);

/* ---- training ---- */

typedef enum dfuse_stage { DFUSE_STAGE_TEACHER = 0, DFUSE_STAGE_DISTILL = 1 } dfuse_stage;

typedef struct dfuse_log_row {
    uint64_t step;
    double l_int, l_ssim, l_grad, l_color;
    double l_feat, l_res; /* NaN in the teacher stage */
    double total;
    double lr;
} dfuse_log_row;

typedef void (*dfuse_progress_fn)(const dfuse_log_row* row, void* user);

typedef struct dfuse_train_request {
    dfuse_stage stage;
    const char* config_path;       /* may be NULL */
    const char* const* overrides;  /* "key=value", applied after the file */
    size_t override_count;
    const char* resume_path;       /* may be NULL */
    dfuse_progress_fn progress;    /* may be NULL */
    void* user;
} dfuse_train_request;

typedef struct dfuse_train_result {
    uint64_t final_step;
    double first_total;
    double last_total;
    char checkpoint_path[1024];
} dfuse_train_result;

DFUSE_API dfuse_status dfuse_train(const dfuse_train_request* request, dfuse_train_result* out);

/* Writes "key<TAB>default<TAB>help" lines for every config key into buf (NUL-terminated). */
DFUSE_API size_t dfuse_config_keys(dfuse_stage stage, char* buf, size_t buf_size);

#ifdef __cplusplus
}
#endif

#endif
