/* msdlab — multi-student one-step distillation of a 2D diffusion teacher.
 *
 * C API over the C++ core. All entry points return a status code; the
 * message for the most recent failure on the calling thread is available
 * via msdlab_last_error(). Handles are opaque and must be released with
 * their matching _free function.
 */
#ifndef MSDLAB_H
#define MSDLAB_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MSDLAB_API __declspec(dllexport)
#elif defined(__GNUC__) || defined(__clang__)
#define MSDLAB_API __attribute__((visibility("default")))
#else
#define MSDLAB_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes double as CLI exit codes. */
enum {
    MSDLAB_OK = 0,
    MSDLAB_ERR_VALIDATION = 2,
    MSDLAB_ERR_IO = 3,
    MSDLAB_ERR_NUMERIC = 4,
};

typedef struct msdlab_config msdlab_config;

/* New config with desk-scale defaults. Never fails except on OOM. */
MSDLAB_API msdlab_config* msdlab_config_new(void);
MSDLAB_API void msdlab_config_free(msdlab_config* cfg);

/* Merge a "key = value" config file into cfg. */
MSDLAB_API int msdlab_config_load(msdlab_config* cfg, const char* path);

/* Set a single dotted key, e.g. ("distill.iterations", "20000"). */
MSDLAB_API int msdlab_config_set(msdlab_config* cfg, const char* key, const char* value);

/* Restore the published iteration counts and learning rate. */
MSDLAB_API int msdlab_config_paper_scale(msdlab_config* cfg);

/* Apply MSD_SEED and validate every field; call before running commands. */
MSDLAB_API int msdlab_config_finalize(msdlab_config* cfg);

/* Message for the most recent failure on this thread ("" if none). */
MSDLAB_API const char* msdlab_last_error(void);

/* Commands. out_dir contents follow the documented file layout. */
MSDLAB_API int msdlab_train_teacher(const msdlab_config* cfg, const char* out_dir,
                                    int force);
MSDLAB_API int msdlab_gen_pairs(const msdlab_config* cfg, const char* teacher_ckpt,
                                const char* out_path, int force);
MSDLAB_API int msdlab_distill(const msdlab_config* cfg, const char* teacher_ckpt,
                              const char* pairs_path, const char* out_dir, int force);

/* Evaluates bundle_dirs[0..n_dirs) against the teacher; writes histogram
 * CSVs under out_dir (may be NULL) and stores the collective l1 metric in
 * *l1_out (may be NULL). */
MSDLAB_API int msdlab_eval(const msdlab_config* cfg, const char* const* bundle_dirs,
                           size_t n_dirs, const char* teacher_ckpt, const char* out_dir,
                           double* l1_out);

/* l1 between two independent teacher sample histograms (metric noise
 * floor). */
MSDLAB_API int msdlab_eval_noise_floor(const msdlab_config* cfg,
                                       const char* teacher_ckpt, const char* out_dir,
                                       double* l1_out);

MSDLAB_API int msdlab_ablate(const msdlab_config* cfg, const char* out_dir, int force);

#ifdef __cplusplus
}
#endif

#endif /* MSDLAB_H */
