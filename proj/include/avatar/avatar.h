#ifndef AVATAR_AVATAR_H
#define AVATAR_AVATAR_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(AVATAR_BUILD_SHARED)
#define AVATAR_API __attribute__((visibility("default")))
#else
#define AVATAR_API
#endif

/* Status codes. Every function returning int uses these. */
enum {
    AVATAR_OK = 0,
    AVATAR_ERR_INTERNAL = 1,
    AVATAR_ERR_VALIDATION = 2,
    AVATAR_ERR_IO = 3,
    AVATAR_ERR_NUMERIC = 4
};

typedef struct avatar_config avatar_config;
typedef struct avatar_model avatar_model;

/* Message of the last failure on the calling thread; "" after success. */
AVATAR_API const char* avatar_last_error(void);

/* Frees strings returned through char** out-parameters. NULL is ignored. */
AVATAR_API void avatar_string_free(char* s);

/* Worker threads for parallel stages; 0 selects all cores. */
AVATAR_API int avatar_set_threads(int threads);

/* Receives progress lines (no trailing newline). NULL disables logging. */
typedef void (*avatar_log_fn)(const char* line, void* user);
AVATAR_API void avatar_set_log(avatar_log_fn fn, void* user);

/* Configuration. `preset` is "desk" or "paper"; NULL means "desk". */
AVATAR_API int avatar_config_new(const char* preset, avatar_config** out);
/* Reads a key = value file on top of the preset. */
AVATAR_API int avatar_config_load(const char* path, const char* preset, avatar_config** out);
AVATAR_API int avatar_config_set(avatar_config* config, const char* key, const char* value);
AVATAR_API int avatar_config_to_text(const avatar_config* config, char** out);
AVATAR_API void avatar_config_free(avatar_config* config);

/* Renders the dataset into out_dir. summary_json may be NULL. */
AVATAR_API int avatar_generate(const avatar_config* config, const char* out_dir, char** summary_json);

/* Joint shape and pose fit of one subject; writes the fit report. */
AVATAR_API int avatar_fit(const avatar_config* config, const char* data_dir, const char* subject,
                          char** report_json);
/* Same, for a problem file holding observations, cameras and the start. */
AVATAR_API int avatar_fit_problem(const avatar_config* config, const char* problem_path, char** report_json);

/* Trains on the train split and writes the checkpoint, `<ckpt>.config` with
   the full configuration, and the loss curve (default `<ckpt>.loss.csv`).
   loss_csv and summary_json may be NULL. */
AVATAR_API int avatar_train(const avatar_config* config, const char* data_dir, const char* ckpt_path,
                            const char* loss_csv, char** summary_json);

/* Loads a checkpoint. The network layout comes from `<ckpt>.config` when
   present, otherwise from `config` (NULL means "desk"). */
AVATAR_API int avatar_model_load(const char* ckpt_path, const avatar_config* config, avatar_model** out);
AVATAR_API void avatar_model_free(avatar_model* model);

/* Fits the subject, evaluates the occupancy grid and writes the mesh as OBJ.
   A NULL model selects the analytic occupancy of the ground-truth body.
   skin_csv may be NULL. `timing` non-zero adds "seconds" to the report. */
AVATAR_API int avatar_reconstruct(const avatar_config* config, const avatar_model* model, const char* data_dir,
                                  const char* subject, const char* obj_path, const char* skin_csv, int timing,
                                  char** report_json);

/* Trains and evaluates the five cumulative ablation rows. */
AVATAR_API int avatar_ablate(const avatar_config* config, const char* data_dir, char** table_json);

/* Writes the canonical ground-truth surface of a dataset subject as OBJ. */
AVATAR_API int avatar_truth_mesh(const char* data_dir, const char* subject, const char* obj_path);

/* Symmetric surface chamfer between two OBJ meshes. */
AVATAR_API int avatar_chamfer(const char* obj_a, const char* obj_b, double* out);

#ifdef __cplusplus
}
#endif

#endif
