#ifndef SCENEFUSE_H
#define SCENEFUSE_H

#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define SF_API __attribute__((visibility("default")))
#else
#define SF_API
#endif

typedef enum sf_status {
  SF_OK = 0,
  SF_ERR_DEGENERATE_DEPTH,
  SF_ERR_DEGENERATE_INPUT,
  SF_ERR_DEGENERATE_NORM,
  SF_ERR_DEGENERATE_LABELS,
  SF_ERR_SHAPE_MISMATCH,
  SF_ERR_CAPACITY,
  SF_ERR_CONVERGENCE_FAILURE,
  SF_ERR_BAD_PARAM,
  SF_ERR_PARTITION_INFEASIBLE,
  SF_ERR_PLACEMENT_FAILURE,
  SF_ERR_IO,
  SF_ERR_FORMAT,
  SF_ERR_CONFIG,
  SF_ERR_BRIDGE,
  SF_ERR_NULL_ARGUMENT,
  SF_ERR_INTERNAL
} sf_status;

typedef struct sf_config sf_config;
typedef struct sf_dataset sf_dataset;
typedef struct sf_model sf_model;

SF_API const char* sf_status_name(sf_status status);
/* Message of the last failure on the calling thread; empty after success. */
SF_API const char* sf_last_error(void);
/* Strings returned through char** out-parameters are released with this. */
SF_API void sf_string_free(char* s);

/* Training configuration, a flat JSON object. */
SF_API sf_status sf_config_new(sf_config** out);
SF_API void sf_config_free(sf_config* config);
/* Layers the keys of `json` over the current values. */
SF_API sf_status sf_config_merge_json(sf_config* config, const char* json);
/* `value` is parsed as JSON, e.g. "0.1", "true". */
SF_API sf_status sf_config_set(sf_config* config, const char* key, const char* value);
SF_API sf_status sf_config_to_json(const sf_config* config, char** out_json);
SF_API sf_status sf_config_hash(const sf_config* config, uint64_t* out_hash);

/* Writes scene_XXXX.ply files and manifest.json. `spec_json` may be NULL
 * for the default scene spec. */
SF_API sf_status sf_scenegen(const char* spec_json, int n_scenes, int n_test, uint64_t seed, const char* out_dir);

/* Renders a ring of views around a PLY scene into `out_dir`: view_XX.ppm,
 * view_XX.c3dm, view_XX.dpth and cameras.json. Uses views, resolution,
 * elevation and jobs from the config. */
SF_API sf_status sf_render(const char* scene_ply, const sf_config* config, const char* out_dir);

/* Proposals for a scene from views written by sf_render. `out_json`
 * receives the united boxes and precision/recall of every proposal set
 * against the instance boxes of the scene's labels. */
SF_API sf_status sf_propose(const char* scene_ply, const char* views_dir, char** out_json);

SF_API sf_status sf_dataset_open(const char* manifest_path, sf_dataset** out);
SF_API void sf_dataset_free(sf_dataset* dataset);
SF_API sf_status sf_dataset_info(const sf_dataset* dataset, char** out_json);

/* `provider` is "toy" or "bridge:URL". Training logs are written as JSON
 * lines to `log_path` when it is not NULL. */
SF_API sf_status sf_pretrain(const sf_dataset* dataset, const char* provider, const sf_config* config,
                             const char* log_path, sf_model** out);

/* Fine-tunes `init` on the train split with the given label ratio.
 * `out_partition_json` (optional) receives the label partition. */
SF_API sf_status sf_finetune(const sf_dataset* dataset, const char* provider, const sf_config* config,
                             double ratio, const sf_model* init, const char* log_path, sf_model** out,
                             char** out_partition_json);

SF_API sf_status sf_model_read(const char* path, sf_model** out);
SF_API sf_status sf_model_write(const sf_model* model, const char* path);
SF_API void sf_model_free(sf_model* model);
/* Non-zero when the model carries a classifier head. */
SF_API int sf_model_has_head(const sf_model* model);

/* Evaluates on the test split and stores the metrics under `ratio` in the
 * report at `report_path` (created or updated). `out_report_json` receives
 * the file contents. */
SF_API sf_status sf_evaluate(const sf_dataset* dataset, const char* provider, const sf_config* config,
                             const sf_model* model, double ratio, const char* report_path, char** out_report_json);

/* Per-point activation of `text` over a PLY scene, in [-1, 1]. `dataset`
 * supplies the vocabulary for the toy provider and may be NULL, in which
 * case the default scene vocabulary is used. The PLY at `out_ply` colors
 * points by activation (gray level (a + 1) / 2). */
SF_API sf_status sf_query(const sf_model* model, const sf_dataset* dataset, const char* provider,
                          const sf_config* config, const char* scene_ply, const char* text, const char* out_ply,
                          double* out_min, double* out_max);

#ifdef __cplusplus
}
#endif

#endif
