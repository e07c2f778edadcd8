#ifndef SPRAG_SPRAG_H
#define SPRAG_SPRAG_H

#include <stddef.h>
#include <stdint.h>

#if defined(SPRAG_BUILDING_LIBRARY)
#define SPRAG_API __attribute__((visibility("default")))
#else
#define SPRAG_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Status codes. On failure sprag_last_error() holds a message for the calling thread. */
typedef enum sprag_status {
  SPRAG_OK = 0,
  SPRAG_E_INVALID_ARGUMENT = 1,
  SPRAG_E_SCHEMA = 2,
  SPRAG_E_ROW = 3,
  SPRAG_E_IO = 4,
  SPRAG_E_INSUFFICIENT_DATA = 5,
  SPRAG_E_TRANSPORT = 6,
  SPRAG_E_DIMENSION = 7,
  SPRAG_E_NORMALIZATION = 8,
  SPRAG_E_UNDEFINED_SIMILARITY = 9,
  SPRAG_E_GENERATION = 10,
  SPRAG_E_VALIDATION = 11,
  SPRAG_E_NOT_FOUND = 12,
  SPRAG_E_NO_SIGNAL = 13,
  SPRAG_E_INSUFFICIENT_PAIRS = 14,
  SPRAG_E_LENGTH_MISMATCH = 15,
  SPRAG_E_INCOMPLETE_GRID = 16,
  SPRAG_E_CONFIG = 17,
  SPRAG_E_UNAVAILABLE = 18,
  SPRAG_E_LOCKED = 19,
  SPRAG_E_INTERNAL = 20
} sprag_status;

typedef enum sprag_alternative {
  SPRAG_TWO_SIDED = 0,
  SPRAG_LESS = 1,
  SPRAG_GREATER = 2
} sprag_alternative;

typedef struct sprag_test_result {
  double statistic;
  double p_value;
  size_t n_effective;
  int exact; /* 1 when the p-value comes from the exact null distribution */
} sprag_test_result;

typedef struct sprag_engine sprag_engine_t;
typedef struct sprag_index sprag_index_t;
typedef struct sprag_service sprag_service_t;

SPRAG_API const char* sprag_version(void);
SPRAG_API const char* sprag_status_name(sprag_status status);
/* Message of the last failed call on this thread; "" if none. Valid until the next call. */
SPRAG_API const char* sprag_last_error(void);
/* Releases strings returned through char** out-parameters. NULL is ignored. */
SPRAG_API void sprag_free_string(char* s);

/* ---- engine ------------------------------------------------------------ */

/* config_path may be NULL (built-in defaults). overrides_json, if not NULL, is a
 * JSON object applied over the file with the same keys. Environment overrides
 * (SPRAG_EMBED_URL, SPRAG_GEN_URL, SPRAG_API_KEY) apply before overrides_json. */
SPRAG_API sprag_status sprag_engine_create(const char* config_path, const char* overrides_json,
                                           sprag_engine_t** out);
SPRAG_API void sprag_engine_free(sprag_engine_t* engine);
SPRAG_API sprag_status sprag_engine_config(sprag_engine_t* engine, char** out_json);

/* Every command takes a JSON request object and returns a JSON document.
 *   ingest:   {"files":[...], "project"?}
 *   split:    {"project", "ratio"?}
 *   index_project: {"project"}
 *   estimate: {"project", "title", "description"?, "top_k"?, "temperature"?}
 *             or {"project", "issue_key", ...} for a task of the test split
 *   sweep:    {"project", "grid"?: ["k=3", "temp=0"]}
 *   evaluate: {"grid"?: [...]}
 *   stats:    {}
 *   report:   {"out_dir", "fixture_only"?}
 *   projects: {} */
SPRAG_API sprag_status sprag_ingest(sprag_engine_t* engine, const char* request_json, char** out_json);
SPRAG_API sprag_status sprag_split(sprag_engine_t* engine, const char* request_json, char** out_json);
SPRAG_API sprag_status sprag_index_project(sprag_engine_t* engine, const char* request_json, char** out_json);
SPRAG_API sprag_status sprag_estimate(sprag_engine_t* engine, const char* request_json, char** out_json);
SPRAG_API sprag_status sprag_sweep(sprag_engine_t* engine, const char* request_json, char** out_json);
SPRAG_API sprag_status sprag_evaluate(sprag_engine_t* engine, const char* request_json, char** out_json);
SPRAG_API sprag_status sprag_stats(sprag_engine_t* engine, const char* request_json, char** out_json);
SPRAG_API sprag_status sprag_report(sprag_engine_t* engine, const char* request_json, char** out_json);
SPRAG_API sprag_status sprag_projects(sprag_engine_t* engine, char** out_json);

/* ---- project index ----------------------------------------------------- */

SPRAG_API sprag_status sprag_index_open(sprag_engine_t* engine, const char* project_id, sprag_index_t** out);
SPRAG_API void sprag_index_free(sprag_index_t* index);
SPRAG_API size_t sprag_index_size(const sprag_index_t* index);
/* Top-k entries for the text as {"results":[{"rank","issue_key","similarity","story_point"}]}. */
SPRAG_API sprag_status sprag_index_query(sprag_index_t* index, const char* text, size_t k, char** out_json);

/* ---- assistant service ------------------------------------------------- */

SPRAG_API sprag_status sprag_service_create(sprag_engine_t* engine, sprag_service_t** out);
SPRAG_API void sprag_service_free(sprag_service_t* service);
/* In-process request. path is percent-decoded; query is "a=1&b=2" or NULL. */
SPRAG_API sprag_status sprag_service_handle(sprag_service_t* service, const char* method, const char* path,
                                            const char* query, const char* body, int* out_status,
                                            char** out_body);
/* Binds and serves on a background thread. port 0 picks a free port. */
SPRAG_API sprag_status sprag_service_start(sprag_service_t* service, const char* host, int port,
                                           int* out_port);
SPRAG_API sprag_status sprag_service_stop(sprag_service_t* service);

/* ---- numerics ---------------------------------------------------------- */

SPRAG_API sprag_status sprag_mae(const double* preds, const double* truths, size_t n, double* out);
SPRAG_API sprag_status sprag_mdae(const double* preds, const double* truths, size_t n, double* out);
SPRAG_API sprag_status sprag_wilcoxon(const double* x, const double* y, size_t n, sprag_alternative alternative,
                                      sprag_test_result* out);
/* values holds the groups back to back; group_sizes[i] is the length of group i. */
SPRAG_API sprag_status sprag_kruskal_wallis(const double* values, const size_t* group_sizes, size_t groups,
                                            sprag_test_result* out);
SPRAG_API sprag_status sprag_chi_squared_sf(double x, int df, double* out);
SPRAG_API sprag_status sprag_snap_to_scale(double value, double* out);
SPRAG_API sprag_status sprag_parse_story_point(const char* reply, char** out_json);
SPRAG_API sprag_status sprag_clean_text(const char* text, char** out);

/* Outbound HTTP connections attempted by this process so far. */
SPRAG_API uint64_t sprag_net_connection_count(void);

#ifdef __cplusplus
}
#endif

#endif
