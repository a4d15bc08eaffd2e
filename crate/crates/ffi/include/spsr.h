#ifndef SPSR_H
#define SPSR_H

#include <stddef.h>
#include <stdint.h>

typedef enum SpsrStatus {
  SPSR_STATUS_OK = 0,
  // Null pointer, bad enum value or undersized buffer.
  SPSR_STATUS_INVALID_ARGUMENT = 1,
  SPSR_STATUS_INPUT = 2,
  SPSR_STATUS_NUMERICAL = 3,
  SPSR_STATUS_IO = 4,
  // A bug: the library panicked.
  SPSR_STATUS_INTERNAL = 5,
} SpsrStatus;

typedef enum SpsrSolver {
  SPSR_SOLVER_EXACT = 0,
  SPSR_SOLVER_SGD = 1,
} SpsrSolver;

typedef enum SpsrCollisionMode {
  SPSR_COLLISION_MODE_ANY = 0,
  SPSR_COLLISION_MODE_ALL = 1,
} SpsrCollisionMode;

// Which field to contour.
typedef enum SpsrField {
  SPSR_FIELD_MEAN = 0,
  // `mean + eta * std`; uses `eta`.
  SPSR_FIELD_HITBOX = 1,
  // One posterior sample; uses `seed`.
  SPSR_FIELD_SAMPLE = 2,
} SpsrField;

typedef struct SpsrMesh SpsrMesh;

typedef struct SpsrModel SpsrModel;

// Model settings. Fill with [`spsr_params_default`] and adjust.
typedef struct SpsrParams {
  double nu;
  double kappa[3];
  double sigma2;
  double noise2;
  uint32_t f_cross;
  uint32_t f_prior;
  // Amortization table nodes per axis; 0 disables the table.
  uint32_t amortize_grid;
  // An [`SpsrSolver`] value.
  uint32_t solver;
  uint32_t sgd_iterations;
  uint64_t seed;
  // Nonzero: map the input into the torus with `margin` and keep raw coordinates at the API.
  uint8_t normalize;
  double margin;
} SpsrParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until the next call.
const char *spsr_last_error(void);

// Library version as a static string.
const char *spsr_version(void);

// # Safety
// `params` must be valid for writes.
enum SpsrStatus spsr_params_default(struct SpsrParams *params);

// Fits a posterior to `n` oriented points.
//
// # Safety
// `points` and `normals` must hold `3 n` doubles; `params` and `out` must be valid.
enum SpsrStatus spsr_model_build(const double *points,
                                 const double *normals,
                                 size_t n,
                                 const struct SpsrParams *params,
                                 struct SpsrModel **out);

// # Safety
// `model` must be null or a handle from [`spsr_model_build`] not yet freed.
void spsr_model_free(struct SpsrModel *model);

// Posterior mean at `m` points.
//
// # Safety
// `x` holds `3 m` doubles, `out` room for `m`.
enum SpsrStatus spsr_model_mean(const struct SpsrModel *model,
                                const double *x,
                                size_t m,
                                double *out);

// Posterior variance at `m` points.
//
// # Safety
// As [`spsr_model_mean`].
enum SpsrStatus spsr_model_variance(const struct SpsrModel *model,
                                    const double *x,
                                    size_t m,
                                    double *out);

// `P(f > 0)` at `m` points.
//
// # Safety
// As [`spsr_model_mean`].
enum SpsrStatus spsr_model_occupancy(const struct SpsrModel *model,
                                     const double *x,
                                     size_t m,
                                     double *out);

// Probability that any or all (an [`SpsrCollisionMode`]) of `m` probes are
// inside, with its standard error.
//
// # Safety
// `probes` holds `3 m` doubles; `value` and `std_error` are valid.
enum SpsrStatus spsr_model_collision(const struct SpsrModel *model,
                                     const double *probes,
                                     size_t m,
                                     uint32_t mode,
                                     size_t n_samples,
                                     uint64_t seed,
                                     double *value,
                                     double *std_error);

// Transmittance along a ray sampled every `step` up to `t_max`.
// Writes at most `capacity` values and the full count to `written`.
//
// # Safety
// `origin` and `direction` hold 3 doubles; `out` room for `capacity`; `written` valid.
enum SpsrStatus spsr_model_transmittance(const struct SpsrModel *model,
                                         const double *origin,
                                         const double *direction,
                                         double t_max,
                                         double step,
                                         size_t n_samples,
                                         uint64_t seed,
                                         double *out,
                                         size_t capacity,
                                         size_t *written);

// Contours a field (an [`SpsrField`]) on a `grid_n^3` grid over the torus chart.
//
// # Safety
// `model` is a live handle; `out` is valid.
enum SpsrStatus spsr_model_extract_mesh(const struct SpsrModel *model,
                                        uint32_t field,
                                        double eta,
                                        uint64_t seed,
                                        size_t grid_n,
                                        struct SpsrMesh **out);

// # Safety
// `mesh` must be a live handle.
size_t spsr_mesh_vertex_count(const struct SpsrMesh *mesh);

// # Safety
// `mesh` must be a live handle.
size_t spsr_mesh_triangle_count(const struct SpsrMesh *mesh);

// Copies `3 V` vertex coordinates.
//
// # Safety
// `out` has room for `capacity` doubles.
enum SpsrStatus spsr_mesh_vertices(const struct SpsrMesh *mesh, double *out, size_t capacity);

// Copies `3 T` zero-based vertex indices.
//
// # Safety
// `out` has room for `capacity` values.
enum SpsrStatus spsr_mesh_triangles(const struct SpsrMesh *mesh, uint32_t *out, size_t capacity);

// Writes the mesh as ASCII OBJ.
//
// # Safety
// `path` is a NUL-terminated UTF-8 string.
enum SpsrStatus spsr_mesh_save_obj(const struct SpsrMesh *mesh, const char *path);

// # Safety
// `mesh` must be null or a live handle.
void spsr_mesh_free(struct SpsrMesh *mesh);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPSR_H */
