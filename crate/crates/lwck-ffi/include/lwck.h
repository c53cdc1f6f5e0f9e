/* C interface for the lwck convolution-compression library. */

#ifndef LWCK_H
#define LWCK_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result code of an FFI call.
typedef enum LwckStatus {
  LWCK_STATUS_OK = 0,
  LWCK_STATUS_NULL_POINTER = 1,
  LWCK_STATUS_INVALID_ARGUMENT = 2,
  LWCK_STATUS_IO_ERROR = 3,
  LWCK_STATUS_NUMERIC_ERROR = 4,
  LWCK_STATUS_BUFFER_TOO_SMALL = 5,
} LwckStatus;

// Opaque CP decomposition handle.
typedef struct LwckCpd LwckCpd;

// Opaque dense tensor handle.
typedef struct LwckTensor LwckTensor;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message describing the most recent failure on this thread; empty string
// when the last call succeeded. The pointer stays valid until the next FFI
// call on the same thread.
const char *lwck_last_error_message(void);

// Build a tensor from `ndim` extents and a row-major payload of their
// product in length. Returns null on error.
//
// # Safety
// `dims` must point to `ndim` readable u64 values and `data` to the
// product-of-dims readable f64 values.
struct LwckTensor *lwck_tensor_create(const uint64_t *dims, size_t ndim, const double *data);

// Read a tensor file (LWTN format). Returns null on error.
//
// # Safety
// `path` must be a valid NUL-terminated string.
struct LwckTensor *lwck_tensor_read(const char *path);

// Write a tensor file (LWTN format, 64-bit payload).
//
// # Safety
// `tensor` must be a live handle and `path` a valid NUL-terminated string.
enum LwckStatus lwck_tensor_write(const struct LwckTensor *tensor, const char *path);

// Number of modes; 0 when the handle is null.
//
// # Safety
// `tensor` must be a live handle or null.
size_t lwck_tensor_ndim(const struct LwckTensor *tensor);

// Total element count; 0 when the handle is null.
//
// # Safety
// `tensor` must be a live handle or null.
size_t lwck_tensor_len(const struct LwckTensor *tensor);

// Copy the extents into `out` (capacity in elements).
//
// # Safety
// `tensor` must be a live handle; `out` must have room for `capacity` u64s.
enum LwckStatus lwck_tensor_dims(const struct LwckTensor *tensor, uint64_t *out, size_t capacity);

// Copy the row-major payload into `out` (capacity in elements).
//
// # Safety
// `tensor` must be a live handle; `out` must have room for `capacity` f64s.
enum LwckStatus lwck_tensor_copy_data(const struct LwckTensor *tensor,
                                      double *out,
                                      size_t capacity);

// Release a tensor handle; null is ignored.
//
// # Safety
// `tensor` must have come from this library and not been freed before.
void lwck_tensor_free(struct LwckTensor *tensor);

// ‖x − y‖_F / ‖x‖_F into `out`.
//
// # Safety
// Both handles must be live; `out` must be writable.
enum LwckStatus lwck_relative_error(const struct LwckTensor *x,
                                    const struct LwckTensor *y,
                                    double *out);

// Rank-`rank` CP decomposition of a 3rd-order tensor by alternating least
// squares. Returns null on error.
//
// # Safety
// `tensor` must be a live handle.
struct LwckCpd *lwck_cp_decompose(const struct LwckTensor *tensor,
                                  size_t rank,
                                  size_t max_iters,
                                  double tol,
                                  uint64_t seed);

// CP decomposition with error-preserving correction: after the ALS fit,
// diverging rank-1 components are shrunk while the reconstruction error
// stays within `delta` (absolute Frobenius units; pass 0 to hold the error
// the fit achieved). Returns null on error.
//
// # Safety
// `tensor` must be a live handle.
struct LwckCpd *lwck_cp_decompose_epc(const struct LwckTensor *tensor,
                                      size_t rank,
                                      size_t max_iters,
                                      double tol,
                                      uint64_t seed,
                                      double delta);

// Component count; 0 when the handle is null.
//
// # Safety
// `cpd` must be a live handle or null.
size_t lwck_cpd_rank(const struct LwckCpd *cpd);

// Number of factor matrices; 0 when the handle is null.
//
// # Safety
// `cpd` must be a live handle or null.
size_t lwck_cpd_order(const struct LwckCpd *cpd);

// Σ λ_r² (the component energy EPC minimizes) into `out`.
//
// # Safety
// `cpd` must be a live handle; `out` must be writable.
enum LwckStatus lwck_cpd_sensitivity(const struct LwckCpd *cpd, double *out);

// Copy the descending component coefficients into `out`.
//
// # Safety
// `cpd` must be a live handle; `out` must have room for `capacity` f64s.
enum LwckStatus lwck_cpd_coeffs(const struct LwckCpd *cpd, double *out, size_t capacity);

// Shape of factor matrix `mode` (rows × rank).
//
// # Safety
// `cpd` must be a live handle; `rows`/`cols` must be writable.
enum LwckStatus lwck_cpd_factor_shape(const struct LwckCpd *cpd,
                                      size_t mode,
                                      size_t *rows,
                                      size_t *cols);

// Copy factor matrix `mode` (row-major) into `out`.
//
// # Safety
// `cpd` must be a live handle; `out` must have room for `capacity` f64s.
enum LwckStatus lwck_cpd_factor_copy(const struct LwckCpd *cpd,
                                     size_t mode,
                                     double *out,
                                     size_t capacity);

// Materialize the decomposition as a new tensor handle. Returns null on
// error.
//
// # Safety
// `cpd` must be a live handle.
struct LwckTensor *lwck_cpd_reconstruct(const struct LwckCpd *cpd);

// Release a decomposition handle; null is ignored.
//
// # Safety
// `cpd` must have come from this library and not been freed before.
void lwck_cpd_free(struct LwckCpd *cpd);

// Rank-`rank` SVD split of a row-major `rows`×`cols` kernel matrix
// (input channels × output channels) into the two pointwise weight
// matrices: `w1_out` receives rows×rank, `w2_out` rank×cols, both
// row-major, and w1·w2 is the best rank-`rank` reconstruction.
//
// # Safety
// `matrix` must hold rows×cols f64s; `w1_out`/`w2_out` must have room for
// rows×rank and rank×cols f64s respectively.
enum LwckStatus lwck_svd_split(const double *matrix,
                               size_t rows,
                               size_t cols,
                               size_t rank,
                               double *w1_out,
                               double *w2_out);

// Expected calibration error of `n` probability/label pairs over `bins`
// equal-width bins, into `out`.
//
// # Safety
// `p_hat` and `labels` must hold `n` f64s; `out` must be writable.
enum LwckStatus lwck_ece(const double *p_hat,
                         const double *labels,
                         size_t n,
                         size_t bins,
                         double *out);

// Fit the sigmoid temperature minimizing the weighted BCE of
// sigmoid(logit/T) against the labels, into `out`.
//
// # Safety
// `logits` and `labels` must hold `n` f64s; `out` must be writable.
enum LwckStatus lwck_fit_temperature(const double *logits,
                                     const double *labels,
                                     size_t n,
                                     double *out);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* LWCK_H */
