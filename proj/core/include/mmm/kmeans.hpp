#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmm/common.hpp"

namespace mmm {

struct TrainMeta {
  std::uint64_t seed = 0;
  std::uint32_t iterations_run = 0;
  bool converged = false;
  // Inertia observed at each assignment pass of the winning init
  // (in-memory diagnostics, not serialized).
  std::vector<double> inertia_trace;
};

// K centroids of one quantizer stage. Immutable after training.
struct Codebook {
  Matrix centroids;  // K x D
  double train_inertia = 0.0;
  TrainMeta meta;

  std::size_t clusters() const { return centroids.rows; }
  std::size_t dim() const { return centroids.cols; }
  void validate() const;
};

struct TrainConfig {
  std::uint32_t clusters = 500;
  std::uint32_t max_iters = 100;
  double rel_tol = 1e-6;  // relative inertia improvement
  std::uint64_t seed = 0;
  std::uint32_t n_init = 1;
  unsigned jobs = 0;  // 0 = hardware concurrency

  void validate() const;
};

// Lloyd's algorithm with k-means++ init and empty-cluster repair.
// The final step is one more mean update over the last assignment, so
// every centroid is the mean of its training partition; train_inertia is
// the SSE of a closing assignment pass against those centroids.
// Deterministic per (frames, cfg), for any job count.
Codebook kmeans_train(const Matrix& frames, const TrainConfig& cfg);

// Nearest centroid by squared Euclidean distance; ties go to the lowest
// index. Distances use the ||c||^2 - 2 v.c expansion in 64-bit.
std::uint32_t assign(const Codebook& cb, std::span<const float> v);

std::vector<std::uint32_t> assign_batch(const Codebook& cb, const Matrix& frames,
                                        unsigned jobs = 0);

// Replaces each empty cluster's centroid with the frame farthest from its
// currently assigned centroid (ties to the lowest frame index) and moves
// that frame into the repaired cluster. Returns the number of repairs.
// Exposed for direct testing; kmeans_train calls it after each update.
std::size_t repair_empty_clusters(const Matrix& frames, Matrix& centroids,
                                  std::vector<std::uint32_t>& assignment);

namespace detail {

// Double-precision copy of the centroids plus precomputed squared norms,
// built once per codebook and reused across scans. The transposed table
// keeps the original float values (promotion to double is exact), halving
// the memory traffic of a scan; every score still accumulates its d-terms
// sequentially in 64-bit, so results are bitwise stable for any job count.
struct CentroidScan {
  // Frames per nearest_block call; block boundaries are derived from the
  // fixed chunk grid, never from the worker count.
  static constexpr std::size_t kBlock = 8;

  std::size_t clusters = 0;
  std::size_t dim = 0;
  std::vector<double> centroids;  // K x D row-major
  std::vector<float> transposed;  // D x K
  std::vector<double> sq_norms;   // K

  explicit CentroidScan(const Matrix& centroid_matrix);

  // Index minimizing ||v - c_k||^2 via the norm expansion; `v` is the
  // frame promoted to double. `scores` is caller-provided scratch (one
  // slot per centroid) so hot loops do not reallocate; it is resized as
  // needed. Also reports the exact squared distance when asked.
  std::uint32_t nearest(std::span<const double> v, std::vector<double>& scores,
                        double* sq_dist = nullptr) const;
  std::uint32_t nearest(std::span<const double> v, double* sq_dist = nullptr) const;

  // Batched nearest for exactly kBlock frames (row-major kBlock x dim
  // doubles). Bitwise identical to kBlock calls of nearest(); the batching
  // only amortizes centroid-table reads across frames. `scores` and
  // `coeffs` are caller-provided scratch. `sq_dists` may be null.
  void nearest_block(const double* frames, std::uint32_t* ids, double* sq_dists,
                     std::vector<double>& scores, std::vector<double>& coeffs) const;
};

}  // namespace detail

}  // namespace mmm
