#include "mmm/kmeans.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace mmm {

void Codebook::validate() const {
  if (centroids.rows < 1 || centroids.cols < 1) {
    throw ValidationError("codebook must have K >= 1 and D >= 1");
  }
  if (!all_finite(centroids)) throw ValidationError("codebook contains NaN or Inf");
  if (train_inertia < 0.0 || !std::isfinite(train_inertia)) {
    throw ValidationError("codebook train_inertia must be finite and non-negative");
  }
}

void TrainConfig::validate() const {
  if (clusters < 1) throw ArgumentError("TrainConfig.clusters must be >= 1");
  if (max_iters < 1) throw ArgumentError("TrainConfig.max_iters must be >= 1");
  if (rel_tol < 0.0) throw ArgumentError("TrainConfig.rel_tol must be >= 0");
  if (n_init < 1) throw ArgumentError("TrainConfig.n_init must be >= 1");
}

namespace detail {

CentroidScan::CentroidScan(const Matrix& centroid_matrix)
    : clusters(centroid_matrix.rows), dim(centroid_matrix.cols) {
  centroids.resize(clusters * dim);
  transposed.resize(clusters * dim);
  sq_norms.resize(clusters);
  for (std::size_t k = 0; k < clusters; ++k) {
    const float* src = centroid_matrix.row(k);
    double* dst = centroids.data() + k * dim;
    double n = 0.0;
    for (std::size_t d = 0; d < dim; ++d) {
      dst[d] = src[d];
      transposed[d * clusters + k] = src[d];
      n += dst[d] * dst[d];
    }
    sq_norms[k] = n;
  }
}

std::uint32_t CentroidScan::nearest(std::span<const double> v, std::vector<double>& scores,
                                    double* sq_dist) const {
  // score_k = ||c_k||^2 - 2 v.c_k, accumulated over d with the centroid
  // index innermost so the loop vectorizes without reassociating any sum.
  scores.assign(sq_norms.begin(), sq_norms.end());
  const std::size_t n_k = clusters;  // locals so the inner loop vectorizes
  const std::size_t n_d = dim;
  double* __restrict__ s = scores.data();
  const double* __restrict__ x = v.data();
  const float* __restrict__ cols = transposed.data();
  for (std::size_t d = 0; d < n_d; ++d) {
    const double m = -2.0 * x[d];
    const float* __restrict__ col = cols + d * n_k;
    for (std::size_t k = 0; k < n_k; ++k) s[k] += m * static_cast<double>(col[k]);
  }

  double best = std::numeric_limits<double>::infinity();
  std::uint32_t best_k = 0;
  for (std::size_t k = 0; k < n_k; ++k) {
    if (s[k] < best) {
      best = s[k];
      best_k = static_cast<std::uint32_t>(k);
    }
  }
  if (sq_dist != nullptr) {
    double vn = 0.0;
    for (std::size_t d = 0; d < n_d; ++d) vn += x[d] * x[d];
    *sq_dist = std::max(0.0, best + vn);
  }
  return best_k;
}

std::uint32_t CentroidScan::nearest(std::span<const double> v, double* sq_dist) const {
  std::vector<double> scores;
  return nearest(v, scores, sq_dist);
}

void CentroidScan::nearest_block(const double* frames, std::uint32_t* ids, double* sq_dists,
                                 std::vector<double>& scores, std::vector<double>& coeffs) const {
  constexpr std::size_t B = kBlock;
  constexpr std::size_t W = 4;  // centroid lanes per register tile
  const std::size_t n_k = clusters;
  const std::size_t n_d = dim;
  scores.resize(B * n_k);
  coeffs.resize(B * n_d);

  double* __restrict__ mv = coeffs.data();
  for (std::size_t j = 0; j < B * n_d; ++j) mv[j] = -2.0 * frames[j];

  double* __restrict__ s = scores.data();
  const double* __restrict__ sq = sq_norms.data();
  const float* __restrict__ cols = transposed.data();

  // Register tile: W centroids x B frames, d innermost so each column of
  // the table is read once per block instead of once per frame. Every
  // score's d-terms still accumulate sequentially, exactly as nearest().
  std::size_t k0 = 0;
  for (; k0 + W <= n_k; k0 += W) {
    double acc[B][W];
    for (std::size_t f = 0; f < B; ++f)
      for (std::size_t w = 0; w < W; ++w) acc[f][w] = sq[k0 + w];
    for (std::size_t d = 0; d < n_d; ++d) {
      const float* col = cols + d * n_k + k0;
      double c[W];
      for (std::size_t w = 0; w < W; ++w) c[w] = static_cast<double>(col[w]);
      for (std::size_t f = 0; f < B; ++f) {
        const double m = mv[f * n_d + d];
        for (std::size_t w = 0; w < W; ++w) acc[f][w] += m * c[w];
      }
    }
    for (std::size_t f = 0; f < B; ++f)
      for (std::size_t w = 0; w < W; ++w) s[f * n_k + k0 + w] = acc[f][w];
  }
  for (; k0 < n_k; ++k0) {  // remaining centroids, same accumulation order
    for (std::size_t f = 0; f < B; ++f) {
      double a = sq[k0];
      const double* mf = mv + f * n_d;
      for (std::size_t d = 0; d < n_d; ++d) {
        a += mf[d] * static_cast<double>(cols[d * n_k + k0]);
      }
      s[f * n_k + k0] = a;
    }
  }

  for (std::size_t f = 0; f < B; ++f) {
    const double* sf = s + f * n_k;
    double best = std::numeric_limits<double>::infinity();
    std::uint32_t best_k = 0;
    for (std::size_t k = 0; k < n_k; ++k) {
      if (sf[k] < best) {
        best = sf[k];
        best_k = static_cast<std::uint32_t>(k);
      }
    }
    ids[f] = best_k;
    if (sq_dists != nullptr) {
      const double* x = frames + f * n_d;
      double vn = 0.0;
      for (std::size_t d = 0; d < n_d; ++d) vn += x[d] * x[d];
      sq_dists[f] = std::max(0.0, best + vn);
    }
  }
}

}  // namespace detail

namespace {

constexpr std::size_t kFrameChunk = 4096;

// Exact squared distance between a float frame and a float centroid,
// accumulated in double.
double sq_dist_rows(const float* a, const float* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t d = 0; d < dim; ++d) {
    const double diff = static_cast<double>(a[d]) - static_cast<double>(b[d]);
    s += diff * diff;
  }
  return s;
}

// Assigns every frame and returns the total SSE, reduced in chunk order.
double assign_all(const Matrix& frames, const detail::CentroidScan& scan,
                  std::vector<std::uint32_t>& assignment, unsigned jobs) {
  const std::size_t n = frames.rows;
  const std::size_t dim = frames.cols;
  assignment.resize(n);
  std::vector<double> chunk_sse(chunk_count(n, kFrameChunk), 0.0);
  constexpr std::size_t B = detail::CentroidScan::kBlock;
  parallel_chunks(n, kFrameChunk, jobs, [&](std::size_t c, std::size_t begin, std::size_t end) {
    std::vector<double> xblk(B * dim);
    std::vector<double> scores, coeffs;
    std::uint32_t ids[B];
    double dists[B];
    double sse = 0.0;
    std::size_t i = begin;
    for (; i + B <= end; i += B) {
      for (std::size_t f = 0; f < B; ++f) {
        const float* row = frames.row(i + f);
        for (std::size_t d = 0; d < dim; ++d) xblk[f * dim + d] = row[d];
      }
      scan.nearest_block(xblk.data(), ids, dists, scores, coeffs);
      for (std::size_t f = 0; f < B; ++f) {
        assignment[i + f] = ids[f];
        sse += dists[f];
      }
    }
    std::vector<double> v(dim);
    for (; i < end; ++i) {
      const float* row = frames.row(i);
      for (std::size_t d = 0; d < dim; ++d) v[d] = row[d];
      double dist = 0.0;
      assignment[i] = scan.nearest(v, scores, &dist);
      sse += dist;
    }
    chunk_sse[c] = sse;
  });
  double total = 0.0;
  for (double s : chunk_sse) total += s;
  return total;
}

// Sets each centroid to the mean of its assigned frames (64-bit sums).
// Returns the indices of clusters that received no frames.
std::vector<std::uint32_t> update_means(const Matrix& frames,
                                        const std::vector<std::uint32_t>& assignment,
                                        Matrix& centroids) {
  const std::size_t k = centroids.rows;
  const std::size_t dim = centroids.cols;
  std::vector<double> sums(k * dim, 0.0);
  std::vector<std::uint64_t> counts(k, 0);
  for (std::size_t i = 0; i < frames.rows; ++i) {
    const std::uint32_t a = assignment[i];
    const float* row = frames.row(i);
    double* acc = sums.data() + static_cast<std::size_t>(a) * dim;
    for (std::size_t d = 0; d < dim; ++d) acc[d] += row[d];
    ++counts[a];
  }
  std::vector<std::uint32_t> empty;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) {
      empty.push_back(static_cast<std::uint32_t>(c));
      continue;
    }
    const double inv = 1.0 / static_cast<double>(counts[c]);
    float* dst = centroids.row(c);
    const double* acc = sums.data() + c * dim;
    for (std::size_t d = 0; d < dim; ++d) dst[d] = static_cast<float>(acc[d] * inv);
  }
  return empty;
}

// k-means++ seeding; throws when fewer distinct points than K exist.
Matrix kmeanspp_init(const Matrix& frames, std::uint32_t k, std::mt19937_64& rng, unsigned jobs) {
  const std::size_t n = frames.rows;
  const std::size_t dim = frames.cols;
  Matrix centroids(k, dim);

  std::uniform_int_distribution<std::size_t> first_dist(0, n - 1);
  const std::size_t first = first_dist(rng);
  std::copy_n(frames.row(first), dim, centroids.row(0));

  std::vector<double> min_dist(n);
  parallel_chunks(n, kFrameChunk, jobs, [&](std::size_t, std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      min_dist[i] = sq_dist_rows(frames.row(i), centroids.row(0), dim);
    }
  });

  for (std::uint32_t c = 1; c < k; ++c) {
    double total = 0.0;
    for (double d : min_dist) total += d;
    if (!(total > 0.0)) {
      throw ValidationError("k-means++ repair failure: only " + std::to_string(c) +
                            " distinct point(s) for K=" + std::to_string(k) +
                            "; cluster " + std::to_string(c) + " degenerate");
    }
    std::uniform_real_distribution<double> pick(0.0, total);
    const double u = pick(rng);
    double cum = 0.0;
    std::size_t chosen = n;  // last positive-weight index as fallback
    for (std::size_t i = 0; i < n; ++i) {
      if (min_dist[i] <= 0.0) continue;
      cum += min_dist[i];
      chosen = i;
      if (cum > u) break;
    }
    std::copy_n(frames.row(chosen), dim, centroids.row(c));
    parallel_chunks(n, kFrameChunk, jobs, [&](std::size_t, std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i) {
        const double d = sq_dist_rows(frames.row(i), centroids.row(c), dim);
        if (d < min_dist[i]) min_dist[i] = d;
      }
    });
  }
  return centroids;
}

struct SingleRun {
  Matrix centroids;
  double inertia = 0.0;
  std::uint32_t iterations = 0;
  bool converged = false;
  std::vector<double> trace;
};

SingleRun train_once(const Matrix& frames, const TrainConfig& cfg, std::uint64_t run_seed) {
  std::mt19937_64 rng(run_seed);
  SingleRun run;
  run.centroids = kmeanspp_init(frames, cfg.clusters, rng, cfg.jobs);

  std::vector<std::uint32_t> assignment;
  double prev_sse = std::numeric_limits<double>::infinity();
  for (std::uint32_t iter = 1; iter <= cfg.max_iters; ++iter) {
    detail::CentroidScan scan(run.centroids);
    const double sse = assign_all(frames, scan, assignment, cfg.jobs);
    run.trace.push_back(sse);
    run.iterations = iter;
    const bool converged =
        iter > 1 && (prev_sse - sse) <= cfg.rel_tol * prev_sse;
    prev_sse = sse;

    const auto empty = update_means(frames, assignment, run.centroids);
    if (!empty.empty()) {
      repair_empty_clusters(frames, run.centroids, assignment);
    }
    if (converged) {
      run.converged = true;
      break;
    }
  }

  // Closing consistency pass: inertia of the final centroids.
  detail::CentroidScan scan(run.centroids);
  run.inertia = assign_all(frames, scan, assignment, cfg.jobs);
  run.trace.push_back(run.inertia);
  return run;
}

}  // namespace

std::size_t repair_empty_clusters(const Matrix& frames, Matrix& centroids,
                                  std::vector<std::uint32_t>& assignment) {
  const std::size_t k = centroids.rows;
  const std::size_t dim = centroids.cols;
  if (assignment.size() != frames.rows) {
    throw ArgumentError("repair_empty_clusters: assignment size mismatch");
  }

  std::vector<std::uint64_t> counts(k, 0);
  for (std::uint32_t a : assignment) ++counts[a];

  std::size_t repairs = 0;
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] != 0) continue;
    // Farthest frame from its currently assigned centroid becomes the new
    // centroid; ties break to the lowest frame index.
    double best = -1.0;
    std::size_t best_i = frames.rows;
    for (std::size_t i = 0; i < frames.rows; ++i) {
      if (counts[assignment[i]] <= 1) continue;  // never empty a donor
      const double d = sq_dist_rows(frames.row(i), centroids.row(assignment[i]), dim);
      if (d > best) {
        best = d;
        best_i = i;
      }
    }
    if (best_i == frames.rows || best <= 0.0) {
      throw ValidationError("repair failure: cluster " + std::to_string(c) +
                            " is degenerate (no distinct donor point available)");
    }
    --counts[assignment[best_i]];
    assignment[best_i] = static_cast<std::uint32_t>(c);
    counts[c] = 1;
    std::copy_n(frames.row(best_i), dim, centroids.row(c));
    ++repairs;
  }

  if (repairs > 0) {
    // Donor clusters lost a member; restore centroid-mean consistency.
    const auto empty = update_means(frames, assignment, centroids);
    if (!empty.empty()) {
      throw ValidationError("repair failure: cluster " + std::to_string(empty.front()) +
                            " still empty after repair");
    }
  }
  return repairs;
}

Codebook kmeans_train(const Matrix& frames, const TrainConfig& cfg) {
  cfg.validate();
  if (frames.rows < cfg.clusters) {
    throw ArgumentError("kmeans_train: N=" + std::to_string(frames.rows) + " frames is fewer than K=" +
                        std::to_string(cfg.clusters));
  }
  if (frames.cols < 1) throw ArgumentError("kmeans_train: frames must have D >= 1");
  if (!all_finite(frames)) throw ArgumentError("kmeans_train: frames contain NaN or Inf");

  SingleRun best;
  bool have = false;
  for (std::uint32_t init = 0; init < cfg.n_init; ++init) {
    SingleRun run = train_once(frames, cfg, derive_seed(cfg.seed, init));
    if (!have || run.inertia < best.inertia) {
      best = std::move(run);
      have = true;
    }
  }

  Codebook cb;
  cb.centroids = std::move(best.centroids);
  cb.train_inertia = best.inertia;
  cb.meta.seed = cfg.seed;
  cb.meta.iterations_run = best.iterations;
  cb.meta.converged = best.converged;
  cb.meta.inertia_trace = std::move(best.trace);
  cb.validate();
  return cb;
}

std::uint32_t assign(const Codebook& cb, std::span<const float> v) {
  if (v.size() != cb.dim()) {
    throw ArgumentError("assign: vector has dimension " + std::to_string(v.size()) +
                        ", codebook expects " + std::to_string(cb.dim()));
  }
  for (float x : v) {
    if (!std::isfinite(x)) throw ArgumentError("assign: vector contains NaN or Inf");
  }
  detail::CentroidScan scan(cb.centroids);
  std::vector<double> vd(v.begin(), v.end());
  return scan.nearest(vd);
}

std::vector<std::uint32_t> assign_batch(const Codebook& cb, const Matrix& frames, unsigned jobs) {
  if (frames.cols != cb.dim()) {
    throw ArgumentError("assign_batch: frames have dimension " + std::to_string(frames.cols) +
                        ", codebook expects " + std::to_string(cb.dim()));
  }
  detail::CentroidScan scan(cb.centroids);
  const std::size_t dim = frames.cols;
  constexpr std::size_t B = detail::CentroidScan::kBlock;
  std::vector<std::uint32_t> out(frames.rows);
  parallel_chunks(frames.rows, kFrameChunk, jobs,
                  [&](std::size_t, std::size_t begin, std::size_t end) {
                    std::vector<double> xblk(B * dim);
                    std::vector<double> scores, coeffs;
                    std::size_t i = begin;
                    for (; i + B <= end; i += B) {
                      for (std::size_t f = 0; f < B; ++f) {
                        const float* row = frames.row(i + f);
                        for (std::size_t d = 0; d < dim; ++d) xblk[f * dim + d] = row[d];
                      }
                      scan.nearest_block(xblk.data(), out.data() + i, nullptr, scores, coeffs);
                    }
                    std::vector<double> v(dim);
                    for (; i < end; ++i) {
                      const float* row = frames.row(i);
                      for (std::size_t d = 0; d < dim; ++d) v[d] = row[d];
                      out[i] = scan.nearest(v, scores);
                    }
                  });
  return out;
}

}  // namespace mmm
