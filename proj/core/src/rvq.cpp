#include "mmm/rvq.hpp"

#include <cmath>
#include <memory>

namespace mmm {

namespace {

constexpr std::size_t kFrameChunk = 4096;

std::vector<detail::CentroidScan> build_scans(const ResidualStack& stack) {
  std::vector<detail::CentroidScan> scans;
  scans.reserve(stack.stages());
  for (const Codebook& cb : stack.codebooks) scans.emplace_back(cb.centroids);
  return scans;
}

void check_token_set(const ResidualStack& stack, std::span<const StreamTokens> tokens) {
  if (tokens.size() != stack.stages()) {
    throw ValidationError("expected " + std::to_string(stack.stages()) + " token streams, got " +
                          std::to_string(tokens.size()));
  }
  const std::size_t frames = tokens.empty() ? 0 : tokens.front().ids.size();
  for (std::size_t m = 0; m < tokens.size(); ++m) {
    if (tokens[m].stage != m + 1) {
      throw ValidationError("token stream " + std::to_string(m) + " has stage " +
                            std::to_string(tokens[m].stage) + ", expected " + std::to_string(m + 1));
    }
    if (tokens[m].ids.size() != frames) {
      throw ValidationError("token stream for stage " + std::to_string(m + 1) +
                            " has mismatched frame count");
    }
    const std::uint32_t k = static_cast<std::uint32_t>(stack.codebooks[m].clusters());
    for (std::size_t t = 0; t < tokens[m].ids.size(); ++t) {
      if (tokens[m].ids[t] >= k) {
        throw ValidationError("token id " + std::to_string(tokens[m].ids[t]) +
                              " out of range at stage " + std::to_string(m + 1) + ", frame " +
                              std::to_string(t) + " (K=" + std::to_string(k) + ")");
      }
    }
  }
}

}  // namespace

void ResidualStack::validate() const {
  if (codebooks.empty()) throw ValidationError("residual stack has no codebooks");
  const std::size_t d = codebooks.front().dim();
  for (std::size_t m = 0; m < codebooks.size(); ++m) {
    codebooks[m].validate();
    if (codebooks[m].dim() != d) {
      throw ValidationError("residual stack stage " + std::to_string(m + 1) +
                            " dimension mismatch");
    }
  }
}

ResidualStack rvq_train(const Matrix& frames, std::span<const TrainConfig> stage_cfgs,
                        std::uint16_t layer_index) {
  if (stage_cfgs.empty()) throw ArgumentError("rvq_train: need at least one stage config");
  const std::size_t n = frames.rows;
  const std::size_t dim = frames.cols;

  ResidualStack stack;
  stack.layer_index = layer_index;

  // Running per-frame centroid sums, kept in double; the stage-m residual
  // is always frame - acc, matching the encoder's arithmetic path.
  std::vector<double> acc(n * dim, 0.0);
  Matrix residual(n, dim);

  for (std::size_t m = 0; m < stage_cfgs.size(); ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      const float* row = frames.row(i);
      const double* a = acc.data() + i * dim;
      float* r = residual.row(i);
      for (std::size_t d = 0; d < dim; ++d) {
        r[d] = static_cast<float>(static_cast<double>(row[d]) - a[d]);
      }
    }
    Codebook cb;
    try {
      cb = kmeans_train(residual, stage_cfgs[m]);
    } catch (const Error& e) {
      throw ValidationError("rvq_train stage " + std::to_string(m + 1) + ": " + e.what());
    }

    if (m + 1 < stage_cfgs.size()) {
      // Advance the running sums with the final codebook's assignments
      // on the true (double) residual.
      detail::CentroidScan scan(cb.centroids);
      const unsigned jobs = stage_cfgs[m].jobs;
      constexpr std::size_t B = detail::CentroidScan::kBlock;
      parallel_chunks(n, kFrameChunk, jobs, [&](std::size_t, std::size_t begin, std::size_t end) {
        std::vector<double> rblk(B * dim);
        std::vector<double> scores, coeffs;
        std::uint32_t ids[B];
        std::size_t i = begin;
        for (; i + B <= end; i += B) {
          for (std::size_t f = 0; f < B; ++f) {
            const float* row = frames.row(i + f);
            const double* a = acc.data() + (i + f) * dim;
            for (std::size_t d = 0; d < dim; ++d) {
              rblk[f * dim + d] = static_cast<double>(row[d]) - a[d];
            }
          }
          scan.nearest_block(rblk.data(), ids, nullptr, scores, coeffs);
          for (std::size_t f = 0; f < B; ++f) {
            const double* c = scan.centroids.data() + static_cast<std::size_t>(ids[f]) * dim;
            double* a = acc.data() + (i + f) * dim;
            for (std::size_t d = 0; d < dim; ++d) a[d] += c[d];
          }
        }
        std::vector<double> r(dim);
        for (; i < end; ++i) {
          const float* row = frames.row(i);
          double* a = acc.data() + i * dim;
          for (std::size_t d = 0; d < dim; ++d) r[d] = static_cast<double>(row[d]) - a[d];
          const std::uint32_t k = scan.nearest(r, scores);
          const double* c = scan.centroids.data() + static_cast<std::size_t>(k) * dim;
          for (std::size_t d = 0; d < dim; ++d) a[d] += c[d];
        }
      });
    }
    stack.codebooks.push_back(std::move(cb));
  }
  return stack;
}

std::vector<StreamTokens> rvq_encode(const ResidualStack& stack, const FeatureSequence& seq,
                                     unsigned jobs) {
  stack.validate();
  if (seq.dim() != stack.dim()) {
    throw ArgumentError("rvq_encode: sequence has D=" + std::to_string(seq.dim()) +
                        ", stack expects D=" + std::to_string(stack.dim()));
  }
  const std::size_t frames = seq.frames();
  const std::size_t dim = stack.dim();
  const std::size_t stages = stack.stages();
  const auto scans = build_scans(stack);

  std::vector<StreamTokens> out(stages);
  for (std::size_t m = 0; m < stages; ++m) {
    out[m].layer_index = stack.layer_index;
    out[m].stage = static_cast<std::uint16_t>(m + 1);
    out[m].ids.resize(frames);
  }

  constexpr std::size_t B = detail::CentroidScan::kBlock;
  parallel_chunks(frames, kFrameChunk, jobs, [&](std::size_t, std::size_t begin, std::size_t end) {
    std::vector<double> accb(B * dim);
    std::vector<double> rblk(B * dim);
    std::vector<double> scores, coeffs;
    std::uint32_t ids[B];
    std::size_t t = begin;
    for (; t + B <= end; t += B) {
      std::fill(accb.begin(), accb.end(), 0.0);
      for (std::size_t m = 0; m < stages; ++m) {
        for (std::size_t f = 0; f < B; ++f) {
          const float* row = seq.data.row(t + f);
          const double* a = accb.data() + f * dim;
          for (std::size_t d = 0; d < dim; ++d) {
            rblk[f * dim + d] = static_cast<double>(row[d]) - a[d];
          }
        }
        scans[m].nearest_block(rblk.data(), ids, nullptr, scores, coeffs);
        for (std::size_t f = 0; f < B; ++f) {
          out[m].ids[t + f] = ids[f];
          const double* c =
              scans[m].centroids.data() + static_cast<std::size_t>(ids[f]) * dim;
          double* a = accb.data() + f * dim;
          for (std::size_t d = 0; d < dim; ++d) a[d] += c[d];
        }
      }
    }
    std::vector<double> acc(dim);
    std::vector<double> r(dim);
    for (; t < end; ++t) {
      const float* row = seq.data.row(t);
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t m = 0; m < stages; ++m) {
        for (std::size_t d = 0; d < dim; ++d) r[d] = static_cast<double>(row[d]) - acc[d];
        const std::uint32_t k = scans[m].nearest(r, scores);
        out[m].ids[t] = k;
        const double* c = scans[m].centroids.data() + static_cast<std::size_t>(k) * dim;
        for (std::size_t d = 0; d < dim; ++d) acc[d] += c[d];
      }
    }
  });
  return out;
}

std::vector<double> reconstruct_f64(const ResidualStack& stack,
                                    std::span<const StreamTokens> tokens) {
  stack.validate();
  check_token_set(stack, tokens);
  const std::size_t frames = tokens.front().ids.size();
  const std::size_t dim = stack.dim();
  const auto scans = build_scans(stack);

  std::vector<double> acc(frames * dim, 0.0);
  for (std::size_t m = 0; m < tokens.size(); ++m) {
    for (std::size_t t = 0; t < frames; ++t) {
      const double* c =
          scans[m].centroids.data() + static_cast<std::size_t>(tokens[m].ids[t]) * dim;
      double* a = acc.data() + t * dim;
      for (std::size_t d = 0; d < dim; ++d) a[d] += c[d];
    }
  }
  return acc;
}

FeatureSequence rvq_decode(const ResidualStack& stack, std::span<const StreamTokens> tokens,
                           Rational frame_rate) {
  const auto recon = reconstruct_f64(stack, tokens);
  const std::size_t frames = tokens.front().ids.size();
  const std::size_t dim = stack.dim();
  FeatureSequence seq;
  seq.frame_rate = frame_rate;
  seq.data = Matrix(frames, dim);
  for (std::size_t i = 0; i < recon.size(); ++i) {
    seq.data.values[i] = static_cast<float>(recon[i]);
  }
  return seq;
}

std::vector<double> residual_energy_profile(const ResidualStack& stack, const Matrix& frames,
                                            unsigned jobs) {
  stack.validate();
  if (frames.rows == 0) throw ArgumentError("residual_energy_profile: no frames");
  if (frames.cols != stack.dim()) {
    throw ArgumentError("residual_energy_profile: dimension mismatch");
  }
  const std::size_t n = frames.rows;
  const std::size_t dim = frames.cols;
  const std::size_t stages = stack.stages();
  const auto scans = build_scans(stack);

  const std::size_t n_chunks = chunk_count(n, kFrameChunk);
  std::vector<std::vector<double>> partial(n_chunks, std::vector<double>(stages + 1, 0.0));
  parallel_chunks(n, kFrameChunk, jobs, [&](std::size_t c, std::size_t begin, std::size_t end) {
    std::vector<double> acc(dim);
    std::vector<double> r(dim);
    std::vector<double> scores;
    auto& sums = partial[c];
    for (std::size_t t = begin; t < end; ++t) {
      const float* row = frames.row(t);
      std::fill(acc.begin(), acc.end(), 0.0);
      double e0 = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        e0 += static_cast<double>(row[d]) * static_cast<double>(row[d]);
      }
      sums[0] += e0;
      for (std::size_t m = 0; m < stages; ++m) {
        for (std::size_t d = 0; d < dim; ++d) r[d] = static_cast<double>(row[d]) - acc[d];
        const std::uint32_t k = scans[m].nearest(r, scores);
        const double* cent = scans[m].centroids.data() + static_cast<std::size_t>(k) * dim;
        double e = 0.0;
        for (std::size_t d = 0; d < dim; ++d) {
          const double res = r[d] - cent[d];
          e += res * res;
          acc[d] += cent[d];
        }
        sums[m + 1] += e;
      }
    }
  });

  std::vector<double> profile(stages + 1, 0.0);
  for (const auto& sums : partial) {
    for (std::size_t m = 0; m <= stages; ++m) profile[m] += sums[m];
  }
  for (double& p : profile) p /= static_cast<double>(n);
  return profile;
}

std::vector<double> residual_energy_profile(const ResidualStack& stack, const Dataset& ds,
                                            unsigned jobs) {
  if (ds.empty()) throw ArgumentError("residual_energy_profile: dataset is empty");
  const Matrix frames = gather_layer_frames(ds, stack.layer_index);
  return residual_energy_profile(stack, frames, jobs);
}

}  // namespace mmm
