#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmm/kmeans.hpp"
#include "mmm/tensor_io.hpp"

namespace mmm {

// Ordered chain of codebooks for one layer; stage m was trained on the
// residuals left by stages 1..m-1.
struct ResidualStack {
  std::uint16_t layer_index = 0;
  std::vector<Codebook> codebooks;

  std::size_t stages() const { return codebooks.size(); }
  std::size_t dim() const { return codebooks.empty() ? 0 : codebooks.front().dim(); }
  void validate() const;
};

// Token ids of one (layer, stage) stream for one utterance.
struct StreamTokens {
  std::uint16_t layer_index = 0;
  std::uint16_t stage = 1;  // 1-based
  std::vector<std::uint32_t> ids;

  bool operator==(const StreamTokens&) const = default;
};

// Trains one codebook per stage; stage m sees the frames minus the summed
// centroids selected by the final codebooks of stages 1..m-1.
ResidualStack rvq_train(const Matrix& frames, std::span<const TrainConfig> stage_cfgs,
                        std::uint16_t layer_index = 0);

std::vector<StreamTokens> rvq_encode(const ResidualStack& stack, const FeatureSequence& seq,
                                     unsigned jobs = 0);

FeatureSequence rvq_decode(const ResidualStack& stack, std::span<const StreamTokens> tokens,
                           Rational frame_rate);

// Per-frame reconstruction as the 64-bit centroid sum, using the same
// summation order as the encoder's running residual. T x D.
std::vector<double> reconstruct_f64(const ResidualStack& stack,
                                    std::span<const StreamTokens> tokens);

// Entry 0: mean squared frame norm. Entry m: mean squared residual norm
// after quantizing with stages 1..m.
std::vector<double> residual_energy_profile(const ResidualStack& stack, const Matrix& frames,
                                            unsigned jobs = 0);
std::vector<double> residual_energy_profile(const ResidualStack& stack, const Dataset& ds,
                                            unsigned jobs = 0);

}  // namespace mmm
