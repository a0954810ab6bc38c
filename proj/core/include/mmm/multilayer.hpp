#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "mmm/rvq.hpp"
#include "mmm/tensor_io.hpp"

namespace mmm {

// Softmax-parameterized per-layer mixing weights.
struct LayerWeights {
  std::vector<double> logits;

  std::vector<double> weights() const;
  void validate() const;
  bool operator==(const LayerWeights&) const = default;
};

struct MultiLayerCodec {
  std::map<std::uint16_t, ResidualStack> stacks;
  std::vector<std::uint16_t> selected_layers;
  std::optional<LayerWeights> fusion_weights;
  Rational frame_rate{50, 1};

  // Training provenance, persisted so an archive can be re-derived.
  double subsample_fraction = 1.0;
  std::uint64_t subsample_seed = 0;
  std::uint64_t config_digest = 0;

  std::size_t stream_count() const;
  std::vector<std::pair<std::uint16_t, std::uint16_t>> stream_layout() const;  // (layer, stage)
  std::vector<std::uint32_t> stream_vocab_sizes() const;
  void validate() const;
};

// All streams of one utterance, ordered (layer in selected order, stage).
struct TokenGrid {
  std::string utterance_id;
  std::uint32_t frames = 0;
  std::vector<StreamTokens> streams;
  std::vector<std::uint32_t> vocab_sizes;  // K per stream, aligned with `streams`

  void validate() const;
  bool operator==(const TokenGrid&) const = default;
};

struct MmmTrainOptions {
  std::vector<std::uint16_t> layers;
  std::vector<TrainConfig> stage_cfgs;  // one per stage; seeds derived per layer
  double subsample_fraction = 0.30;
  std::uint64_t subsample_seed = 0;
};

// One independent residual stack per selected layer, trained on the
// (globally drawn) utterance subsample.
MultiLayerCodec mmm_train(const Dataset& ds, const MmmTrainOptions& opts);

TokenGrid mmm_encode(const MultiLayerCodec& codec, const LayeredFeatures& lf, unsigned jobs = 0);

// Decodes every selected layer; the inverse of mmm_encode up to
// quantization loss.
LayeredFeatures mmm_decode(const MultiLayerCodec& codec, const TokenGrid& grid);

// One embedding table per (layer, stage) stream, each K x E.
using EmbeddingTables = std::map<std::pair<std::uint16_t, std::uint16_t>, Matrix>;

// The codec's own centroids as tables (E = D), making fusion the exact
// RVQ inverse on a single layer.
EmbeddingTables centroid_tables(const MultiLayerCodec& codec);

// Per frame: sum stage embeddings within each layer, then weighted-sum
// across layers. Output is T x E.
Matrix fuse_embeddings(const MultiLayerCodec& codec, const TokenGrid& grid,
                       const EmbeddingTables& tables, const LayerWeights& lw);

struct ProbeOptions {
  std::uint32_t steps = 200;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
  unsigned jobs = 0;
};

struct ProbeGradient {
  double loss = 0.0;
  std::vector<double> logit_grad;
  std::vector<double> head_grad;  // out_dim x embed_dim, row-major
};

struct ProbeResult {
  LayerWeights weights;
  std::vector<double> loss_trace;
  Matrix head;  // out_dim x embed_dim read-out, learned jointly
};

// MSE regression probe: fused embeddings -> linear head -> targets.
// Targets are per-utterance T x E' matrices aligned with ds order.
ProbeResult learn_layer_weights(const Dataset& ds, const MultiLayerCodec& codec,
                                const EmbeddingTables& tables,
                                std::span<const Matrix> targets, const ProbeOptions& opts);

// Loss and analytic gradients at a given (logits, head) point; the
// finite-difference tests check learn_layer_weights against this surface.
ProbeGradient probe_loss_and_grad(const Dataset& ds, const MultiLayerCodec& codec,
                                  const EmbeddingTables& tables, std::span<const Matrix> targets,
                                  std::span<const double> logits, const Matrix& head,
                                  unsigned jobs = 0);

// Indices of the k largest weights, descending; ties to the lower layer.
std::vector<std::uint16_t> select_top_layers(const LayerWeights& lw,
                                             std::span<const std::uint16_t> layers, std::size_t k);

}  // namespace mmm
