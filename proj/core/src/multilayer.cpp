#include "mmm/multilayer.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace mmm {

std::vector<double> LayerWeights::weights() const {
  if (logits.empty()) throw ValidationError("layer weights have no logits");
  const double max_logit = *std::max_element(logits.begin(), logits.end());
  std::vector<double> w(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    w[i] = std::exp(logits[i] - max_logit);
    total += w[i];
  }
  for (double& x : w) x /= total;
  return w;
}

void LayerWeights::validate() const {
  const auto w = weights();
  double total = 0.0;
  for (double x : w) {
    // Extreme logits can underflow a weight to exactly 0; that is a valid
    // (numerically one-hot) distribution.
    if (!(x >= 0.0) || !std::isfinite(x)) {
      throw ValidationError("layer weights must be finite and non-negative");
    }
    total += x;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ValidationError("layer weights must sum to 1");
}

std::size_t MultiLayerCodec::stream_count() const {
  std::size_t n = 0;
  for (std::uint16_t l : selected_layers) n += stacks.at(l).stages();
  return n;
}

std::vector<std::pair<std::uint16_t, std::uint16_t>> MultiLayerCodec::stream_layout() const {
  std::vector<std::pair<std::uint16_t, std::uint16_t>> layout;
  for (std::uint16_t l : selected_layers) {
    const auto& stack = stacks.at(l);
    for (std::size_t m = 1; m <= stack.stages(); ++m) {
      layout.emplace_back(l, static_cast<std::uint16_t>(m));
    }
  }
  return layout;
}

std::vector<std::uint32_t> MultiLayerCodec::stream_vocab_sizes() const {
  std::vector<std::uint32_t> vocab;
  for (std::uint16_t l : selected_layers) {
    for (const Codebook& cb : stacks.at(l).codebooks) {
      vocab.push_back(static_cast<std::uint32_t>(cb.clusters()));
    }
  }
  return vocab;
}

void MultiLayerCodec::validate() const {
  if (selected_layers.empty()) throw ValidationError("codec selects no layers");
  std::set<std::uint16_t> seen;
  for (std::uint16_t l : selected_layers) {
    if (!seen.insert(l).second) {
      throw ValidationError("codec selects layer " + std::to_string(l) + " twice");
    }
    auto it = stacks.find(l);
    if (it == stacks.end()) {
      throw ValidationError("codec selects layer " + std::to_string(l) + " with no stack");
    }
    it->second.validate();
  }
  if (frame_rate.num == 0 || frame_rate.den == 0) {
    throw ValidationError("codec frame rate must be positive");
  }
  if (fusion_weights) {
    fusion_weights->validate();
    if (fusion_weights->logits.size() != selected_layers.size()) {
      throw ValidationError("fusion weights length does not match selected layers");
    }
  }
}

void TokenGrid::validate() const {
  if (streams.empty()) throw ValidationError("token grid has no streams");
  if (frames == 0) throw ValidationError("token grid has T=0");
  if (vocab_sizes.size() != streams.size()) {
    throw ValidationError("token grid vocab list does not match stream count");
  }
  for (std::size_t s = 0; s < streams.size(); ++s) {
    if (streams[s].ids.size() != frames) {
      throw ValidationError("stream " + std::to_string(s) + " has mismatched frame count");
    }
    for (std::size_t t = 0; t < streams[s].ids.size(); ++t) {
      if (streams[s].ids[t] >= vocab_sizes[s]) {
        throw ValidationError("token id out of range at stream " + std::to_string(s) +
                              ", frame " + std::to_string(t));
      }
    }
  }
}

MultiLayerCodec mmm_train(const Dataset& ds, const MmmTrainOptions& opts) {
  if (opts.layers.empty()) throw ArgumentError("mmm_train: no layers selected");
  if (opts.stage_cfgs.empty()) throw ArgumentError("mmm_train: no stage configs");
  {
    std::set<std::uint16_t> uniq(opts.layers.begin(), opts.layers.end());
    if (uniq.size() != opts.layers.size()) {
      throw ArgumentError("mmm_train: duplicate layer in selection");
    }
  }
  if (ds.empty()) throw ArgumentError("mmm_train: dataset is empty");

  const Dataset train_set =
      subsample_utterances(ds, opts.subsample_fraction, opts.subsample_seed);

  MultiLayerCodec codec;
  codec.selected_layers = opts.layers;
  codec.subsample_fraction = opts.subsample_fraction;
  codec.subsample_seed = opts.subsample_seed;
  {
    const LayeredFeatures first = train_set.load(0);
    codec.frame_rate = first.layers.begin()->second.frame_rate;
  }

  for (std::uint16_t layer : opts.layers) {
    const Matrix frames = gather_layer_frames(train_set, layer);
    std::vector<TrainConfig> cfgs(opts.stage_cfgs.begin(), opts.stage_cfgs.end());
    for (std::size_t m = 0; m < cfgs.size(); ++m) {
      cfgs[m].seed = derive_seed(cfgs[m].seed,
                                 (static_cast<std::uint64_t>(layer) << 16) | (m + 1));
    }
    codec.stacks.emplace(layer, rvq_train(frames, cfgs, layer));
  }
  codec.validate();
  return codec;
}

TokenGrid mmm_encode(const MultiLayerCodec& codec, const LayeredFeatures& lf, unsigned jobs) {
  codec.validate();
  TokenGrid grid;
  grid.utterance_id = lf.utterance_id;
  grid.frames = static_cast<std::uint32_t>(lf.frames());
  for (std::uint16_t layer : codec.selected_layers) {
    auto it = lf.layers.find(layer);
    if (it == lf.layers.end()) {
      throw ValidationError("utterance '" + lf.utterance_id + "' is missing layer " +
                            std::to_string(layer));
    }
    const ResidualStack& stack = codec.stacks.at(layer);
    auto tokens = rvq_encode(stack, it->second, jobs);
    for (std::size_t m = 0; m < tokens.size(); ++m) {
      grid.vocab_sizes.push_back(static_cast<std::uint32_t>(stack.codebooks[m].clusters()));
      grid.streams.push_back(std::move(tokens[m]));
    }
  }
  grid.validate();
  return grid;
}

namespace {

// Streams of `grid` belonging to one layer, in stage order.
std::vector<const StreamTokens*> layer_streams(const TokenGrid& grid, std::uint16_t layer) {
  std::vector<const StreamTokens*> out;
  for (const StreamTokens& s : grid.streams) {
    if (s.layer_index == layer) out.push_back(&s);
  }
  std::sort(out.begin(), out.end(),
            [](const StreamTokens* a, const StreamTokens* b) { return a->stage < b->stage; });
  return out;
}

}  // namespace

LayeredFeatures mmm_decode(const MultiLayerCodec& codec, const TokenGrid& grid) {
  codec.validate();
  grid.validate();
  LayeredFeatures lf;
  lf.utterance_id = grid.utterance_id;
  for (std::uint16_t layer : codec.selected_layers) {
    const ResidualStack& stack = codec.stacks.at(layer);
    const auto ptrs = layer_streams(grid, layer);
    std::vector<StreamTokens> tokens;
    tokens.reserve(ptrs.size());
    for (const StreamTokens* p : ptrs) tokens.push_back(*p);
    lf.layers.emplace(layer, rvq_decode(stack, tokens, codec.frame_rate));
  }
  return lf;
}

EmbeddingTables centroid_tables(const MultiLayerCodec& codec) {
  EmbeddingTables tables;
  for (std::uint16_t layer : codec.selected_layers) {
    const ResidualStack& stack = codec.stacks.at(layer);
    for (std::size_t m = 0; m < stack.stages(); ++m) {
      tables[{layer, static_cast<std::uint16_t>(m + 1)}] = stack.codebooks[m].centroids;
    }
  }
  return tables;
}

namespace {

// Per-layer stage-summed embeddings for one utterance: T x E in double.
std::vector<std::vector<double>> layer_embeddings(const TokenGrid& grid,
                                                  const MultiLayerCodec& codec,
                                                  const EmbeddingTables& tables,
                                                  std::size_t embed_dim) {
  std::vector<std::vector<double>> per_layer;
  per_layer.reserve(codec.selected_layers.size());
  for (std::uint16_t layer : codec.selected_layers) {
    std::vector<double> sum(static_cast<std::size_t>(grid.frames) * embed_dim, 0.0);
    for (const StreamTokens* sp : layer_streams(grid, layer)) {
      auto it = tables.find({layer, sp->stage});
      if (it == tables.end()) {
        throw ArgumentError("no embedding table for layer " + std::to_string(layer) +
                            " stage " + std::to_string(sp->stage));
      }
      const Matrix& table = it->second;
      if (table.cols != embed_dim) {
        throw ArgumentError("embedding table width mismatch: layer " + std::to_string(layer) +
                            " stage " + std::to_string(sp->stage) + " has E=" +
                            std::to_string(table.cols) + ", expected " +
                            std::to_string(embed_dim));
      }
      for (std::size_t t = 0; t < grid.frames; ++t) {
        const std::uint32_t id = sp->ids[t];
        if (id >= table.rows) {
          throw ArgumentError("embedding table too small for id " + std::to_string(id) +
                              " at layer " + std::to_string(layer) + " stage " +
                              std::to_string(sp->stage));
        }
        const float* row = table.row(id);
        double* dst = sum.data() + t * embed_dim;
        for (std::size_t e = 0; e < embed_dim; ++e) dst[e] += row[e];
      }
    }
    per_layer.push_back(std::move(sum));
  }
  return per_layer;
}

std::size_t table_embed_dim(const EmbeddingTables& tables) {
  if (tables.empty()) throw ArgumentError("no embedding tables supplied");
  return tables.begin()->second.cols;
}

}  // namespace

Matrix fuse_embeddings(const MultiLayerCodec& codec, const TokenGrid& grid,
                       const EmbeddingTables& tables, const LayerWeights& lw) {
  codec.validate();
  grid.validate();
  lw.validate();
  if (lw.logits.size() != codec.selected_layers.size()) {
    throw ArgumentError("fuse_embeddings: weight count does not match selected layers");
  }
  const std::size_t embed_dim = table_embed_dim(tables);
  const auto per_layer = layer_embeddings(grid, codec, tables, embed_dim);
  const auto w = lw.weights();

  Matrix out(grid.frames, embed_dim);
  std::vector<double> acc(embed_dim);
  for (std::size_t t = 0; t < grid.frames; ++t) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t l = 0; l < per_layer.size(); ++l) {
      const double* src = per_layer[l].data() + t * embed_dim;
      for (std::size_t e = 0; e < embed_dim; ++e) acc[e] += w[l] * src[e];
    }
    float* dst = out.row(t);
    for (std::size_t e = 0; e < embed_dim; ++e) dst[e] = static_cast<float>(acc[e]);
  }
  return out;
}

namespace {

struct ProbeData {
  // per utterance, per layer: T x E stage-summed embeddings
  std::vector<std::vector<std::vector<double>>> embeddings;
  std::vector<std::size_t> frame_counts;
  std::size_t total_frames = 0;
  std::size_t embed_dim = 0;
  std::size_t out_dim = 0;
};

ProbeData prepare_probe(const Dataset& ds, const MultiLayerCodec& codec,
                        const EmbeddingTables& tables, std::span<const Matrix> targets,
                        unsigned jobs) {
  if (ds.size() != targets.size()) {
    throw ArgumentError("probe: need one target matrix per utterance (" +
                        std::to_string(ds.size()) + " vs " + std::to_string(targets.size()) + ")");
  }
  ProbeData pd;
  pd.embed_dim = table_embed_dim(tables);
  for (std::size_t u = 0; u < ds.size(); ++u) {
    const LayeredFeatures lf = ds.load(u);
    const TokenGrid grid = mmm_encode(codec, lf, jobs);
    if (targets[u].rows != grid.frames) {
      throw ArgumentError("probe: target for utterance " + std::to_string(u) + " has " +
                          std::to_string(targets[u].rows) + " frames, expected " +
                          std::to_string(grid.frames));
    }
    if (u == 0) {
      pd.out_dim = targets[u].cols;
    } else if (targets[u].cols != pd.out_dim) {
      throw ArgumentError("probe: inconsistent target width at utterance " + std::to_string(u));
    }
    pd.embeddings.push_back(layer_embeddings(grid, codec, tables, pd.embed_dim));
    pd.frame_counts.push_back(grid.frames);
    pd.total_frames += grid.frames;
  }
  return pd;
}

ProbeGradient eval_probe(const ProbeData& pd, std::span<const Matrix> targets,
                         std::span<const double> logits, const Matrix& head) {
  const std::size_t n_layers = pd.embeddings.empty() ? logits.size()
                                                     : pd.embeddings.front().size();
  if (logits.size() != n_layers) throw ArgumentError("probe: logit count mismatch");
  if (head.cols != pd.embed_dim || head.rows != pd.out_dim) {
    throw ArgumentError("probe: head must be out_dim x embed_dim");
  }
  LayerWeights lw{std::vector<double>(logits.begin(), logits.end())};
  const auto w = lw.weights();

  const std::size_t E = pd.embed_dim;
  const std::size_t O = pd.out_dim;
  const double norm = 1.0 / (static_cast<double>(pd.total_frames) * static_cast<double>(O));

  ProbeGradient g;
  g.logit_grad.assign(n_layers, 0.0);
  g.head_grad.assign(O * E, 0.0);
  std::vector<double> dw(n_layers, 0.0);
  std::vector<double> fused(E);
  std::vector<double> err(O);
  std::vector<double> back(E);

  for (std::size_t u = 0; u < pd.embeddings.size(); ++u) {
    const auto& layers = pd.embeddings[u];
    const Matrix& y = targets[u];
    for (std::size_t t = 0; t < pd.frame_counts[u]; ++t) {
      std::fill(fused.begin(), fused.end(), 0.0);
      for (std::size_t l = 0; l < n_layers; ++l) {
        const double* src = layers[l].data() + t * E;
        for (std::size_t e = 0; e < E; ++e) fused[e] += w[l] * src[e];
      }
      for (std::size_t o = 0; o < O; ++o) {
        double pred = 0.0;
        const float* hrow = head.row(o);
        for (std::size_t e = 0; e < E; ++e) pred += static_cast<double>(hrow[e]) * fused[e];
        err[o] = pred - static_cast<double>(y.at(t, o));
        g.loss += err[o] * err[o];
      }
      // dL/dH += 2 err fused^T ; dL/dfused = 2 H^T err
      std::fill(back.begin(), back.end(), 0.0);
      for (std::size_t o = 0; o < O; ++o) {
        const float* hrow = head.row(o);
        double* hg = g.head_grad.data() + o * E;
        const double e2 = 2.0 * err[o];
        for (std::size_t e = 0; e < E; ++e) {
          hg[e] += e2 * fused[e];
          back[e] += e2 * static_cast<double>(hrow[e]);
        }
      }
      for (std::size_t l = 0; l < n_layers; ++l) {
        const double* src = layers[l].data() + t * E;
        double acc = 0.0;
        for (std::size_t e = 0; e < E; ++e) acc += back[e] * src[e];
        dw[l] += acc;
      }
    }
  }

  g.loss *= norm;
  for (double& v : g.head_grad) v *= norm;
  // Softmax chain rule: dL/dz_j = w_j (dL/dw_j - sum_l w_l dL/dw_l).
  double mix = 0.0;
  for (std::size_t l = 0; l < n_layers; ++l) mix += w[l] * dw[l] * norm;
  for (std::size_t l = 0; l < n_layers; ++l) {
    g.logit_grad[l] = w[l] * (dw[l] * norm - mix);
  }
  return g;
}

}  // namespace

ProbeGradient probe_loss_and_grad(const Dataset& ds, const MultiLayerCodec& codec,
                                  const EmbeddingTables& tables, std::span<const Matrix> targets,
                                  std::span<const double> logits, const Matrix& head,
                                  unsigned jobs) {
  const ProbeData pd = prepare_probe(ds, codec, tables, targets, jobs);
  return eval_probe(pd, targets, logits, head);
}

ProbeResult learn_layer_weights(const Dataset& ds, const MultiLayerCodec& codec,
                                const EmbeddingTables& tables, std::span<const Matrix> targets,
                                const ProbeOptions& opts) {
  const ProbeData pd = prepare_probe(ds, codec, tables, targets, opts.jobs);
  const std::size_t n_layers = codec.selected_layers.size();

  ProbeResult result;
  result.weights.logits.assign(n_layers, 0.0);
  result.head = Matrix(pd.out_dim, pd.embed_dim);
  if (pd.out_dim == pd.embed_dim) {
    for (std::size_t i = 0; i < pd.out_dim; ++i) result.head.at(i, i) = 1.0f;
  } else {
    std::mt19937_64 rng(derive_seed(opts.seed, 0x68656164));
    const double scale = 1.0 / std::sqrt(static_cast<double>(pd.embed_dim));
    std::uniform_real_distribution<double> dist(-scale, scale);
    for (float& v : result.head.values) v = static_cast<float>(dist(rng));
  }

  if (opts.steps == 0) return result;

  ProbeGradient g = eval_probe(pd, targets, result.weights.logits, result.head);
  if (!std::isfinite(g.loss)) {
    throw ValidationError("layer weight learning diverged at step 0");
  }
  // Gradient descent with backtracking: a proposed step is only accepted
  // if it does not increase the loss, otherwise the rate is halved. The
  // rate recovers (capped at the configured value) after accepted steps,
  // so opts.learning_rate is an upper bound, not a stability requirement.
  double lr = opts.learning_rate;
  for (std::uint32_t step = 0; step < opts.steps; ++step) {
    result.loss_trace.push_back(g.loss);
    bool accepted = false;
    for (int attempt = 0; attempt < 60 && !accepted; ++attempt) {
      std::vector<double> cand_logits = result.weights.logits;
      Matrix cand_head = result.head;
      for (std::size_t l = 0; l < n_layers; ++l) cand_logits[l] -= lr * g.logit_grad[l];
      for (std::size_t i = 0; i < cand_head.values.size(); ++i) {
        cand_head.values[i] = static_cast<float>(static_cast<double>(cand_head.values[i]) -
                                                 lr * g.head_grad[i]);
      }
      ProbeGradient g2 = eval_probe(pd, targets, cand_logits, cand_head);
      if (std::isfinite(g2.loss) && g2.loss <= g.loss) {
        result.weights.logits = std::move(cand_logits);
        result.head = std::move(cand_head);
        g = std::move(g2);
        lr = std::min(2.0 * lr, opts.learning_rate);
        accepted = true;
      } else {
        lr *= 0.5;
      }
    }
    if (!accepted) break;  // no descent direction at float resolution
  }
  result.loss_trace.push_back(g.loss);
  return result;
}

std::vector<std::uint16_t> select_top_layers(const LayerWeights& lw,
                                             std::span<const std::uint16_t> layers,
                                             std::size_t k) {
  lw.validate();
  if (lw.logits.size() != layers.size()) {
    throw ArgumentError("select_top_layers: weights and layer list differ in length");
  }
  if (k < 1 || k > layers.size()) {
    throw ArgumentError("select_top_layers: k=" + std::to_string(k) + " out of range [1, " +
                        std::to_string(layers.size()) + "]");
  }
  const auto w = lw.weights();
  std::vector<std::size_t> order(layers.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (w[a] != w[b]) return w[a] > w[b];
    return layers[a] < layers[b];
  });
  std::vector<std::uint16_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = layers[order[i]];
  return out;
}

}  // namespace mmm
