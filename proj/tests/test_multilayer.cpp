#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>

#include "mmm/multilayer.hpp"
#include "test_util.hpp"

using namespace mmm;

namespace {

MmmTrainOptions small_opts(std::vector<std::uint16_t> layers, std::size_t stages,
                           std::uint32_t clusters, std::uint64_t seed) {
  MmmTrainOptions opts;
  opts.layers = std::move(layers);
  for (std::size_t m = 0; m < stages; ++m) {
    TrainConfig cfg;
    cfg.clusters = clusters;
    cfg.seed = seed;
    opts.stage_cfgs.push_back(cfg);
  }
  opts.subsample_fraction = 1.0;
  return opts;
}

Dataset two_layer_dataset(std::uint64_t seed, std::uint32_t n_utts = 6,
                          std::uint32_t frames = 120, std::uint32_t dim = 5) {
  SyntheticSpec spec;
  spec.n_components = 5;
  spec.dim = dim;
  spec.frames = frames;
  spec.n_utterances = n_utts;
  spec.n_layers = 2;
  spec.noise_sigma = 0.3;
  return generate_synthetic(spec, seed).as_dataset();
}

// Plain triple-loop fusion oracle with double accumulation.
Matrix naive_fuse(const MultiLayerCodec& codec, const TokenGrid& grid,
                  const EmbeddingTables& tables, const LayerWeights& lw) {
  const auto layout = codec.stream_layout();
  const std::size_t embed = tables.begin()->second.cols;
  const auto w = lw.weights();
  Matrix out(grid.frames, embed);
  for (std::size_t t = 0; t < grid.frames; ++t) {
    std::vector<double> acc(embed, 0.0);
    for (std::size_t li = 0; li < codec.selected_layers.size(); ++li) {
      std::vector<double> layer_sum(embed, 0.0);
      for (std::size_t s = 0; s < layout.size(); ++s) {
        if (layout[s].first != codec.selected_layers[li]) continue;
        const Matrix& table = tables.at(layout[s]);
        const std::uint32_t id = grid.streams[s].ids[t];
        for (std::size_t e = 0; e < embed; ++e) {
          layer_sum[e] += static_cast<double>(table.at(id, e));
        }
      }
      for (std::size_t e = 0; e < embed; ++e) acc[e] += w[li] * layer_sum[e];
    }
    for (std::size_t e = 0; e < embed; ++e) out.at(t, e) = static_cast<float>(acc[e]);
  }
  return out;
}

}  // namespace

TEST_CASE("mmm_train: 2 layers x 4 stages yields 8 streams in (layer, stage) order") {
  const Dataset ds = two_layer_dataset(1);
  const MultiLayerCodec codec = mmm_train(ds, small_opts({0, 1}, 4, 3, 9));
  codec.validate();
  CHECK(codec.stream_count() == 8);
  const auto layout = codec.stream_layout();
  REQUIRE(layout.size() == 8);
  for (std::size_t s = 0; s < 8; ++s) {
    CHECK(layout[s].first == static_cast<std::uint16_t>(s / 4));
    CHECK(layout[s].second == static_cast<std::uint16_t>(s % 4 + 1));
  }
  CHECK(codec.stream_vocab_sizes() == std::vector<std::uint32_t>(8, 3));
}

TEST_CASE("per-layer stacks do not depend on which other layers are trained") {
  const Dataset ds = two_layer_dataset(2);
  const MultiLayerCodec both = mmm_train(ds, small_opts({0, 1}, 2, 4, 5));
  const MultiLayerCodec only1 = mmm_train(ds, small_opts({1}, 2, 4, 5));
  REQUIRE(both.stacks.count(1) == 1);
  REQUIRE(only1.stacks.count(1) == 1);
  for (std::size_t m = 0; m < 2; ++m) {
    CHECK(both.stacks.at(1).codebooks[m].centroids ==
          only1.stacks.at(1).codebooks[m].centroids);
  }
  // And layers get distinct seeds: their codebooks differ even though the
  // synthetic layers share structure.
  CHECK(both.stacks.at(0).codebooks[0].centroids != both.stacks.at(1).codebooks[0].centroids);
}

TEST_CASE("layer selection order controls the stream order") {
  const Dataset ds = two_layer_dataset(3);
  MultiLayerCodec codec = mmm_train(ds, small_opts({1, 0}, 1, 4, 2));
  CHECK(codec.selected_layers == std::vector<std::uint16_t>{1, 0});
  const auto layout = codec.stream_layout();
  CHECK(layout[0].first == 1);
  CHECK(layout[1].first == 0);
}

TEST_CASE("mmm_encode streams equal per-layer rvq_encode") {
  const Dataset ds = two_layer_dataset(4);
  const MultiLayerCodec codec = mmm_train(ds, small_opts({0, 1}, 3, 4, 7));
  const LayeredFeatures lf = ds.load(0);
  const TokenGrid grid = mmm_encode(codec, lf);
  grid.validate();
  CHECK(grid.utterance_id == lf.utterance_id);
  CHECK(grid.frames == lf.frames());

  std::size_t s = 0;
  for (std::uint16_t layer : codec.selected_layers) {
    const auto per_layer = rvq_encode(codec.stacks.at(layer), lf.layers.at(layer));
    for (std::size_t m = 0; m < per_layer.size(); ++m, ++s) {
      CHECK(grid.streams[s] == per_layer[m]);
    }
  }
  CHECK(s == grid.streams.size());
}

TEST_CASE("mmm_decode inverts mmm_encode up to per-layer rvq_decode") {
  const Dataset ds = two_layer_dataset(5);
  const MultiLayerCodec codec = mmm_train(ds, small_opts({0, 1}, 2, 4, 11));
  const LayeredFeatures lf = ds.load(1);
  const TokenGrid grid = mmm_encode(codec, lf);
  const LayeredFeatures out = mmm_decode(codec, grid);
  CHECK(out.utterance_id == lf.utterance_id);
  REQUIRE(out.layers.size() == 2);
  for (std::uint16_t layer : codec.selected_layers) {
    const auto per_layer = rvq_encode(codec.stacks.at(layer), lf.layers.at(layer));
    const FeatureSequence ref = rvq_decode(codec.stacks.at(layer), per_layer, codec.frame_rate);
    CHECK(out.layers.at(layer).data == ref.data);
    CHECK(out.layers.at(layer).frame_rate == ref.frame_rate);
  }
}

TEST_CASE("fusion with centroid tables and a one-hot weight is single-layer decode") {
  const Dataset ds = two_layer_dataset(6);
  const MultiLayerCodec codec = mmm_train(ds, small_opts({0, 1}, 2, 4, 13));
  const LayeredFeatures lf = ds.load(2);
  const TokenGrid grid = mmm_encode(codec, lf);
  const EmbeddingTables tables = centroid_tables(codec);

  // Large logit gap makes the softmax numerically one-hot on layer 0.
  LayerWeights lw;
  lw.logits = {60.0, 0.0};
  const Matrix fused = fuse_embeddings(codec, grid, tables, lw);
  const FeatureSequence ref = rvq_decode(
      codec.stacks.at(0),
      rvq_encode(codec.stacks.at(0), lf.layers.at(0)), codec.frame_rate);
  REQUIRE(fused.rows == ref.data.rows);
  REQUIRE(fused.cols == ref.data.cols);
  for (std::size_t i = 0; i < fused.values.size(); ++i) {
    CHECK(std::abs(fused.values[i] - ref.data.values[i]) <= 1e-6);
  }
}

TEST_CASE("fuse_embeddings matches the naive oracle on random tables") {
  std::mt19937_64 rng(77);
  SyntheticSpec spec;
  spec.n_layers = 3;
  spec.n_utterances = 2;
  spec.frames = 40;
  spec.dim = 4;
  const Dataset ds = generate_synthetic(spec, 8).as_dataset();
  const MultiLayerCodec codec = mmm_train(ds, small_opts({0, 1, 2}, 2, 3, 21));
  const TokenGrid grid = mmm_encode(codec, ds.load(0));

  EmbeddingTables tables;
  const std::size_t embed = 6;  // embedding dim need not match D
  for (const auto& [key, stage_k] : [&] {
        std::map<std::pair<std::uint16_t, std::uint16_t>, std::uint32_t> ks;
        const auto layout = codec.stream_layout();
        const auto vocab = codec.stream_vocab_sizes();
        for (std::size_t s = 0; s < layout.size(); ++s) ks[layout[s]] = vocab[s];
        return ks;
      }()) {
    tables[key] = test::random_matrix(stage_k, embed, rng);
  }
  LayerWeights lw;
  lw.logits = {0.3, -0.8, 1.1};
  const Matrix fused = fuse_embeddings(codec, grid, tables, lw);
  const Matrix oracle = naive_fuse(codec, grid, tables, lw);
  REQUIRE(fused.rows == oracle.rows);
  REQUIRE(fused.cols == oracle.cols);
  for (std::size_t i = 0; i < fused.values.size(); ++i) {
    CHECK(fused.values[i] == doctest::Approx(oracle.values[i]).epsilon(1e-6));
  }
}

TEST_CASE("probe gradients match central finite differences") {
  const Dataset ds = two_layer_dataset(9, /*n_utts=*/3, /*frames=*/30, /*dim=*/3);
  const MultiLayerCodec codec = mmm_train(ds, small_opts({0, 1}, 2, 3, 17));
  const EmbeddingTables tables = centroid_tables(codec);

  std::mt19937_64 rng(5);
  std::vector<Matrix> targets;
  for (std::size_t u = 0; u < ds.size(); ++u) {
    targets.push_back(test::random_matrix(ds.load(u).frames(), 2, rng));
  }
  std::vector<double> logits = {0.4, -0.2};
  Matrix head = test::random_matrix(2, 3, rng);

  const ProbeGradient g = probe_loss_and_grad(ds, codec, tables, targets, logits, head);
  REQUIRE(g.logit_grad.size() == 2);
  REQUIRE(g.head_grad.size() == head.values.size());
  CHECK(std::isfinite(g.loss));

  const double h = 1e-4;
  auto loss_at = [&](std::span<const double> lg, const Matrix& hd) {
    return probe_loss_and_grad(ds, codec, tables, targets, lg, hd).loss;
  };
  for (std::size_t j = 0; j < logits.size(); ++j) {
    auto lo = logits, hi = logits;
    lo[j] -= h;
    hi[j] += h;
    const double fd = (loss_at(hi, head) - loss_at(lo, head)) / (2 * h);
    CHECK(g.logit_grad[j] ==
          doctest::Approx(fd).epsilon(1e-4).scale(std::max(1.0, std::abs(fd))));
  }
  for (std::size_t idx : {std::size_t{0}, std::size_t{3}, std::size_t{5}}) {
    Matrix lo = head, hi = head;
    lo.values[idx] -= static_cast<float>(h);
    hi.values[idx] += static_cast<float>(h);
    const double fd = (loss_at(logits, hi) - loss_at(logits, lo)) /
                      (static_cast<double>(hi.values[idx]) - static_cast<double>(lo.values[idx]));
    CHECK(g.head_grad[idx] ==
          doctest::Approx(fd).epsilon(2e-3).scale(std::max(1.0, std::abs(fd))));
  }
}

TEST_CASE("probe recovers a planted informative layer") {
  // Layer 0 is pure noise; layer 1 carries cluster structure. Targets are
  // the layer-1 features themselves, so the probe should upweight layer 1.
  std::mt19937_64 rng(31);
  std::vector<LayeredFeatures> utts;
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> comp(0, 3);
  const std::vector<std::array<float, 3>> means = {
      {5, 0, 0}, {0, 5, 0}, {0, 0, 5}, {-5, -5, 0}};
  for (int u = 0; u < 4; ++u) {
    LayeredFeatures lf;
    lf.utterance_id = "utt_" + std::to_string(u);
    FeatureSequence l0, l1;
    l0.data = Matrix(60, 3);
    l1.data = Matrix(60, 3);
    for (std::size_t t = 0; t < 60; ++t) {
      const int c = comp(rng);
      for (std::size_t d = 0; d < 3; ++d) {
        l0.data.at(t, d) = static_cast<float>(noise(rng));
        l1.data.at(t, d) = means[c][d] + static_cast<float>(0.2 * noise(rng));
      }
    }
    lf.layers.emplace(0, std::move(l0));
    lf.layers.emplace(1, std::move(l1));
    utts.push_back(std::move(lf));
  }
  const Dataset ds = Dataset::from_memory(std::move(utts));
  const MultiLayerCodec codec = mmm_train(ds, small_opts({0, 1}, 1, 4, 3));
  const EmbeddingTables tables = centroid_tables(codec);
  std::vector<Matrix> targets;
  for (std::size_t u = 0; u < ds.size(); ++u) {
    targets.push_back(ds.load(u).layers.at(1).data);
  }
  ProbeOptions popts;
  popts.steps = 150;
  popts.learning_rate = 0.5;
  const ProbeResult res = learn_layer_weights(ds, codec, tables, targets, popts);
  const auto w = res.weights.weights();
  REQUIRE(w.size() == 2);
  CHECK(w[1] > w[0]);
  CHECK(w[1] > 0.7);
  // Loss went down over the optimization.
  REQUIRE(res.loss_trace.size() >= 2);
  CHECK(res.loss_trace.back() < res.loss_trace.front());
  CHECK(select_top_layers(res.weights, codec.selected_layers, 1) ==
        std::vector<std::uint16_t>{1});
}

TEST_CASE("zero probe steps leaves uniform weights") {
  const Dataset ds = two_layer_dataset(12, 2, 40, 3);
  const MultiLayerCodec codec = mmm_train(ds, small_opts({0, 1}, 1, 3, 19));
  const EmbeddingTables tables = centroid_tables(codec);
  std::vector<Matrix> targets;
  for (std::size_t u = 0; u < ds.size(); ++u) {
    targets.push_back(ds.load(u).layers.at(0).data);
  }
  ProbeOptions popts;
  popts.steps = 0;
  const ProbeResult res = learn_layer_weights(ds, codec, tables, targets, popts);
  const auto w = res.weights.weights();
  for (double v : w) CHECK(v == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("select_top_layers: ranking, ties, and softmax shift invariance") {
  const std::vector<std::uint16_t> layers = {5, 7, 9};
  LayerWeights lw;
  lw.logits = {1.0, 3.0, 2.0};
  CHECK(select_top_layers(lw, layers, 2) == std::vector<std::uint16_t>{7, 9});
  CHECK(select_top_layers(lw, layers, 3) == std::vector<std::uint16_t>{7, 9, 5});

  LayerWeights shifted;
  shifted.logits = {101.0, 103.0, 102.0};
  CHECK(select_top_layers(shifted, layers, 2) == select_top_layers(lw, layers, 2));

  LayerWeights tied;
  tied.logits = {2.0, 2.0, 2.0};
  CHECK(select_top_layers(tied, layers, 2) == std::vector<std::uint16_t>{5, 7});

  CHECK_THROWS_AS(select_top_layers(lw, layers, 0), ArgumentError);
  CHECK_THROWS_AS(select_top_layers(lw, layers, 4), ArgumentError);
}

TEST_CASE("LayerWeights softmax is a proper distribution") {
  LayerWeights lw;
  lw.logits = {-500.0, 0.0, 500.0};  // must not overflow
  const auto w = lw.weights();
  double sum = 0.0;
  for (double v : w) {
    CHECK(std::isfinite(v));
    CHECK(v >= 0.0);
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(w[2] > 0.999);
  lw.validate();
}

TEST_CASE("mmm_decode rejects a grid with the wrong stream count") {
  const Dataset ds = two_layer_dataset(14, 2, 30, 3);
  const MultiLayerCodec codec = mmm_train(ds, small_opts({0, 1}, 2, 3, 23));
  TokenGrid grid = mmm_encode(codec, ds.load(0));
  grid.streams.pop_back();
  grid.vocab_sizes.pop_back();
  CHECK_THROWS_AS(mmm_decode(codec, grid), ValidationError);
}

TEST_CASE("mmm_train is deterministic across runs and jobs settings") {
  const Dataset ds = two_layer_dataset(15);
  auto opts = small_opts({0, 1}, 2, 4, 29);
  opts.subsample_fraction = 0.5;
  opts.subsample_seed = 123;
  const MultiLayerCodec a = mmm_train(ds, opts);
  for (auto& cfg : opts.stage_cfgs) cfg.jobs = 4;
  const MultiLayerCodec b = mmm_train(ds, opts);
  for (std::uint16_t layer : {0, 1}) {
    for (std::size_t m = 0; m < 2; ++m) {
      CHECK(a.stacks.at(layer).codebooks[m].centroids ==
            b.stacks.at(layer).codebooks[m].centroids);
    }
  }
  CHECK(a.subsample_fraction == 0.5);
  CHECK(a.subsample_seed == 123);
}
