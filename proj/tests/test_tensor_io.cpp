#include <doctest.h>

#include <fstream>
#include <map>
#include <set>

#include "bytes.hpp"
#include "mmm/kmeans.hpp"
#include "mmm/tensor_io.hpp"
#include "test_util.hpp"

using namespace mmm;
using test::TempDir;

namespace {

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("MMF round-trip is bit-exact for a small file") {
  TempDir dir("mmf");
  LayeredFeatures lf;
  lf.utterance_id = "u0";
  FeatureSequence seq;
  seq.frame_rate = {50, 1};
  seq.data = Matrix(3, 2);
  seq.data.values = {0.25f, -1.5f, 3.0f, 0.0f, -0.0f, 123.456f};
  lf.layers.emplace(7, seq);

  const auto path = dir / "u0.mmf";
  write_feature_file(lf, path);
  const LayeredFeatures back = read_feature_file(path);
  REQUIRE(back.layers.size() == 1);
  const auto& got = back.layers.at(7);
  CHECK(got.frame_rate == seq.frame_rate);
  REQUIRE(got.data.rows == 3);
  REQUIRE(got.data.cols == 2);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::bit_cast<std::uint32_t>(got.data.values[i]) ==
          std::bit_cast<std::uint32_t>(seq.data.values[i]));
  }
}

TEST_CASE("MMF round-trip property over random tensors") {
  TempDir dir("mmf_prop");
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::uniform_int_distribution<std::size_t> tdist(1, 40), ddist(1, 17), ldist(1, 4);
    const LayeredFeatures lf =
        test::random_utterance("u", ldist(rng), tdist(rng), ddist(rng), rng);
    const auto path = dir / ("t" + std::to_string(trial) + ".mmf");
    write_feature_file(lf, path);
    const LayeredFeatures back = read_feature_file(path);
    REQUIRE(back.layers.size() == lf.layers.size());
    for (const auto& [idx, seq] : lf.layers) {
      const auto& got = back.layers.at(idx);
      REQUIRE(got.data.values.size() == seq.data.values.size());
      for (std::size_t i = 0; i < seq.data.values.size(); ++i) {
        CHECK(std::bit_cast<std::uint32_t>(got.data.values[i]) ==
              std::bit_cast<std::uint32_t>(seq.data.values[i]));
      }
    }
  }
}

TEST_CASE("corrupted magic is a format error") {
  TempDir dir("mmf_bad");
  std::mt19937_64 rng(1);
  const auto path = dir / "x.mmf";
  write_feature_file(test::random_utterance("x", 1, 4, 3, rng), path);

  auto bytes = slurp(path);
  bytes[1] ^= 0xff;
  std::ofstream(path, std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(read_feature_file(path), FormatError);
}

TEST_CASE("truncated payload is a format error") {
  TempDir dir("mmf_trunc");
  std::mt19937_64 rng(2);
  const auto path = dir / "x.mmf";
  write_feature_file(test::random_utterance("x", 1, 10, 4, rng), path);
  auto bytes = slurp(path);
  bytes.resize(bytes.size() / 2);
  std::ofstream(path, std::ios::binary | std::ios::trunc)
      .write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
  CHECK_THROWS_AS(read_feature_file(path), FormatError);
}

TEST_CASE("T=0 header is rejected at read time") {
  TempDir dir("mmf_t0");
  const auto path = dir / "t0.mmf";
  // magic | version | rate 50/1 | 1 layer | layer 0, T=0, D=2 | crc
  detail::ByteWriter payload;
  payload.put_u32(50);
  payload.put_u32(1);
  payload.put_u16(1);
  payload.put_u16(0);
  payload.put_u32(0);
  payload.put_u32(2);
  detail::write_checked(path, "MMMF", 1, payload);
  CHECK_THROWS_AS(read_feature_file(path), ValidationError);
}

TEST_CASE("NaN payload is a validation error") {
  TempDir dir("mmf_nan");
  const auto path = dir / "nan.mmf";
  detail::ByteWriter payload;
  payload.put_u32(50);
  payload.put_u32(1);
  payload.put_u16(1);
  payload.put_u16(0);
  payload.put_u32(1);
  payload.put_u32(2);
  payload.put_f32(1.0f);
  payload.put_f32(std::numeric_limits<float>::quiet_NaN());
  detail::write_checked(path, "MMMF", 1, payload);
  CHECK_THROWS_AS(read_feature_file(path), ValidationError);
}

TEST_CASE("mismatched T across layers is rejected before writing") {
  TempDir dir("mmf_mismatch");
  std::mt19937_64 rng(3);
  LayeredFeatures lf = test::random_utterance("x", 2, 5, 3, rng);
  lf.layers.at(1).data = test::random_matrix(6, 3, rng);
  CHECK_THROWS_AS(write_feature_file(lf, dir / "x.mmf"), ValidationError);
}

TEST_CASE("1000-utterance batch write then read is bitwise stable") {
  TempDir dir("mmf_batch");
  std::mt19937_64 rng(4);
  std::uint64_t hash_in = 0;
  for (int u = 0; u < 1000; ++u) {
    const LayeredFeatures lf = test::random_utterance("u" + std::to_string(u), 1, 5, 4, rng);
    for (float v : lf.layers.at(0).data.values) {
      hash_in = splitmix64(hash_in ^ std::bit_cast<std::uint32_t>(v));
    }
    write_feature_file(lf, dir / ("u" + std::to_string(u) + ".mmf"));
  }
  std::uint64_t hash_out = 0;
  for (int u = 0; u < 1000; ++u) {
    const LayeredFeatures lf = read_feature_file(dir / ("u" + std::to_string(u) + ".mmf"));
    for (float v : lf.layers.at(0).data.values) {
      hash_out = splitmix64(hash_out ^ std::bit_cast<std::uint32_t>(v));
    }
  }
  CHECK(hash_in == hash_out);
}

TEST_CASE("subsample keeps everything at fraction 1.0, in order") {
  std::mt19937_64 rng(5);
  std::vector<LayeredFeatures> utts;
  for (int u = 0; u < 10; ++u) {
    utts.push_back(test::random_utterance("u" + std::to_string(u), 1, 2, 2, rng));
  }
  const Dataset ds = Dataset::from_memory(std::move(utts));
  const Dataset sub = subsample_utterances(ds, 1.0, 99);
  REQUIRE(sub.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(sub.entries()[i].utterance_id == ds.entries()[i].utterance_id);
  }
}

TEST_CASE("subsample is deterministic per seed and rejects bad fractions") {
  std::mt19937_64 rng(6);
  std::vector<LayeredFeatures> utts;
  for (int u = 0; u < 10; ++u) {
    utts.push_back(test::random_utterance("u" + std::to_string(u), 1, 2, 2, rng));
  }
  const Dataset ds = Dataset::from_memory(std::move(utts));
  const Dataset a = subsample_utterances(ds, 0.3, 7);
  const Dataset b = subsample_utterances(ds, 0.3, 7);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.entries()[i].utterance_id == b.entries()[i].utterance_id);
  }
  CHECK_THROWS_AS(subsample_utterances(ds, 0.0, 1), ArgumentError);
  CHECK_THROWS_AS(subsample_utterances(ds, 1.5, 1), ArgumentError);
}

TEST_CASE("subsample selection frequency matches the fraction") {
  // Monte-Carlo oracle: over 100 seeds, each of 1000 utterances should be
  // picked with empirical frequency near 0.3. Per-utterance sd is
  // sqrt(.3*.7/100) ~ 0.046; a +/-0.2 band is > 4 sigma, so 1000
  // utterances all stay inside with overwhelming probability.
  std::vector<LayeredFeatures> utts;
  std::mt19937_64 rng(7);
  for (int u = 0; u < 1000; ++u) {
    LayeredFeatures lf;
    lf.utterance_id = "utt" + std::to_string(u);
    FeatureSequence seq;
    seq.data = Matrix(1, 1, 0.5f);
    lf.layers.emplace(0, seq);
    utts.push_back(std::move(lf));
  }
  const Dataset ds = Dataset::from_memory(std::move(utts));
  std::map<std::string, int> hits;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const Dataset sub = subsample_utterances(ds, 0.3, seed);
    REQUIRE(sub.size() == 300);
    for (const auto& e : sub.entries()) ++hits[e.utterance_id];
  }
  double total = 0.0;
  for (const auto& e : ds.entries()) {
    const double freq = hits[e.utterance_id] / 100.0;
    CHECK(freq >= 0.10);
    CHECK(freq <= 0.50);
    total += freq;
  }
  // Every draw selects exactly 300 of 1000, so the mean is exactly 0.3.
  CHECK(total / 1000.0 == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("subsample depends on ids, not paths") {
  TempDir dir("sub_paths");
  std::mt19937_64 rng(8);
  std::vector<std::string> manifests;
  for (int variant = 0; variant < 2; ++variant) {
    std::ofstream m(dir / ("manifest" + std::to_string(variant) + ".tsv"));
    for (int u = 0; u < 20; ++u) {
      const std::string name =
          (variant == 0 ? "a" : "renamed_b") + std::to_string(u) + ".mmf";
      m << "utt" << u << '\t' << name << '\n';
    }
  }
  const Dataset d0 = Dataset::from_manifest(dir / "manifest0.tsv");
  const Dataset d1 = Dataset::from_manifest(dir / "manifest1.tsv");
  const Dataset s0 = subsample_utterances(d0, 0.4, 42);
  const Dataset s1 = subsample_utterances(d1, 0.4, 42);
  REQUIRE(s0.size() == s1.size());
  for (std::size_t i = 0; i < s0.size(); ++i) {
    CHECK(s0.entries()[i].utterance_id == s1.entries()[i].utterance_id);
  }
}

TEST_CASE("synthetic generator: zero noise hits the component means exactly") {
  SyntheticSpec spec;
  spec.n_components = 3;
  spec.dim = 4;
  spec.frames = 50;
  spec.n_utterances = 2;
  spec.n_layers = 2;
  spec.noise_sigma = 0.0;
  const SyntheticDataset synth = generate_synthetic(spec, 21);
  for (const auto& lf : synth.utterances) {
    for (const auto& [l, seq] : lf.layers) {
      for (std::size_t t = 0; t < seq.frames(); ++t) {
        bool matched = false;
        for (std::uint32_t c = 0; c < spec.n_components && !matched; ++c) {
          matched = std::equal(seq.data.row(t), seq.data.row(t) + spec.dim,
                               synth.layer_means[l].row(c));
        }
        CHECK(matched);
      }
    }
  }
}

TEST_CASE("synthetic generator is deterministic per seed") {
  SyntheticSpec spec;
  spec.n_utterances = 3;
  spec.n_layers = 2;
  const SyntheticDataset a = generate_synthetic(spec, 9);
  const SyntheticDataset b = generate_synthetic(spec, 9);
  REQUIRE(a.utterances.size() == b.utterances.size());
  for (std::size_t u = 0; u < a.utterances.size(); ++u) {
    for (const auto& [l, seq] : a.utterances[u].layers) {
      CHECK(seq.data == b.utterances[u].layers.at(l).data);
    }
  }
}

TEST_CASE("k-means recovers synthetic component means") {
  SyntheticSpec spec;
  spec.n_components = 4;
  spec.dim = 6;
  spec.frames = 400;
  spec.n_utterances = 5;
  spec.noise_sigma = 0.01;
  const SyntheticDataset synth = generate_synthetic(spec, 33);
  const Matrix frames = gather_layer_frames(synth.as_dataset(), 0);

  TrainConfig cfg;
  cfg.clusters = 4;
  cfg.seed = 3;
  cfg.n_init = 3;
  const Codebook cb = kmeans_train(frames, cfg);

  // Each generator mean must have a centroid within 0.05.
  for (std::uint32_t c = 0; c < spec.n_components; ++c) {
    double best = 1e30;
    for (std::uint32_t k = 0; k < 4; ++k) {
      double d2 = 0.0;
      for (std::uint32_t d = 0; d < spec.dim; ++d) {
        const double diff = synth.layer_means[0].at(c, d) - cb.centroids.at(k, d);
        d2 += diff * diff;
      }
      best = std::min(best, d2);
    }
    CHECK(std::sqrt(best) < 0.05);
  }
}

TEST_CASE("zero-noise synthetic data quantizes to zero error on generator means") {
  SyntheticSpec spec;
  spec.n_components = 5;
  spec.dim = 3;
  spec.frames = 100;
  spec.n_utterances = 2;
  spec.noise_sigma = 0.0;
  const SyntheticDataset synth = generate_synthetic(spec, 12);
  Codebook means;
  means.centroids = synth.layer_means[0];

  const Matrix frames = gather_layer_frames(synth.as_dataset(), 0);
  const auto ids = assign_batch(means, frames);
  for (std::size_t i = 0; i < frames.rows; ++i) {
    const float* row = frames.row(i);
    const float* c = means.centroids.row(ids[i]);
    for (std::size_t d = 0; d < frames.cols; ++d) CHECK(row[d] == c[d]);
  }
}

TEST_CASE("manifest parsing rejects malformed lines and empty manifests") {
  TempDir dir("manifest");
  {
    std::ofstream m(dir / "bad.tsv");
    m << "no_tab_here\n";
  }
  CHECK_THROWS_AS(Dataset::from_manifest(dir / "bad.tsv"), FormatError);
  {
    std::ofstream m(dir / "empty.tsv");
    m << "# only a comment\n";
  }
  CHECK_THROWS_AS(Dataset::from_manifest(dir / "empty.tsv"), ValidationError);
}
