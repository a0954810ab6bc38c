#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmm/common.hpp"

namespace mmm {

// One layer of one utterance: T frames x D dims, float32.
struct FeatureSequence {
  Matrix data;
  Rational frame_rate{50, 1};

  std::size_t frames() const { return data.rows; }
  std::size_t dim() const { return data.cols; }
  void validate() const;  // throws ValidationError
};

// All stored layers of one utterance. Layers share T and frame rate.
struct LayeredFeatures {
  std::string utterance_id;
  std::map<std::uint16_t, FeatureSequence> layers;

  std::size_t frames() const;
  void validate() const;
};

LayeredFeatures read_feature_file(const std::filesystem::path& path);
void write_feature_file(const LayeredFeatures& lf, const std::filesystem::path& path);

// A dataset entry is either manifest-backed (lazy file load) or held
// in memory (synthetic data, tests).
struct DatasetEntry {
  std::string utterance_id;
  std::filesystem::path path;                   // empty for in-memory entries
  std::shared_ptr<const LayeredFeatures> data;  // null for file-backed entries
};

class Dataset {
 public:
  Dataset() = default;

  static Dataset from_manifest(const std::filesystem::path& manifest_path);
  static Dataset from_memory(std::vector<LayeredFeatures> utterances);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<DatasetEntry>& entries() const { return entries_; }
  const std::filesystem::path& manifest_path() const { return manifest_path_; }

  // Loads (or returns the in-memory) utterance at index i.
  LayeredFeatures load(std::size_t i) const;

  Dataset subset(const std::vector<std::size_t>& indices) const;

 private:
  std::filesystem::path manifest_path_;
  std::vector<DatasetEntry> entries_;
};

void write_manifest(const Dataset& ds, const std::filesystem::path& manifest_path);

// Selects ceil(fraction * N) whole utterances without replacement.
// The choice is a pure function of (seed, utterance ids): each id is
// hashed with the seed and the smallest keys win, so file paths and
// manifest order do not affect the outcome. Output keeps dataset order.
Dataset subsample_utterances(const Dataset& ds, double fraction, std::uint64_t seed);

// Gaussian-mixture synthetic data. Every layer shares the per-frame
// component identity but has its own component means, so layers carry
// complementary information the multi-layer codec can exploit.
struct SyntheticSpec {
  std::uint32_t n_components = 4;
  std::uint32_t dim = 8;
  std::uint32_t frames = 200;
  std::uint32_t n_utterances = 10;
  std::uint32_t n_layers = 1;
  double component_spread = 5.0;
  double noise_sigma = 0.1;
  Rational frame_rate{50, 1};

  void validate() const;
};

struct SyntheticDataset {
  std::vector<LayeredFeatures> utterances;
  // layer_means[l] is an n_components x dim matrix of generator means.
  std::vector<Matrix> layer_means;
  std::vector<std::uint16_t> layer_indices;

  Dataset as_dataset() const;
};

SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Concatenates one layer's frames across all utterances into an N x D matrix.
Matrix gather_layer_frames(const Dataset& ds, std::uint16_t layer);

}  // namespace mmm
