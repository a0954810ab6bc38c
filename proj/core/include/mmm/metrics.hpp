#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmm/common.hpp"
#include "mmm/tensor_io.hpp"

namespace mmm {

// Rate model of a token representation: one vocabulary size per stream.
struct StreamRateSpec {
  std::vector<std::uint32_t> vocab_sizes;
  Rational frame_rate{50, 1};

  void validate() const;
};

// frame_rate * sum over streams of log2(vocab). A vocabulary of 1
// contributes zero bits; no deduplication adjustment is applied.
double bitrate_bits_per_sec(const StreamRateSpec& spec);

struct Distortion {
  double mse = 0.0;
  std::vector<double> per_dim_mse;
};

Distortion distortion(const FeatureSequence& original, const FeatureSequence& reconstructed);

struct UsageStats {
  std::vector<std::uint64_t> counts;  // per id, length K
  double used_fraction = 0.0;         // distinct ids observed / K
  double normalized_entropy = 0.0;    // Shannon entropy / log2(K), in [0,1]
};

UsageStats usage_stats(std::span<const std::uint32_t> ids, std::uint32_t vocab_size);
UsageStats usage_from_counts(std::vector<std::uint64_t> counts);

struct StreamReport {
  std::uint16_t layer_index = 0;
  std::uint16_t stage = 0;
  std::uint32_t vocab_size = 0;
  double used_fraction = 0.0;
  double normalized_entropy = 0.0;
};

struct UtteranceReport {
  std::string utterance_id;
  std::uint32_t frames = 0;
  double duration_sec = 0.0;
  double mse = 0.0;
};

struct EvalReport {
  double bitrate_bits_per_sec = 0.0;
  double mse = 0.0;
  std::vector<double> residual_profile;
  std::vector<StreamReport> streams;
  std::vector<UtteranceReport> utterances;
  std::size_t utterance_count = 0;
  double total_duration_sec = 0.0;
};

// Plain-text key-value rendering plus a JSON sidecar (one object per
// utterance and an aggregate record).
std::string render_report_text(const EvalReport& report);
std::string render_report_json(const EvalReport& report);
void write_report(const EvalReport& report, const std::filesystem::path& text_path,
                  const std::filesystem::path& json_path);

}  // namespace mmm
