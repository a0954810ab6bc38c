#include "mmm/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mmm {

void StreamRateSpec::validate() const {
  if (vocab_sizes.empty()) throw ArgumentError("rate spec has no streams");
  for (std::uint32_t v : vocab_sizes) {
    if (v < 1) throw ArgumentError("rate spec vocabulary sizes must be >= 1");
  }
  if (frame_rate.num == 0 || frame_rate.den == 0) {
    throw ArgumentError("rate spec frame rate must be positive");
  }
}

namespace {

// Pairwise sum: for n identical terms with n a power of two, the result
// is exactly n times one term, so doubling the stream count exactly
// doubles the bitrate.
double pairwise_sum(std::span<const double> v) {
  if (v.size() == 1) return v[0];
  const std::size_t half = v.size() / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

}  // namespace

double bitrate_bits_per_sec(const StreamRateSpec& spec) {
  spec.validate();
  std::vector<double> bits;
  bits.reserve(spec.vocab_sizes.size());
  for (std::uint32_t v : spec.vocab_sizes) {
    bits.push_back(std::log2(static_cast<double>(v)));
  }
  return spec.frame_rate.hz() * pairwise_sum(bits);
}

Distortion distortion(const FeatureSequence& original, const FeatureSequence& reconstructed) {
  if (original.frames() != reconstructed.frames() || original.dim() != reconstructed.dim()) {
    throw ArgumentError("distortion: shape mismatch (" + std::to_string(original.frames()) + "x" +
                        std::to_string(original.dim()) + " vs " +
                        std::to_string(reconstructed.frames()) + "x" +
                        std::to_string(reconstructed.dim()) + ")");
  }
  const std::size_t frames = original.frames();
  const std::size_t dim = original.dim();
  Distortion out;
  out.per_dim_mse.assign(dim, 0.0);
  for (std::size_t t = 0; t < frames; ++t) {
    const float* a = original.data.row(t);
    const float* b = reconstructed.data.row(t);
    for (std::size_t d = 0; d < dim; ++d) {
      const double diff = static_cast<double>(a[d]) - static_cast<double>(b[d]);
      out.per_dim_mse[d] += diff * diff;
    }
  }
  double total = 0.0;
  for (double& v : out.per_dim_mse) {
    v /= static_cast<double>(frames);
    total += v;
  }
  out.mse = total / static_cast<double>(dim);
  return out;
}

UsageStats usage_from_counts(std::vector<std::uint64_t> counts) {
  if (counts.empty()) throw ArgumentError("usage stats need a non-empty vocabulary");
  const std::size_t vocab_size = counts.size();
  UsageStats out;
  out.counts = std::move(counts);
  std::uint64_t total = 0;
  for (std::uint64_t c : out.counts) total += c;
  std::size_t used = 0;
  double entropy = 0.0;
  for (std::uint64_t c : out.counts) {
    if (c == 0) continue;
    ++used;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    entropy -= p * std::log2(p);
  }
  out.used_fraction = static_cast<double>(used) / static_cast<double>(vocab_size);
  out.normalized_entropy =
      vocab_size == 1 ? 0.0 : entropy / std::log2(static_cast<double>(vocab_size));
  return out;
}

UsageStats usage_stats(std::span<const std::uint32_t> ids, std::uint32_t vocab_size) {
  if (vocab_size < 1) throw ArgumentError("usage_stats: vocab size must be >= 1");
  std::vector<std::uint64_t> counts(vocab_size, 0);
  for (std::uint32_t id : ids) {
    if (id >= vocab_size) {
      throw ValidationError("usage_stats: id " + std::to_string(id) + " out of range (K=" +
                            std::to_string(vocab_size) + ")");
    }
    ++counts[id];
  }
  return usage_from_counts(std::move(counts));
}

std::string render_report_text(const EvalReport& report) {
  std::ostringstream os;
  os.precision(12);
  os << "bitrate_bits_per_sec\t" << report.bitrate_bits_per_sec << '\n';
  os << "mse\t" << report.mse << '\n';
  os << "utterance_count\t" << report.utterance_count << '\n';
  os << "total_duration_sec\t" << report.total_duration_sec << '\n';
  for (std::size_t m = 0; m < report.residual_profile.size(); ++m) {
    os << "residual_energy_stage_" << m << '\t' << report.residual_profile[m] << '\n';
  }
  for (const StreamReport& s : report.streams) {
    os << "stream_L" << s.layer_index << "_m" << s.stage << "\tK=" << s.vocab_size
       << "\tused_fraction=" << s.used_fraction
       << "\tnormalized_entropy=" << s.normalized_entropy << '\n';
  }
  return os.str();
}

std::string render_report_json(const EvalReport& report) {
  nlohmann::json j;
  j["aggregate"] = {
      {"bitrate_bits_per_sec", report.bitrate_bits_per_sec},
      {"mse", report.mse},
      {"utterance_count", report.utterance_count},
      {"total_duration_sec", report.total_duration_sec},
      {"residual_profile", report.residual_profile},
  };
  j["streams"] = nlohmann::json::array();
  for (const StreamReport& s : report.streams) {
    j["streams"].push_back({{"layer", s.layer_index},
                            {"stage", s.stage},
                            {"vocab_size", s.vocab_size},
                            {"used_fraction", s.used_fraction},
                            {"normalized_entropy", s.normalized_entropy}});
  }
  j["utterances"] = nlohmann::json::array();
  for (const UtteranceReport& u : report.utterances) {
    j["utterances"].push_back({{"utterance_id", u.utterance_id},
                               {"frames", u.frames},
                               {"duration_sec", u.duration_sec},
                               {"mse", u.mse}});
  }
  return j.dump(2) + "\n";
}

void write_report(const EvalReport& report, const std::filesystem::path& text_path,
                  const std::filesystem::path& json_path) {
  std::ofstream t(text_path, std::ios::trunc);
  if (!t) throw IoError("cannot write report: " + text_path.string());
  t << render_report_text(report);
  std::ofstream j(json_path, std::ios::trunc);
  if (!j) throw IoError("cannot write report: " + json_path.string());
  j << render_report_json(report);
}

}  // namespace mmm
