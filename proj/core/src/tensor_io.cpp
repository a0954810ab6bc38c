#include "mmm/tensor_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>

#include "bytes.hpp"

namespace mmm {

namespace {
constexpr std::string_view kMmfMagic = "MMMF";
constexpr std::uint16_t kMmfVersion = 1;
}  // namespace

void FeatureSequence::validate() const {
  if (data.rows < 1) throw ValidationError("feature sequence has T=0 frames");
  if (data.cols < 1) throw ValidationError("feature sequence has D=0 dims");
  if (data.values.size() != data.rows * data.cols) {
    throw ValidationError("feature matrix storage does not match T*D");
  }
  if (frame_rate.num == 0 || frame_rate.den == 0) {
    throw ValidationError("frame rate must be positive");
  }
  if (!all_finite(data)) throw ValidationError("feature sequence contains NaN or Inf");
}

std::size_t LayeredFeatures::frames() const {
  return layers.empty() ? 0 : layers.begin()->second.frames();
}

void LayeredFeatures::validate() const {
  if (layers.empty()) throw ValidationError("utterance '" + utterance_id + "' has no layers");
  const FeatureSequence& first = layers.begin()->second;
  for (const auto& [idx, seq] : layers) {
    seq.validate();
    if (seq.frames() != first.frames()) {
      throw ValidationError("utterance '" + utterance_id + "' layer " + std::to_string(idx) +
                            " frame count mismatch");
    }
    if (!(seq.frame_rate == first.frame_rate)) {
      throw ValidationError("utterance '" + utterance_id + "' layer " + std::to_string(idx) +
                            " frame rate mismatch");
    }
  }
}

LayeredFeatures read_feature_file(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  auto r = detail::open_checked(bytes, kMmfMagic, kMmfVersion, path);

  LayeredFeatures lf;
  lf.utterance_id = path.stem().string();
  Rational rate;
  rate.num = r.get_u32();
  rate.den = r.get_u32();
  if (rate.num == 0 || rate.den == 0) r.fail("frame rate must be positive");
  const std::uint16_t n_layers = r.get_u16();
  if (n_layers == 0) r.fail("file declares zero layers");
  for (std::uint16_t i = 0; i < n_layers; ++i) {
    const std::uint16_t layer_index = r.get_u16();
    const std::uint32_t t = r.get_u32();
    const std::uint32_t d = r.get_u32();
    if (t == 0) throw ValidationError(path.filename().string() + ": layer " +
                                      std::to_string(layer_index) + " has T=0");
    if (d == 0) throw ValidationError(path.filename().string() + ": layer " +
                                      std::to_string(layer_index) + " has D=0");
    if (static_cast<std::uint64_t>(t) * d >
        std::numeric_limits<std::uint32_t>::max()) {
      r.fail("layer dimensions overflow (T=" + std::to_string(t) + ", D=" + std::to_string(d) +
             ")");
    }
    FeatureSequence seq;
    seq.frame_rate = rate;
    seq.data = Matrix(t, d);
    r.get_f32_array(seq.data.values);
    if (!all_finite(seq.data)) {
      throw ValidationError(path.filename().string() + ": layer " + std::to_string(layer_index) +
                            " contains NaN or Inf");
    }
    if (lf.layers.contains(layer_index)) r.fail("duplicate layer index " +
                                                std::to_string(layer_index));
    lf.layers.emplace(layer_index, std::move(seq));
  }
  lf.validate();
  return lf;
}

void write_feature_file(const LayeredFeatures& lf, const std::filesystem::path& path) {
  lf.validate();
  detail::ByteWriter w;
  const Rational rate = lf.layers.begin()->second.frame_rate;
  w.put_u32(rate.num);
  w.put_u32(rate.den);
  w.put_u16(static_cast<std::uint16_t>(lf.layers.size()));
  for (const auto& [idx, seq] : lf.layers) {
    w.put_u16(idx);
    w.put_u32(static_cast<std::uint32_t>(seq.frames()));
    w.put_u32(static_cast<std::uint32_t>(seq.dim()));
    w.put_f32_array(seq.data.values);
  }
  detail::write_checked(path, kMmfMagic, kMmfVersion, w);
}

Dataset Dataset::from_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest: " + manifest_path.string());
  Dataset ds;
  ds.manifest_path_ = manifest_path;
  const auto base = manifest_path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0 || tab + 1 >= line.size()) {
      throw FormatError("manifest " + manifest_path.string() + ":" + std::to_string(lineno) +
                        ": expected 'utterance_id<TAB>path'");
    }
    DatasetEntry e;
    e.utterance_id = line.substr(0, tab);
    std::filesystem::path p = line.substr(tab + 1);
    e.path = p.is_absolute() ? p : base / p;
    ds.entries_.push_back(std::move(e));
  }
  if (ds.entries_.empty()) {
    throw ValidationError("manifest is empty: " + manifest_path.string());
  }
  return ds;
}

Dataset Dataset::from_memory(std::vector<LayeredFeatures> utterances) {
  Dataset ds;
  for (auto& lf : utterances) {
    DatasetEntry e;
    e.utterance_id = lf.utterance_id;
    e.data = std::make_shared<const LayeredFeatures>(std::move(lf));
    ds.entries_.push_back(std::move(e));
  }
  return ds;
}

LayeredFeatures Dataset::load(std::size_t i) const {
  if (i >= entries_.size()) throw ArgumentError("dataset index out of range");
  const DatasetEntry& e = entries_[i];
  if (e.data) return *e.data;
  LayeredFeatures lf = read_feature_file(e.path);
  lf.utterance_id = e.utterance_id;
  return lf;
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.manifest_path_ = manifest_path_;
  out.entries_.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= entries_.size()) throw ArgumentError("subset index out of range");
    out.entries_.push_back(entries_[i]);
  }
  return out;
}

void write_manifest(const Dataset& ds, const std::filesystem::path& manifest_path) {
  std::ofstream out(manifest_path, std::ios::trunc);
  if (!out) throw IoError("cannot open manifest for writing: " + manifest_path.string());
  for (const auto& e : ds.entries()) {
    out << e.utterance_id << '\t' << e.path.string() << '\n';
  }
  if (!out) throw IoError("manifest write failed: " + manifest_path.string());
}

Dataset subsample_utterances(const Dataset& ds, double fraction, std::uint64_t seed) {
  if (ds.empty()) throw ArgumentError("subsample_utterances: dataset is empty");
  if (!(fraction > 0.0) || fraction > 1.0) {
    throw ArgumentError("subsample fraction must be in (0, 1], got " + std::to_string(fraction));
  }
  const std::size_t n = ds.size();
  const auto want = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
  if (want >= n) {
    std::vector<std::size_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = i;
    return ds.subset(all);
  }
  // Key each utterance by hash(seed, id); the `want` smallest keys win.
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(n);
  for (std::size_t i = 0; i < n; ++i) {
    keyed[i] = {splitmix64(seed ^ fnv1a64(ds.entries()[i].utterance_id)), i};
  }
  std::nth_element(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(want) - 1,
                   keyed.end());
  std::vector<std::size_t> chosen(want);
  for (std::size_t i = 0; i < want; ++i) chosen[i] = keyed[i].second;
  std::sort(chosen.begin(), chosen.end());
  return ds.subset(chosen);
}

void SyntheticSpec::validate() const {
  if (n_components < 1 || dim < 1 || frames < 1 || n_utterances < 1 || n_layers < 1) {
    throw ArgumentError("synthetic spec counts must all be >= 1");
  }
  if (component_spread < 0.0 || noise_sigma < 0.0) {
    throw ArgumentError("synthetic spec spread and sigma must be >= 0");
  }
  if (frame_rate.num == 0 || frame_rate.den == 0) {
    throw ArgumentError("synthetic spec frame rate must be positive");
  }
}

Dataset SyntheticDataset::as_dataset() const {
  return Dataset::from_memory(utterances);
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  spec.validate();
  SyntheticDataset out;

  // Layer-specific component means.
  std::mt19937_64 mean_rng(derive_seed(seed, 0x6d65616e));
  std::uniform_real_distribution<double> mean_dist(-spec.component_spread, spec.component_spread);
  out.layer_means.reserve(spec.n_layers);
  for (std::uint32_t l = 0; l < spec.n_layers; ++l) {
    Matrix means(spec.n_components, spec.dim);
    for (float& v : means.values) v = static_cast<float>(mean_dist(mean_rng));
    out.layer_means.push_back(std::move(means));
    out.layer_indices.push_back(static_cast<std::uint16_t>(l));
  }

  out.utterances.reserve(spec.n_utterances);
  for (std::uint32_t u = 0; u < spec.n_utterances; ++u) {
    std::mt19937_64 rng(derive_seed(seed, 0x75747400ULL + u));
    std::uniform_int_distribution<std::uint32_t> comp_dist(0, spec.n_components - 1);
    std::normal_distribution<double> noise(0.0, 1.0);

    // Component identity per frame, shared across layers.
    std::vector<std::uint32_t> comp(spec.frames);
    for (auto& c : comp) c = comp_dist(rng);

    LayeredFeatures lf;
    std::ostringstream id;
    id << "synth_" << std::setw(5) << std::setfill('0') << u;
    lf.utterance_id = id.str();
    for (std::uint32_t l = 0; l < spec.n_layers; ++l) {
      FeatureSequence seq;
      seq.frame_rate = spec.frame_rate;
      seq.data = Matrix(spec.frames, spec.dim);
      for (std::uint32_t t = 0; t < spec.frames; ++t) {
        const float* mean = out.layer_means[l].row(comp[t]);
        float* row = seq.data.row(t);
        for (std::uint32_t d = 0; d < spec.dim; ++d) {
          double v = mean[d];
          if (spec.noise_sigma > 0.0) v += spec.noise_sigma * noise(rng);
          row[d] = static_cast<float>(v);
        }
      }
      lf.layers.emplace(static_cast<std::uint16_t>(l), std::move(seq));
    }
    out.utterances.push_back(std::move(lf));
  }
  return out;
}

Matrix gather_layer_frames(const Dataset& ds, std::uint16_t layer) {
  if (ds.empty()) throw ArgumentError("gather_layer_frames: dataset is empty");
  std::size_t total = 0;
  std::size_t dim = 0;
  Matrix out;
  bool first = true;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    LayeredFeatures lf = ds.load(i);
    auto it = lf.layers.find(layer);
    if (it == lf.layers.end()) {
      throw ValidationError("utterance '" + lf.utterance_id + "' is missing layer " +
                            std::to_string(layer));
    }
    const FeatureSequence& seq = it->second;
    if (first) {
      dim = seq.dim();
      first = false;
    } else if (seq.dim() != dim) {
      throw ValidationError("utterance '" + lf.utterance_id + "' layer " + std::to_string(layer) +
                            " has D=" + std::to_string(seq.dim()) + ", expected " +
                            std::to_string(dim));
    }
    out.values.insert(out.values.end(), seq.data.values.begin(), seq.data.values.end());
    total += seq.frames();
  }
  out.rows = total;
  out.cols = dim;
  return out;
}

}  // namespace mmm
