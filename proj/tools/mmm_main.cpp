// mmm — command-line front door for training, encoding, decoding and
// evaluating multi-stream K-means codecs over feature files.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmm/codec_store.hpp"
#include "mmm/metrics.hpp"
#include "mmm/multilayer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;    // validation / usage errors
constexpr int kExitData = 2;     // data / format errors
constexpr int kExitInternal = 3;

std::uint64_t env_seed_default() {
  if (const char* s = std::getenv("MMM_SEED")) {
    try {
      return std::stoull(s);
    } catch (const std::exception&) {
      throw mmm::ArgumentError(std::string("MMM_SEED is not a valid integer: ") + s);
    }
  }
  return 0;
}

void reject_unknown_keys(const json& j, const std::vector<std::string>& known,
                         const std::string& what) {
  for (const auto& [key, value] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw mmm::ArgumentError(what + ": unknown config key '" + key + "'");
    }
  }
}

json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw mmm::IoError("cannot open config: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw mmm::FormatError("config " + path + ": " + e.what());
  }
  return j;
}

// Train settings with every default materialized; the JSON dump of this
// is the effective-config echo and the source of the archive digest.
struct TrainSettings {
  std::string manifest;
  std::string output;
  std::vector<std::uint16_t> layers;
  std::uint32_t stages = 1;
  std::vector<std::uint32_t> cluster_sizes;  // per stage
  double subsample_fraction = 0.30;
  std::uint64_t seed = 0;
  std::uint32_t max_iters = 100;
  double rel_tol = 1e-6;
  std::uint32_t n_init = 1;
  unsigned jobs = 0;

  json effective() const {
    return json{{"manifest", manifest},
                {"output", output},
                {"layers", layers},
                {"stages", stages},
                {"cluster_sizes", cluster_sizes},
                {"subsample_fraction", subsample_fraction},
                {"seed", seed},
                {"max_iters", max_iters},
                {"rel_tol", rel_tol},
                {"n_init", n_init},
                {"jobs", jobs}};
  }

  // Digest input: only fields that affect the trained model. Paths and the
  // worker count are excluded so the same config yields the same digest
  // regardless of where it runs or how it is parallelized.
  json semantic() const {
    return json{{"layers", layers},
                {"stages", stages},
                {"cluster_sizes", cluster_sizes},
                {"subsample_fraction", subsample_fraction},
                {"seed", seed},
                {"max_iters", max_iters},
                {"rel_tol", rel_tol},
                {"n_init", n_init}};
  }

  std::vector<mmm::TrainConfig> stage_configs() const {
    std::vector<mmm::TrainConfig> cfgs(stages);
    for (std::uint32_t m = 0; m < stages; ++m) {
      cfgs[m].clusters = cluster_sizes[m];
      cfgs[m].max_iters = max_iters;
      cfgs[m].rel_tol = rel_tol;
      cfgs[m].n_init = n_init;
      cfgs[m].seed = seed;
      cfgs[m].jobs = jobs;
    }
    return cfgs;
  }
};

TrainSettings parse_train_settings(const std::string& config_path,
                                   const std::optional<std::string>& manifest_flag,
                                   const std::optional<std::string>& output_flag,
                                   const std::optional<std::uint64_t>& seed_flag,
                                   const std::optional<unsigned>& jobs_flag) {
  TrainSettings s;
  s.seed = env_seed_default();
  json cfg = json::object();
  if (!config_path.empty()) cfg = load_config_file(config_path);
  reject_unknown_keys(cfg,
                      {"manifest", "output", "layers", "stages", "cluster_size", "cluster_sizes",
                       "subsample_fraction", "seed", "max_iters", "rel_tol", "n_init", "jobs"},
                      "train");
  if (cfg.contains("manifest")) s.manifest = cfg["manifest"].get<std::string>();
  if (cfg.contains("output")) s.output = cfg["output"].get<std::string>();
  if (cfg.contains("layers")) s.layers = cfg["layers"].get<std::vector<std::uint16_t>>();
  if (cfg.contains("stages")) s.stages = cfg["stages"].get<std::uint32_t>();
  if (cfg.contains("subsample_fraction")) s.subsample_fraction = cfg["subsample_fraction"].get<double>();
  if (cfg.contains("seed")) s.seed = cfg["seed"].get<std::uint64_t>();
  if (cfg.contains("max_iters")) s.max_iters = cfg["max_iters"].get<std::uint32_t>();
  if (cfg.contains("rel_tol")) s.rel_tol = cfg["rel_tol"].get<double>();
  if (cfg.contains("n_init")) s.n_init = cfg["n_init"].get<std::uint32_t>();
  if (cfg.contains("jobs")) s.jobs = cfg["jobs"].get<unsigned>();

  std::uint32_t uniform_k = 500;
  if (cfg.contains("cluster_size")) uniform_k = cfg["cluster_size"].get<std::uint32_t>();
  if (cfg.contains("cluster_sizes")) {
    s.cluster_sizes = cfg["cluster_sizes"].get<std::vector<std::uint32_t>>();
    if (s.cluster_sizes.size() != s.stages) {
      throw mmm::ArgumentError("train: cluster_sizes length must equal stages");
    }
  } else {
    s.cluster_sizes.assign(s.stages, uniform_k);
  }

  if (manifest_flag) s.manifest = *manifest_flag;
  if (output_flag) s.output = *output_flag;
  if (seed_flag) s.seed = *seed_flag;
  if (jobs_flag) s.jobs = *jobs_flag;

  if (s.manifest.empty()) throw mmm::ArgumentError("train: no manifest given");
  if (s.output.empty()) throw mmm::ArgumentError("train: no output path given");
  if (s.layers.empty()) throw mmm::ArgumentError("train: no layers given");
  if (s.stages < 1) throw mmm::ArgumentError("train: stages must be >= 1");
  return s;
}

int cmd_train(const TrainSettings& s) {
  const mmm::Dataset ds = mmm::Dataset::from_manifest(s.manifest);

  mmm::MmmTrainOptions opts;
  opts.layers = s.layers;
  opts.stage_cfgs = s.stage_configs();
  opts.subsample_fraction = s.subsample_fraction;
  opts.subsample_seed = s.seed;

  mmm::MultiLayerCodec codec = mmm::mmm_train(ds, opts);
  const std::string effective = s.effective().dump(2);
  codec.config_digest = mmm::fnv1a64(s.semantic().dump());
  mmm::save_codec(codec, s.output);

  // Run log: effective config, per-stage inertia, residual energy profile
  // on the training subsample.
  const mmm::Dataset train_set =
      mmm::subsample_utterances(ds, s.subsample_fraction, s.seed);
  std::ostringstream log;
  log.precision(12);
  log << "effective_config:\n" << effective << "\n";
  for (std::uint16_t layer : codec.selected_layers) {
    const auto& stack = codec.stacks.at(layer);
    for (std::size_t m = 0; m < stack.stages(); ++m) {
      const auto& cb = stack.codebooks[m];
      log << "layer " << layer << " stage " << (m + 1) << ": K=" << cb.clusters()
          << " inertia=" << cb.train_inertia << " iterations=" << cb.meta.iterations_run
          << " converged=" << (cb.meta.converged ? "yes" : "no") << "\n";
    }
    const auto profile = mmm::residual_energy_profile(
        stack, mmm::gather_layer_frames(train_set, layer), s.jobs);
    log << "layer " << layer << " residual_energy_profile:";
    for (double e : profile) log << ' ' << e;
    log << "\n";
  }
  const fs::path log_path = fs::path(s.output).concat(".log");
  std::ofstream out(log_path, std::ios::trunc);
  if (!out) throw mmm::IoError("cannot write run log: " + log_path.string());
  out << log.str();
  std::cout << "wrote " << s.output << " and " << log_path.string() << "\n";
  return kExitOk;
}

int cmd_encode(const std::string& codec_path, const std::string& manifest,
               const std::string& out_dir, unsigned jobs) {
  const mmm::MultiLayerCodec codec = mmm::load_codec(codec_path);
  const mmm::Dataset ds = mmm::Dataset::from_manifest(manifest);
  fs::create_directories(out_dir);
  std::size_t failures = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string& id = ds.entries()[i].utterance_id;
    try {
      const mmm::LayeredFeatures lf = ds.load(i);
      const mmm::TokenGrid grid = mmm::mmm_encode(codec, lf, jobs);
      mmm::save_tokens(grid, fs::path(out_dir) / (id + ".mmmt"));
    } catch (const mmm::Error& e) {
      ++failures;
      std::cerr << "encode failed for utterance '" << id << "': " << e.what() << "\n";
    }
  }
  std::cout << "encoded " << (ds.size() - failures) << "/" << ds.size() << " utterances to "
            << out_dir << "\n";
  return failures == 0 ? kExitOk : kExitData;
}

std::vector<fs::path> list_token_files(const std::string& token_dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(token_dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".mmmt") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) {
    throw mmm::ArgumentError("no .mmmt files found in " + token_dir);
  }
  return files;
}

int cmd_decode(const std::string& codec_path, const std::string& token_dir,
               const std::string& out_dir) {
  const mmm::MultiLayerCodec codec = mmm::load_codec(codec_path);
  fs::create_directories(out_dir);
  std::size_t failures = 0;
  for (const fs::path& file : list_token_files(token_dir)) {
    try {
      const mmm::TokenGrid grid = mmm::load_tokens(file);
      const mmm::LayeredFeatures lf = mmm::mmm_decode(codec, grid);
      mmm::write_feature_file(lf, fs::path(out_dir) / (grid.utterance_id + ".mmf"));
    } catch (const mmm::Error& e) {
      ++failures;
      std::cerr << "decode failed for " << file.filename().string() << ": " << e.what() << "\n";
    }
  }
  if (failures != 0) return kExitData;
  std::cout << "decoded token files to " << out_dir << "\n";
  return kExitOk;
}

int cmd_eval(const std::string& codec_path, const std::string& manifest,
             const std::string& out_prefix, unsigned jobs) {
  const mmm::MultiLayerCodec codec = mmm::load_codec(codec_path);
  const mmm::Dataset ds = mmm::Dataset::from_manifest(manifest);

  mmm::EvalReport report;
  mmm::StreamRateSpec rate{codec.stream_vocab_sizes(), codec.frame_rate};
  report.bitrate_bits_per_sec = mmm::bitrate_bits_per_sec(rate);
  report.utterance_count = ds.size();

  const auto layout = codec.stream_layout();
  std::vector<std::vector<std::uint64_t>> stream_counts(layout.size());
  for (std::size_t s = 0; s < layout.size(); ++s) {
    stream_counts[s].assign(rate.vocab_sizes[s], 0);
  }

  double mse_weighted = 0.0;
  std::uint64_t total_frames = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const mmm::LayeredFeatures lf = ds.load(i);
    const mmm::TokenGrid grid = mmm::mmm_encode(codec, lf, jobs);
    const mmm::LayeredFeatures recon = mmm::mmm_decode(codec, grid);

    double utt_mse = 0.0;
    for (std::uint16_t layer : codec.selected_layers) {
      utt_mse += mmm::distortion(lf.layers.at(layer), recon.layers.at(layer)).mse;
    }
    utt_mse /= static_cast<double>(codec.selected_layers.size());

    for (std::size_t s = 0; s < grid.streams.size(); ++s) {
      for (std::uint32_t id : grid.streams[s].ids) ++stream_counts[s][id];
    }

    mmm::UtteranceReport ur;
    ur.utterance_id = lf.utterance_id;
    ur.frames = grid.frames;
    ur.duration_sec = static_cast<double>(grid.frames) / codec.frame_rate.hz();
    ur.mse = utt_mse;
    report.utterances.push_back(ur);
    report.total_duration_sec += ur.duration_sec;
    mse_weighted += utt_mse * static_cast<double>(grid.frames);
    total_frames += grid.frames;
  }
  report.mse = total_frames == 0 ? 0.0 : mse_weighted / static_cast<double>(total_frames);

  for (std::size_t s = 0; s < layout.size(); ++s) {
    const mmm::UsageStats us = mmm::usage_from_counts(std::move(stream_counts[s]));
    report.streams.push_back({layout[s].first, layout[s].second, rate.vocab_sizes[s],
                              us.used_fraction, us.normalized_entropy});
  }

  // Residual energy profile averaged across selected layers.
  std::vector<double> profile;
  for (std::uint16_t layer : codec.selected_layers) {
    const auto p = mmm::residual_energy_profile(codec.stacks.at(layer),
                                                mmm::gather_layer_frames(ds, layer), jobs);
    if (profile.empty()) profile.assign(p.size(), 0.0);
    for (std::size_t m = 0; m < p.size() && m < profile.size(); ++m) profile[m] += p[m];
  }
  for (double& v : profile) v /= static_cast<double>(codec.selected_layers.size());
  report.residual_profile = profile;

  mmm::write_report(report, out_prefix + ".txt", out_prefix + ".json");
  std::cout << mmm::render_report_text(report);
  return kExitOk;
}

int cmd_select_layers(const std::string& config_path, std::optional<std::size_t> k_flag,
                      const std::optional<std::uint64_t>& seed_flag,
                      const std::optional<unsigned>& jobs_flag) {
  json cfg = load_config_file(config_path);
  reject_unknown_keys(cfg,
                      {"manifest", "codec", "targets_manifest", "steps", "learning_rate", "seed",
                       "k", "jobs", "output"},
                      "select-layers");
  const std::string manifest = cfg.at("manifest").get<std::string>();
  const std::string codec_path = cfg.at("codec").get<std::string>();
  const std::string targets_manifest = cfg.at("targets_manifest").get<std::string>();

  mmm::ProbeOptions opts;
  if (cfg.contains("steps")) opts.steps = cfg["steps"].get<std::uint32_t>();
  if (cfg.contains("learning_rate")) opts.learning_rate = cfg["learning_rate"].get<double>();
  opts.seed = env_seed_default();
  if (cfg.contains("seed")) opts.seed = cfg["seed"].get<std::uint64_t>();
  if (seed_flag) opts.seed = *seed_flag;
  if (cfg.contains("jobs")) opts.jobs = cfg["jobs"].get<unsigned>();
  if (jobs_flag) opts.jobs = *jobs_flag;

  std::size_t k = cfg.contains("k") ? cfg["k"].get<std::size_t>() : 0;
  if (k_flag) k = *k_flag;

  const mmm::MultiLayerCodec codec = mmm::load_codec(codec_path);
  const mmm::Dataset ds = mmm::Dataset::from_manifest(manifest);
  const mmm::Dataset target_ds = mmm::Dataset::from_manifest(targets_manifest);
  if (target_ds.size() != ds.size()) {
    throw mmm::ArgumentError("select-layers: targets manifest has " +
                             std::to_string(target_ds.size()) + " utterances, expected " +
                             std::to_string(ds.size()));
  }
  std::vector<mmm::Matrix> targets;
  targets.reserve(ds.size());
  for (std::size_t i = 0; i < target_ds.size(); ++i) {
    const mmm::LayeredFeatures lf = target_ds.load(i);
    targets.push_back(lf.layers.begin()->second.data);
  }

  const mmm::EmbeddingTables tables = mmm::centroid_tables(codec);
  const mmm::ProbeResult result =
      mmm::learn_layer_weights(ds, codec, tables, targets, opts);
  if (k == 0) k = codec.selected_layers.size();
  const auto ranked = mmm::select_top_layers(result.weights, codec.selected_layers, k);
  const auto weights = result.weights.weights();

  json out;
  out["ranked_layers"] = ranked;
  out["layers"] = codec.selected_layers;
  out["weights"] = weights;
  out["final_loss"] = result.loss_trace.empty() ? 0.0 : result.loss_trace.back();
  std::cout << out.dump(2) << "\n";
  if (cfg.contains("output")) {
    const std::string out_path = cfg["output"].get<std::string>();
    std::ofstream f(out_path, std::ios::trunc);
    if (!f) throw mmm::IoError("cannot write " + out_path);
    f << out.dump(2) << "\n";
  }
  return kExitOk;
}

int cmd_gen(const std::string& out_dir, const mmm::SyntheticSpec& spec, std::uint64_t seed) {
  const mmm::SyntheticDataset synth = mmm::generate_synthetic(spec, seed);
  fs::create_directories(out_dir);
  std::ofstream manifest(fs::path(out_dir) / "manifest.tsv", std::ios::trunc);
  if (!manifest) throw mmm::IoError("cannot write manifest in " + out_dir);
  manifest << "# generated by mmm gen: seed=" << seed << " components=" << spec.n_components
           << " dim=" << spec.dim << " frames=" << spec.frames << " layers=" << spec.n_layers
           << " spread=" << spec.component_spread << " noise_sigma=" << spec.noise_sigma << "\n";
  for (const mmm::LayeredFeatures& lf : synth.utterances) {
    const std::string name = lf.utterance_id + ".mmf";
    mmm::write_feature_file(lf, fs::path(out_dir) / name);
    manifest << lf.utterance_id << '\t' << name << '\n';
  }
  std::cout << "wrote " << synth.utterances.size() << " utterances and manifest.tsv to "
            << out_dir << "\n";
  return kExitOk;
}

int cmd_info(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw mmm::IoError("cannot open file: " + path);
  char magic[4] = {};
  in.read(magic, 4);
  if (!in) throw mmm::FormatError(path + ": file shorter than 4 bytes");
  const std::string m(magic, 4);
  std::cout.precision(12);
  if (m == "MMMF") {
    const mmm::LayeredFeatures lf = mmm::read_feature_file(path);
    const auto& first = lf.layers.begin()->second;
    std::cout << "MMF feature file: " << lf.layers.size() << " layer(s), T=" << lf.frames()
              << ", frame_rate=" << first.frame_rate.num << "/" << first.frame_rate.den
              << " Hz\n";
    for (const auto& [idx, seq] : lf.layers) {
      std::cout << "  layer " << idx << ": T=" << seq.frames() << " D=" << seq.dim() << "\n";
    }
  } else if (m == "MMMC") {
    const mmm::MultiLayerCodec codec = mmm::load_codec(path);
    std::cout << "MMMC codec archive: " << codec.selected_layers.size() << " layer(s), "
              << codec.stream_count() << " stream(s), frame_rate=" << codec.frame_rate.num << "/"
              << codec.frame_rate.den << " Hz, subsample_fraction=" << codec.subsample_fraction
              << ", subsample_seed=" << codec.subsample_seed << "\n";
    for (std::uint16_t layer : codec.selected_layers) {
      const auto& stack = codec.stacks.at(layer);
      std::cout << "  layer " << layer << ": M=" << stack.stages() << " D=" << stack.dim()
                << " K=[";
      for (std::size_t i = 0; i < stack.stages(); ++i) {
        std::cout << (i ? "," : "") << stack.codebooks[i].clusters();
      }
      std::cout << "]\n";
    }
    if (codec.fusion_weights) {
      std::cout << "  fusion weights:";
      for (double w : codec.fusion_weights->weights()) std::cout << ' ' << w;
      std::cout << "\n";
    }
  } else if (m == "MMMT") {
    const mmm::TokenGrid grid = mmm::load_tokens(path);
    std::cout << "MMMT token file: utterance '" << grid.utterance_id << "', T=" << grid.frames
              << ", " << grid.streams.size() << " stream(s)\n";
    for (std::size_t s = 0; s < grid.streams.size(); ++s) {
      std::cout << "  stream " << s << ": layer " << grid.streams[s].layer_index << " stage "
                << grid.streams[s].stage << " K=" << grid.vocab_sizes[s] << "\n";
    }
  } else {
    throw mmm::FormatError(path + ": unrecognized magic \"" + m + "\"");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-layer multi-stream K-means quantization toolkit"};
  app.require_subcommand(1);

  // train
  auto* train = app.add_subcommand("train", "train a codec from a dataset manifest");
  std::string train_config;
  std::optional<std::string> train_manifest, train_output;
  std::optional<std::uint64_t> train_seed;
  std::optional<unsigned> train_jobs;
  train->add_option("--config", train_config, "JSON config file");
  train->add_option("--manifest", train_manifest, "dataset manifest (overrides config)");
  train->add_option("--output", train_output, "output archive path (overrides config)");
  train->add_option("--seed", train_seed, "global seed (overrides config)");
  train->add_option("--jobs", train_jobs, "worker threads, 0 = all cores");

  // encode
  auto* encode = app.add_subcommand("encode", "encode a manifest to token files");
  std::string enc_codec, enc_manifest, enc_out;
  unsigned enc_jobs = 0;
  encode->add_option("--codec", enc_codec, "codec archive")->required();
  encode->add_option("--manifest", enc_manifest, "dataset manifest")->required();
  encode->add_option("--out", enc_out, "output directory")->required();
  encode->add_option("--jobs", enc_jobs, "worker threads, 0 = all cores");

  // decode
  auto* decode = app.add_subcommand("decode", "decode token files to feature files");
  std::string dec_codec, dec_tokens, dec_out;
  decode->add_option("--codec", dec_codec, "codec archive")->required();
  decode->add_option("--tokens", dec_tokens, "directory of .mmmt files")->required();
  decode->add_option("--out", dec_out, "output directory")->required();

  // eval
  auto* eval = app.add_subcommand("eval", "bitrate/distortion/usage report");
  std::string eval_codec, eval_manifest, eval_out = "report";
  unsigned eval_jobs = 0;
  eval->add_option("--codec", eval_codec, "codec archive")->required();
  eval->add_option("--manifest", eval_manifest, "dataset manifest")->required();
  eval->add_option("--out", eval_out, "report path prefix (.txt/.json appended)");
  eval->add_option("--jobs", eval_jobs, "worker threads, 0 = all cores");

  // select-layers
  auto* select = app.add_subcommand("select-layers", "rank layers by learned fusion weight");
  std::string sel_config;
  std::optional<std::size_t> sel_k;
  std::optional<std::uint64_t> sel_seed;
  std::optional<unsigned> sel_jobs;
  select->add_option("--config", sel_config, "JSON config file")->required();
  select->add_option("--k", sel_k, "how many layers to keep (overrides config)");
  select->add_option("--seed", sel_seed, "probe seed (overrides config)");
  select->add_option("--jobs", sel_jobs, "worker threads");

  // gen
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  std::string gen_out;
  mmm::SyntheticSpec spec;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--utterances", spec.n_utterances, "number of utterances");
  gen->add_option("--frames", spec.frames, "frames per utterance");
  gen->add_option("--dim", spec.dim, "feature dimension");
  gen->add_option("--layers", spec.n_layers, "number of layers");
  gen->add_option("--components", spec.n_components, "mixture components");
  gen->add_option("--spread", spec.component_spread, "component mean spread");
  gen->add_option("--noise", spec.noise_sigma, "per-frame noise sigma");
  gen->add_option("--seed", gen_seed, "generator seed");

  // info
  auto* info = app.add_subcommand("info", "describe an MMF/MMMC/MMMT file");
  std::string info_path;
  info->add_option("path", info_path, "file to describe")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train) {
      return cmd_train(parse_train_settings(train_config, train_manifest, train_output,
                                            train_seed, train_jobs));
    }
    if (*encode) return cmd_encode(enc_codec, enc_manifest, enc_out, enc_jobs);
    if (*decode) return cmd_decode(dec_codec, dec_tokens, dec_out);
    if (*eval) return cmd_eval(eval_codec, eval_manifest, eval_out, eval_jobs);
    if (*select) return cmd_select_layers(sel_config, sel_k, sel_seed, sel_jobs);
    if (*gen) return cmd_gen(gen_out, spec, gen_seed ? *gen_seed : env_seed_default());
    if (*info) return cmd_info(info_path);
    std::cerr << "no subcommand given\n";
    return kExitUsage;
  } catch (const mmm::FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitData;
  } catch (const mmm::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitData;
  } catch (const mmm::ArgumentError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const mmm::ValidationError& e) {
    std::cerr << "validation error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}
