#include "mmm/codec_store.hpp"

#include "bytes.hpp"

namespace mmm {

namespace {
constexpr std::string_view kCodecMagic = "MMMC";
constexpr std::uint16_t kCodecVersion = 1;
constexpr std::string_view kTokenMagic = "MMMT";
constexpr std::uint16_t kTokenVersion = 1;
}  // namespace

void save_codec(const MultiLayerCodec& codec, const std::filesystem::path& path) {
  codec.validate();
  detail::ByteWriter w;
  w.put_u32(codec.frame_rate.num);
  w.put_u32(codec.frame_rate.den);
  w.put_f64(codec.subsample_fraction);
  w.put_u64(codec.subsample_seed);
  w.put_u64(codec.config_digest);

  w.put_u16(static_cast<std::uint16_t>(codec.selected_layers.size()));
  for (std::uint16_t l : codec.selected_layers) w.put_u16(l);

  w.put_u16(static_cast<std::uint16_t>(codec.stacks.size()));
  for (const auto& [layer, stack] : codec.stacks) {
    w.put_u16(layer);
    w.put_u16(static_cast<std::uint16_t>(stack.stages()));
    w.put_u32(static_cast<std::uint32_t>(stack.dim()));
    for (const Codebook& cb : stack.codebooks) {
      w.put_u32(static_cast<std::uint32_t>(cb.clusters()));
      w.put_u64(cb.meta.seed);
      w.put_u32(cb.meta.iterations_run);
      w.put_u8(cb.meta.converged ? 1 : 0);
      w.put_f64(cb.train_inertia);
      w.put_f32_array(cb.centroids.values);
    }
  }

  w.put_u8(codec.fusion_weights ? 1 : 0);
  if (codec.fusion_weights) {
    w.put_u16(static_cast<std::uint16_t>(codec.fusion_weights->logits.size()));
    for (double v : codec.fusion_weights->logits) w.put_f64(v);
  }
  detail::write_checked(path, kCodecMagic, kCodecVersion, w);
}

MultiLayerCodec load_codec(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  auto r = detail::open_checked(bytes, kCodecMagic, kCodecVersion, path);

  MultiLayerCodec codec;
  codec.frame_rate.num = r.get_u32();
  codec.frame_rate.den = r.get_u32();
  codec.subsample_fraction = r.get_f64();
  codec.subsample_seed = r.get_u64();
  codec.config_digest = r.get_u64();

  const std::uint16_t n_selected = r.get_u16();
  codec.selected_layers.resize(n_selected);
  for (auto& l : codec.selected_layers) l = r.get_u16();

  const std::uint16_t n_stacks = r.get_u16();
  for (std::uint16_t s = 0; s < n_stacks; ++s) {
    ResidualStack stack;
    stack.layer_index = r.get_u16();
    const std::uint16_t stages = r.get_u16();
    const std::uint32_t dim = r.get_u32();
    if (stages == 0) r.fail("stack for layer " + std::to_string(stack.layer_index) +
                            " declares zero stages");
    if (dim == 0) r.fail("stack for layer " + std::to_string(stack.layer_index) +
                         " declares D=0");
    for (std::uint16_t m = 0; m < stages; ++m) {
      Codebook cb;
      const std::uint32_t k = r.get_u32();
      if (k == 0) r.fail("stage " + std::to_string(m + 1) + " declares K=0");
      cb.meta.seed = r.get_u64();
      cb.meta.iterations_run = r.get_u32();
      cb.meta.converged = r.get_u8() != 0;
      cb.train_inertia = r.get_f64();
      cb.centroids = Matrix(k, dim);
      r.get_f32_array(cb.centroids.values);
      stack.codebooks.push_back(std::move(cb));
    }
    if (codec.stacks.contains(stack.layer_index)) {
      r.fail("duplicate stack for layer " + std::to_string(stack.layer_index));
    }
    codec.stacks.emplace(stack.layer_index, std::move(stack));
  }

  if (r.get_u8() != 0) {
    LayerWeights lw;
    const std::uint16_t n = r.get_u16();
    lw.logits.resize(n);
    for (auto& v : lw.logits) v = r.get_f64();
    codec.fusion_weights = std::move(lw);
  }
  codec.validate();
  return codec;
}

std::uint8_t token_id_width(std::uint32_t k) {
  if (k <= 0x100u) return 1;
  if (k <= 0x10000u) return 2;
  return 4;
}

void save_tokens(const TokenGrid& grid, const std::filesystem::path& path) {
  grid.validate();
  detail::ByteWriter w;
  w.put_string(grid.utterance_id);
  w.put_u32(grid.frames);
  w.put_u16(static_cast<std::uint16_t>(grid.streams.size()));
  for (std::size_t s = 0; s < grid.streams.size(); ++s) {
    w.put_u16(grid.streams[s].layer_index);
    w.put_u16(grid.streams[s].stage);
    w.put_u32(grid.vocab_sizes[s]);
    w.put_u8(token_id_width(grid.vocab_sizes[s]));
  }
  for (std::size_t s = 0; s < grid.streams.size(); ++s) {
    const std::uint8_t width = token_id_width(grid.vocab_sizes[s]);
    for (std::uint32_t id : grid.streams[s].ids) {
      switch (width) {
        case 1: w.put_u8(static_cast<std::uint8_t>(id)); break;
        case 2: w.put_u16(static_cast<std::uint16_t>(id)); break;
        default: w.put_u32(id); break;
      }
    }
  }
  detail::write_checked(path, kTokenMagic, kTokenVersion, w);
}

TokenGrid load_tokens(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path);
  auto r = detail::open_checked(bytes, kTokenMagic, kTokenVersion, path);

  TokenGrid grid;
  grid.utterance_id = r.get_string();
  grid.frames = r.get_u32();
  const std::uint16_t n_streams = r.get_u16();
  if (grid.frames == 0) r.fail("token file declares T=0");
  if (n_streams == 0) r.fail("token file declares zero streams");

  std::vector<std::uint8_t> widths(n_streams);
  for (std::uint16_t s = 0; s < n_streams; ++s) {
    StreamTokens st;
    st.layer_index = r.get_u16();
    st.stage = r.get_u16();
    const std::uint32_t k = r.get_u32();
    widths[s] = r.get_u8();
    if (widths[s] != 1 && widths[s] != 2 && widths[s] != 4) {
      r.fail("stream " + std::to_string(s) + " has invalid id width " +
             std::to_string(widths[s]));
    }
    if (widths[s] != token_id_width(k)) {
      r.fail("stream " + std::to_string(s) + " id width does not match K=" + std::to_string(k));
    }
    grid.vocab_sizes.push_back(k);
    grid.streams.push_back(std::move(st));
  }
  for (std::uint16_t s = 0; s < n_streams; ++s) {
    auto& ids = grid.streams[s].ids;
    ids.resize(grid.frames);
    for (std::uint32_t t = 0; t < grid.frames; ++t) {
      std::uint32_t id = 0;
      switch (widths[s]) {
        case 1: id = r.get_u8(); break;
        case 2: id = r.get_u16(); break;
        default: id = r.get_u32(); break;
      }
      if (id >= grid.vocab_sizes[s]) {
        throw ValidationError(path.filename().string() + ": token id " + std::to_string(id) +
                              " out of range at stream " + std::to_string(s) + ", frame " +
                              std::to_string(t) + " (K=" + std::to_string(grid.vocab_sizes[s]) +
                              ")");
      }
      ids[t] = id;
    }
  }
  grid.validate();
  return grid;
}

}  // namespace mmm
