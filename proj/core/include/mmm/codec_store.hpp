#pragma once

#include <filesystem>

#include "mmm/multilayer.hpp"

namespace mmm {

// MMMC archive: full multi-layer codec with centroids, training
// provenance, and optional fusion weights. Bit-exact round trip.
void save_codec(const MultiLayerCodec& codec, const std::filesystem::path& path);
MultiLayerCodec load_codec(const std::filesystem::path& path);

// MMMT token file: one utterance's token grid. Ids are packed with the
// smallest of 8/16/32 bits that fits each stream's vocabulary.
void save_tokens(const TokenGrid& grid, const std::filesystem::path& path);
TokenGrid load_tokens(const std::filesystem::path& path);

// Narrowest id width in bytes (1, 2 or 4) for a vocabulary of size k.
std::uint8_t token_id_width(std::uint32_t k);

}  // namespace mmm
