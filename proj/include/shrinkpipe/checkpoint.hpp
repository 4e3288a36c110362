// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint directories: config.json + tokenizer.json + weights.bin.
// weights.bin layout: magic "MCKP", u32 LE format version, u32 tensor
// count, a name/rank/dims/offset table, then raw little-endian f32
// payloads. Round-trips are bit-identical.

#pragma once

#include <filesystem>

#include "shrinkpipe/model.hpp"
#include "shrinkpipe/tokenizer.hpp"

namespace shrinkpipe {

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(EncoderModel& model, const Tokenizer& tokenizer, const std::filesystem::path& dir);

struct LoadedCheckpoint {
    EncoderModel model;
    Tokenizer tokenizer;
};

// Throws IoError for missing/corrupt/truncated files or version mismatch,
// DataError for unknown or missing tensor names, ShapeError when a stored
// tensor disagrees with the config.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

}  // namespace shrinkpipe
