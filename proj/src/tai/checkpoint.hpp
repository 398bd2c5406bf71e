// Copyright 2026 The TaI-DPT Authors
// SPDX-License-Identifier: Apache-2.0
//
// Binary checkpoint: "TAIC", u32 version, u32 entry count, then per entry
// u32 name length, UTF-8 name, u32 rank, u32 dims[rank], float32 values.
// All integers and floats are little-endian.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "tai/dualenc.hpp"
#include "tai/taitrain.hpp"

namespace tai::io {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  grad::Tensor value;
  bool operator==(const NamedTensor&) const = default;
};

/// Values are narrowed to float32.
std::string serialize_checkpoint(const std::vector<NamedTensor>& entries);
/// `source` names the input in error messages, which also carry the byte offset.
std::vector<NamedTensor> parse_checkpoint(std::string_view bytes, std::string_view source = "<memory>");

void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

/// `class_names`, when given, are stored as "class_name:<name>" index entries.
std::vector<NamedTensor> encoder_entries(const enc::DualEncoder& enc, std::span<const std::string> class_names = {});
enc::DualEncoder encoder_from_entries(const std::vector<NamedTensor>& entries);
/// Names of the "class_name:" entries ordered by index; empty if there are none.
std::vector<std::string> class_names_from_entries(const std::vector<NamedTensor>& entries);

std::vector<NamedTensor> prompt_entries(const train::PromptSet& prompts);
/// Class words are resolved against the encoder's vocabulary.
train::PromptSet prompts_from_entries(const std::vector<NamedTensor>& entries, const enc::DualEncoder& enc);

}  // namespace tai::io
