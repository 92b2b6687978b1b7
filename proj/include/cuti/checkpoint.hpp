// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cuti/backbone.hpp"
#include "json.hpp"

namespace cuti {

inline constexpr const char* kCheckpointFormat = "cuti-ckpt-1";

// Container layout (all integers little-endian):
//
//   magic   "CUTICKPT"                      8 bytes
//   u32     entry count
//   entry*  u32 name length, name bytes, u8 kind
//           kind 0 (text):  u64 byte length, bytes            -- "meta.json"
//           kind 1 (array): u32 rank, u32 dims[rank], f32 data
//
// The first entry is always meta.json; arrays follow in canonical parameter
// order. Identical states serialize to identical bytes.

std::vector<std::uint8_t> serialize_checkpoint(const ModelState& state, const nlohmann::json& extra_meta = {});
ModelState deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ModelState& state, const std::filesystem::path& path,
                     const nlohmann::json& extra_meta = {});
ModelState load_checkpoint(const std::filesystem::path& path);

/// meta.json of a stored checkpoint.
nlohmann::json checkpoint_meta(const std::vector<std::uint8_t>& bytes);
/// Names of the stored arrays, in file order.
std::vector<std::string> checkpoint_array_names(const std::vector<std::uint8_t>& bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

}  // namespace cuti
