// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cuti/tensor.hpp"

namespace cuti {

enum class DomainTag { Source, Cuti, Target, Synthetic };

std::string to_string(DomainTag tag);

/// Images in [0, 1] with integer labels in [0, K).
struct LabeledBatch {
  Tensor images;  // [N, C, H, W]
  std::vector<int> labels;
  DomainTag tag = DomainTag::Source;

  int size() const { return static_cast<int>(labels.size()); }
  LabeledBatch subset(std::span<const int> indices) const;
  LabeledBatch slice(int begin, int end) const;
  /// Throws InvalidInput on inconsistent sizes, pixels outside [0, 1] or labels outside [0, K).
  void validate(int num_classes) const;
};

LabeledBatch concat(const LabeledBatch& a, const LabeledBatch& b, DomainTag tag);

struct DomainDataset {
  std::string name;
  LabeledBatch train;
  LabeledBatch test;
  int num_classes = 10;
  std::array<int, 3> image_shape{};  // (C, H, W)
};

/// Parses an IDX image file (magic 0x00000803, [N, rows, cols] u8; or
/// 0x00000804, [N, C, rows, cols] u8) and its IDX label file (0x00000801).
/// Pixels are scaled by 1/255.
LabeledBatch load_idx_dataset(const std::filesystem::path& images_path, const std::filesystem::path& labels_path);
LabeledBatch parse_idx_dataset(const std::vector<std::uint8_t>& image_bytes, const std::vector<std::uint8_t>& label_bytes);

/// Writes images (rounded to u8) and labels as an IDX pair.
void save_idx_dataset(const LabeledBatch& batch, const std::filesystem::path& images_path,
                      const std::filesystem::path& labels_path);

/// Repeats a single-channel batch across `channels` channels.
LabeledBatch replicate_channels(const LabeledBatch& batch, int channels);

struct SyntheticSpec {
  int n_classes = 10;
  int n_per_class = 625;  // 500 train + 125 test after the 80/20 split
  int image_size = 32;
  std::vector<std::string> styles{"plain", "inverted", "textured", "noisy"};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Known style names for synthetic domains.
const std::vector<std::string>& synthetic_style_names();

/// One dataset per style. All domains render the same glyph content (digit
/// shape, placement, scale) in the same order and differ only in style, so
/// labels match across domains. Pure function of the spec.
std::vector<DomainDataset> make_synthetic_domains(const SyntheticSpec& spec);

/// Deterministic shuffle, then the last round(0.2 N) samples form the test split.
std::pair<LabeledBatch, LabeledBatch> split_and_shuffle(const LabeledBatch& all, std::uint64_t seed);

/// FNV-1a over the pixels of one sample.
std::uint64_t content_hash(const LabeledBatch& batch, int index);

/// Deterministic permutation of [0, n).
std::vector<int> shuffled_indices(int n, std::uint64_t seed);

/// Stateless seed derivation shared across modules.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace cuti
