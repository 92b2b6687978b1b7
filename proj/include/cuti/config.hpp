// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cuti/backbone.hpp"
#include "cuti/data.hpp"
#include "cuti/ip_protocols.hpp"
#include "cuti/training.hpp"
#include "json.hpp"

namespace cuti {

/// One IDX-backed domain; paths are relative to the data root.
struct IdxDomainConfig {
  std::string name;
  std::string images;
  std::string labels;
  int channels = 0;  // 0 keeps the file's channel count
};

struct DataConfig {
  std::string kind = "synthetic";  // or "idx"
  SyntheticSpec synthetic;
  std::vector<IdxDomainConfig> idx;
  std::string root;  // empty: $CUTI_DATA_DIR, then the working directory
  std::uint64_t split_seed = 0;
  std::string source = "plain";
  std::string target = "inverted";
  std::vector<std::string> eval_domains;  // empty: every domain
};

struct OutputConfig {
  std::string dir = "runs/default";
  std::vector<std::string> report_formats{"json", "markdown"};
};

/// Typed view of a validated config document.
struct ExperimentConfig {
  DataConfig data;
  std::vector<BlockSpec> blocks;
  int head_hidden = 128;
  std::string mode = "sl";  // sl, target_specified, target_free, ownership, authorization, ablation
  TrainConfig train;
  PatchSpec patch;
  bool sl_control = true;
  AttackSpec attack;
  std::vector<std::string> ablation_variants{"L1", "L2", "L3", "alternating"};
  OutputConfig output;

  nlohmann::json document;  // merged document, defaults filled in
  std::string hash;         // 16 hex digits over everything but `output`
};

/// The full default document; every accepted key appears here.
const nlohmann::json& default_config_document();

/// Applies `section.key=value` (value parsed as JSON, else taken as a string).
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Merges over the defaults, rejects unknown keys and mistyped values, then
/// validates. Every failure is a ConfigError naming the field.
ExperimentConfig parse_experiment_config(const nlohmann::json& doc, const std::vector<std::string>& overrides = {});
ExperimentConfig load_experiment_config(const std::filesystem::path& path,
                                        const std::vector<std::string>& overrides = {});

std::string config_hash(const nlohmann::json& doc);

std::filesystem::path data_root(const DataConfig& data);
std::vector<DomainDataset> load_domains(const DataConfig& data);
const DomainDataset& find_domain(const std::vector<DomainDataset>& domains, const std::string& name);
BackboneSpec backbone_for(const ExperimentConfig& config, const DomainDataset& domain);

}  // namespace cuti
