// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cuti/backbone.hpp"
#include "cuti/data.hpp"
#include "json.hpp"

namespace cuti {

inline constexpr const char* kReportFormat = "cuti-report-1";

/// 100 * (argmax-correct) / N, evaluated in chunks of batch_size.
double accuracy(const ModelState& model, const LabeledBatch& split, int batch_size = 256);
/// Same, from precomputed scores [N, K].
double accuracy_from_scores(const Tensor& scores, std::span<const int> labels);

struct DropMetrics {
  double mean_drop = 0.0;
  double mean_relative_drop = 0.0;  // percent; mean of per-entry ratios
  int count = 0;
  int excluded = 0;  // entries with sl == 0, left out of the relative mean
};

DropMetrics drop_metrics(std::span<const double> sl_acc, std::span<const double> method_acc);

/// Mean of clean - patched over (patched, clean) rows.
double avg_attack_drop(std::span<const std::pair<double, double>> rows);

struct AuthorizationMetrics {
  double authorized = 0.0;
  double other_mean = 0.0;
  double drop = 0.0;
  double relative_drop = 0.0;  // percent of authorized
};

AuthorizationMetrics authorization_metrics(double authorized, std::span<const double> others);

/// Half-up rounding to `decimals` places, tolerant of binary representation error.
double round_half_up(double value, int decimals);
std::string format_fixed(double value, int decimals);

struct AccuracyCell {
  std::string train_method;
  std::string source_domain;
  std::string eval_domain;
  std::string patch_state;  // "clean" or "patched"
  double accuracy = 0.0;
};

struct EvalReport {
  nlohmann::json meta = nlohmann::json::object();
  std::vector<AccuracyCell> cells;
  nlohmann::json aggregates = nlohmann::json::object();

  void add(std::string method, std::string source, std::string eval, std::string patch_state, double acc);
  /// Looks up one cell; throws InvalidInput if absent.
  double at(const std::string& method, const std::string& source, const std::string& eval,
            const std::string& patch_state) const;
  bool has(const std::string& method, const std::string& source, const std::string& eval,
           const std::string& patch_state) const;
  /// Recomputes aggregates from cells.
  void finalize();
};

/// Aggregates derived purely from cells:
///   drops            per (method, source, scope) against matching "sl" cells, clean only;
///                    scope "source" when eval == source, else "target"
///   drop_means       per (method, scope), mean over source domains
///   patch_gaps       clean - patched for every (method, source, eval) carrying both states
///   attack_drops     per source: avg_attack_drop over methods named "attack.<kind>"
///   attack_drop_mean mean of attack_drops
///   authorization    per (method "authorization*", source): patched source cell vs every other cell
nlohmann::json compute_aggregates(const std::vector<AccuracyCell>& cells);

nlohmann::json to_json(const EvalReport& report);
/// Parses and runs the self-consistency check; throws ReportInconsistent when the
/// stored aggregates disagree with the cells.
EvalReport report_from_json(const nlohmann::json& j);

/// Union of the cells of several reports. Conflicting duplicate cells throw InvalidInput.
EvalReport merge_reports(const std::vector<EvalReport>& reports);

enum class ReportFormat { Json, Csv, Markdown };
ReportFormat report_format_from_string(const std::string& s);

/// CSV columns: train_method,source_domain,eval_domain,patch_state,accuracy.
std::string render_csv(const EvalReport& report);
/// Comparison tables for whatever the cells support: "SL => method" drop
/// tables, ownership/attack tables and authorization grids.
std::string render_markdown(const EvalReport& report);
std::string render(const EvalReport& report, ReportFormat format);

/// Throws IoError when the path cannot be written.
void emit_report(const EvalReport& report, ReportFormat format, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

std::string utc_timestamp();

}  // namespace cuti
