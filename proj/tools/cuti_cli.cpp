// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0
//
// cuti: train, evaluate, attack, synthesize and report.
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cuti/checkpoint.hpp"
#include "cuti/config.hpp"
#include "cuti/error.hpp"
#include "cuti/evaluation.hpp"
#include "cuti/ip_protocols.hpp"
#include "cuti/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kRuntime = 1;
constexpr int kUsage = 2;

/// Usage problems discovered after CLI11 parsing (bad kind, empty directory...).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

cuti::ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  if (path.empty()) return cuti::parse_experiment_config(json::object(), overrides);
  return cuti::load_experiment_config(path, overrides);
}

class JsonlLog {
 public:
  explicit JsonlLog(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw cuti::IoError("cannot open " + path.string());
  }
  cuti::EpochCallback callback(std::string run) {
    return [this, run = std::move(run)](const cuti::EpochRecord& r) {
      json j = cuti::to_json(r);
      j["run"] = run;
      out_ << j.dump() << '\n';
      out_.flush();
      std::cerr << run << " epoch " << r.epoch << " [" << r.phase << "] loss " << r.loss << " src "
                << r.source_acc << "% off " << r.offdomain_acc << "%\n";
    };
  }

 private:
  std::ofstream out_;
};

std::vector<const cuti::DomainDataset*> eval_domains(const cuti::ExperimentConfig& cfg,
                                                     const std::vector<cuti::DomainDataset>& domains) {
  std::vector<const cuti::DomainDataset*> out;
  if (cfg.data.eval_domains.empty()) {
    for (const auto& d : domains) out.push_back(&d);
  } else {
    for (const auto& n : cfg.data.eval_domains) out.push_back(&cuti::find_domain(domains, n));
  }
  return out;
}

void add_clean_cells(cuti::EvalReport& report, const std::string& method, const cuti::ModelState& model,
                     const cuti::DomainDataset& source, const std::vector<const cuti::DomainDataset*>& evals) {
  for (const auto* d : evals) report.add(method, source.name, d->name, "clean", cuti::accuracy(model, d->test));
}

/// Rounds to float32 so that what gets evaluated is exactly what is stored.
void store(cuti::ModelState& state, const fs::path& path, const cuti::ExperimentConfig& cfg, json extra = {}) {
  state.meta.config_hash = cfg.hash;
  state.meta.seed = cfg.train.seed;
  cuti::round_to_storage_precision(state);
  extra["mode"] = cfg.mode;
  cuti::save_checkpoint(state, path, extra);
}

void write_reports(const cuti::EvalReport& report, const fs::path& stem, const std::vector<std::string>& formats) {
  for (const auto& f : formats) {
    const cuti::ReportFormat fmt = cuti::report_format_from_string(f);
    const char* ext = fmt == cuti::ReportFormat::Json ? ".json" : fmt == cuti::ReportFormat::Csv ? ".csv" : ".md";
    cuti::emit_report(report, fmt, fs::path(stem.string() + ext));
  }
}

json base_meta(const cuti::ExperimentConfig& cfg) {
  return {{"seed", cfg.train.seed}, {"config_hash", cfg.hash}, {"timestamp", cuti::utc_timestamp()},
          {"mode", cfg.mode}};
}

int cmd_train(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& out_dir) {
  cuti::ExperimentConfig cfg = load_config(config_path, overrides);
  const fs::path dir = out_dir.empty() ? fs::path(cfg.output.dir) : fs::path(out_dir);

  const std::vector<cuti::DomainDataset> domains = cuti::load_domains(cfg.data);
  const cuti::DomainDataset& source = cuti::find_domain(domains, cfg.data.source);
  const cuti::BackboneSpec spec = cuti::backbone_for(cfg, source);
  const auto evals = eval_domains(cfg, domains);

  fs::create_directories(dir);
  {
    std::ofstream resolved(dir / "config.resolved.cfg", std::ios::binary);
    resolved << cfg.document.dump(2) << '\n';
  }
  JsonlLog log(dir / "train_log.jsonl");
  cuti::EvalReport report;
  report.meta = base_meta(cfg);
  json notes = json::array();
  const auto collect = [&](const cuti::TrainResult& r) {
    for (const auto& n : r.notes) notes.push_back(n);
    if (r.source_target_overlap) report.meta["source_target_overlap"] = true;
  };

  if (cfg.mode == "sl") {
    cuti::TrainResult r = cuti::train_sl(source.train, spec, cfg.train, log.callback("sl"));
    store(r.state, dir / "model.ckpt", cfg);
    add_clean_cells(report, "sl", r.state, source, evals);
  } else if (cfg.mode == "target_specified" || cfg.mode == "target_free") {
    cuti::TrainResult r;
    if (cfg.mode == "target_specified") {
      const cuti::DomainDataset& target = cuti::find_domain(domains, cfg.data.target);
      r = cuti::train_target_specified(source.train, target.train, spec, cfg.train, log.callback("cuti"));
      report.meta["target_domain"] = target.name;
    } else {
      r = cuti::train_target_free(source.train, spec, cfg.train, log.callback("cuti"));
    }
    collect(r);
    store(r.state, dir / "model.ckpt", cfg);
    add_clean_cells(report, "cuti", r.state, source, evals);
    if (cfg.sl_control) {
      cuti::TrainResult sl = cuti::train_sl(source.train, spec, cfg.train, log.callback("sl"));
      store(sl.state, dir / "sl.ckpt", cfg);
      cuti::EvalReport base;
      add_clean_cells(base, "sl", sl.state, source, evals);
      report.cells.insert(report.cells.begin(), base.cells.begin(), base.cells.end());
    }
  } else if (cfg.mode == "ownership") {
    cuti::OwnershipResult r =
        cuti::run_ownership_verification(source, spec, cfg.train, cfg.patch, cfg.sl_control, log.callback("cuti"));
    collect(r.training);
    // Re-evaluate after float32 rounding so the report describes the stored model.
    store(r.model, dir / "model.ckpt", cfg);
    report.add("cuti", source.name, source.name, "clean", cuti::accuracy(r.model, source.test));
    report.add("cuti", source.name, source.name, "patched",
               cuti::accuracy(r.model, cuti::apply_patch(source.test, cfg.patch)));
    if (cfg.sl_control) {
      store(r.sl_model, dir / "sl.ckpt", cfg);
      report.cells.insert(report.cells.begin(),
                          {{"sl", source.name, source.name, "clean", cuti::accuracy(r.sl_model, source.test)},
                           {"sl", source.name, source.name, "patched",
                            cuti::accuracy(r.sl_model, cuti::apply_patch(source.test, cfg.patch))}});
    }
  } else if (cfg.mode == "authorization") {
    std::vector<cuti::DomainDataset> grid;
    for (const auto* d : evals) grid.push_back(*d);
    int index = -1;
    for (std::size_t i = 0; i < grid.size(); ++i)
      if (grid[i].name == source.name) index = static_cast<int>(i);
    if (index < 0) {
      grid.insert(grid.begin(), source);
      index = 0;
    }
    cuti::AuthorizationResult r =
        cuti::run_applicability_authorization(grid, index, spec, cfg.train, cfg.patch, log.callback("authorization"));
    collect(r.training);
    store(r.model, dir / "model.ckpt", cfg);
    for (const char* state : {"patched", "clean"})
      for (const auto& d : grid) {
        const cuti::LabeledBatch test = std::string(state) == "patched" ? cuti::apply_patch(d.test, cfg.patch) : d.test;
        report.add("authorization", source.name, d.name, state, cuti::accuracy(r.model, test));
      }
  } else if (cfg.mode == "ablation") {
    const cuti::DomainDataset& target = cuti::find_domain(domains, cfg.data.target);
    report.meta["target_domain"] = target.name;
    cuti::TrainResult sl = cuti::train_sl(source.train, spec, cfg.train, log.callback("sl"));
    store(sl.state, dir / "sl.ckpt", cfg);
    add_clean_cells(report, "sl", sl.state, source, evals);
    for (const auto& v : cfg.ablation_variants) {
      cuti::TrainConfig tc = cfg.train;
      tc.loss.variant = cuti::loss_variant_from_string(v);
      cuti::TrainResult r = cuti::train_target_specified(source.train, target.train, spec, tc, log.callback(v));
      collect(r);
      store(r.state, dir / ("model." + v + ".ckpt"), cfg, {{"loss_variant", v}});
      add_clean_cells(report, "cuti." + v, r.state, source, evals);
    }
  }

  if (!notes.empty()) report.meta["notes"] = notes;
  report.finalize();
  write_reports(report, dir / "report", cfg.output.report_formats);
  for (const auto& c : report.cells) {
    std::cout << c.train_method << '\t' << c.source_domain << " -> " << c.eval_domain << '\t' << c.patch_state << '\t'
              << cuti::format_fixed(c.accuracy, 2) << "%\n";
  }
  return kOk;
}

int cmd_eval(const std::string& checkpoint, const std::string& config_path, const std::vector<std::string>& overrides,
             std::vector<std::string> domain_names, bool patched, const std::string& method, const std::string& out) {
  cuti::ExperimentConfig cfg = load_config(config_path, overrides);
  const cuti::ModelState model = cuti::load_checkpoint(checkpoint);
  const std::vector<cuti::DomainDataset> domains = cuti::load_domains(cfg.data);
  if (domain_names.empty()) domain_names.push_back(cfg.data.source);

  cuti::EvalReport report;
  report.meta = base_meta(cfg);
  report.meta["checkpoint"] = fs::path(checkpoint).filename().string();
  report.meta["checkpoint_config_hash"] = model.meta.config_hash;
  for (const auto& name : domain_names) {
    const cuti::DomainDataset& d = cuti::find_domain(domains, name);
    report.add(method, cfg.data.source, d.name, "clean", cuti::accuracy(model, d.test));
    if (patched) report.add(method, cfg.data.source, d.name, "patched", cuti::accuracy(model, cuti::apply_patch(d.test, cfg.patch)));
  }
  report.finalize();
  for (const auto& c : report.cells) {
    std::cout << c.eval_domain << '\t' << c.patch_state << '\t' << cuti::format_fixed(c.accuracy, 2) << "%\n";
  }
  if (!out.empty()) cuti::emit_report(report, cuti::ReportFormat::Json, out);
  return kOk;
}

int cmd_attack(const std::string& checkpoint, const std::string& kind_name, const std::string& config_path,
               std::vector<std::string> overrides) {
  cuti::AttackKind kind;
  try {
    kind = cuti::attack_kind_from_string(kind_name);
  } catch (const cuti::InvalidInput& e) {
    throw UsageError(e.what());
  }
  cuti::ExperimentConfig cfg = load_config(config_path, overrides);
  cfg.attack.kind = kind;
  const cuti::ModelState model = cuti::load_checkpoint(checkpoint);
  const std::vector<cuti::DomainDataset> domains = cuti::load_domains(cfg.data);
  const cuti::DomainDataset& source = cuti::find_domain(domains, cfg.data.source);

  cuti::AttackResult r = cuti::run_attack(model, cfg.attack, source, cfg.patch, nullptr, cfg.train.synth);
  const fs::path attacked = checkpoint + ".attacked." + cuti::to_string(kind);
  cuti::round_to_storage_precision(r.state);
  cuti::save_checkpoint(r.state, attacked, {{"attack", cuti::to_string(kind)}});

  cuti::EvalReport report;
  report.meta = base_meta(cfg);
  report.meta["protocol"] = "attack";
  report.meta["attack"] = r.report.meta["attack"];
  report.add("attack." + cuti::to_string(kind), source.name, source.name, "clean", cuti::accuracy(r.state, source.test));
  report.add("attack." + cuti::to_string(kind), source.name, source.name, "patched",
             cuti::accuracy(r.state, cuti::apply_patch(source.test, cfg.patch)));
  report.finalize();
  cuti::emit_report(report, cuti::ReportFormat::Json, attacked.string() + ".json");
  std::cout << cuti::to_string(kind) << "\tclean " << cuti::format_fixed(report.cells[0].accuracy, 2) << "%\tpatched "
            << cuti::format_fixed(report.cells[1].accuracy, 2) << "%\n";
  return kOk;
}

int cmd_synthesize(const std::string& config_path, const std::vector<std::string>& overrides, const std::string& out_dir,
                   std::uint64_t seed, bool export_domains) {
  cuti::ExperimentConfig cfg = load_config(config_path, overrides);
  const std::vector<cuti::DomainDataset> domains = cuti::load_domains(cfg.data);
  const cuti::DomainDataset& source = cuti::find_domain(domains, cfg.data.source);
  fs::create_directories(out_dir);
  const cuti::LabeledBatch fake = cuti::synthesize_unauthorized(source.train, cfg.train.synth, seed);
  cuti::save_idx_dataset(fake, fs::path(out_dir) / "synthetic-images.idx", fs::path(out_dir) / "synthetic-labels.idx");
  std::cout << "wrote " << fake.size() << " synthetic samples\n";
  if (export_domains) {
    for (const auto& d : domains) {
      cuti::save_idx_dataset(d.train, fs::path(out_dir) / (d.name + "-train-images.idx"),
                             fs::path(out_dir) / (d.name + "-train-labels.idx"));
      cuti::save_idx_dataset(d.test, fs::path(out_dir) / (d.name + "-test-images.idx"),
                             fs::path(out_dir) / (d.name + "-test-labels.idx"));
    }
    std::cout << "exported " << domains.size() << " domains\n";
  }
  return kOk;
}

int cmd_report(const std::string& run_dir, const std::string& format_name, const std::string& out) {
  cuti::ReportFormat format;
  try {
    format = cuti::report_format_from_string(format_name);
  } catch (const cuti::InvalidInput& e) {
    throw UsageError(e.what());
  }
  if (!fs::is_directory(run_dir)) throw UsageError(run_dir + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run_dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<cuti::EvalReport> reports;
  for (const auto& f : files) {
    std::ifstream in(f, std::ios::binary);
    const json j = json::parse(in, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded() || !j.is_object() || !j.contains("meta") || !j["meta"].is_object() ||
        j["meta"].value("format", "") != cuti::kReportFormat) {
      continue;
    }
    try {
      reports.push_back(cuti::report_from_json(j));
    } catch (const std::exception& e) {
      throw cuti::ReportInconsistent(f.string() + ": " + e.what());
    }
  }
  if (reports.empty()) throw UsageError("no " + std::string(cuti::kReportFormat) + " reports under " + run_dir);
  const cuti::EvalReport merged = cuti::merge_reports(reports);
  if (out.empty()) {
    std::cout << cuti::render(merged, format);
  } else {
    cuti::emit_report(merged, format, out);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CUTI-domain training and model IP protection toolkit"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, kind, run_dir, format = "markdown", method = "model";
  std::vector<std::string> overrides, domain_names;
  bool patched = false, export_domains = false;
  std::uint64_t seed = 0;

  auto add_config = [&](CLI::App* sub, bool required) {
    auto* opt = sub->add_option("--config,-c", config, "experiment config (JSON)");
    if (required) opt->required()->check(CLI::ExistingFile);
    sub->add_option("--set", overrides, "override, section.key=value")->allow_extra_args(false);
  };

  CLI::App* train = app.add_subcommand("train", "train a model or run a protocol");
  add_config(train, true);
  train->add_option("--out,-o", out, "output directory (default output.dir)");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", checkpoint)->required();
  add_config(eval, false);
  eval->add_option("--domain,-d", domain_names, "test domains (default data.source)");
  eval->add_flag("--patch", patched, "also evaluate with protocol.patch applied");
  eval->add_option("--method", method, "train_method label for the report cells");
  eval->add_option("--out,-o", out, "write the JSON report here");

  CLI::App* attack = app.add_subcommand("attack", "run a watermark-removal attack");
  attack->add_option("--checkpoint", checkpoint)->required();
  attack->add_option("--kind,-k", kind, "ftal, rtal, ewc, au or overwrite")->required();
  add_config(attack, false);

  CLI::App* synth = app.add_subcommand("synthesize", "write synthetic unauthorized samples as IDX");
  add_config(synth, false);
  synth->add_option("--out,-o", out)->required();
  synth->add_option("--seed", seed);
  synth->add_flag("--domains", export_domains, "also export every configured domain");

  CLI::App* report = app.add_subcommand("report", "merge report JSON files into tables");
  report->add_option("run_dir", run_dir)->required();
  report->add_option("--format,-f", format, "json, csv or markdown");
  report->add_option("--out,-o", out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (train->parsed()) return cmd_train(config, overrides, out);
    if (eval->parsed()) return cmd_eval(checkpoint, config, overrides, domain_names, patched, method, out);
    if (attack->parsed()) return cmd_attack(checkpoint, kind, config, overrides);
    if (synth->parsed()) return cmd_synthesize(config, overrides, out, seed, export_domains);
    if (report->parsed()) return cmd_report(run_dir, format, out);
  } catch (const cuti::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
