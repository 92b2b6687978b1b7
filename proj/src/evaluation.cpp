// Copyright 2026 The cuti Authors.
// SPDX-License-Identifier: Apache-2.0

#include "cuti/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "cuti/error.hpp"

namespace cuti {

using nlohmann::json;

namespace {

long count_correct(const Tensor& scores, std::span<const int> labels) {
  if (scores.rank() != 2 || scores.dim(0) != static_cast<int>(labels.size())) {
    throw InvalidInput("accuracy: scores " + scores.shape_string() + " do not match " +
                       std::to_string(labels.size()) + " labels");
  }
  const int K = scores.dim(1);
  long correct = 0;
  for (int n = 0; n < scores.dim(0); ++n) {
    const int y = labels[static_cast<std::size_t>(n)];
    if (y < 0 || y >= K) throw InvalidInput("accuracy: label outside [0, K)");
    int best = 0;
    for (int k = 1; k < K; ++k)
      if (scores.at(n, k) > scores.at(n, best)) best = k;
    correct += best == y;
  }
  return correct;
}

}  // namespace

double accuracy_from_scores(const Tensor& scores, std::span<const int> labels) {
  if (labels.empty()) throw InvalidInput("accuracy: empty split");
  return 100.0 * static_cast<double>(count_correct(scores, labels)) / static_cast<double>(labels.size());
}

double accuracy(const ModelState& model, const LabeledBatch& split, int batch_size) {
  if (split.size() == 0) throw InvalidInput("accuracy: empty split");
  if (batch_size < 1) throw InvalidInput("accuracy: batch_size must be >= 1");
  const int K = model.spec.num_classes;
  for (int y : split.labels)
    if (y < 0 || y >= K) throw InvalidInput("accuracy: split labels exceed the model's class count");
  long correct = 0;
  for (int begin = 0; begin < split.size(); begin += batch_size) {
    const LabeledBatch part = split.slice(begin, std::min(split.size(), begin + batch_size));
    correct += count_correct(forward_logits(model, part.images), part.labels);
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(split.size());
}

DropMetrics drop_metrics(std::span<const double> sl_acc, std::span<const double> method_acc) {
  if (sl_acc.empty() || sl_acc.size() != method_acc.size()) {
    throw InvalidInput("drop_metrics: lists must be aligned and non-empty");
  }
  DropMetrics m;
  m.count = static_cast<int>(sl_acc.size());
  double rel_sum = 0.0;
  for (std::size_t i = 0; i < sl_acc.size(); ++i) {
    const double d = sl_acc[i] - method_acc[i];
    m.mean_drop += d;
    if (sl_acc[i] == 0.0) {
      ++m.excluded;
    } else {
      rel_sum += d / sl_acc[i] * 100.0;
    }
  }
  m.mean_drop /= m.count;
  m.mean_relative_drop = m.excluded == m.count ? std::numeric_limits<double>::quiet_NaN()
                                               : rel_sum / (m.count - m.excluded);
  return m;
}

double avg_attack_drop(std::span<const std::pair<double, double>> rows) {
  if (rows.empty()) throw InvalidInput("avg_attack_drop: no rows");
  double sum = 0.0;
  for (const auto& [patched, clean] : rows) sum += clean - patched;
  return sum / static_cast<double>(rows.size());
}

AuthorizationMetrics authorization_metrics(double authorized, std::span<const double> others) {
  if (others.empty()) throw InvalidInput("authorization_metrics: no other cells");
  AuthorizationMetrics m;
  m.authorized = authorized;
  m.other_mean = std::accumulate(others.begin(), others.end(), 0.0) / static_cast<double>(others.size());
  m.drop = authorized - m.other_mean;
  m.relative_drop = authorized == 0.0 ? std::numeric_limits<double>::quiet_NaN() : m.drop / authorized * 100.0;
  return m;
}

double round_half_up(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  // Nudge by a few ulps of the scaled value so 0.125 stored as 0.12499999... still rounds up.
  const double scaled = value * scale;
  const double nudge = 1e-9 * std::max(1.0, std::abs(scaled));
  return std::floor(scaled + 0.5 + nudge) / scale;
}

std::string format_fixed(double value, int decimals) {
  if (!std::isfinite(value)) return "n/a";
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(decimals);
  double r = round_half_up(value, decimals);
  if (r == 0.0) r = 0.0;  // drop negative zero
  os << r;
  return os.str();
}

// ---------------------------------------------------------------------------
// Report

void EvalReport::add(std::string method, std::string source, std::string eval, std::string patch_state, double acc) {
  if (patch_state != "clean" && patch_state != "patched") {
    throw InvalidInput("patch_state must be 'clean' or 'patched'");
  }
  if (!(acc >= 0.0 && acc <= 100.0)) throw InvalidInput("accuracy outside [0, 100]");
  cells.push_back({std::move(method), std::move(source), std::move(eval), std::move(patch_state), acc});
}

namespace {

const AccuracyCell* find_cell(const std::vector<AccuracyCell>& cells, const std::string& method,
                              const std::string& source, const std::string& eval, const std::string& patch) {
  for (const auto& c : cells)
    if (c.train_method == method && c.source_domain == source && c.eval_domain == eval && c.patch_state == patch)
      return &c;
  return nullptr;
}

bool starts_with(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }
bool is_attack(const std::string& m) { return starts_with(m, "attack."); }
bool is_authorization(const std::string& m) { return starts_with(m, "authorization"); }

template <class F>
std::vector<std::string> unique_in_order(const std::vector<AccuracyCell>& cells, F key) {
  std::vector<std::string> out;
  for (const auto& c : cells) {
    std::string k = key(c);
    if (std::find(out.begin(), out.end(), k) == out.end()) out.push_back(std::move(k));
  }
  return out;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double number_or_nan(const json& j) { return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>(); }

bool json_close(const json& a, const json& b) {
  if (a.is_number() && b.is_number()) {
    const double x = a.get<double>(), y = b.get<double>();
    return std::abs(x - y) <= 1e-9 * std::max({1.0, std::abs(x), std::abs(y)});
  }
  if (a.type() != b.type()) return false;
  if (a.is_object()) {
    if (a.size() != b.size()) return false;
    for (auto it = a.begin(); it != a.end(); ++it) {
      if (!b.contains(it.key()) || !json_close(it.value(), b.at(it.key()))) return false;
    }
    return true;
  }
  if (a.is_array()) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!json_close(a[i], b[i])) return false;
    return true;
  }
  return a == b;
}

}  // namespace

double EvalReport::at(const std::string& method, const std::string& source, const std::string& eval,
                      const std::string& patch_state) const {
  const AccuracyCell* c = find_cell(cells, method, source, eval, patch_state);
  if (!c) throw InvalidInput("report has no cell " + method + "/" + source + "/" + eval + "/" + patch_state);
  return c->accuracy;
}

bool EvalReport::has(const std::string& method, const std::string& source, const std::string& eval,
                     const std::string& patch_state) const {
  return find_cell(cells, method, source, eval, patch_state) != nullptr;
}

void EvalReport::finalize() { aggregates = compute_aggregates(cells); }

json compute_aggregates(const std::vector<AccuracyCell>& cells) {
  json agg = json::object();
  const auto methods = unique_in_order(cells, [](const AccuracyCell& c) { return c.train_method; });
  const auto sources = unique_in_order(cells, [](const AccuracyCell& c) { return c.source_domain; });

  json drops = json::array(), drop_means = json::array();
  for (const auto& m : methods) {
    if (m == "sl" || is_attack(m) || is_authorization(m)) continue;
    for (const char* scope : {"source", "target"}) {
      const bool own = std::string(scope) == "source";
      double sum_drop = 0.0, sum_rel = 0.0;
      int rows = 0, rel_rows = 0;
      for (const auto& s : sources) {
        std::vector<double> sl, me;
        for (const auto& c : cells) {
          if (c.train_method != m || c.source_domain != s || c.patch_state != "clean") continue;
          if ((c.eval_domain == s) != own) continue;
          const AccuracyCell* base = find_cell(cells, "sl", s, c.eval_domain, "clean");
          if (!base) continue;
          sl.push_back(base->accuracy);
          me.push_back(c.accuracy);
        }
        if (sl.empty()) continue;
        const DropMetrics d = drop_metrics(sl, me);
        drops.push_back({{"method", m}, {"source_domain", s}, {"scope", scope}, {"mean_drop", d.mean_drop},
                         {"mean_relative_drop", number_or_null(d.mean_relative_drop)}, {"count", d.count},
                         {"excluded", d.excluded}});
        sum_drop += d.mean_drop;
        ++rows;
        if (std::isfinite(d.mean_relative_drop)) {
          sum_rel += d.mean_relative_drop;
          ++rel_rows;
        }
      }
      if (rows > 0) {
        drop_means.push_back({{"method", m}, {"scope", scope}, {"mean_drop", sum_drop / rows},
                              {"mean_relative_drop", rel_rows ? json(sum_rel / rel_rows) : json(nullptr)},
                              {"rows", rows}});
      }
    }
  }
  agg["drops"] = std::move(drops);
  agg["drop_means"] = std::move(drop_means);

  json gaps = json::array();
  for (const auto& c : cells) {
    if (c.patch_state != "clean") continue;
    const AccuracyCell* p = find_cell(cells, c.train_method, c.source_domain, c.eval_domain, "patched");
    if (!p) continue;
    gaps.push_back({{"method", c.train_method}, {"source_domain", c.source_domain}, {"eval_domain", c.eval_domain},
                    {"clean", c.accuracy}, {"patched", p->accuracy}, {"gap", c.accuracy - p->accuracy}});
  }
  agg["patch_gaps"] = std::move(gaps);

  json attack_drops = json::array();
  double attack_sum = 0.0;
  for (const auto& s : sources) {
    std::vector<std::pair<double, double>> rows;
    for (const auto& m : methods) {
      if (!is_attack(m)) continue;
      const AccuracyCell* clean = find_cell(cells, m, s, s, "clean");
      const AccuracyCell* patched = find_cell(cells, m, s, s, "patched");
      if (clean && patched) rows.emplace_back(patched->accuracy, clean->accuracy);
    }
    if (rows.empty()) continue;
    const double d = avg_attack_drop(rows);
    attack_drops.push_back({{"source_domain", s}, {"avg_drop", d}, {"attacks", rows.size()}});
    attack_sum += d;
  }
  if (!attack_drops.empty()) agg["attack_drop_mean"] = attack_sum / static_cast<double>(attack_drops.size());
  agg["attack_drops"] = std::move(attack_drops);

  json auth = json::array();
  for (const auto& m : methods) {
    if (!is_authorization(m)) continue;
    for (const auto& s : sources) {
      const AccuracyCell* a = find_cell(cells, m, s, s, "patched");
      if (!a) continue;
      std::vector<double> others;
      for (const auto& c : cells)
        if (c.train_method == m && c.source_domain == s && &c != a) others.push_back(c.accuracy);
      if (others.empty()) continue;
      const AuthorizationMetrics am = authorization_metrics(a->accuracy, others);
      auth.push_back({{"method", m}, {"source_domain", s}, {"authorized", am.authorized},
                      {"other_mean", am.other_mean}, {"drop", am.drop},
                      {"relative_drop", number_or_null(am.relative_drop)}, {"other_cells", others.size()}});
    }
  }
  agg["authorization"] = std::move(auth);
  return agg;
}

json to_json(const EvalReport& report) {
  json cells = json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"train_method", c.train_method}, {"source_domain", c.source_domain},
                     {"eval_domain", c.eval_domain}, {"patch_state", c.patch_state}, {"accuracy", c.accuracy}});
  }
  json meta = report.meta;
  meta["format"] = kReportFormat;
  return {{"meta", meta}, {"cells", cells}, {"aggregates", report.aggregates}};
}

EvalReport report_from_json(const json& j) {
  if (!j.is_object() || !j.contains("meta") || !j.contains("cells") || !j.contains("aggregates")) {
    throw InvalidInput("report must be an object with keys meta, cells, aggregates");
  }
  if (j["meta"].value("format", "") != kReportFormat) {
    throw InvalidInput(std::string("report format is not ") + kReportFormat);
  }
  EvalReport r;
  r.meta = j["meta"];
  for (const auto& c : j["cells"]) {
    r.add(c.at("train_method").get<std::string>(), c.at("source_domain").get<std::string>(),
          c.at("eval_domain").get<std::string>(), c.at("patch_state").get<std::string>(),
          c.at("accuracy").get<double>());
  }
  r.aggregates = j["aggregates"];
  const json expected = compute_aggregates(r.cells);
  if (!json_close(expected, r.aggregates)) {
    throw ReportInconsistent("stored aggregates do not match recomputation from cells");
  }
  return r;
}

EvalReport merge_reports(const std::vector<EvalReport>& reports) {
  EvalReport out;
  json sources = json::array();
  for (const auto& r : reports) {
    for (const auto& c : r.cells) {
      if (const AccuracyCell* prev = find_cell(out.cells, c.train_method, c.source_domain, c.eval_domain, c.patch_state)) {
        if (prev->accuracy != c.accuracy) {
          throw InvalidInput("conflicting values for cell " + c.train_method + "/" + c.source_domain + "/" +
                             c.eval_domain + "/" + c.patch_state);
        }
        continue;
      }
      out.cells.push_back(c);
    }
    sources.push_back(r.meta);
  }
  out.meta["merged_from"] = std::move(sources);
  out.finalize();
  return out;
}

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "json") return ReportFormat::Json;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "markdown" || s == "md") return ReportFormat::Markdown;
  throw InvalidInput("unknown report format '" + s + "'");
}

std::string render_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "train_method,source_domain,eval_domain,patch_state,accuracy\n";
  for (const auto& c : report.cells) {
    os << c.train_method << ',' << c.source_domain << ',' << c.eval_domain << ',' << c.patch_state << ','
       << format_fixed(c.accuracy, 1) << '\n';
  }
  return os.str();
}

namespace {

std::string drop_text(const json& d) {
  return format_fixed(d.at("mean_drop").get<double>(), 2) + " (" +
         format_fixed(number_or_nan(d.at("mean_relative_drop")), 2) + "%)";
}

const json* find_drop(const json& list, const std::string& method, const std::string& source, const std::string& scope) {
  for (const auto& d : list)
    if (d.at("method") == method && d.value("source_domain", "") == source && d.at("scope") == scope) return &d;
  return nullptr;
}

void row(std::ostringstream& os, const std::vector<std::string>& fields) {
  os << '|';
  for (const auto& f : fields) os << ' ' << f << " |";
  os << '\n';
}

void header(std::ostringstream& os, const std::vector<std::string>& fields) {
  row(os, fields);
  os << '|';
  for (std::size_t i = 0; i < fields.size(); ++i) os << " --- |";
  os << '\n';
}

}  // namespace

std::string render_markdown(const EvalReport& report) {
  const auto& cells = report.cells;
  const json agg = compute_aggregates(cells);
  const auto methods = unique_in_order(cells, [](const AccuracyCell& c) { return c.train_method; });
  const auto sources = unique_in_order(cells, [](const AccuracyCell& c) { return c.source_domain; });
  std::ostringstream os;
  bool any = false;

  // SL => method tables.
  for (const auto& m : methods) {
    bool has_drops = false;
    for (const auto& d : agg["drops"]) has_drops |= d.at("method") == m;
    if (!has_drops) continue;
    any = true;
    std::vector<std::string> evals;
    for (const auto& c : cells)
      if (c.train_method == m && c.patch_state == "clean" && find_cell(cells, "sl", c.source_domain, c.eval_domain, "clean") &&
          std::find(evals.begin(), evals.end(), c.eval_domain) == evals.end())
        evals.push_back(c.eval_domain);
    os << "### sl => " << m << "\n\n";
    std::vector<std::string> head{"Source/Target"};
    head.insert(head.end(), evals.begin(), evals.end());
    head.push_back("Source Drop");
    head.push_back("Target Drop");
    header(os, head);
    for (const auto& s : sources) {
      const json* ds = find_drop(agg["drops"], m, s, "source");
      const json* dt = find_drop(agg["drops"], m, s, "target");
      if (!ds && !dt) continue;
      std::vector<std::string> fields{s};
      for (const auto& e : evals) {
        const AccuracyCell* a = find_cell(cells, "sl", s, e, "clean");
        const AccuracyCell* b = find_cell(cells, m, s, e, "clean");
        fields.push_back(a && b ? format_fixed(a->accuracy, 1) + " ⇒ " + format_fixed(b->accuracy, 1) : "/");
      }
      fields.push_back(ds ? drop_text(*ds) : "/");
      fields.push_back(dt ? drop_text(*dt) : "/");
      row(os, fields);
    }
    std::vector<std::string> mean{"Mean"};
    for (std::size_t i = 0; i < evals.size(); ++i) mean.push_back("/");
    for (const char* scope : {"source", "target"}) {
      std::string text = "/";
      for (const auto& d : agg["drop_means"])
        if (d.at("method") == m && d.at("scope") == scope) text = drop_text(d);
      mean.push_back(text);
    }
    row(os, mean);
    os << '\n';
  }

  // Ownership / watermark-removal table: methods carrying patched cells on their own source.
  std::vector<std::string> owner_methods;
  for (const auto& m : methods) {
    if (is_authorization(m)) continue;
    for (const auto& s : sources)
      if (find_cell(cells, m, s, s, "patched") && find_cell(cells, m, s, s, "clean")) {
        owner_methods.push_back(m);
        break;
      }
  }
  if (!owner_methods.empty()) {
    any = true;
    os << "### ownership verification (patched / clean)\n\n";
    std::vector<std::string> head{"Source"};
    head.insert(head.end(), owner_methods.begin(), owner_methods.end());
    const bool attacks = !agg["attack_drops"].empty();
    if (attacks) head.push_back("Avg Drop");
    header(os, head);
    for (const auto& s : sources) {
      std::vector<std::string> fields{s};
      bool used = false;
      for (const auto& m : owner_methods) {
        const AccuracyCell* p = find_cell(cells, m, s, s, "patched");
        const AccuracyCell* c = find_cell(cells, m, s, s, "clean");
        used |= p && c;
        fields.push_back(p && c ? format_fixed(p->accuracy, 1) + " / " + format_fixed(c->accuracy, 1) : "/");
      }
      if (!used) continue;
      if (attacks) {
        std::string text = "/";
        for (const auto& d : agg["attack_drops"])
          if (d.at("source_domain") == s) text = format_fixed(d.at("avg_drop").get<double>(), 1);
        fields.push_back(text);
      }
      row(os, fields);
    }
    if (attacks) {
      std::vector<std::string> mean{"Mean"};
      for (std::size_t i = 0; i < owner_methods.size(); ++i) mean.push_back("/");
      mean.push_back(format_fixed(agg["attack_drop_mean"].get<double>(), 1));
      row(os, mean);
    }
    os << '\n';
  }

  // Authorization grids.
  for (const auto& m : methods) {
    if (!is_authorization(m)) continue;
    any = true;
    std::vector<std::string> evals;
    for (const auto& c : cells)
      if (c.train_method == m && std::find(evals.begin(), evals.end(), c.eval_domain) == evals.end())
        evals.push_back(c.eval_domain);
    os << "### " << m << "\n\n";
    std::vector<std::string> head{"Source with Patch"};
    for (const auto& e : evals) head.push_back(e + " (patch)");
    for (const auto& e : evals) head.push_back(e);
    head.insert(head.end(), {"Authorized", "Other", "Drop"});
    header(os, head);
    for (const auto& s : sources) {
      const json* a = nullptr;
      for (const auto& d : agg["authorization"])
        if (d.at("method") == m && d.at("source_domain") == s) a = &d;
      if (!a) continue;
      std::vector<std::string> fields{s};
      for (const char* state : {"patched", "clean"})
        for (const auto& e : evals) {
          const AccuracyCell* c = find_cell(cells, m, s, e, state);
          fields.push_back(c ? format_fixed(c->accuracy, 1) : "/");
        }
      fields.push_back(format_fixed(a->at("authorized").get<double>(), 1));
      fields.push_back(format_fixed(a->at("other_mean").get<double>(), 1));
      fields.push_back(format_fixed(a->at("drop").get<double>(), 2) + "(" +
                       format_fixed(number_or_nan(a->at("relative_drop")), 2) + "%)");
      row(os, fields);
    }
    os << '\n';
  }

  if (!any) {
    os << "### accuracy\n\n";
    header(os, {"Method", "Source", "Eval", "Patch", "Accuracy"});
    for (const auto& c : cells)
      row(os, {c.train_method, c.source_domain, c.eval_domain, c.patch_state, format_fixed(c.accuracy, 1)});
    os << '\n';
  }
  return os.str();
}

std::string render(const EvalReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::Json: return to_json(report).dump(2) + "\n";
    case ReportFormat::Csv: return render_csv(report);
    case ReportFormat::Markdown: return render_markdown(report);
  }
  return {};
}

void emit_report(const EvalReport& report, ReportFormat format, const std::filesystem::path& path) {
  const std::string text = render(report, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), e.byte);
  }
  return report_from_json(j);
}

std::string utc_timestamp() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace cuti
