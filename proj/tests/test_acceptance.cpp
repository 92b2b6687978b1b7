// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: cuti_acceptance [criterion numbers...]   (default: all)

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "cuti/config.hpp"
#include "cuti/evaluation.hpp"
#include "cuti/feature_stats.hpp"
#include "cuti/ip_protocols.hpp"
#include "cuti/kernels.hpp"
#include "cuti/objectives.hpp"
#include "cuti/training.hpp"
#include "reference_tables.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using cuti::Tensor;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << "[failed: " << what << "] ";
    }
  }
};

std::string pct(double v) { return cuti::format_fixed(v, 1); }

void progress(const std::string& run, const cuti::EpochRecord& r) {
  std::cerr << "  " << run << " epoch " << r.epoch << " [" << r.phase << "] loss " << std::setprecision(4) << r.loss
            << " src " << pct(r.source_acc) << "% off " << pct(r.offdomain_acc) << "%\n";
}

cuti::EpochCallback logger(const std::string& run) {
  return [run](const cuti::EpochRecord& r) { progress(run, r); };
}

// Shared desk-scale setup, loaded once.
struct Desk {
  cuti::ExperimentConfig cfg;
  std::vector<cuti::DomainDataset> domains;
  const cuti::DomainDataset* source = nullptr;
  const cuti::DomainDataset* target = nullptr;
  cuti::BackboneSpec spec;

  std::optional<cuti::ModelState> sl;

  Desk() {
    cfg = cuti::load_experiment_config(fs::path(CUTI_SOURCE_DIR) / "configs" / "desk_small.json");
    domains = cuti::load_domains(cfg.data);
    source = &cuti::find_domain(domains, cfg.data.source);
    target = &cuti::find_domain(domains, cfg.data.target);
    spec = cuti::backbone_for(cfg, *source);
  }

  const cuti::ModelState& sl_model() {
    if (!sl) sl = cuti::train_sl(source->train, spec, cfg.train, logger("sl")).state;
    return *sl;
  }
};

Desk& desk() {
  static Desk d;
  return d;
}

// 1: aggregation arithmetic against the reference rows.
void metric_arithmetic(Outcome& o) {
  const auto& mt = testutil::table1_rows()[0];
  const std::vector<double> sl(mt.sl.begin() + 1, mt.sl.end()), me(mt.cuti.begin() + 1, mt.cuti.end());
  const auto d = cuti::drop_metrics(sl, me);
  o.require(std::abs(d.mean_drop - 61.00) <= 0.005 && std::abs(d.mean_relative_drop - 88.56) <= 0.005, "MT target drop");
  const auto s = cuti::drop_metrics(std::vector<double>{mt.sl[0]}, std::vector<double>{mt.cuti[0]});
  o.require(cuti::format_fixed(s.mean_drop, 2) == "0.10" && cuti::format_fixed(s.mean_relative_drop, 2) == "0.10",
            "MT source drop");
  o.detail << "MT " << cuti::format_fixed(d.mean_drop, 2) << " (" << cuti::format_fixed(d.mean_relative_drop, 2)
           << "%); ";

  const auto t1 = testutil::table1_report(testutil::table1_rows());
  for (const auto& m : t1.aggregates["drop_means"]) {
    const std::string text = cuti::format_fixed(m["mean_drop"].get<double>(), 2) + " (" +
                             cuti::format_fixed(m["mean_relative_drop"].get<double>(), 2) + "%)";
    const bool src = m["scope"] == "source";
    o.require(text == (src ? "0.13 (0.13%)" : "55.94 (84.94%)"), "mean row " + m["scope"].get<std::string>());
    o.detail << "mean " << m["scope"].get<std::string>() << " " << text << "; ";
  }

  const double avg = testutil::table2_mt_report().aggregates["attack_drops"][0]["avg_drop"].get<double>();
  o.require(std::abs(avg - 89.9) <= 0.05, "attack avg drop");
  o.detail << "avg attack drop " << cuti::format_fixed(avg, 2) << "; ";

  const auto t4 = testutil::table4_mt_report();
  const auto& a = t4.aggregates["authorization"][0];
  const std::string auth = cuti::format_fixed(a["drop"].get<double>(), 2) + " (" +
                           cuti::format_fixed(a["relative_drop"].get<double>(), 2) + "%)";
  o.require(auth == "86.27 (86.27%)" && cuti::format_fixed(a["other_mean"].get<double>(), 1) == "13.7",
            "authorization row");
  o.detail << "authorization " << auth;
}

// 2: gradients against central differences and the statistics invariants.
void numerical_core(Outcome& o) {
  double worst = 0.0;
  {
    const int C = 4;
    cuti::GeneratorParams p = cuti::init_generator(C, 3, 0.3);
    p.b_sigma = testutil::random_tensor({C}, 4, -0.2, 0.2);
    p.b_mu = testutil::random_tensor({C}, 5, -0.2, 0.2);
    Tensor f_i = testutil::normal_tensor({2, C, 3, 3}, 6);
    Tensor f_s = testutil::normal_tensor({2, C, 3, 3}, 7, 0.5, 1.5);
    const Tensor r = testutil::random_tensor({2, C, 3, 3}, 8);
    const auto loss = [&] { return testutil::dot(cuti::cuti_fuse(f_i, f_s, p), r); };
    const auto g = cuti::cuti_fuse_backward(f_i, f_s, p, r);
    worst = std::max({worst, testutil::rel_error(g.d_content, testutil::numeric_grad(f_i, loss)),
                      testutil::rel_error(g.d_style_source, testutil::numeric_grad(f_s, loss)),
                      testutil::rel_error(g.d_params.w_sigma, testutil::numeric_grad(p.w_sigma, loss)),
                      testutil::rel_error(g.d_params.b_sigma, testutil::numeric_grad(p.b_sigma, loss)),
                      testutil::rel_error(g.d_params.w_mu, testutil::numeric_grad(p.w_mu, loss)),
                      testutil::rel_error(g.d_params.b_mu, testutil::numeric_grad(p.b_mu, loss))});
  }
  const double fuse_err = worst;
  {
    Tensor ls = testutil::random_tensor({3, 4}, 5), lx = testutil::random_tensor({3, 4}, 6);
    const std::vector<int> ys{0, 1, 2}, yx{3, 3, 0};
    cuti::LossConfig cfg;
    cfg.clamp = 50.0;
    const auto value = [&] {
      return cuti::cuti_loss(cuti::kernels::softmax_rows(ls), ys, cuti::kernels::softmax_rows(lx), yx, cfg);
    };
    const auto lg = cuti::adversarial_loss_grad(cuti::kernels::softmax_rows(ls), ys, cuti::kernels::softmax_rows(lx),
                                                yx, Tensor(), {}, cfg);
    worst = std::max({worst, testutil::rel_error(lg.d_source, testutil::numeric_grad(ls, value)),
                      testutil::rel_error(lg.d_cuti, testutil::numeric_grad(lx, value))});
  }
  double model_err = 0.0;
  {
    cuti::BackboneSpec s;
    s.in_channels = 2;
    s.in_height = s.in_width = 8;
    s.blocks = {{{3}}, {{4}}};
    s.head_hidden = 5;
    s.num_classes = 3;
    cuti::ModelState m = cuti::init_model(s, 5);
    for (auto& gen : m.generators) {
      gen.b_sigma = testutil::random_tensor(gen.b_sigma.shape(), 31, -0.1, 0.1);
      gen.w_mu = testutil::random_tensor(gen.w_mu.shape(), 32, -0.3, 0.3);
    }
    const Tensor xs = testutil::random_tensor({2, 2, 8, 8}, 21, 0.0, 1.0);
    const Tensor xi = testutil::random_tensor({2, 2, 8, 8}, 22, 0.0, 1.0);
    const Tensor xt = testutil::random_tensor({2, 2, 8, 8}, 23, 0.0, 1.0);
    const std::vector<int> ys{0, 2}, yi{1, 0}, yt{2, 1};
    cuti::LossConfig cfg;
    cfg.clamp = 100.0;
    const auto loss = [&] {
      const auto a = cuti::trace_forward(m, xs);
      const auto b = cuti::trace_forward_fused(m, xi, a);
      const auto c = cuti::trace_forward(m, xt);
      return cuti::adversarial_loss_grad(a.probs, ys, b.probs, yi, c.probs, yt, cfg).value;
    };
    const auto a = cuti::trace_forward(m, xs);
    const auto b = cuti::trace_forward_fused(m, xi, a);
    const auto c = cuti::trace_forward(m, xt);
    const auto lg = cuti::adversarial_loss_grad(a.probs, ys, b.probs, yi, c.probs, yt, cfg);
    cuti::Gradients g = cuti::Gradients::zeros_for(m);
    cuti::backward(m, c, lg.d_target, g);
    const auto bi = cuti::backward(m, b, lg.d_cuti, g);
    cuti::backward(m, a, lg.d_source, g, &bi.d_source_blocks);
    std::vector<Tensor> analytic;
    g.for_each([&](const std::string&, const Tensor& t) { analytic.push_back(t); });
    std::size_t k = 0;
    cuti::for_each_parameter(m, [&](const std::string&, Tensor& p) {
      model_err = std::max(model_err, testutil::rel_error(analytic[k++], testutil::numeric_grad(p, loss)));
    });
  }
  worst = std::max(worst, model_err);
  o.require(worst <= 1e-3, "gradient rel error <= 1e-3");

  double mean_err = 0.0, dev_err = 0.0;
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const Tensor f = testutil::normal_tensor({2, 4, 8, 8}, seed, -3.0 + seed, 0.5 * seed + 0.2);
    const auto st = cuti::compute_style_stats(cuti::normalize_semantic(f));
    for (std::size_t i = 0; i < st.mean.size(); ++i) {
      mean_err = std::max(mean_err, std::abs(st.mean[i]));
      dev_err = std::max(dev_err, std::abs(st.dev[i] - 1.0));
    }
  }
  o.require(mean_err <= 1e-6 && dev_err <= 1e-3, "normalization invariants");

  const Tensor content = testutil::normal_tensor({3, 4, 8, 8}, 5, 0.3, 1.2);
  const auto style = cuti::compute_style_stats(testutil::normal_tensor({3, 4, 8, 8}, 6, -0.5, 0.9));
  const auto got = cuti::compute_style_stats(cuti::restyle(content, style, 0.0, 1));
  const double restyle_err =
      std::max(testutil::max_abs_diff(got.mean, style.mean), testutil::max_abs_diff(got.dev, style.dev));
  o.require(restyle_err <= 1e-5, "restyle stat match");

  o.detail << std::scientific << std::setprecision(2) << "fuse " << fuse_err << ", loss+fuse max " << worst
           << ", 2-block model " << model_err << ", |mean| " << mean_err << ", |dev-1| " << dev_err << ", restyle "
           << restyle_err << std::defaultfloat;
}

// 3: target-specified confinement.
void target_specified(Outcome& o) {
  Desk& d = desk();
  const auto& sl = d.sl_model();
  const double sl_src = cuti::accuracy(sl, d.source->test), sl_tgt = cuti::accuracy(sl, d.target->test);
  const auto r = cuti::train_target_specified(d.source->train, d.target->train, d.spec, d.cfg.train, logger("cuti"));
  const double src = cuti::accuracy(r.state, d.source->test), tgt = cuti::accuracy(r.state, d.target->test);
  o.require(sl_src >= 90.0, "SL source >= 90");
  o.require(sl_tgt >= 55.0, "SL cross-domain >= 55");
  o.require(src >= sl_src - 3.0, "CUTI source >= SL - 3");
  o.require(tgt <= 20.0, "CUTI target <= 20");
  o.require(sl_tgt - tgt > sl_src - src, "target drop dominates source drop");
  o.detail << d.source->name << "->" << d.target->name << ", " << d.cfg.train.max_epochs << " epochs: SL " << pct(sl_src)
           << " / " << pct(sl_tgt) << ", CUTI " << pct(src) << " / " << pct(tgt);
}

// 4: target-free confinement on a domain never seen in training.
void target_free(Outcome& o) {
  Desk& d = desk();
  const auto& sl = d.sl_model();
  const double sl_src = cuti::accuracy(sl, d.source->test), sl_tgt = cuti::accuracy(sl, d.target->test);
  const auto r = cuti::train_target_free(d.source->train, d.spec, d.cfg.train, logger("target-free"));
  const double src = cuti::accuracy(r.state, d.source->test), tgt = cuti::accuracy(r.state, d.target->test);
  o.require(tgt <= sl_tgt - 30.0, "unseen >= 30 below SL");
  o.require(std::abs(src - sl_src) <= 4.0, "source within 4 of SL");
  o.detail << "SL " << pct(sl_src) << " / " << pct(sl_tgt) << ", target-free " << pct(src) << " / " << pct(tgt)
           << " on unseen " << d.target->name;
  for (const auto& dom : d.domains) {
    if (&dom == d.source || &dom == d.target) continue;
    o.detail << ", " << dom.name << " " << pct(cuti::accuracy(sl, dom.test)) << " -> "
             << pct(cuti::accuracy(r.state, dom.test));
  }
}

// 5: ownership verification, then every removal attack at the default budget.
void ownership(Outcome& o) {
  Desk& d = desk();
  const auto r = cuti::run_ownership_verification(*d.source, d.spec, d.cfg.train, d.cfg.patch, true, logger("ownership"));
  const auto& rep = r.report;
  const std::string s = d.source->name;
  const double clean = rep.at("cuti", s, s, "clean"), patched = rep.at("cuti", s, s, "patched");
  const double sl_clean = rep.at("sl", s, s, "clean"), sl_patched = rep.at("sl", s, s, "patched");
  o.require(clean >= 90.0, "clean >= 90");
  o.require(patched <= 15.0, "patched <= 15");
  o.require(std::abs(sl_clean - sl_patched) <= 5.0, "SL gap <= 5");
  o.detail << "CUTI " << pct(patched) << " / " << pct(clean) << ", SL " << pct(sl_patched) << " / " << pct(sl_clean)
           << "; attacks (patched / clean, drop):";
  for (auto kind : {cuti::AttackKind::FTAL, cuti::AttackKind::RTAL, cuti::AttackKind::EWC, cuti::AttackKind::AU,
                    cuti::AttackKind::Overwrite}) {
    cuti::AttackSpec a = d.cfg.attack;
    a.kind = kind;
    const auto ar = cuti::run_attack(r.model, a, *d.source, d.cfg.patch, nullptr, d.cfg.train.synth);
    const double drop = ar.clean_acc - ar.patched_acc;
    o.require(drop >= 60.0, cuti::to_string(kind) + " drop >= 60");
    o.detail << " " << cuti::to_string(kind) << " " << pct(ar.patched_acc) << " / " << pct(ar.clean_acc) << " ("
             << pct(drop) << ")";
  }
}

// 6: applicability authorization over every domain, with and without the patch.
void authorization(Outcome& o) {
  Desk& d = desk();
  int index = 0;
  while (&d.domains[static_cast<std::size_t>(index)] != d.source) ++index;
  const auto r = cuti::run_applicability_authorization(d.domains, index, d.spec, d.cfg.train, d.cfg.patch,
                                                       logger("authorization"));
  for (const auto& c : r.report.cells) {
    const bool authorized = c.eval_domain == d.source->name && c.patch_state == "patched";
    if (authorized) {
      o.require(c.accuracy >= 90.0, "patched source >= 90");
    } else {
      o.require(c.accuracy <= 25.0, c.eval_domain + "/" + c.patch_state + " <= 25");
    }
    o.detail << c.eval_domain << (c.patch_state == "patched" ? "+patch " : " ") << pct(c.accuracy) << "  ";
  }
}

// 7: loss-variant ablation table. No ordering is asserted.
void ablation(Outcome& o) {
  Desk& d = desk();
  cuti::EvalReport report;
  const auto& sl = d.sl_model();
  for (const auto* dom : {d.source, d.target}) report.add("sl", d.source->name, dom->name, "clean", cuti::accuracy(sl, dom->test));
  for (const std::string v : {"L1", "L2", "L3", "alternating"}) {
    cuti::TrainConfig c = d.cfg.train;
    c.loss.variant = cuti::loss_variant_from_string(v);
    c.max_epochs = std::min(c.max_epochs, 10);
    const auto r = cuti::train_target_specified(d.source->train, d.target->train, d.spec, c, logger("ablation " + v));
    for (const auto* dom : {d.source, d.target}) {
      const double acc = cuti::accuracy(r.state, dom->test);
      o.require(std::isfinite(acc), v + " finite");
      report.add("cuti." + v, d.source->name, dom->name, "clean", acc);
    }
  }
  report.finalize();
  std::cout << cuti::render_markdown(report);
  o.require(report.cells.size() == 10, "table has every variant");
  o.detail << "4 variants x 2 domains, 10 epochs each";
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// 8: the CLI run twice with one config gives identical checkpoints and accuracies.
void determinism(Outcome& o) {
  const fs::path root = testutil::scratch_dir("acceptance_determinism");
  const std::string cfg = (fs::path(CUTI_SOURCE_DIR) / "configs" / "toy.json").string();
  for (const char* run : {"a", "b"}) {
    const std::string cmd = std::string(CUTI_CLI_PATH) + " train -c " + cfg + " -o " + (root / run).string() + " >" +
                            (root / (std::string(run) + ".log")).string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    o.require(WIFEXITED(status) && WEXITSTATUS(status) == 0, std::string("run ") + run + " exit 0");
  }
  int compared = 0;
  for (const auto& e : fs::directory_iterator(root / "a")) {
    if (e.path().extension() != ".ckpt") continue;
    const fs::path other = root / "b" / e.path().filename();
    o.require(fs::exists(other) && slurp(e.path()) == slurp(other), e.path().filename().string() + " identical");
    ++compared;
  }
  o.require(compared >= 2, "model and control checkpoints written");
  const auto ra = cuti::load_report(root / "a" / "report.json"), rb = cuti::load_report(root / "b" / "report.json");
  bool same = ra.cells.size() == rb.cells.size();
  for (std::size_t i = 0; same && i < ra.cells.size(); ++i) same = ra.cells[i].accuracy == rb.cells[i].accuracy;
  o.require(same, "accuracies identical");
  o.detail << compared << " checkpoints byte-identical, " << ra.cells.size() << " accuracies equal";
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"metric arithmetic", metric_arithmetic},
      {"numerical core", numerical_core},
      {"target-specified confinement", target_specified},
      {"target-free confinement", target_free},
      {"ownership verification and removal attacks", ownership},
      {"applicability authorization", authorization},
      {"loss-variant ablation", ablation},
      {"determinism", determinism},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = static_cast<int>(i) + 1;
    if (!only.empty() && !only.count(n)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << "exception: " << e.what();
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << n << " " << criteria[i].first << " (" << std::fixed
              << std::setprecision(1) << secs << " s" << std::defaultfloat << "): " << o.detail.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
