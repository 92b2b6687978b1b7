#include <cmath>
#include <fstream>

#include "cuti/error.hpp"
#include "cuti/evaluation.hpp"
#include "doctest.h"
#include "reference_tables.hpp"
#include "test_util.hpp"

using cuti::Tensor;
using nlohmann::json;

TEST_CASE("accuracy counts argmax hits") {
  // Five samples with fixed scores; by hand: rows 0, 2, 4 correct.
  const Tensor scores({5, 3}, {0.9, 0.1, 0.0,  //
                               0.2, 0.3, 0.5,  //
                               0.1, 0.8, 0.1,  //
                               0.6, 0.4, 0.0,  //
                               0.0, 0.1, 0.9});
  CHECK(cuti::accuracy_from_scores(scores, std::vector<int>{0, 1, 1, 2, 2}) == doctest::Approx(60.0));
  CHECK(cuti::accuracy_from_scores(scores, std::vector<int>{0, 2, 1, 0, 2}) == 100.0);
  // A constant scorer on a balanced 10-class split sits at chance.
  Tensor flat({20, 10}, 0.0);
  for (int n = 0; n < 20; ++n) flat.at(n, 4) = 1.0;
  std::vector<int> y;
  for (int n = 0; n < 20; ++n) y.push_back(n % 10);
  CHECK(cuti::accuracy_from_scores(flat, y) == doctest::Approx(10.0));
  CHECK_THROWS_AS(cuti::accuracy_from_scores(Tensor({0, 3}), std::vector<int>{}), cuti::InvalidInput);
}

TEST_CASE("drop metrics reproduce the MT reference row") {
  const std::vector<double> sl{98.0, 38.2, 67.8}, me{6.7, 5.6, 8.7};
  const auto d = cuti::drop_metrics(sl, me);
  CHECK(std::abs(d.mean_drop - 61.00) <= 0.005);
  CHECK(std::abs(d.mean_relative_drop - 88.56) <= 0.005);
  const auto s = cuti::drop_metrics(std::vector<double>{99.2}, std::vector<double>{99.1});
  CHECK(cuti::format_fixed(s.mean_drop, 2) == "0.10");
  CHECK(cuti::format_fixed(s.mean_relative_drop, 2) == "0.10");
}

TEST_CASE("relative drop is a mean of ratios, not a ratio of means") {
  const std::vector<double> sl{98.0, 38.2, 67.8}, me{6.7, 5.6, 8.7};
  const double ratio_of_means = (98.0 + 38.2 + 67.8 - 6.7 - 5.6 - 8.7) / (98.0 + 38.2 + 67.8) * 100.0;
  CHECK(std::abs(cuti::drop_metrics(sl, me).mean_relative_drop - ratio_of_means) > 0.5);
}

TEST_CASE("drop metrics properties") {
  const std::vector<double> a{50.0, 60.0}, b{10.0, 20.0};
  const auto d = cuti::drop_metrics(a, a);
  CHECK(d.mean_drop == 0.0);
  CHECK(d.mean_relative_drop == 0.0);
  const std::vector<double> a2{55.0, 65.0}, b2{15.0, 25.0};
  CHECK(cuti::drop_metrics(a2, b2).mean_drop == doctest::Approx(cuti::drop_metrics(a, b).mean_drop));
  const auto z = cuti::drop_metrics(std::vector<double>{0.0, 50.0}, std::vector<double>{0.0, 25.0});
  CHECK(z.excluded == 1);
  CHECK(z.mean_relative_drop == doctest::Approx(50.0));
  CHECK_THROWS_AS(cuti::drop_metrics(std::vector<double>{1.0}, std::vector<double>{}), cuti::InvalidInput);
}

TEST_CASE("average attack drop reproduces the MT reference row") {
  std::vector<std::pair<double, double>> rows{{9.0, 100.0}, {9.4, 100.0}, {9.7, 100.0}, {9.0, 100.0}, {9.4, 96.2}};
  const double d = cuti::avg_attack_drop(rows);
  CHECK(std::abs(d - 89.9) <= 0.05);
  std::reverse(rows.begin(), rows.end());
  CHECK(cuti::avg_attack_drop(rows) == doctest::Approx(d));
  CHECK(cuti::avg_attack_drop(std::vector<std::pair<double, double>>{{5.0, 5.0}}) == 0.0);
  CHECK_THROWS_AS(cuti::avg_attack_drop(std::vector<std::pair<double, double>>{}), cuti::InvalidInput);
}

TEST_CASE("authorization aggregates reproduce the MT reference row") {
  const auto r = testutil::table4_mt_report();
  const auto& a = r.aggregates["authorization"][0];
  CHECK(cuti::format_fixed(a["authorized"].get<double>(), 1) == "100.0");
  CHECK(cuti::format_fixed(a["other_mean"].get<double>(), 1) == "13.7");
  CHECK(cuti::format_fixed(a["drop"].get<double>(), 2) == "86.27");
  CHECK(cuti::format_fixed(a["relative_drop"].get<double>(), 2) == "86.27");
  CHECK(cuti::render_markdown(r).find("86.27(86.27%)") != std::string::npos);
}

TEST_CASE("merged digit table reproduces the reference mean row") {
  const auto r = testutil::table1_report(testutil::table1_rows());
  std::string src, tgt;
  for (const auto& m : r.aggregates["drop_means"]) {
    const std::string text = cuti::format_fixed(m["mean_drop"].get<double>(), 2) + " (" +
                             cuti::format_fixed(m["mean_relative_drop"].get<double>(), 2) + "%)";
    (m["scope"] == "source" ? src : tgt) = text;
  }
  CHECK(src == "0.13 (0.13%)");
  CHECK(tgt == "55.94 (84.94%)");
  const std::string md = cuti::render_markdown(r);
  CHECK(md.find("61.00 (88.56%)") != std::string::npos);
  CHECK(md.find("| MT |") != std::string::npos);
  CHECK(md.find("| MM |") != std::string::npos);
}

TEST_CASE("half-up rounding at emission") {
  CHECK(cuti::format_fixed(0.125, 2) == "0.13");
  CHECK(cuti::format_fixed(89.94, 1) == "89.9");
  CHECK(cuti::format_fixed(2.675, 2) == "2.68");  // 2.67499999... in binary
  CHECK(cuti::format_fixed(-0.0001, 2) == "0.00");
  CHECK(cuti::round_half_up(84.938, 2) == doctest::Approx(84.94));
}

TEST_CASE("report JSON round-trips and self-checks on load") {
  const auto dir = testutil::scratch_dir("report");
  auto r = testutil::table2_mt_report();
  r.meta["seed"] = 1;
  cuti::emit_report(r, cuti::ReportFormat::Json, dir / "r.json");
  const auto back = cuti::load_report(dir / "r.json");
  CHECK(cuti::to_json(back) == cuti::to_json(r));
  CHECK(std::abs(back.aggregates["attack_drops"][0]["avg_drop"].get<double>() - 89.9) <= 0.05);

  json tampered = cuti::to_json(r);
  tampered["cells"][0]["accuracy"] = 50.0;
  CHECK_THROWS_AS(cuti::report_from_json(tampered), cuti::ReportInconsistent);
  CHECK_THROWS_AS(cuti::emit_report(r, cuti::ReportFormat::Csv, "/nonexistent/dir/r.csv"), cuti::IoError);
}

TEST_CASE("csv and markdown views") {
  const auto r = testutil::table2_mt_report();
  const std::string csv = cuti::render_csv(r);
  CHECK(csv.rfind("train_method,source_domain,eval_domain,patch_state,accuracy\n", 0) == 0);
  CHECK(csv.find("attack.ftal,MT,MT,patched,9.0") != std::string::npos);
  const std::string md = cuti::render_markdown(r);
  CHECK(md.find("11.3 / 99.1") != std::string::npos);
  CHECK(md.find("| 89.9 |") != std::string::npos);
}

TEST_CASE("merging reports unions cells and rejects conflicts") {
  const auto& rows = testutil::table1_rows();
  std::vector<cuti::EvalReport> parts;
  for (const auto& row : rows) parts.push_back(testutil::table1_report({row}));
  const auto merged = cuti::merge_reports(parts);
  CHECK(merged.cells.size() == 32);
  CHECK(merged.aggregates == testutil::table1_report(rows).aggregates);

  auto clash = parts[0];
  clash.cells[0].accuracy = 1.0;
  clash.finalize();
  CHECK_THROWS_AS(cuti::merge_reports({parts[0], clash}), cuti::InvalidInput);
}

TEST_CASE("cells are range-checked") {
  cuti::EvalReport r;
  CHECK_THROWS_AS(r.add("sl", "a", "a", "clean", 101.0), cuti::InvalidInput);
  CHECK_THROWS_AS(r.add("sl", "a", "a", "dirty", 50.0), cuti::InvalidInput);
}
