#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "cuti/checkpoint.hpp"
#include "cuti/evaluation.hpp"
#include "doctest.h"
#include "reference_tables.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;

namespace {

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string(CUTI_CLI_PATH) + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

const char* kTinyConfig = R"({
  "data": {"synthetic": {"n_classes": 2, "n_per_class": 20, "image_size": 8, "seed": 3}},
  "backbone": {"blocks": [[4], [4]], "head_hidden": 8},
  "train": {"mode": "sl", "max_epochs": 2, "batch_size": 8, "seed": 5, "optimizer": "adam", "learning_rate": 0.003},
  "protocol": {"patch": {"size": 2}, "attack": {"attacker_patch": {"size": 2}}}
})";

}  // namespace

TEST_CASE("malformed config exits 2 and writes nothing") {
  const auto dir = testutil::scratch_dir("cli_bad");
  write(dir / "bad.json", R"({"train": {"max_epochs": "many"}})");
  CHECK(run("train -c " + (dir / "bad.json").string() + " -o " + (dir / "out").string(), dir / "log") == 2);
  CHECK_FALSE(fs::exists(dir / "out"));
  CHECK(slurp(dir / "log").find("max_epochs") != std::string::npos);
  write(dir / "unknown.json", R"({"trian": {}})");
  CHECK(run("train -c " + (dir / "unknown.json").string() + " -o " + (dir / "out").string(), dir / "log") == 2);
  CHECK(run("frobnicate", dir / "log") == 2);
}

TEST_CASE("missing inputs and bad kinds") {
  const auto dir = testutil::scratch_dir("cli_missing");
  CHECK(run("eval --checkpoint " + (dir / "nope.ckpt").string(), dir / "log") == 1);
  CHECK(run("attack --checkpoint " + (dir / "nope.ckpt").string() + " -k finetune", dir / "log") == 2);
  fs::create_directories(dir / "empty");
  CHECK(run("report " + (dir / "empty").string(), dir / "log") == 2);
}

TEST_CASE("report merges per-row files into the digit table") {
  const auto dir = testutil::scratch_dir("cli_report");
  int i = 0;
  for (const auto& row : testutil::table1_rows()) {
    cuti::emit_report(testutil::table1_report({row}), cuti::ReportFormat::Json,
                      dir / ("row" + std::to_string(i++) + ".json"));
  }
  write(dir / "notes.json", R"({"not": "a report"})");
  REQUIRE(run("report " + dir.string() + " -f markdown", dir / "table.md") == 0);
  const std::string md = slurp(dir / "table.md");
  CHECK(md.find("0.13 (0.13%)") != std::string::npos);
  CHECK(md.find("55.94 (84.94%)") != std::string::npos);

  auto j = cuti::to_json(testutil::table1_report({testutil::table1_rows()[0]}));
  j["cells"][1]["accuracy"] = 42.0;
  write(dir / "row9.json", j.dump());
  CHECK(run("report " + dir.string(), dir / "log") == 1);
  CHECK(slurp(dir / "log").find("row9.json") != std::string::npos);
}

TEST_CASE("tiny train, eval and zero-budget attack") {
  const auto dir = testutil::scratch_dir("cli_train");
  write(dir / "tiny.json", kTinyConfig);
  const std::string cfg = (dir / "tiny.json").string();
  REQUIRE(run("train -c " + cfg + " -o " + (dir / "run").string(), dir / "log") == 0);
  CHECK(fs::exists(dir / "run" / "model.ckpt"));
  CHECK(fs::exists(dir / "run" / "report.json"));
  CHECK(fs::exists(dir / "run" / "report.md"));
  CHECK(fs::exists(dir / "run" / "config.resolved.cfg"));
  const auto report = cuti::load_report(dir / "run" / "report.json");
  CHECK_FALSE(report.cells.empty());

  const std::string ckpt = (dir / "run" / "model.ckpt").string();
  CHECK(run("eval --checkpoint " + ckpt + " -c " + cfg + " --patch -o " + (dir / "eval.json").string(), dir / "log") ==
        0);
  CHECK(cuti::load_report(dir / "eval.json").cells.size() == 2);

  REQUIRE(run("attack --checkpoint " + ckpt + " -k ftal -c " + cfg + " --set protocol.attack.epochs=0", dir / "log") ==
          0);
  const auto before = cuti::load_checkpoint(ckpt);
  const auto after = cuti::load_checkpoint(ckpt + ".attacked.ftal");
  std::vector<cuti::Tensor> a, b;
  cuti::for_each_parameter(before, [&](const std::string&, const cuti::Tensor& t) { a.push_back(t); });
  cuti::for_each_parameter(after, [&](const std::string&, const cuti::Tensor& t) { b.push_back(t); });
  REQUIRE(a.size() == b.size());
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(testutil::max_abs_diff(a[k], b[k]) == 0.0);
}
