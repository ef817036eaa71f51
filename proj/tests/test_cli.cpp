#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "commands.hpp"
#include "config.hpp"
#include "shelfnet/analysis/cost.hpp"
#include "shelfnet/arch/builders.hpp"
#include "shelfnet/errors.hpp"
#include "shelfnet/train/bench.hpp"
#include "shelfnet/train/data.hpp"

using namespace shelfnet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
  json doc() const { return json::parse(out); }
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("shelfnet_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

}  // namespace

TEST_CASE("summarize") {
  SUBCASE("shelfnet on resnet18 has sixteen shelf blocks and four reducers") {
    const auto r = run({"summarize", "--backbone", "resnet18", "--json"});
    REQUIRE(r.code == 0);
    const auto j = r.doc();
    CHECK(j["shelf_blocks"] == 16);
    CHECK(j["block_kinds"]["channel_reduce"] == 4);
    CHECK(j["backbone"] == "resnet18");
    CHECK(j["arch_hash"].get<std::string>().size() == 16);
  }
  SUBCASE("fcn lists only the backbone column and the head") {
    const auto j = run({"summarize", "--backbone", "resnet50", "--variant", "fcn", "--json"}).doc();
    for (const auto& b : j["blocks"]) CHECK((b["column"] == 0 || b["kind"] == "head"));
    CHECK(j["blocks"].size() == 5);
  }
  SUBCASE("MAC total matches the analysis module") {
    const auto j = run({"summarize", "--backbone", "resnet18", "--input", "512x512", "--json"}).doc();
    cli::ExperimentConfig cfg;
    cli::set_backbone(cfg, "resnet18");
    const auto cost = analysis::count_flops(arch::build_shelf(cfg.shelf), 512, 512);
    CHECK(j["cost"]["total_macs"] == cost.total_macs);
    CHECK(j["cost"]["total_params"] == cost.total_params);
  }
  SUBCASE("text output") {
    const auto r = run({"summarize"});
    CHECK(r.code == 0);
    CHECK(r.out.find("shelf blocks (columns 1+): 16") != std::string::npos);
    CHECK(run({"summarize", "--backbone-table"}).out.find("resnet101") != std::string::npos);
  }
  SUBCASE("json output is a fixed point of parse and re-emit") {
    for (const auto& args : std::vector<std::vector<std::string>>{
             {"summarize", "--json"}, {"paths", "--json", "--longest"}, {"summarize", "--backbone-table", "--json"}}) {
      const auto r = run(args);
      CHECK(json::parse(r.out).dump(2) + "\n" == r.out);
    }
  }
  SUBCASE("bad input size") {
    const auto r = run({"summarize", "--input", "64by64"});
    CHECK(r.code == 2);
    CHECK(r.err.find("HxW") != std::string::npos);
  }
}

TEST_CASE("architecture JSON round-trips through the CLI") {
  const auto dir = scratch("arch");
  REQUIRE(run({"summarize", "--backbone", "resnet18", "--emit-arch", (dir / "a.json").string()}).code == 0);
  REQUIRE(run({"summarize", "--arch", (dir / "a.json").string(), "--emit-arch", (dir / "b.json").string()}).code == 0);
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  const auto from_file = run({"summarize", "--arch", (dir / "a.json").string(), "--json"}).doc();
  const auto direct = run({"summarize", "--backbone", "resnet18", "--json"}).doc();
  CHECK(from_file["arch_hash"] == direct["arch_hash"]);
  CHECK(run({"paths", "--arch", (dir / "a.json").string(), "--json"}).doc()["path_count"] == 29);

  write(dir / "bad.json", "{\"format\": \"shelfnet-arch\", \"version\": 9}");
  CHECK(run({"summarize", "--arch", (dir / "bad.json").string()}).code != 0);
  fs::remove_all(dir);
}

TEST_CASE("paths") {
  CHECK(run({"paths", "--json"}).doc()["path_count"] == 29);
  CHECK(run({"paths", "--variant", "segnet", "--json"}).doc()["path_count"] == 4);
  const auto grid = run({"paths", "--variant", "gridnet_simplified", "--longest", "--json"}).doc();
  CHECK(grid["longest_path_length"] == 10);
  CHECK(run({"paths", "--variant", "shelfnet_simplified", "--longest", "--json"}).doc()["longest_path_length"] == 16);
  const auto listed = run({"paths", "--list", "--json"}).doc();
  CHECK(listed["paths"].size() == 29);
  const auto text = run({"paths", "--source", "A0", "--sink", "A4"});
  CHECK(text.out.find("paths A0 -> A4: 29") != std::string::npos);

  const auto unknown = run({"paths", "--source", "Z9"});
  CHECK(unknown.code == 1);
  CHECK(unknown.err.find("Z9") != std::string::npos);
  CHECK(run({"paths", "--variant", "nope"}).code == 2);
  CHECK(run({"paths", "--list", "--cap", "5"}).code != 0);
}

TEST_CASE("config files are strict") {
  const auto dir = scratch("config");
  SUBCASE("unknown key names the field and line") {
    write(dir / "c.json", "{\n  \"train\": {\n    \"base_lr\": 0.01,\n    \"learning_rate\": 0.1\n  }\n}\n");
    const auto r = run({"--config", (dir / "c.json").string(), "summarize"});
    CHECK(r.code == 2);
    CHECK(r.err.find("train.learning_rate") != std::string::npos);
    CHECK(r.err.find("line 4") != std::string::npos);
  }
  SUBCASE("wrong type") {
    write(dir / "c.json", "{\n  \"seed\": \"zero\"\n}\n");
    const auto r = run({"--config", (dir / "c.json").string(), "summarize"});
    CHECK(r.code == 2);
    CHECK(r.err.find("'seed' (line 2)") != std::string::npos);
  }
  SUBCASE("out-of-range value") {
    write(dir / "c.json", "{\"train\": {\"base_lr\": -1}}");
    const auto r = run({"--config", (dir / "c.json").string(), "summarize"});
    CHECK(r.code == 2);
    CHECK(r.err.find("train") != std::string::npos);
  }
  SUBCASE("unknown variant") {
    write(dir / "c.json", "{\"model\": {\"variant\": \"unet\"}}");
    const auto r = run({"--config", (dir / "c.json").string(), "summarize"});
    CHECK(r.code == 2);
    CHECK(r.err.find("model.variant") != std::string::npos);
  }
  SUBCASE("malformed JSON") {
    write(dir / "c.json", "{\n  \"seed\": 1,\n  oops\n}\n");
    const auto r = run({"--config", (dir / "c.json").string(), "summarize"});
    CHECK(r.code == 2);
    CHECK(r.err.find("line 3") != std::string::npos);
  }
  SUBCASE("effective config round-trips") {
    cli::ExperimentConfig cfg;
    cfg.seed = 7;
    cfg.eval_scales = {0.5, 1.0};
    cli::set_backbone(cfg, "resnet34");
    const auto again = cli::parse_config(cli::to_json(cfg).dump());
    CHECK(cli::to_json(again) == cli::to_json(cfg));
    CHECK(again.shelf == cfg.shelf);
  }
  SUBCASE("defaults") {
    const cli::ExperimentConfig cfg;
    CHECK(cfg.bench_repetitions == 100);
    CHECK(train::kDefaultRepetitions == 100);
    CHECK(cfg.train.momentum == 0.9);
    CHECK(cfg.train.weight_decay == 1e-4);
    CHECK(cli::parse_scales("0.5,0.75,1,1.25,1.5,1.75,2").size() == 7);
    CHECK_THROWS_AS(cli::parse_scales("1,-2"), ConfigError);
  }
  fs::remove_all(dir);
}

TEST_CASE("train, eval and checkpoint compatibility") {
  const auto dir = scratch("train");
  write(dir / "c.json", "{\"train\": {\"total_iter\": 12, \"eval_every\": 6, \"batch_size\": 2},"
                        " \"data\": {\"val_count\": 4}, \"out\": \"" + (dir / "run").string() + "\"}");
  const std::string config = (dir / "c.json").string();
  const auto t = run({"--config", config, "--json", "train"});
  REQUIRE(t.code == 0);
  const auto report = t.doc();
  CHECK(report["steps"] == 12);
  CHECK(fs::exists(dir / "run" / "checkpoint.shlf"));
  CHECK(fs::exists(dir / "run" / "arch.json"));

  std::istringstream trace(slurp(dir / "run" / "trace.jsonl"));
  std::string line, last;
  int lines = 0;
  while (std::getline(trace, line)) {
    last = line;
    ++lines;
  }
  CHECK(lines == 12);
  const double trace_miou = json::parse(last)["miou"].get<double>();
  CHECK(report["final_miou"].get<double>() == trace_miou);
  CHECK(report["arch_hash"] == run({"--config", config, "summarize", "--json"}).doc()["arch_hash"]);

  SUBCASE("eval on the same seed reproduces the final mIoU") {
    const auto e = run({"--config", config, "--json", "eval", "--checkpoint", (dir / "run" / "checkpoint.shlf").string()});
    REQUIRE(e.code == 0);
    CHECK(e.doc()["miou"].get<double>() == trace_miou);
    CHECK(e.doc()["iteration"] == 12);
  }
  SUBCASE("multi-scale protocol") {
    const auto e = run({"--config", config, "--json", "eval", "--checkpoint", (dir / "run" / "checkpoint.shlf").string(),
                        "--scales", "0.5,0.75,1,1.25,1.5,1.75,2", "--flip"});
    REQUIRE(e.code == 0);
    CHECK(e.doc()["scales"].size() == 7);
    CHECK(e.doc()["flip"] == true);
  }
  SUBCASE("training is deterministic") {
    const auto first = slurp(dir / "run" / "trace.jsonl");
    REQUIRE(run({"--config", config, "--out", (dir / "again").string(), "train"}).code == 0);
    CHECK(slurp(dir / "again" / "trace.jsonl") == first);
  }
  SUBCASE("a checkpoint for another architecture is a hard error") {
    write(dir / "wide.json", "{\"model\": {\"widths\": [16, 32, 64, 128]}, \"data\": {\"val_count\": 4}}");
    const auto e = run({"--config", (dir / "wide.json").string(), "eval", "--checkpoint",
                        (dir / "run" / "checkpoint.shlf").string()});
    CHECK(e.code == 2);
    CHECK(e.err.find("does not match") != std::string::npos);
  }
  SUBCASE("eval requires a checkpoint") {
    CHECK(run({"--config", config, "eval"}).code == 2);
    CHECK(run({"--config", config, "eval", "--checkpoint", (dir / "missing.shlf").string()}).code == 2);
  }
  fs::remove_all(dir);
}

TEST_CASE("dataset directories") {
  const auto dir = scratch("data");
  const auto r = run({"--out", (dir / "ds").string(), "--seed", "3", "dataset", "gen", "--count", "4", "--size", "32x32"});
  REQUIRE(r.code == 0);
  const auto loaded = train::load_dataset(dir / "ds");
  train::SynthConfig sc;
  sc.height = sc.width = 32;
  CHECK(loaded.labels == train::synth_batch(3, 0, 4, sc).labels);

  write(dir / "c.json", "{\"data\": {\"source\": \"directory\", \"directory\": \"" + (dir / "ds").string() +
                            "\"}, \"input\": {\"height\": 32, \"width\": 32},"
                            " \"train\": {\"total_iter\": 2, \"batch_size\": 2}, \"out\": \"" +
                            (dir / "run").string() + "\"}");
  CHECK(run({"--config", (dir / "c.json").string(), "train"}).code == 0);

  write(dir / "missing.json", "{\"data\": {\"source\": \"directory\", \"directory\": \"" + (dir / "nope").string() +
                                  "\"}, \"out\": \"" + (dir / "run2").string() + "\"}");
  const auto missing = run({"--config", (dir / "missing.json").string(), "train"});
  CHECK(missing.code == 1);
  CHECK(missing.err.find("does not exist") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("bench and usage") {
  const auto b = run({"--json", "bench", "--repetitions", "3"});
  REQUIRE(b.code == 0);
  CHECK(b.doc()["repetitions"] == 3);
  CHECK(b.doc()["mean_s"].get<double>() >= b.doc()["min_s"].get<double>());
  CHECK(b.doc().contains("arch_hash"));
  CHECK(run({}).code == 2);
  CHECK(run({"frobnicate"}).code == 2);
  CHECK(run({"--help"}).code == 0);
}
