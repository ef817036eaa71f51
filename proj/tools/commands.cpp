#include "commands.hpp"

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "config.hpp"
#include "shelfnet/analysis/cost.hpp"
#include "shelfnet/analysis/paths.hpp"
#include "shelfnet/arch/builders.hpp"
#include "shelfnet/arch/network.hpp"
#include "shelfnet/arch/serialize.hpp"
#include "shelfnet/errors.hpp"
#include "shelfnet/train/bench.hpp"
#include "shelfnet/train/checkpoint.hpp"
#include "shelfnet/train/inference.hpp"

namespace shelfnet::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool json = false;
};

struct Context {
  const Globals& g;
  std::ostream& out;
  std::ostream& err;

  ExperimentConfig config() const {
    ExperimentConfig cfg = g.config.empty() ? ExperimentConfig{} : load_config(g.config);
    if (g.seed) cfg.seed = *g.seed;
    if (g.out) cfg.out = *g.out;
    return cfg;
  }

  void emit(const json& j) const { out << j.dump(2) << "\n"; }
};

std::string read_file(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw NotFoundError("cannot open " + p.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw InputError("cannot write " + p.string());
  f << text;
}

arch::BlockGraph load_arch(const fs::path& p) {
  json doc;
  try {
    doc = json::parse(read_file(p));
  } catch (const json::parse_error& e) {
    throw ConfigError(p.string() + " is not valid JSON: " + e.what());
  }
  return arch::graph_from_json(doc);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Validation data: the held-out synthetic range or a directory.
std::optional<train::SampleBatch> validation_set(const ExperimentConfig& cfg) {
  if (!cfg.val_dir.empty()) return train::load_dataset(cfg.val_dir);
  if (cfg.data_source != "synthetic") return std::nullopt;
  train::SynthConfig sc{cfg.input_h, cfg.input_w, cfg.shelf.num_classes};
  return train::synth_batch(cfg.seed, train::kHeldOutFirst, cfg.val_count, sc);
}

// ---- summarize ------------------------------------------------------------

struct SummarizeOpts {
  std::string variant, backbone, input, arch_in, arch_out;
  bool backbone_table = false;
};

int cmd_summarize(const Context& ctx, const SummarizeOpts& o) {
  if (o.backbone_table) {
    const auto rows = analysis::backbone_table({"resnet18", "resnet34", "resnet50", "resnet101"});
    if (ctx.g.json) {
      json arr = json::array();
      for (const auto& r : rows) arr.push_back({{"backbone", r.backbone}, {"dilated", r.dilated}, {"params", r.params}, {"macs", r.macs}});
      ctx.emit({{"input", {analysis::kTableInput, analysis::kTableInput}}, {"backbones", arr}});
    } else {
      ctx.out << analysis::format_backbone_table(rows, analysis::kTableInput, analysis::kTableInput);
    }
    return 0;
  }

  ExperimentConfig cfg = ctx.config();
  arch::BlockGraph g;
  if (!o.arch_in.empty()) {
    g = load_arch(o.arch_in);
  } else {
    if (!o.backbone.empty()) set_backbone(cfg, o.backbone);
    if (!o.variant.empty()) cfg.shelf.variant = arch::variant_from_string(o.variant);
    g = arch::build_shelf(cfg.shelf);
  }
  auto [h, w] = o.input.empty() ? std::pair{cfg.input_h, cfg.input_w} : parse_size(o.input);
  const auto cost = analysis::count_flops(g, h, w);
  const std::string hash = arch::arch_hash(g);
  if (!o.arch_out.empty()) write_file(o.arch_out, arch::to_json(g).dump(2) + "\n");

  std::map<std::string, int> kinds;
  int shelf_blocks = 0;
  for (const auto& b : g.blocks()) {
    ++kinds[arch::to_string(b.kind)];
    shelf_blocks += b.id.column >= 1 && b.kind != arch::BlockKind::head;
  }

  if (ctx.g.json) {
    json blocks = json::array();
    for (const auto& b : g.blocks())
      blocks.push_back({{"name", b.id.str()},
                        {"kind", arch::to_string(b.kind)},
                        {"level", std::string(1, arch::level_letter(b.id.level))},
                        {"column", b.id.column},
                        {"channels", b.channels},
                        {"out_stride", b.out_stride}});
    ctx.emit({{"arch_hash", hash},
              {"variant", arch::to_string(g.spec.variant)},
              {"backbone", g.spec.backbone.name},
              {"blocks", blocks},
              {"block_kinds", kinds},
              {"shelf_blocks", shelf_blocks},
              {"edges", g.edges().size()},
              {"shared_kernel_savings", analysis::shared_kernel_savings(g)},
              {"cost", analysis::to_json(cost)}});
    return 0;
  }
  ctx.out << "architecture " << arch::to_string(g.spec.variant) << "/" << g.spec.backbone.name << "  hash " << hash
          << "\n\n";
  ctx.out << analysis::format_block_table(g, cost) << "\n";
  ctx.out << "blocks:";
  for (const auto& [k, n] : kinds) ctx.out << " " << k << "=" << n;
  ctx.out << "\nshelf blocks (columns 1+): " << shelf_blocks << "\n";
  ctx.out << "parameters " << cost.total_params << " (" << analysis::human_count(cost.total_params) << "), MACs "
          << cost.total_macs << " (" << analysis::human_count(cost.total_macs) << ") at " << h << "x" << w << "\n";
  if (!o.arch_out.empty()) ctx.out << "architecture written to " << o.arch_out << "\n";
  return 0;
}

// ---- paths ----------------------------------------------------------------

struct PathsOpts {
  std::string variant, source, sink, arch_in;
  bool list = false, longest = false;
  std::uint64_t cap = 1000000;
};

int cmd_paths(const Context& ctx, const PathsOpts& o) {
  arch::BlockGraph g;
  if (!o.arch_in.empty()) {
    g = load_arch(o.arch_in);
  } else {
    ExperimentConfig cfg = ctx.config();
    if (!o.variant.empty()) cfg.shelf.variant = arch::variant_from_string(o.variant);
    g = arch::build_shelf(cfg.shelf);
  }
  const std::string src = o.source.empty() ? g.source : o.source;
  const std::string dst = o.sink.empty() ? g.sink : o.sink;
  auto rep = analysis::enumerate_paths(g, src, dst, o.list ? analysis::PathMode::list : analysis::PathMode::count, o.cap);
  if (o.longest) {
    const auto lp = analysis::longest_path(g, src, dst);
    rep.longest_path_length = lp.longest_path_length;
    rep.longest_path = lp.longest_path;
  }
  if (ctx.g.json) {
    json j = analysis::to_json(rep);
    j["arch_hash"] = arch::arch_hash(g);
    j["variant"] = arch::to_string(g.spec.variant);
    ctx.emit(j);
    return 0;
  }
  ctx.out << "variant " << arch::to_string(g.spec.variant) << "  hash " << arch::arch_hash(g) << "\n";
  ctx.out << "paths " << src << " -> " << dst << ": " << rep.path_count << "\n";
  if (o.list)
    for (const auto& p : rep.paths) ctx.out << "  " << analysis::format_path(p) << "\n";
  if (o.longest)
    ctx.out << "longest path: " << rep.longest_path_length << " blocks: " << analysis::format_path(rep.longest_path)
            << "\n";
  return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainOpts {
  std::optional<std::int64_t> steps;
};

int cmd_train(const Context& ctx, const TrainOpts& o) {
  ExperimentConfig cfg = ctx.config();
  if (o.steps) cfg.train.schedule.total_iter = *o.steps;
  validate(cfg);
  const fs::path dir = cfg.out;
  fs::create_directories(dir);

  const auto g = arch::build_shelf(cfg.shelf);
  const std::string hash = arch::arch_hash(g);
  write_file(dir / "config.json", to_json(cfg).dump(2) + "\n");
  write_file(dir / "arch.json", arch::to_json(g).dump(2) + "\n");

  arch::ExecutableNet<float> net(g, cfg.seed);
  SgdOptimizer<float> opt(net.parameters());

  std::optional<train::AugmentPolicy> policy;
  if (cfg.augment) policy = train::recipe_policy(cfg.input_h, cfg.input_w);
  train::BatchSource source;
  if (cfg.data_source == "synthetic") {
    source = train::synthetic_source(cfg.seed, {cfg.input_h, cfg.input_w, cfg.shelf.num_classes}, cfg.batch_size,
                                     policy);
  } else {
    auto data = train::load_dataset(cfg.data_dir);
    data.validate(cfg.shelf.num_classes);
    source = train::dataset_source(std::move(data), cfg.batch_size, cfg.seed, policy);
  }
  const auto val = validation_set(cfg);
  if (val) val->validate(cfg.shelf.num_classes);

  std::ofstream trace(dir / "trace.jsonl");
  if (!trace) throw InputError("cannot write " + (dir / "trace.jsonl").string());
  train::TrainHooks hooks;
  hooks.trace = &trace;
  if (val) hooks.validate = [&] { return train::evaluate(net, *val, cfg.shelf.num_classes).miou(); };
  const fs::path ckpt = dir / "checkpoint.shlf";
  hooks.on_step = [&](std::int64_t next) {
    if (cfg.checkpoint_every > 0 && next % cfg.checkpoint_every == 0 && next < cfg.train.schedule.total_iter)
      train::save_checkpoint(ckpt, train::capture(net, opt, static_cast<std::uint64_t>(next)));
  };

  const auto t0 = std::chrono::steady_clock::now();
  const auto records = train::train_loop(net, opt, source, cfg.train, 0, cfg.train.schedule.total_iter, hooks);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  train::save_checkpoint(ckpt, train::capture(net, opt, static_cast<std::uint64_t>(cfg.train.schedule.total_iter)));

  json report = {{"arch_hash", hash},
                 {"steps", cfg.train.schedule.total_iter},
                 {"final_loss", records.empty() ? 0.0 : records.back().loss},
                 {"seconds", seconds},
                 {"checkpoint", ckpt.string()},
                 {"trace", (dir / "trace.jsonl").string()}};
  if (!records.empty() && records.back().miou) report["final_miou"] = *records.back().miou;
  write_file(dir / "report.json", report.dump(2) + "\n");
  if (ctx.g.json) {
    ctx.emit(report);
  } else {
    ctx.out << "trained " << cfg.train.schedule.total_iter << " steps in " << fmt("%.1f", seconds) << " s  hash "
            << hash << "\n";
    ctx.out << "final loss " << fmt("%.4f", report["final_loss"].get<double>());
    if (report.contains("final_miou")) ctx.out << "  held-out mIoU " << fmt("%.4f", report["final_miou"].get<double>());
    ctx.out << "\ncheckpoint " << ckpt.string() << "\n";
  }
  return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalOpts {
  std::string checkpoint, scales;
  bool flip = false;
};

int cmd_eval(const Context& ctx, const EvalOpts& o) {
  ExperimentConfig cfg = ctx.config();
  if (!o.scales.empty()) cfg.eval_scales = parse_scales(o.scales);
  if (o.flip) cfg.eval_flip = true;
  const auto g = arch::build_shelf(cfg.shelf);
  arch::ExecutableNet<float> net(g, cfg.seed);
  SgdOptimizer<float> opt(net.parameters());
  const auto ck = train::load_checkpoint(o.checkpoint);
  train::restore(ck, net, opt);

  const auto val = validation_set(cfg);
  if (!val) throw NotFoundError("no evaluation data: set data.val_directory");
  const auto cm = train::evaluate(net, *val, cfg.shelf.num_classes, cfg.eval_scales, cfg.eval_flip);
  const auto iou = cm.class_iou();
  if (ctx.g.json) {
    json classes = json::array();
    for (double v : iou) classes.push_back(v < 0 ? json(nullptr) : json(v));
    ctx.emit({{"arch_hash", arch::arch_hash(g)},
              {"checkpoint", o.checkpoint},
              {"iteration", ck.iteration},
              {"scales", cfg.eval_scales},
              {"flip", cfg.eval_flip},
              {"images", val->n},
              {"class_iou", classes},
              {"miou", cm.miou()},
              {"pixel_accuracy", cm.pixel_accuracy()}});
    return 0;
  }
  ctx.out << "checkpoint " << o.checkpoint << " (iteration " << ck.iteration << ")  hash " << arch::arch_hash(g) << "\n";
  ctx.out << "scales";
  for (double s : cfg.eval_scales) ctx.out << " " << s;
  ctx.out << (cfg.eval_flip ? "  +flip" : "") << "  images " << val->n << "\n";
  for (std::size_t k = 0; k < iou.size(); ++k)
    ctx.out << "  class " << k << "  IoU " << (iou[k] < 0 ? std::string("n/a") : fmt("%.4f", iou[k])) << "\n";
  ctx.out << "mIoU " << fmt("%.4f", cm.miou()) << "  pixel accuracy " << fmt("%.4f", cm.pixel_accuracy()) << "\n";
  return 0;
}

// ---- bench ----------------------------------------------------------------

struct BenchOpts {
  std::string input;
  std::optional<int> repetitions;
};

int cmd_bench(const Context& ctx, const BenchOpts& o) {
  ExperimentConfig cfg = ctx.config();
  auto [h, w] = o.input.empty() ? std::pair{cfg.input_h, cfg.input_w} : parse_size(o.input);
  const int reps = o.repetitions ? *o.repetitions : cfg.bench_repetitions;
  const auto g = arch::build_shelf(cfg.shelf);
  arch::ExecutableNet<float> net(g, cfg.seed);
  const auto s = train::bench_forward(net, h, w, reps);
  if (ctx.g.json) {
    json j = train::to_json(s);
    j["arch_hash"] = arch::arch_hash(g);
    j["input"] = {h, w};
    ctx.emit(j);
    return 0;
  }
  ctx.out << "forward " << h << "x" << w << "  hash " << arch::arch_hash(g) << "  repetitions " << s.repetitions
          << "\n";
  ctx.out << "mean " << fmt("%.3f", s.mean * 1e3) << " ms  median " << fmt("%.3f", s.median * 1e3) << " ms  stddev "
          << fmt("%.3f", s.stddev * 1e3) << " ms  min " << fmt("%.3f", s.min * 1e3) << " ms  max "
          << fmt("%.3f", s.max * 1e3) << " ms\n";
  ctx.out << "MACs " << analysis::human_count(s.macs) << " per forward, " << fmt("%.3g", s.macs_per_second)
          << " MACs/s\n";
  return 0;
}

// ---- dataset gen ----------------------------------------------------------

struct DatasetOpts {
  std::int64_t count = 16, first = 0;
  std::string size;
  std::optional<int> classes;
  bool no_noise = false;
};

int cmd_dataset_gen(const Context& ctx, const DatasetOpts& o) {
  ExperimentConfig cfg = ctx.config();
  if (!ctx.g.out) throw ConfigError("dataset gen needs --out <dir>");
  auto [h, w] = o.size.empty() ? std::pair{cfg.input_h, cfg.input_w} : parse_size(o.size);
  train::SynthConfig sc{h, w, o.classes ? *o.classes : cfg.shelf.num_classes};
  sc.noise = !o.no_noise;
  if (o.count < 1) throw ConfigError("--count must be at least 1");
  const auto batch = train::synth_batch(cfg.seed, o.first, o.count, sc);
  train::write_dataset(cfg.out, batch);
  if (ctx.g.json)
    ctx.emit({{"directory", cfg.out}, {"images", batch.n}, {"height", h}, {"width", w}, {"seed", cfg.seed}});
  else
    ctx.out << "wrote " << batch.n << " image/label pairs (" << h << "x" << w << ") to " << cfg.out << "\n";
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"ShelfNet workbench: architectures, cost and path reports, toy training"};
  app.name("shelfnet");
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "Experiment config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for weights and data");
  app.add_flag("--json", g.json, "Machine-readable output");
  app.add_option("--out", g.out, "Output directory");

  SummarizeOpts so;
  auto* sum = app.add_subcommand("summarize", "Block table with parameter and MAC totals");
  sum->add_option("--variant", so.variant, "Architecture variant");
  sum->add_option("--backbone", so.backbone, "Backbone preset");
  sum->add_option("--input", so.input, "Input size HxW for MAC counts");
  sum->add_option("--arch", so.arch_in, "Read the architecture from a JSON file")->check(CLI::ExistingFile);
  sum->add_option("--emit-arch", so.arch_out, "Write the architecture JSON to a file");
  sum->add_flag("--backbone-table", so.backbone_table, "ResNet parameter/MAC table at 512x512");

  PathsOpts po;
  auto* paths = app.add_subcommand("paths", "Count, list or find the longest source-to-sink paths");
  paths->add_option("--variant", po.variant, "Architecture variant");
  paths->add_option("--source", po.source, "Source block (default: graph source)");
  paths->add_option("--sink", po.sink, "Sink block (default: graph sink)");
  paths->add_option("--arch", po.arch_in, "Read the architecture from a JSON file")->check(CLI::ExistingFile);
  paths->add_flag("--list", po.list, "List every path");
  paths->add_flag("--longest", po.longest, "Report the longest path");
  paths->add_option("--cap", po.cap, "Maximum number of listed paths");

  TrainOpts to;
  auto* trn = app.add_subcommand("train", "Train on synthetic shapes or a dataset directory");
  trn->add_option("--steps", to.steps, "Override train.total_iter");

  EvalOpts eo;
  auto* ev = app.add_subcommand("eval", "Per-class IoU and mIoU of a checkpoint");
  ev->add_option("--checkpoint", eo.checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ev->add_option("--scales", eo.scales, "Comma-separated inference scales, e.g. 0.5,0.75,1,1.25,1.5,1.75,2");
  ev->add_flag("--flip", eo.flip, "Average with horizontally flipped inputs");

  BenchOpts bo;
  auto* bench = app.add_subcommand("bench", "Forward latency statistics");
  bench->add_option("--input", bo.input, "Input size HxW");
  bench->add_option("--repetitions", bo.repetitions, "Timed forwards (default 100)");

  DatasetOpts dopt;
  auto* ds = app.add_subcommand("dataset", "Dataset utilities");
  ds->require_subcommand(1);
  auto* gen = ds->add_subcommand("gen", "Write synthetic PPM/PGM pairs to --out");
  gen->add_option("--count", dopt.count, "Number of images");
  gen->add_option("--first", dopt.first, "Index of the first sample in the stream");
  gen->add_option("--size", dopt.size, "Image size HxW");
  gen->add_option("--classes", dopt.classes, "Number of classes (2 to 4)");
  gen->add_flag("--no-noise", dopt.no_noise, "Flat colors and plain background");

  for (auto* s : {sum, paths, trn, ev, bench, ds, gen}) s->fallthrough();

  std::vector<const char*> argv{"shelfnet"};
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  const Context ctx{g, out, err};
  try {
    if (sum->parsed()) return cmd_summarize(ctx, so);
    if (paths->parsed()) return cmd_paths(ctx, po);
    if (trn->parsed()) return cmd_train(ctx, to);
    if (ev->parsed()) return cmd_eval(ctx, eo);
    if (bench->parsed()) return cmd_bench(ctx, bo);
    if (gen->parsed()) return cmd_dataset_gen(ctx, dopt);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace shelfnet::cli
