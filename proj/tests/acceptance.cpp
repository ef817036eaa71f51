// Acceptance gate. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails. Every tolerance lives in `tol` below.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "shelfnet/analysis/cost.hpp"
#include "shelfnet/analysis/paths.hpp"
#include "shelfnet/arch/builders.hpp"
#include "shelfnet/arch/network.hpp"
#include "shelfnet/train/checkpoint.hpp"
#include "shelfnet/train/trainer.hpp"
#include "test_support.hpp"

using namespace shelfnet;
using namespace shelfnet::arch;
using namespace shelfnet::analysis;
namespace fs = std::filesystem;

namespace tol {
constexpr double path_seconds = 1.0;
constexpr double backbone_params_rel = 0.01;
constexpr double shelf_params_rel = 0.05;
constexpr double macs_rel = 0.10;
constexpr double fd_rtol = 1e-3;
constexpr double fd_atol = 1e-5;
constexpr double adjoint_abs = 1e-10;
constexpr int adjoint_geometries = 24;
constexpr double shared_grad_abs = 1e-10;
constexpr double overfit_loss = 0.05;
constexpr std::int64_t overfit_steps = 300;
constexpr double heldout_miou = 0.85;
constexpr std::int64_t heldout_steps = 2000;
constexpr double training_seconds = 600.0;
}  // namespace tol

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = true;
  std::string detail;

  void check(bool ok, const std::string& what) {
    if (!ok) pass = false;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [x]");
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

bool within(double value, double target, double rel) { return std::abs(value - target) <= rel * target; }

BlockGraph shelf(Variant v, const std::string& backbone) {
  ShelfSpec s;
  s.variant = v;
  s.backbone = backbone_preset(backbone);
  return build_shelf(s);
}

// ---------------------------------------------------------------------------

Outcome path_counts() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto g = shelf(Variant::shelfnet, "resnet18");
  const auto counted = enumerate_paths(g, "A0", "A4");
  const auto listed = enumerate_paths(g, "A0", "A4", PathMode::list);
  const auto seg = enumerate_paths(shelf(Variant::segnet, "resnet18"), "A0", "A2");
  const double dt = seconds_since(t0);
  o.check(counted.path_count == 29, fmt("shelfnet A0->A4 = %llu", (unsigned long long)counted.path_count));
  o.check(seg.path_count == 4, fmt("segnet A0->A2 = %llu", (unsigned long long)seg.path_count));
  const std::vector<Path> examples{
      {"A0", "A1", "A2", "A3", "A4"},
      {"A0", "A1", "A2", "A3", "B3", "C3", "C4", "B4", "A4"},
      {"A0", "B0", "B1", "B2", "A2", "A3", "A4"},
      {"A0", "B0", "C0", "D0", "D1", "D2", "C2", "B2", "B3", "C3", "C4", "B4", "A4"},
  };
  int found = 0;
  for (const auto& p : examples)
    if (std::find(listed.paths.begin(), listed.paths.end(), p) != listed.paths.end()) ++found;
  o.check(found == 4 && listed.paths.size() == 29, fmt("example paths listed %d/4", found));
  o.check(dt < tol::path_seconds, fmt("%.4f s", dt));
  return o;
}

Outcome deepest_paths() {
  Outcome o;
  const auto t0 = Clock::now();
  const auto s = longest_path(shelf(Variant::shelfnet_simplified, "resnet18"), "A1", "A4");
  const auto g = longest_path(shelf(Variant::gridnet_simplified, "resnet18"), "A1", "A4");
  const double dt = seconds_since(t0);
  o.check(s.longest_path_length == 16, fmt("shelfnet_simplified = %zu", (std::size_t)s.longest_path_length));
  o.check(g.longest_path_length == 10, fmt("gridnet_simplified = %zu", (std::size_t)g.longest_path_length));
  o.check(dt < tol::path_seconds, fmt("%.4f s", dt));
  return o;
}

Outcome parameter_counts() {
  Outcome o;
  for (const auto& row : backbone_table({"resnet18", "resnet50", "resnet101"})) {
    if (row.dilated) continue;
    const double m = row.params / 1e6;
    if (row.backbone == "resnet18") o.check(within(m, 11.7, tol::backbone_params_rel), fmt("resnet18 %.2fM", m));
    if (row.backbone == "resnet101") o.check(within(m, 44.5, tol::backbone_params_rel), fmt("resnet101 %.2fM", m));
    if (row.backbone == "resnet50") o.detail += fmt("; resnet50 %.2fM (35.6M reference exempt)", m);
  }
  ShelfSpec s;
  s.backbone = backbone_preset("resnet50");
  const auto shared_g = build_shelf(s);
  s.shared_weights = false;
  const auto twin_g = build_shelf(s);
  const std::int64_t shared = count_params(shared_g).total_params;
  const std::int64_t twin = count_params(twin_g).total_params;
  o.check(within(shared / 1e6, 38.7, tol::shelf_params_rel), fmt("ShelfNet-R50 %.2fM", shared / 1e6));
  o.check(within(twin / 1e6, 45.8, tol::shelf_params_rel), fmt("unshared %.2fM", twin / 1e6));
  std::int64_t sum_c2 = 0;
  for (const auto& b : shared_g.blocks())
    if (b.kind == BlockKind::s_block) sum_c2 += b.channels * b.channels;
  o.check(twin - shared == 9 * sum_c2, fmt("delta %lld vs 9*sum(c^2) %lld", (long long)(twin - shared),
                                           (long long)(9 * sum_c2)));
  return o;
}

Outcome flop_counts() {
  Outcome o;
  struct Target {
    const char* name;
    bool dilated;
    double gmacs;
  };
  const Target targets[] = {{"resnet18", false, 9.5},  {"resnet18", true, 48.2},  {"resnet50", false, 21.4},
                            {"resnet50", true, 99.8},  {"resnet101", false, 40.8}, {"resnet101", true, 177.5}};
  const auto rows = backbone_table({"resnet18", "resnet50", "resnet101"}, 512, 512);
  for (const auto& t : targets) {
    const auto it = std::find_if(rows.begin(), rows.end(),
                                 [&](const BackboneRow& r) { return r.backbone == t.name && r.dilated == t.dilated; });
    if (it == rows.end()) {
      o.check(false, std::string(t.name) + " missing");
      continue;
    }
    const double g = it->macs / 1e9;
    o.check(within(g, t.gmacs, tol::macs_rel), fmt("%s%s %.2fG", t.dilated ? "dilated " : "", t.name, g));
  }
  ShelfSpec s;
  s.backbone = backbone_preset("resnet50");
  const auto full = count_flops(build_shelf(s), 512, 512).macs_in_columns(2, 4);
  s.widths = {{Level::A, 16}, {Level::B, 32}, {Level::C, 64}, {Level::D, 128}};
  const auto quarter = count_flops(build_shelf(s), 512, 512).macs_in_columns(2, 4);
  o.check(full == 16 * quarter, fmt("shelf MACs %lld = 16 x %lld", (long long)full, (long long)quarter));
  return o;
}

// ---------------------------------------------------------------------------

using T = Tensor<double>;
using testing::random_tensor;

T probe(const T& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return dot(y, random_tensor(y.shape(), rng));
}

Outcome autodiff() {
  Outcome o;
  std::mt19937_64 rng(2024);
  int passed = 0, total = 0;
  double worst = 0.0;
  std::string failed;
  auto fd = [&](const char* name, std::vector<T> leaves, const std::function<T()>& f) {
    const auto r = testing::finite_difference_check(std::move(leaves), f, tol::fd_rtol, tol::fd_atol);
    ++total;
    worst = std::max(worst, r.max_abs_err);
    if (r.ok)
      ++passed;
    else
      failed += std::string(" ") + name;
  };

  T x = random_tensor({2, 3, 6, 6}, rng, -1, 1, true);
  T w = random_tensor({4, 3, 3, 3}, rng, -1, 1, true);
  fd("conv2d", {x, w}, [&] { return probe(conv2d(x, w, 2, 1, 1), 1); });
  fd("conv2d_dilated", {x, w}, [&] { return probe(conv2d(x, w, 1, 2, 2), 2); });
  T wt = random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
  fd("conv_transpose2d", {x, wt}, [&] { return probe(conv_transpose2d(x, wt, 2, 1, 1), 3); });
  T g = random_tensor({1, 3, 1, 1}, rng, 0.5, 1.5, true);
  T b = random_tensor({1, 3, 1, 1}, rng, -1, 1, true);
  BatchNormState<double> st(3);
  fd("batch_norm_train", {x, g, b}, [&] { return probe(batch_norm(x, g, b, st, Mode::train), 4); });
  fd("batch_norm_eval", {x, g, b}, [&] { return probe(batch_norm(x, g, b, st, Mode::eval), 5); });
  // Values kept at least 0.1 away from the relu kink.
  T k = random_tensor({2, 2, 3, 3}, rng, 0.1, 1, true);
  auto kv = k.mutable_values();
  for (std::size_t i = 0; i < kv.size(); i += 2) kv[i] = -kv[i];
  fd("relu", {k}, [&] { return probe(relu(k), 6); });
  fd("sigmoid", {x}, [&] { return probe(sigmoid(x), 7); });
  fd("dropout", {x}, [&] { return probe(dropout(x, 0.3, Mode::train, 11), 8); });
  T small = random_tensor({1, 2, 3, 4}, rng, -1, 1, true);
  fd("bilinear_resize", {small}, [&] { return probe(bilinear_resize(small, 5, 7), 9); });
  fd("bilinear_upsample", {small}, [&] { return probe(bilinear_upsample(small, 2), 10); });
  fd("max_pool2d", {x}, [&] { return probe(max_pool2d(x, 3, 2, 1), 11); });
  fd("global_avg_pool", {x}, [&] { return probe(global_avg_pool(x), 12); });
  T y = random_tensor(x.shape(), rng, -1, 1, true);
  fd("add", {x, y}, [&] { return probe(add(x, y), 13); });
  T gate = random_tensor({2, 3, 1, 1}, rng, -1, 1, true);
  fd("channel_scale", {x, gate}, [&] { return probe(channel_scale(x, gate), 14); });
  fd("dot", {x, y}, [&] { return dot(x, y); });
  fd("sum", {x}, [&] { return sum(x); });
  const std::vector<std::int64_t> idx{0, 5, 7, 7, 40, 100};
  fd("select_mean", {x}, [&] { return select_mean(x, idx); });
  T z = random_tensor({2, 4, 2, 3}, rng, -3, 3, true);
  const std::vector<std::int32_t> labels{0, 1, 2, 3, kIgnoreIndex, 1, 2, 2, 0, 3, 1, kIgnoreIndex};
  fd("softmax_cross_entropy", {z}, [&] { return softmax_cross_entropy(z, labels).loss; });
  o.check(passed == total, fmt("finite differences %d/%d ops, max err %.2e", passed, total, worst) + failed);

  // <conv(x, W), y> == <x, conv_transpose(y, W)> with the same kernel memory.
  int geometries = 0;
  double adj = 0.0;
  std::uniform_int_distribution<int> pick(0, 1 << 20);
  while (geometries < tol::adjoint_geometries) {
    const int n = 1 + pick(rng) % 2, ci = 1 + pick(rng) % 4, co = 1 + pick(rng) % 4;
    const int kk = 1 + pick(rng) % 5, stride = 1 + pick(rng) % 3, pad = pick(rng) % kk;
    const int h = 5 + pick(rng) % 8, wd = 5 + pick(rng) % 8;
    const int oh = (h + 2 * pad - kk) / stride + 1, ow = (wd + 2 * pad - kk) / stride + 1;
    if (oh < 1 || ow < 1) continue;
    const int op_h = h - ((oh - 1) * stride - 2 * pad + kk), op_w = wd - ((ow - 1) * stride - 2 * pad + kk);
    if (op_h != op_w || op_h < 0 || op_h >= stride) continue;
    const T xs = random_tensor({n, ci, h, wd}, rng);
    const T ws = random_tensor({co, ci, kk, kk}, rng);
    const T fwd = conv2d(xs, ws, stride, pad);
    const T ys = random_tensor(fwd.shape(), rng);
    const T back = conv_transpose2d(ys, ws, stride, pad, op_h);
    if (back.shape() != xs.shape()) {
      o.check(false, "adjoint shape mismatch");
      break;
    }
    adj = std::max(adj, std::abs(testing::inner(fwd.values(), ys.values()) - testing::inner(xs.values(), back.values())));
    ++geometries;
  }
  o.check(adj <= tol::adjoint_abs, fmt("adjointness max |diff| %.2e over %d geometries", adj, geometries));

  // Shared kernel gradient against an unshared twin holding the same values.
  ShelfSpec spec = mini_shelf_spec();
  ShelfSpec twin = spec;
  twin.shared_weights = false;
  ExecutableNet<double> a(build_shelf(spec), 21), bnet(build_shelf(twin), 21);
  for (const auto& p : bnet.parameters().registrations()) {
    auto dst = p.tensor;
    const auto src = a.parameters().find(p.id).tensor.values();
    std::copy(src.begin(), src.end(), dst.mutable_values().begin());
  }
  const T image = random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
  const T ya = a.forward(image, Mode::train), yb = bnet.forward(image, Mode::train);
  const T r = random_tensor(ya.shape(), rng);
  backward(dot(ya, r));
  backward(dot(yb, r));
  double worst_share = 0.0;
  int blocks = 0;
  for (const auto& blk : a.graph().blocks()) {
    if (blk.kind != BlockKind::s_block) continue;
    const std::string nm = blk.name();
    const auto gs = a.parameters().find(nm + ".conv1.weight").tensor.grad();
    const auto g1 = bnet.parameters().find(nm + ".conv1.weight").tensor.grad();
    const auto g2 = bnet.parameters().find(nm + ".conv2.weight").tensor.grad();
    for (std::size_t i = 0; i < gs.size(); ++i) worst_share = std::max(worst_share, std::abs(gs[i] - (g1[i] + g2[i])));
    ++blocks;
  }
  o.check(blocks > 0 && worst_share <= tol::shared_grad_abs,
          fmt("shared kernel vs twin sum max |diff| %.2e over %d S-blocks", worst_share, blocks));
  return o;
}

// ---------------------------------------------------------------------------

Outcome toy_training() {
  Outcome o;
  const auto t0 = Clock::now();
  {
    // At 64x64 the stride-4 head cannot resolve shape boundaries finely
    // enough to go below ~0.07; 128x128 gives it the room.
    ExecutableNet<float> net(build_shelf(mini_shelf_spec()), 0);
    SgdOptimizer<float> opt(net.parameters());
    train::TrainConfig cfg;
    cfg.schedule = {0.3, tol::overfit_steps, 0.9};
    const auto trace = train::train_loop(net, opt, train::fixed_source(train::synth_batch(0, 0, 4, {128, 128})), cfg,
                                         0, tol::overfit_steps);
    const double last = trace.back().loss;
    o.check(last < tol::overfit_loss, fmt("overfit 4 images: loss %.4f after %lld steps", last,
                                          (long long)trace.size()));
  }
  {
    ExecutableNet<float> net(build_shelf(mini_shelf_spec()), 0);
    SgdOptimizer<float> opt(net.parameters());
    train::TrainConfig cfg;
    cfg.schedule = {0.05, tol::heldout_steps, 0.9};
    cfg.eval_every = 500;
    const train::SynthConfig sc;
    const auto held = train::synth_batch(0, train::kHeldOutFirst, 64, sc);
    train::TrainHooks hooks;
    hooks.validate = [&] { return train::evaluate(net, held, sc.num_classes).miou(); };
    const auto trace =
        train::train_loop(net, opt, train::synthetic_source(0, sc, 8), cfg, 0, tol::heldout_steps, hooks);
    const double miou = trace.back().miou.value_or(0.0);
    o.check(miou >= tol::heldout_miou, fmt("held-out mIoU %.4f after %lld steps", miou, (long long)trace.size()));
  }
  const double dt = seconds_since(t0);
  o.check(dt <= tol::training_seconds, fmt("%.1f s", dt));

  bool exact = true;
  for (const train::LrSchedule s : {train::LrSchedule{0.05, 2000, 0.9}, train::LrSchedule{0.01, 90000, 0.9},
                                    train::LrSchedule{0.3, 300, 1.7}}) {
    exact = exact && train::poly_lr(s, 0) == s.base_lr && train::poly_lr(s, s.total_iter) == 0.0;
  }
  o.check(exact, "poly endpoints exact");
  return o;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

Outcome serialization() {
  Outcome o;
  const fs::path dir = fs::temp_directory_path() / "shelfnet_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);

  const auto spec = mini_shelf_spec();
  ExecutableNet<float> net(build_shelf(spec), 3);
  SgdOptimizer<float> opt(net.parameters());
  train::TrainConfig cfg;
  cfg.schedule = {0.05, 10, 0.9};
  train::train_loop(net, opt, train::synthetic_source(1, {}, 2), cfg, 0, 5);
  train::save_checkpoint(dir / "ck.shlf", train::capture(net, opt, 5));

  ExecutableNet<float> fresh(build_shelf(spec), 77);
  SgdOptimizer<float> fresh_opt(fresh.parameters());
  train::restore(train::load_checkpoint(dir / "ck.shlf"), fresh, fresh_opt);
  const auto images = train::synth_batch(9, 0, 2, {}).image_tensor<float>();
  bool same = true;
  for (Mode m : {Mode::eval, Mode::train}) {
    const auto p = net.forward(images, m), q = fresh.forward(images, m);
    same = same && std::equal(p.values().begin(), p.values().end(), q.values().begin(), q.values().end());
  }
  o.check(same, "checkpoint forward outputs bitwise equal (eval and train)");

  bool round = true;
  std::ostringstream out, err;
  for (const char* v : {"shelfnet", "segnet", "shelfnet_lw", "wnet"}) {
    const auto a = (dir / (std::string(v) + "_a.json")).string(), b = (dir / (std::string(v) + "_b.json")).string();
    round = round && cli::run({"summarize", "--backbone", "resnet18", "--variant", v, "--emit-arch", a}, out, err) == 0;
    round = round && cli::run({"summarize", "--arch", a, "--emit-arch", b}, out, err) == 0;
    round = round && !slurp(a).empty() && slurp(a) == slurp(b);
  }
  o.check(round, "architecture JSON round-trips through the CLI (4 variants)");
  fs::remove_all(dir);
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Outcome (*)()>> criteria{
      {"path_counts", path_counts},     {"deepest_paths", deepest_paths}, {"parameter_counts", parameter_counts},
      {"flop_counts", flop_counts},     {"autodiff", autodiff},           {"toy_training", toy_training},
      {"serialization", serialization},
  };
  int failures = 0;
  for (const auto& [name, fn] : criteria) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failures;
    std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", name, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
