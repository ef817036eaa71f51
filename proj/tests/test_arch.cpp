#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "shelfnet/analysis/cost.hpp"
#include "shelfnet/arch/builders.hpp"
#include "shelfnet/arch/network.hpp"
#include "shelfnet/arch/serialize.hpp"
#include "shelfnet/errors.hpp"
#include "shelfnet/tensor/ops.hpp"
#include "test_support.hpp"

using namespace shelfnet;
using namespace shelfnet::arch;
using testing::random_tensor;

namespace {

ShelfSpec mini_spec(Variant v = Variant::shelfnet, int classes = 4) {
  ShelfSpec s;
  s.variant = v;
  s.backbone = backbone_preset("mini");
  s.widths = {{Level::A, 8}, {Level::B, 16}, {Level::C, 32}, {Level::D, 64}};
  s.num_classes = classes;
  return s;
}

std::set<std::string> names_in_columns(const BlockGraph& g, int first, int last) {
  std::set<std::string> out;
  for (const auto& b : g.blocks())
    if (b.id.column >= first && b.id.column <= last && b.kind != BlockKind::head) out.insert(b.name());
  return out;
}

std::set<std::pair<std::string, std::string>> edge_set(const BlockGraph& g) {
  std::set<std::pair<std::string, std::string>> out;
  for (const auto& e : g.edges()) out.insert({e.from, e.to});
  return out;
}

}  // namespace

TEST_CASE("backbone taps") {
  SUBCASE("resnet18") {
    const auto g = build_backbone(backbone_preset("resnet18"));
    const std::int64_t ch[] = {64, 128, 256, 512};
    const int st[] = {4, 8, 16, 32};
    for (int i = 0; i < 4; ++i) {
      const Block& b = g.block(std::string(1, char('A' + i)) + "0");
      CHECK(b.channels == ch[i]);
      CHECK(b.out_stride == st[i]);
    }
  }
  SUBCASE("resnet50") {
    const auto g = build_backbone(backbone_preset("resnet50"));
    CHECK(g.block("A0").channels == 256);
    CHECK(g.block("B0").channels == 512);
    CHECK(g.block("C0").channels == 1024);
    CHECK(g.block("D0").channels == 2048);
  }
  SUBCASE("mini") {
    const auto g = build_backbone(backbone_preset("mini"));
    CHECK(g.blocks().size() == 4);
    CHECK(g.block("A0").out_stride == 4);
    CHECK(g.block("D0").out_stride == 32);
    CHECK(g.block("A0").channels == 8);
  }
  SUBCASE("dilated keeps stride 8") {
    const auto s = backbone_preset("resnet50", true);
    CHECK(s.stage_stride(2) == 8);
    CHECK(s.stage_stride(3) == 8);
    CHECK(s.stage_dilation(2) == 2);
    CHECK(s.stage_dilation(3) == 4);
  }
  CHECK_THROWS_AS(backbone_preset("vgg16"), ConfigError);
}

TEST_CASE("variant topology") {
  ShelfSpec spec;
  spec.backbone = backbone_preset("resnet18");

  SUBCASE("shelfnet has 16 shelf blocks and four channel reducers") {
    const auto g = build_shelf(spec);
    CHECK(names_in_columns(g, 1, 4).size() == 16);
    int reducers = 0;
    for (const auto& b : g.blocks()) reducers += b.kind == BlockKind::channel_reduce;
    CHECK(reducers == 4);
  }
  SUBCASE("single-input blocks are exactly branch tops and bottoms") {
    const auto g = build_shelf(spec);
    std::set<std::string> single;
    for (const auto& name : names_in_columns(g, 2, 4)) {
      const auto in = g.in_edges(name);
      CHECK(in.size() >= 1);
      CHECK(in.size() <= 2);
      if (in.size() == 1) single.insert(name);
    }
    CHECK(single == std::set<std::string>{"D2", "A3", "D3", "D4"});
    for (const auto& name : names_in_columns(g, 2, 4)) {
      const auto in = g.in_edges(name);
      if (in.size() != 2) continue;
      std::set<EdgeKind> kinds{in[0]->kind, in[1]->kind};
      CHECK(kinds.count(EdgeKind::lateral) == 1);  // one lateral + one vertical
    }
  }
  SUBCASE("segnet keeps columns 0-2") {
    spec.variant = Variant::segnet;
    const auto g = build_shelf(spec);
    CHECK(names_in_columns(g, 1, 2).size() == 8);
    CHECK(names_in_columns(g, 3, 9).empty());
    CHECK(g.in_edges("head")[0]->from == "A2");
  }
  SUBCASE("wnet drops exactly the two inner skips") {
    const auto shelf = edge_set(build_shelf(spec));
    spec.variant = Variant::wnet;
    const auto wnet = edge_set(build_shelf(spec));
    std::set<std::pair<std::string, std::string>> diff;
    std::set_difference(shelf.begin(), shelf.end(), wnet.begin(), wnet.end(), std::inserter(diff, diff.end()));
    CHECK(diff == std::set<std::pair<std::string, std::string>>{{"B2", "B3"}, {"C2", "C3"}});
    CHECK(wnet.size() + 2 == shelf.size());
  }
  SUBCASE("fcn is the backbone plus head") {
    spec.variant = Variant::fcn;
    const auto g = build_shelf(spec);
    CHECK(g.blocks().size() == 5);
    CHECK(g.block("head").upsample == 32);
  }
  SUBCASE("light-weight shelf starts at level B") {
    spec.variant = Variant::shelfnet_lw;
    const auto g = build_shelf(spec);
    CHECK_FALSE(g.has_block("A1"));
    CHECK(g.block("B2").kind == BlockKind::lw_up_block);
    CHECK(g.block("C3").kind == BlockKind::s_block);
    CHECK(g.block("head").upsample == 8);
  }
  SUBCASE("every variant is acyclic and geometrically consistent") {
    for (auto v : {Variant::fcn, Variant::segnet, Variant::wnet, Variant::shelfnet, Variant::shelfnet_lw,
                   Variant::shelfnet_simplified, Variant::gridnet_simplified}) {
      spec.variant = v;
      const auto g = build_shelf(spec);
      CHECK_NOTHROW(g.validate());
      for (const auto& e : g.edges()) {
        const int dl = level_index(g.block(e.to).id.level) - level_index(g.block(e.from).id.level);
        if (e.kind == EdgeKind::down) CHECK(dl == 1);
        if (e.kind == EdgeKind::up) CHECK(dl == -1);
        if (e.kind == EdgeKind::lateral) CHECK(dl == 0);
      }
    }
  }
  SUBCASE("inconsistent specs are rejected") {
    spec.widths[Level::C] = 200;
    CHECK_THROWS_AS(build_shelf(spec), ConfigError);
    spec = ShelfSpec{};
    spec.backbone = backbone_preset("resnet18", true);
    CHECK_THROWS_AS(build_shelf(spec), ConfigError);
  }
  SUBCASE("validation catches bad geometry and cycles") {
    auto g = build_shelf(spec);
    g.add_edge({"A2", "C3", EdgeKind::lateral, Transition::none, {}});
    CHECK_THROWS_AS(g.validate(), ConfigError);
    auto h = build_shelf(spec);
    h.add_edge({"A4", "A3", EdgeKind::lateral, Transition::none, {}});
    CHECK_THROWS_AS(h.validate(), ConfigError);
  }
}

TEST_CASE("S-block structure") {
  const std::int64_t c = 16;
  const auto layers = s_block_layers("X", c, 4, true);
  SUBCASE("one kernel and two BN sets: five trainable tensors, 9c^2 + 4c parameters") {
    std::set<std::string> storages;
    std::int64_t params = 0, tensors = 0;
    for (const auto& l : layers) {
      if (l.kind == LayerKind::batch_norm) {
        tensors += 2;
        params += analysis::layer_params(l);
      } else if (storages.insert(l.sharing_group.empty() ? l.name : l.sharing_group).second) {
        tensors += 1;
        params += analysis::layer_params(l);
      }
    }
    CHECK(tensors == 5);
    CHECK(params == 9 * c * c + 4 * c);
  }
  SUBCASE("unshared twin has one extra kernel") {
    std::int64_t shared = 0, unshared = 0;
    std::set<std::string> seen;
    for (const auto& l : layers)
      if (l.sharing_group.empty() || seen.insert(l.sharing_group).second) shared += analysis::layer_params(l);
    for (const auto& l : s_block_layers("X", c, 4, false)) unshared += analysis::layer_params(l);
    CHECK(unshared - shared == 9 * c * c);
  }
}

TEST_CASE("transitions") {
  using T = Tensor<double>;
  std::mt19937_64 rng(7);
  const auto down = transition_layers(Transition::down_conv, 64, 4);
  const auto up = transition_layers(Transition::up_conv, 128, 8);
  const auto& dconv = down[0];
  const auto& uconv = up[0];
  T x = random_tensor({1, 64, 64, 64}, rng);
  T wd(Shape{dconv.out_c, dconv.in_c, 3, 3}, 0.01);
  T y = conv2d(x, wd, dconv.stride, dconv.padding, dconv.dilation);
  CHECK(y.shape() == Shape{1, 128, 32, 32});
  T wu(Shape{uconv.in_c, uconv.out_c, 3, 3}, 0.01);
  T z = conv_transpose2d(y, wu, uconv.stride, uconv.padding, uconv.output_padding);
  CHECK(z.shape() == Shape{1, 64, 64, 64});
  CHECK(z.shape() == x.shape());
  CHECK_THROWS_AS(transition_layers(Transition::up_conv, 33, 8), ConfigError);
  CHECK_THROWS_AS(transition_layers(Transition::up_bilinear, 33, 8), ConfigError);
  const auto lw = transition_layers(Transition::up_bilinear, 128, 16);
  CHECK(lw[0].kind == LayerKind::bilinear_upsample);
  CHECK(lw[1].out_c == 64);
}

TEST_CASE("executable network") {
  using T = Tensor<double>;
  std::mt19937_64 rng(8);
  const T image = random_tensor({1, 3, 64, 64}, rng, 0.0, 1.0);

  SUBCASE("logits at input resolution and block strides") {
    ExecutableNet<double> net(build_shelf(mini_spec()), 1);
    const T out = net.forward(image, Mode::eval);
    CHECK(out.shape() == Shape{1, 4, 64, 64});
    CHECK(net.output("A2").shape() == Shape{1, 8, 16, 16});
    for (const auto& b : net.graph().blocks()) {
      if (b.kind == BlockKind::head) continue;
      const Shape s = net.output(b.name()).shape();
      CHECK(s.h == 64 / b.out_stride);
      CHECK(s.w == 64 / b.out_stride);
      CHECK(s.c == b.channels);
    }
  }
  SUBCASE("same seed gives bitwise-identical outputs") {
    ExecutableNet<double> a(build_shelf(mini_spec()), 42), b(build_shelf(mini_spec()), 42);
    const T ya = a.forward(image, Mode::train), yb = b.forward(image, Mode::train);
    CHECK(std::equal(ya.values().begin(), ya.values().end(), yb.values().begin()));
  }
  SUBCASE("every variant runs") {
    for (auto v : {Variant::fcn, Variant::segnet, Variant::wnet, Variant::shelfnet_lw}) {
      ExecutableNet<double> net(build_shelf(mini_spec(v)), 3);
      CHECK(net.forward(image, Mode::train).shape() == Shape{1, 4, 64, 64});
    }
  }
  SUBCASE("input sides must be multiples of 32") {
    ExecutableNet<double> net(build_shelf(mini_spec()), 1);
    CHECK_THROWS_AS(net.forward(T(Shape{1, 3, 48, 64}), Mode::eval), InputError);
    CHECK_THROWS_AS(net.forward(T(Shape{1, 1, 64, 64}), Mode::eval), InputError);
    ExecutableNet<double> lw(build_shelf(mini_spec(Variant::shelfnet_lw)), 1);
    CHECK_THROWS_AS(lw.forward(T(Shape{1, 3, 48, 48}), Mode::eval), InputError);
  }
  SUBCASE("created parameters match the cost model") {
    const auto g = build_shelf(mini_spec());
    ExecutableNet<double> net(g, 1);
    CHECK(net.parameters().unique_count() == analysis::count_params(g).total_params);
  }
  SUBCASE("comparison graphs are not executable") {
    CHECK_THROWS_AS(ExecutableNet<double>(build_shelf(mini_spec(Variant::gridnet_simplified)), 1), ConfigError);
  }
}

TEST_CASE("zero residual gamma makes an S-block identity plus ReLU") {
  using T = Tensor<double>;
  std::mt19937_64 rng(9);
  const T image = random_tensor({2, 3, 32, 32}, rng, -1.0, 1.0);
  // A3 has the single lateral input A2, so its input is a cached output.
  ExecutableNet<double> zero(build_shelf(mini_spec()), 5, InitPolicy{0.0});
  zero.forward(image, Mode::train);
  const T expected = relu(zero.output("A2"));
  const T& got = zero.output("A3");
  CHECK(std::equal(got.values().begin(), got.values().end(), expected.values().begin()));

  ExecutableNet<double> plain(build_shelf(mini_spec()), 5);
  plain.forward(image, Mode::train);
  const T other = relu(plain.output("A2"));
  CHECK_FALSE(std::equal(plain.output("A3").values().begin(), plain.output("A3").values().end(),
                         other.values().begin()));
}

TEST_CASE("shared weights are transparent to the forward pass") {
  using T = Tensor<double>;
  std::mt19937_64 rng(11);
  ShelfSpec shared = mini_spec();
  ShelfSpec twin = shared;
  twin.shared_weights = false;
  ExecutableNet<double> a(build_shelf(shared), 21), b(build_shelf(twin), 21);
  // Give the twin the shared net's values at every site.
  for (const auto& p : b.parameters().registrations()) {
    auto dst = p.tensor;
    const auto src = a.parameters().find(p.id).tensor.values();
    std::copy(src.begin(), src.end(), dst.mutable_values().begin());
  }
  CHECK(a.parameters().unique().size() < b.parameters().unique().size());
  const T image = random_tensor({2, 3, 32, 32}, rng, 0.0, 1.0);
  const T ya = a.forward(image, Mode::train), yb = b.forward(image, Mode::train);
  CHECK(std::equal(ya.values().begin(), ya.values().end(), yb.values().begin()));

  SUBCASE("shared kernel gradient is the sum of the twin's two site gradients") {
    T r = random_tensor(ya.shape(), rng);
    backward(dot(ya, r));
    backward(dot(yb, r));
    double worst = 0.0;
    int checked = 0;
    for (const auto& blk : a.graph().blocks()) {
      if (blk.kind != BlockKind::s_block) continue;
      const std::string n = blk.name();
      const auto gs = a.parameters().find(n + ".conv1.weight").tensor.grad();
      const auto g1 = b.parameters().find(n + ".conv1.weight").tensor.grad();
      const auto g2 = b.parameters().find(n + ".conv2.weight").tensor.grad();
      for (std::size_t i = 0; i < gs.size(); ++i) worst = std::max(worst, std::abs(gs[i] - (g1[i] + g2[i])));
      ++checked;
    }
    CHECK(checked == 11);  // columns 2-4 minus the D4 relay
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("architecture JSON") {
  for (auto v : {Variant::fcn, Variant::segnet, Variant::wnet, Variant::shelfnet, Variant::shelfnet_lw,
                 Variant::shelfnet_simplified, Variant::gridnet_simplified}) {
    ShelfSpec spec;
    spec.variant = v;
    spec.backbone = backbone_preset("resnet50");
    const auto g = build_shelf(spec);
    const auto doc = to_json(g);
    const auto back = graph_from_json(nlohmann::json::parse(doc.dump(2)));
    CHECK(back == g);
    CHECK(canonical_string(back) == canonical_string(g));
    CHECK(arch_hash(back) == arch_hash(g));
  }
  ShelfSpec a, b;
  b.num_classes = 19;
  CHECK(arch_hash(build_shelf(a)) != arch_hash(build_shelf(b)));
  CHECK(arch_hash(build_shelf(a)).size() == 16);

  auto doc = to_json(build_shelf(a));
  doc["version"] = 2;
  CHECK_THROWS_AS(graph_from_json(doc), VersionError);
  doc = to_json(build_shelf(a));
  doc["blocks"][0].erase("kind");
  CHECK_THROWS_AS(graph_from_json(doc), ConfigError);
  doc = to_json(build_shelf(a));
  doc["edges"][0]["to"] = "Z9";
  CHECK_THROWS_AS(graph_from_json(doc), Error);
}
