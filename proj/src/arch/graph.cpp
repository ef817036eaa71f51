#include "shelfnet/arch/graph.hpp"

#include <algorithm>
#include <array>
#include <queue>
#include <set>
#include <utility>

#include "shelfnet/errors.hpp"

namespace shelfnet::arch {

namespace {

template <typename E, std::size_t N>
std::string name_of(E value, const std::array<std::pair<E, const char*>, N>& table) {
  for (const auto& [v, s] : table)
    if (v == value) return s;
  throw ConfigError("unnamed enum value");
}

template <typename E, std::size_t N>
E value_of(const std::string& s, const std::array<std::pair<E, const char*>, N>& table, const char* what) {
  for (const auto& [v, n] : table)
    if (s == n) return v;
  throw ConfigError(std::string("unknown ") + what + " '" + s + "'");
}

constexpr std::array<std::pair<BlockKind, const char*>, 6> kBlockKinds{{
    {BlockKind::backbone_stage, "backbone_stage"},
    {BlockKind::channel_reduce, "channel_reduce"},
    {BlockKind::s_block, "s_block"},
    {BlockKind::relay, "relay"},
    {BlockKind::head, "head"},
    {BlockKind::lw_up_block, "lw_up_block"},
}};
constexpr std::array<std::pair<EdgeKind, const char*>, 3> kEdgeKinds{{
    {EdgeKind::lateral, "lateral"},
    {EdgeKind::down, "down"},
    {EdgeKind::up, "up"},
}};
constexpr std::array<std::pair<Transition, const char*>, 4> kTransitions{{
    {Transition::none, "none"},
    {Transition::down_conv, "down_conv"},
    {Transition::up_conv, "up_conv"},
    {Transition::up_bilinear, "up_bilinear"},
}};
constexpr std::array<std::pair<LayerKind, const char*>, 7> kLayerKinds{{
    {LayerKind::conv, "conv"},
    {LayerKind::conv_transpose, "conv_transpose"},
    {LayerKind::batch_norm, "batch_norm"},
    {LayerKind::linear, "linear"},
    {LayerKind::max_pool, "max_pool"},
    {LayerKind::bilinear_upsample, "bilinear_upsample"},
    {LayerKind::global_avg_pool, "global_avg_pool"},
}};
constexpr std::array<std::pair<BackboneFamily, const char*>, 3> kFamilies{{
    {BackboneFamily::resnet_basic, "resnet_basic"},
    {BackboneFamily::resnet_bottleneck, "resnet_bottleneck"},
    {BackboneFamily::mini, "mini"},
}};
constexpr std::array<std::pair<Variant, const char*>, 7> kVariants{{
    {Variant::fcn, "fcn"},
    {Variant::segnet, "segnet"},
    {Variant::wnet, "wnet"},
    {Variant::shelfnet, "shelfnet"},
    {Variant::shelfnet_lw, "shelfnet_lw"},
    {Variant::shelfnet_simplified, "shelfnet_simplified"},
    {Variant::gridnet_simplified, "gridnet_simplified"},
}};

}  // namespace

char level_letter(Level level) { return static_cast<char>('A' + static_cast<int>(level)); }

Level level_from_letter(char c) {
  if (c < 'A' || c > 'D') throw ConfigError(std::string("unknown level '") + c + "'");
  return static_cast<Level>(c - 'A');
}

int level_index(Level level) { return static_cast<int>(level); }

std::string to_string(BlockKind kind) { return name_of(kind, kBlockKinds); }
std::string to_string(EdgeKind kind) { return name_of(kind, kEdgeKinds); }
std::string to_string(Transition t) { return name_of(t, kTransitions); }
std::string to_string(LayerKind kind) { return name_of(kind, kLayerKinds); }
std::string to_string(BackboneFamily f) { return name_of(f, kFamilies); }
std::string to_string(Variant v) { return name_of(v, kVariants); }
BlockKind block_kind_from_string(const std::string& s) { return value_of(s, kBlockKinds, "block kind"); }
EdgeKind edge_kind_from_string(const std::string& s) { return value_of(s, kEdgeKinds, "edge kind"); }
Transition transition_from_string(const std::string& s) { return value_of(s, kTransitions, "transition"); }
LayerKind layer_kind_from_string(const std::string& s) { return value_of(s, kLayerKinds, "layer kind"); }
BackboneFamily backbone_family_from_string(const std::string& s) {
  return value_of(s, kFamilies, "backbone family");
}
Variant variant_from_string(const std::string& s) { return value_of(s, kVariants, "variant"); }

std::string BlockId::str() const {
  if (!role.empty()) return role;
  return std::string(1, level_letter(level)) + std::to_string(column);
}

std::int64_t BackboneSpec::stage_channels(int stage) const {
  return static_cast<std::int64_t>(base_width) * (std::int64_t{1} << stage) * expansion();
}

int BackboneSpec::stage_stride(int stage) const {
  const int plain = 4 << stage;
  return dilated ? std::min(plain, 8) : plain;
}

int BackboneSpec::stage_dilation(int stage) const {
  if (!dilated || stage < 2) return 1;
  return stage == 2 ? 2 : 4;
}

BackboneSpec backbone_preset(const std::string& name, bool dilated) {
  BackboneSpec s;
  s.name = name;
  s.dilated = dilated;
  if (name == "resnet18") {
    s.family = BackboneFamily::resnet_basic;
    s.blocks = {2, 2, 2, 2};
  } else if (name == "resnet34") {
    s.family = BackboneFamily::resnet_basic;
    s.blocks = {3, 4, 6, 3};
  } else if (name == "resnet50") {
    s.family = BackboneFamily::resnet_bottleneck;
    s.blocks = {3, 4, 6, 3};
  } else if (name == "resnet101") {
    s.family = BackboneFamily::resnet_bottleneck;
    s.blocks = {3, 4, 23, 3};
  } else if (name == "mini") {
    s.family = BackboneFamily::mini;
    s.blocks = {1, 1, 1, 1};
    s.base_width = 8;
    s.classifier = false;
  } else {
    throw ConfigError("unknown backbone '" + name + "'");
  }
  return s;
}

void BlockGraph::add_block(Block block) {
  const std::string name = block.name();
  if (index_.count(name)) throw ConfigError("duplicate block " + name);
  index_[name] = blocks_.size();
  blocks_.push_back(std::move(block));
}

void BlockGraph::add_edge(Edge edge) {
  if (!has_block(edge.from)) throw NotFoundError("edge source " + edge.from + " is not a block");
  if (!has_block(edge.to)) throw NotFoundError("edge target " + edge.to + " is not a block");
  for (const auto& e : edges_)
    if (e.from == edge.from && e.to == edge.to) throw ConfigError("duplicate edge " + edge.name());
  edges_.push_back(std::move(edge));
}

void BlockGraph::remove_edge(const std::string& from, const std::string& to) {
  auto it = std::find_if(edges_.begin(), edges_.end(), [&](const Edge& e) { return e.from == from && e.to == to; });
  if (it == edges_.end()) throw NotFoundError("no edge " + from + "-" + to);
  edges_.erase(it);
}

const Block& BlockGraph::block(const std::string& name) const { return blocks_[block_index(name)]; }

std::size_t BlockGraph::block_index(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw NotFoundError("unknown block '" + name + "'");
  return it->second;
}

std::vector<const Edge*> BlockGraph::in_edges(const std::string& name) const {
  std::vector<const Edge*> out;
  for (const auto& e : edges_)
    if (e.to == name) out.push_back(&e);
  return out;
}

std::vector<const Edge*> BlockGraph::out_edges(const std::string& name) const {
  std::vector<const Edge*> out;
  for (const auto& e : edges_)
    if (e.from == name) out.push_back(&e);
  return out;
}

std::vector<std::string> BlockGraph::topological_order() const {
  std::vector<int> indegree(blocks_.size(), 0);
  std::vector<std::vector<std::size_t>> succ(blocks_.size());
  for (const auto& e : edges_) {
    const std::size_t f = block_index(e.from), t = block_index(e.to);
    succ[f].push_back(t);
    ++indegree[t];
  }
  std::priority_queue<std::size_t, std::vector<std::size_t>, std::greater<>> ready;
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (indegree[i] == 0) ready.push(i);
  std::vector<std::string> order;
  while (!ready.empty()) {
    const std::size_t i = ready.top();
    ready.pop();
    order.push_back(blocks_[i].name());
    for (std::size_t j : succ[i])
      if (--indegree[j] == 0) ready.push(j);
  }
  if (order.size() != blocks_.size()) throw ConfigError("block graph has a cycle");
  return order;
}

void BlockGraph::validate() const {
  const auto order = topological_order();
  if (!has_block(source)) throw ConfigError("source '" + source + "' is not a block");
  if (!has_block(sink)) throw ConfigError("sink '" + sink + "' is not a block");

  std::set<std::pair<int, int>> coords;
  for (const auto& b : blocks_)
    if (!coords.insert({level_index(b.id.level), b.id.column}).second)
      throw ConfigError("two blocks share coordinates with " + b.name());

  for (const auto& e : edges_) {
    const Block& f = block(e.from);
    const Block& t = block(e.to);
    const int dl = level_index(t.id.level) - level_index(f.id.level);
    const int dc = t.id.column - f.id.column;
    bool ok = false;
    switch (e.kind) {
      case EdgeKind::lateral: ok = dl == 0 && dc >= 1; break;
      case EdgeKind::down: ok = dl == 1 && dc == 0; break;
      case EdgeKind::up: ok = dl == -1 && dc == 0; break;
    }
    if (!ok) throw ConfigError(to_string(e.kind) + " edge " + e.name() + " disagrees with block coordinates");
  }

  std::set<std::string> reached{source};
  for (const auto& name : order) {
    if (!reached.count(name)) continue;
    for (const Edge* e : out_edges(name)) reached.insert(e->to);
  }
  for (const auto& b : blocks_)
    if (!reached.count(b.name())) throw ConfigError("block " + b.name() + " is unreachable from " + source);
}

}  // namespace shelfnet::arch
