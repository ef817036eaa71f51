#include "shelfnet/arch/serialize.hpp"

#include <cstdio>

#include "shelfnet/errors.hpp"

namespace shelfnet::arch {

using nlohmann::json;

namespace {

json layer_json(const LayerSpec& l) {
  json j = {{"name", l.name},         {"kind", to_string(l.kind)},   {"in_c", l.in_c},
            {"out_c", l.out_c},       {"kernel", l.kernel},          {"stride", l.stride},
            {"padding", l.padding},   {"dilation", l.dilation},      {"output_padding", l.output_padding},
            {"out_stride", l.out_stride}, {"bias", l.bias}};
  if (!l.sharing_group.empty()) j["sharing_group"] = l.sharing_group;
  return j;
}

LayerSpec layer_from(const json& j) {
  LayerSpec l;
  l.name = j.at("name").get<std::string>();
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.in_c = j.at("in_c").get<std::int64_t>();
  l.out_c = j.at("out_c").get<std::int64_t>();
  l.kernel = j.at("kernel").get<int>();
  l.stride = j.at("stride").get<int>();
  l.padding = j.at("padding").get<int>();
  l.dilation = j.at("dilation").get<int>();
  l.output_padding = j.at("output_padding").get<int>();
  l.out_stride = j.at("out_stride").get<int>();
  l.bias = j.at("bias").get<bool>();
  l.sharing_group = j.value("sharing_group", std::string{});
  return l;
}

json layers_json(const std::vector<LayerSpec>& layers) {
  json arr = json::array();
  for (const auto& l : layers) arr.push_back(layer_json(l));
  return arr;
}

std::vector<LayerSpec> layers_from(const json& arr) {
  std::vector<LayerSpec> out;
  for (const auto& j : arr) out.push_back(layer_from(j));
  return out;
}

json backbone_json(const BackboneSpec& b) {
  return {{"name", b.name},
          {"family", to_string(b.family)},
          {"blocks", b.blocks},
          {"base_width", b.base_width},
          {"dilated", b.dilated},
          {"classifier", b.classifier},
          {"classifier_classes", b.classifier_classes}};
}

BackboneSpec backbone_from(const json& j) {
  BackboneSpec b;
  b.name = j.at("name").get<std::string>();
  b.family = backbone_family_from_string(j.at("family").get<std::string>());
  b.blocks = j.at("blocks").get<std::vector<int>>();
  b.base_width = j.at("base_width").get<int>();
  b.dilated = j.at("dilated").get<bool>();
  b.classifier = j.at("classifier").get<bool>();
  b.classifier_classes = j.at("classifier_classes").get<int>();
  return b;
}

template <typename F>
auto rethrow_as_config(F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed architecture document: ") + e.what());
  }
}

}  // namespace

json to_json(const ShelfSpec& spec) {
  json widths = json::object();
  for (const auto& [level, w] : spec.widths) widths[std::string(1, level_letter(level))] = w;
  return {{"variant", to_string(spec.variant)},
          {"backbone", backbone_json(spec.backbone)},
          {"widths", widths},
          {"num_classes", spec.num_classes},
          {"shared_weights", spec.shared_weights},
          {"dropout", spec.dropout}};
}

ShelfSpec shelf_spec_from_json(const json& j) {
  return rethrow_as_config([&] {
    ShelfSpec s;
    s.variant = variant_from_string(j.at("variant").get<std::string>());
    s.backbone = backbone_from(j.at("backbone"));
    s.widths.clear();
    for (const auto& [k, v] : j.at("widths").items()) {
      if (k.size() != 1) throw ConfigError("width key '" + k + "' is not a level letter");
      s.widths[level_from_letter(k[0])] = v.get<std::int64_t>();
    }
    s.num_classes = j.at("num_classes").get<int>();
    s.shared_weights = j.at("shared_weights").get<bool>();
    s.dropout = j.at("dropout").get<double>();
    return s;
  });
}

json to_json(const BlockGraph& g) {
  json blocks = json::array();
  for (const auto& b : g.blocks()) {
    json jb = {{"name", b.name()},
               {"level", std::string(1, level_letter(b.id.level))},
               {"column", b.id.column},
               {"kind", to_string(b.kind)},
               {"channels", b.channels},
               {"out_stride", b.out_stride},
               {"layers", layers_json(b.layers)}};
    if (!b.id.role.empty()) jb["role"] = b.id.role;
    if (b.kind == BlockKind::head) jb["upsample"] = b.upsample;
    blocks.push_back(jb);
  }
  json edges = json::array();
  for (const auto& e : g.edges())
    edges.push_back({{"from", e.from},
                     {"to", e.to},
                     {"kind", to_string(e.kind)},
                     {"transition", to_string(e.transition)},
                     {"layers", layers_json(e.layers)}});
  return {{"format", "shelfnet-arch"},
          {"version", kArchFormatVersion},
          {"spec", to_json(g.spec)},
          {"blocks", blocks},
          {"edges", edges},
          {"source", g.source},
          {"sink", g.sink}};
}

BlockGraph graph_from_json(const json& doc) {
  return rethrow_as_config([&] {
    if (doc.at("format").get<std::string>() != "shelfnet-arch")
      throw ConfigError("not an architecture document");
    const int version = doc.at("version").get<int>();
    if (version != kArchFormatVersion)
      throw VersionError("architecture document version " + std::to_string(version) + " is not supported");
    BlockGraph g;
    g.spec = shelf_spec_from_json(doc.at("spec"));
    for (const auto& jb : doc.at("blocks")) {
      Block b;
      const std::string level = jb.at("level").get<std::string>();
      if (level.size() != 1) throw ConfigError("bad level '" + level + "'");
      b.id = {level_from_letter(level[0]), jb.at("column").get<int>(), jb.value("role", std::string{})};
      b.kind = block_kind_from_string(jb.at("kind").get<std::string>());
      b.channels = jb.at("channels").get<std::int64_t>();
      b.out_stride = jb.at("out_stride").get<int>();
      b.upsample = jb.value("upsample", 1);
      b.layers = layers_from(jb.at("layers"));
      if (b.name() != jb.at("name").get<std::string>())
        throw ConfigError("block name " + jb.at("name").get<std::string>() + " disagrees with its coordinates");
      g.add_block(std::move(b));
    }
    for (const auto& je : doc.at("edges"))
      g.add_edge({je.at("from").get<std::string>(), je.at("to").get<std::string>(),
                  edge_kind_from_string(je.at("kind").get<std::string>()),
                  transition_from_string(je.at("transition").get<std::string>()), layers_from(je.at("layers"))});
    g.source = doc.at("source").get<std::string>();
    g.sink = doc.at("sink").get<std::string>();
    g.validate();
    return g;
  });
}

std::string canonical_string(const BlockGraph& graph) { return to_json(graph).dump(); }

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string arch_hash(const BlockGraph& graph) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(canonical_string(graph))));
  return buf;
}

}  // namespace shelfnet::arch
