#include "shelfnet/analysis/cost.hpp"

#include <cstdio>
#include <set>
#include <sstream>

#include "shelfnet/arch/builders.hpp"
#include "shelfnet/errors.hpp"

namespace shelfnet::analysis {

using arch::BlockGraph;
using arch::LayerKind;
using arch::LayerSpec;

namespace {

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width, bool right = false) {
  if (s.size() >= width) return s;
  const std::string fill(width - s.size(), ' ');
  return right ? fill + s : s + fill;
}

void check_divisible(const LayerSpec& l, std::int64_t h, std::int64_t w, const std::string& owner) {
  std::int64_t stride = l.out_stride;
  if (l.kind == LayerKind::conv_transpose) stride *= l.stride;
  if (stride <= 0) return;
  if (h % stride != 0 || w % stride != 0)
    throw InputError("input " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by stride " +
                     std::to_string(stride) + " of " + owner + "." + l.name);
}

// Adds one owner's layers. Shared groups are charged to their first owner.
CostEntry make_entry(const std::vector<LayerSpec>& layers, std::set<std::string>& seen_groups,
                     std::optional<std::pair<std::int64_t, std::int64_t>> input, const std::string& owner) {
  CostEntry e;
  for (const auto& l : layers) {
    const std::int64_t p = layer_params(l);
    if (l.sharing_group.empty()) {
      e.params += p;
    } else if (seen_groups.insert(l.sharing_group).second) {
      e.params += p;
      e.shared_params += p;
    }
    if (input) {
      check_divisible(l, input->first, input->second, owner);
      e.macs += layer_macs(l, input->first, input->second);
    }
  }
  return e;
}

CostReport build_report(const BlockGraph& g, std::optional<std::pair<std::int64_t, std::int64_t>> input) {
  CostReport r;
  r.input = input;
  std::set<std::string> seen;
  const auto add = [&](CostEntry e) {
    r.total_params += e.params;
    r.total_macs += e.macs;
    r.params_by_column[e.column] += e.params;
    r.macs_by_column[e.column] += e.macs;
    r.params_by_level[arch::level_letter(e.level)] += e.params;
    r.macs_by_level[arch::level_letter(e.level)] += e.macs;
    r.entries.push_back(std::move(e));
  };
  for (const auto& b : g.blocks()) {
    CostEntry e = make_entry(b.layers, seen, input, b.name());
    e.name = b.name();
    e.kind = arch::to_string(b.kind);
    e.level = b.id.level;
    e.column = b.id.column;
    add(std::move(e));
  }
  for (const auto& edge : g.edges()) {
    if (edge.layers.empty()) continue;
    CostEntry e = make_entry(edge.layers, seen, input, edge.name());
    const auto& to = g.block(edge.to);
    e.name = edge.name();
    e.is_edge = true;
    e.kind = arch::to_string(edge.transition);
    e.level = to.id.level;
    e.column = to.id.column;
    add(std::move(e));
  }
  return r;
}

}  // namespace

std::int64_t CostReport::macs_in_columns(int first, int last) const {
  std::int64_t s = 0;
  for (const auto& e : entries)
    if (e.column >= first && e.column <= last) s += e.macs;
  return s;
}

std::int64_t CostReport::params_in_columns(int first, int last) const {
  std::int64_t s = 0;
  for (const auto& e : entries)
    if (e.column >= first && e.column <= last) s += e.params;
  return s;
}

std::int64_t layer_params(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::conv:
    case LayerKind::conv_transpose:
      return l.out_c * l.in_c * l.kernel * l.kernel + (l.bias ? l.out_c : 0);
    case LayerKind::batch_norm:
      return 2 * l.out_c;
    case LayerKind::linear:
      return l.in_c * l.out_c + (l.bias ? l.out_c : 0);
    case LayerKind::max_pool:
    case LayerKind::bilinear_upsample:
    case LayerKind::global_avg_pool:
      return 0;
  }
  throw ConfigError("unknown layer kind");
}

std::int64_t layer_macs(const LayerSpec& l, std::int64_t h, std::int64_t w) {
  const auto plane = [&](std::int64_t stride) { return stride == 0 ? 1 : (h / stride) * (w / stride); };
  switch (l.kind) {
    case LayerKind::conv:
      return l.out_c * l.in_c * l.kernel * l.kernel * plane(l.out_stride);
    case LayerKind::conv_transpose:
      return l.out_c * l.in_c * l.kernel * l.kernel * plane(static_cast<std::int64_t>(l.out_stride) * l.stride);
    case LayerKind::linear:
      return l.in_c * l.out_c;
    default:
      return 0;
  }
}

CostReport count_params(const BlockGraph& graph) { return build_report(graph, std::nullopt); }

CostReport count_flops(const BlockGraph& graph, std::int64_t h, std::int64_t w) {
  if (h <= 0 || w <= 0) throw InputError("input size must be positive");
  return build_report(graph, std::make_pair(h, w));
}

std::int64_t shared_kernel_savings(const BlockGraph& graph) {
  std::int64_t s = 0;
  for (const auto& b : graph.blocks())
    if (b.kind == arch::BlockKind::s_block && !b.layers.empty()) s += 9 * b.channels * b.channels;
  return s;
}

nlohmann::json to_json(const CostReport& r) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries) {
    nlohmann::json j = {{"name", e.name},
                        {"edge", e.is_edge},
                        {"kind", e.kind},
                        {"level", std::string(1, arch::level_letter(e.level))},
                        {"column", e.column},
                        {"params", e.params}};
    if (r.input) j["macs"] = e.macs;
    if (e.shared_params) j["shared_params"] = e.shared_params;
    entries.push_back(j);
  }
  nlohmann::json j = {{"entries", entries}, {"total_params", r.total_params}};
  if (r.input) {
    j["input"] = {r.input->first, r.input->second};
    j["total_macs"] = r.total_macs;
    j["mac_unit"] = "multiply-accumulate";
  }
  return j;
}

std::vector<BackboneRow> backbone_table(const std::vector<std::string>& names, std::int64_t h, std::int64_t w) {
  std::vector<BackboneRow> rows;
  for (const auto& n : names)
    for (bool dilated : {false, true}) {
      const auto g = arch::build_backbone(arch::backbone_preset(n, dilated));
      const auto rep = count_flops(g, h, w);
      rows.push_back({n, dilated, rep.total_params, rep.total_macs});
    }
  return rows;
}

std::string human_count(std::int64_t v) {
  const double d = static_cast<double>(v);
  if (v >= 1'000'000'000) return fmt("%.2fG", d / 1e9);
  if (v >= 1'000'000) return fmt("%.2fM", d / 1e6);
  if (v >= 1'000) return fmt("%.2fK", d / 1e3);
  return std::to_string(v);
}

std::string format_backbone_table(const std::vector<BackboneRow>& rows, std::int64_t h, std::int64_t w) {
  std::ostringstream os;
  os << pad("backbone", 12) << pad("dilated", 9) << pad("params", 12, true) << pad("MACs", 12, true) << "\n";
  for (const auto& r : rows)
    os << pad(r.backbone, 12) << pad(r.dilated ? "yes" : "no", 9) << pad(human_count(r.params), 12, true)
       << pad(human_count(r.macs), 12, true) << "\n";
  os << "input " << h << "x" << w << ", MACs = multiply-accumulates of conv and linear layers\n";
  return os.str();
}

std::string format_block_table(const BlockGraph& graph, const CostReport& report) {
  std::ostringstream os;
  os << pad("block", 10) << pad("kind", 16) << pad("channels", 10, true) << pad("spatial", 9, true)
     << pad("params", 12, true);
  if (report.input) os << pad("MACs", 12, true);
  os << "\n";
  for (const auto& e : report.entries) {
    std::string channels = "-", spatial = "-";
    if (!e.is_edge) {
      const auto& b = graph.block(e.name);
      channels = std::to_string(b.channels);
      spatial = "1/" + std::to_string(b.out_stride);
    }
    os << pad(e.name, 10) << pad(e.kind, 16) << pad(channels, 10, true) << pad(spatial, 9, true)
       << pad(human_count(e.params) + (e.shared_params ? "*" : ""), 12, true);
    if (report.input) os << pad(human_count(e.macs), 12, true);
    os << "\n";
  }
  os << pad("total", 45) << pad(human_count(report.total_params), 12, true);
  if (report.input) os << pad(human_count(report.total_macs), 12, true);
  os << "\n";
  if (report.input) os << "input " << report.input->first << "x" << report.input->second << "\n";
  return os.str();
}

}  // namespace shelfnet::analysis
