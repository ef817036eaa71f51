#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "shelfnet/arch/graph.hpp"

namespace shelfnet::analysis {

// One row per block and per edge that carries layers. MACs count
// convolutions and linear layers only: c_out * c_in * k * k * H * W with the
// layer's own output H x W; transposed convolutions use their input H x W,
// which is the number of multiply-accumulates they actually perform.
struct CostEntry {
  std::string name;      // block name, or "from-to" for an edge
  bool is_edge = false;
  std::string kind;      // block kind or edge transition
  arch::Level level = arch::Level::A;
  int column = 0;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t shared_params = 0;  // parameters counted once for a shared group
};

struct CostReport {
  std::vector<CostEntry> entries;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
  std::optional<std::pair<std::int64_t, std::int64_t>> input;  // (h, w) when MACs were computed
  std::map<int, std::int64_t> params_by_column;
  std::map<int, std::int64_t> macs_by_column;
  std::map<char, std::int64_t> params_by_level;
  std::map<char, std::int64_t> macs_by_level;

  // Sum over entries in columns [first, last].
  std::int64_t macs_in_columns(int first, int last) const;
  std::int64_t params_in_columns(int first, int last) const;
};

std::int64_t layer_params(const arch::LayerSpec& layer);
// MACs of one layer for an input of (h, w); the layer's out_stride must
// divide both.
std::int64_t layer_macs(const arch::LayerSpec& layer, std::int64_t h, std::int64_t w);

CostReport count_params(const arch::BlockGraph& graph);
// Throws InputError unless h and w are divisible by the graph's largest stride.
CostReport count_flops(const arch::BlockGraph& graph, std::int64_t h, std::int64_t w);

// 9 * c^2 summed over the shared kernels of all S-blocks: the parameter gap
// between a shared shelf and its unshared twin.
std::int64_t shared_kernel_savings(const arch::BlockGraph& graph);

nlohmann::json to_json(const CostReport& report);

// Backbone rows in the layout of a classic backbone cost table.
struct BackboneRow {
  std::string backbone;
  bool dilated = false;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

inline constexpr std::int64_t kTableInput = 512;

std::vector<BackboneRow> backbone_table(const std::vector<std::string>& names, std::int64_t h = kTableInput,
                                        std::int64_t w = kTableInput);
std::string format_backbone_table(const std::vector<BackboneRow>& rows, std::int64_t h, std::int64_t w);
// Per-block table: name, kind, channels, spatial fraction, params, MACs.
std::string format_block_table(const arch::BlockGraph& graph, const CostReport& report);

// "11.69M", "9.52G", ...
std::string human_count(std::int64_t v);

}  // namespace shelfnet::analysis
