#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "shelfnet/arch/graph.hpp"

namespace shelfnet::arch {

inline constexpr int kArchFormatVersion = 1;

// Canonical architecture document: spec, blocks (with layers), edges,
// source and sink. Object keys are sorted, so dump() is canonical.
nlohmann::json to_json(const BlockGraph& graph);
BlockGraph graph_from_json(const nlohmann::json& doc);

nlohmann::json to_json(const ShelfSpec& spec);
ShelfSpec shelf_spec_from_json(const nlohmann::json& doc);

std::string canonical_string(const BlockGraph& graph);
// FNV-1a 64 of the canonical string, as 16 lowercase hex digits.
std::string arch_hash(const BlockGraph& graph);
std::uint64_t fnv1a64(const std::string& bytes);

}  // namespace shelfnet::arch
