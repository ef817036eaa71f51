#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "shelfnet/arch/graph.hpp"

namespace shelfnet::analysis {

using Path = std::vector<std::string>;

inline constexpr std::uint64_t kDefaultPathCap = 1'000'000;

enum class PathMode { count, list };

struct PathReport {
  std::string source;
  std::string sink;
  std::uint64_t path_count = 0;
  std::vector<Path> paths;            // list mode only
  std::size_t longest_path_length = 0;  // in blocks, inclusive; 0 if unreachable
  Path longest_path;
};

// Source-to-sink directed path count (DP over a topological order) and,
// in list mode, every path. Throws NotFoundError for unknown endpoints and
// InputError when the count exceeds `cap` in list mode.
PathReport enumerate_paths(const arch::BlockGraph& graph, const std::string& source, const std::string& sink,
                           PathMode mode = PathMode::count, std::uint64_t cap = kDefaultPathCap);

// Longest path measured in blocks visited; fills the longest_* fields.
PathReport longest_path(const arch::BlockGraph& graph, const std::string& source, const std::string& sink);

std::string format_path(const Path& p);
nlohmann::json to_json(const PathReport& report);

}  // namespace shelfnet::analysis
