#include "shelfnet/analysis/paths.hpp"

#include <map>

#include "shelfnet/errors.hpp"

namespace shelfnet::analysis {

using arch::BlockGraph;

namespace {

void check_endpoints(const BlockGraph& g, const std::string& source, const std::string& sink) {
  if (!g.has_block(source)) throw NotFoundError("unknown source block '" + source + "'");
  if (!g.has_block(sink)) throw NotFoundError("unknown sink block '" + sink + "'");
}

std::map<std::string, std::vector<std::string>> successors(const BlockGraph& g) {
  std::map<std::string, std::vector<std::string>> succ;
  for (const auto& e : g.edges()) succ[e.from].push_back(e.to);
  return succ;
}

void list_paths(const std::map<std::string, std::vector<std::string>>& succ, const std::string& at,
                const std::string& sink, Path& current, std::vector<Path>& out) {
  current.push_back(at);
  if (at == sink) {
    out.push_back(current);
  } else if (auto it = succ.find(at); it != succ.end()) {
    for (const auto& next : it->second) list_paths(succ, next, sink, current, out);
  }
  current.pop_back();
}

}  // namespace

PathReport enumerate_paths(const BlockGraph& g, const std::string& source, const std::string& sink, PathMode mode,
                           std::uint64_t cap) {
  check_endpoints(g, source, sink);
  PathReport r;
  r.source = source;
  r.sink = sink;

  // Number of paths from source to each block, accumulated in topological order.
  std::map<std::string, std::uint64_t> ways;
  ways[source] = 1;
  for (const auto& name : g.topological_order()) {
    const std::uint64_t w = ways[name];
    if (w == 0) continue;
    for (const auto* e : g.out_edges(name)) ways[e->to] += w;
  }
  r.path_count = ways[sink];

  if (mode == PathMode::list) {
    if (r.path_count > cap)
      throw InputError(std::to_string(r.path_count) + " paths exceed the listing cap of " + std::to_string(cap));
    Path current;
    list_paths(successors(g), source, sink, current, r.paths);
  }
  return r;
}

PathReport longest_path(const BlockGraph& g, const std::string& source, const std::string& sink) {
  PathReport r = enumerate_paths(g, source, sink);

  // depth[b]: blocks on the longest source->b path; 0 means unreachable.
  std::map<std::string, std::size_t> depth;
  std::map<std::string, std::string> parent;
  depth[source] = 1;
  for (const auto& name : g.topological_order()) {
    const std::size_t d = depth[name];
    if (d == 0) continue;
    for (const auto* e : g.out_edges(name))
      if (d + 1 > depth[e->to]) {
        depth[e->to] = d + 1;
        parent[e->to] = name;
      }
  }
  r.longest_path_length = depth[sink];
  if (r.longest_path_length > 0) {
    for (std::string at = sink;; at = parent.at(at)) {
      r.longest_path.insert(r.longest_path.begin(), at);
      if (at == source) break;
    }
  }
  return r;
}

std::string format_path(const Path& p) {
  std::string s;
  for (std::size_t i = 0; i < p.size(); ++i) s += (i ? " -> " : "") + p[i];
  return s;
}

nlohmann::json to_json(const PathReport& r) {
  nlohmann::json j = {{"source", r.source}, {"sink", r.sink}, {"path_count", r.path_count}};
  if (!r.paths.empty()) j["paths"] = r.paths;
  if (r.longest_path_length > 0 || !r.longest_path.empty()) {
    j["longest_path_length"] = r.longest_path_length;
    j["longest_path"] = r.longest_path;
  }
  return j;
}

}  // namespace shelfnet::analysis
