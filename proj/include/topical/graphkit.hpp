#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "topical/analyzer.hpp"

namespace topical::graphkit {

struct DependencyGraph {
  std::vector<std::string> scripts;  // sorted, parse_ok only
  std::set<std::string> nodes;       // qualified names and script paths
  std::vector<analyzer::CallEdge> edges;
  std::map<std::string, std::string> script_of;
  // Script-level adjacency induced by internal edges, self loops removed.
  std::map<std::string, std::set<std::string>> successors;
};

DependencyGraph build_graph(const analyzer::Analysis& analysis);

// nullopt marks a PAD slot.
using Slot = std::optional<std::string>;

struct ScriptSample {
  std::vector<Slot> paths;

  [[nodiscard]] std::size_t real_count() const;
};

struct SampleOptions {
  std::vector<std::string> vendored_dirs{"vendor", "vendored", "third_party", "site-packages", "node_modules"};
};

ScriptSample sample_scripts(const DependencyGraph& graph, std::size_t n, std::uint64_t seed,
                            const SampleOptions& options = {});

const std::vector<std::size_t>& supported_caps();
bool is_supported_cap(std::size_t n);

nlohmann::json sample_json(const ScriptSample& s);
ScriptSample sample_from_json(const nlohmann::json& j);

}  // namespace topical::graphkit
