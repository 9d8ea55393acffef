#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace topical::analyzer {

struct FunctionInfo {
  std::string qualified_name;
  std::optional<std::string> docstring;
  std::vector<std::string> calls;

  bool operator==(const FunctionInfo&) const = default;
};

struct ScriptRecord {
  std::string path;
  std::vector<std::string> imports;
  std::vector<FunctionInfo> functions;
  bool parse_ok = true;

  bool operator==(const ScriptRecord&) const = default;
};

enum class EdgeKind { Internal, Import, Unresolved };

struct CallEdge {
  std::string caller;
  std::string callee;
  EdgeKind kind = EdgeKind::Unresolved;

  bool operator==(const CallEdge&) const = default;
  auto operator<=>(const CallEdge& o) const {
    if (auto c = caller <=> o.caller; c != 0) return c;
    return callee <=> o.callee;
  }
};

struct Analysis {
  std::vector<ScriptRecord> scripts;
  std::vector<CallEdge> edges;
};

std::string_view to_string(EdgeKind kind);
EdgeKind edge_kind_from_string(std::string_view s);

// "pkg/sub/mod.py" -> "pkg.sub.mod"; "pkg/__init__.py" -> "pkg".
std::string module_name_for(std::string_view path);

ScriptRecord analyze_script(std::string_view source, std::string_view path);

// Cross-script resolution over already analyzed records. Sorts scripts by path.
Analysis link(std::vector<ScriptRecord> scripts);

// Walks `root` for .py files (hidden directories and __pycache__ skipped,
// symlinks not followed) and links the results.
Analysis analyze_repository(const std::filesystem::path& root);

nlohmann::ordered_json to_json(const Analysis& analysis);
Analysis analysis_from_json(const nlohmann::json& j);

// Compact deterministic rendering used for analysis.json files.
std::string dump(const Analysis& analysis);

}  // namespace topical::analyzer
