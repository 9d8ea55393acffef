#include "topical/graphkit.hpp"

#include <algorithm>

#include "topical/errors.hpp"
#include "topical/random.hpp"

namespace topical::graphkit {

namespace {

bool is_vendored(const std::string& path, const SampleOptions& options) {
  std::size_t start = 0;
  for (auto slash = path.find('/'); slash != std::string::npos; slash = path.find('/', start)) {
    const std::string dir = path.substr(start, slash - start);
    if (std::find(options.vendored_dirs.begin(), options.vendored_dirs.end(), dir) != options.vendored_dirs.end()) {
      return true;
    }
    start = slash + 1;
  }
  return false;
}

std::size_t depth(const std::string& path) { return static_cast<std::size_t>(std::count(path.begin(), path.end(), '/')); }

}  // namespace

std::size_t ScriptSample::real_count() const {
  return static_cast<std::size_t>(std::count_if(paths.begin(), paths.end(), [](const Slot& s) { return s.has_value(); }));
}

DependencyGraph build_graph(const analyzer::Analysis& analysis) {
  DependencyGraph g;
  for (const auto& s : analysis.scripts) {
    if (!s.parse_ok) continue;
    g.scripts.push_back(s.path);
    g.nodes.insert(s.path);
    for (const auto& f : s.functions) {
      g.nodes.insert(f.qualified_name);
      g.script_of.emplace(f.qualified_name, s.path);
    }
  }
  std::sort(g.scripts.begin(), g.scripts.end());
  for (const auto& e : analysis.edges) {
    if (!g.script_of.count(e.caller)) continue;
    g.nodes.insert(e.callee);
    g.edges.push_back(e);
    if (e.kind != analyzer::EdgeKind::Internal) continue;
    const auto callee = g.script_of.find(e.callee);
    if (callee == g.script_of.end()) continue;
    const std::string& from = g.script_of.at(e.caller);
    if (from != callee->second) g.successors[from].insert(callee->second);
  }
  return g;
}

ScriptSample sample_scripts(const DependencyGraph& graph, std::size_t n, std::uint64_t seed,
                            const SampleOptions& options) {
  if (n < 1) throw ValidationError("sample size n must be at least 1");
  if (graph.scripts.empty()) throw ValidationError("repository has no analyzable scripts");

  std::vector<std::string> primary;
  for (const auto& s : graph.scripts) {
    if (!is_vendored(s, options)) primary.push_back(s);
  }
  if (primary.empty()) primary = graph.scripts;
  const std::set<std::string> allowed(primary.begin(), primary.end());

  std::map<std::string, std::vector<std::string>> succ;
  std::map<std::string, int> indegree;
  for (const auto& [from, tos] : graph.successors) {
    if (!allowed.count(from)) continue;
    for (const auto& to : tos) {
      if (!allowed.count(to)) continue;
      succ[from].push_back(to);
      ++indegree[to];
    }
  }

  // Chain heads first: scripts that call into others but are not called.
  std::vector<std::string> starts;
  for (const auto& [from, tos] : succ) {
    if (!indegree.count(from)) starts.push_back(from);
  }
  std::vector<std::string> members;
  for (const auto& s : primary) {
    if (succ.count(s) || indegree.count(s)) members.push_back(s);
  }
  auto shallow_first = [](const std::string& a, const std::string& b) {
    return std::pair(depth(a), a) < std::pair(depth(b), b);
  };
  std::sort(starts.begin(), starts.end(), shallow_first);
  std::sort(members.begin(), members.end(), shallow_first);

  ScriptSample out;
  std::set<std::string> taken;
  auto full = [&] { return out.paths.size() >= n; };
  // One path: keep following the first successor not yet taken.
  auto trace = [&](const std::string& start) {
    const std::string* cur = &start;
    while (cur && !full() && taken.insert(*cur).second) {
      out.paths.emplace_back(*cur);
      const auto it = succ.find(*cur);
      cur = nullptr;
      if (it == succ.end()) break;
      for (const auto& next : it->second) {
        if (!taken.count(next)) {
          cur = &next;
          break;
        }
      }
    }
  };

  const std::string* first = !starts.empty() ? &starts.front() : !members.empty() ? &members.front() : nullptr;
  if (first) trace(*first);

  // Later paths start at an untaken head or branch off a script already taken.
  Rng rng(seed);
  while (!full()) {
    std::set<std::string> open;
    for (const auto& s : starts) {
      if (!taken.count(s)) open.insert(s);
    }
    for (const auto& s : taken) {
      const auto it = succ.find(s);
      if (it == succ.end()) continue;
      for (const auto& next : it->second) {
        if (!taken.count(next)) open.insert(next);
      }
    }
    if (open.empty()) {
      for (const auto& s : members) {
        if (!taken.count(s)) open.insert(s);
      }
    }
    if (open.empty()) break;
    std::vector<std::string> choices(open.begin(), open.end());
    std::sort(choices.begin(), choices.end(), shallow_first);
    trace(choices[rng.below(choices.size())]);
  }

  for (const auto& s : primary) {
    if (full()) break;
    if (taken.insert(s).second) out.paths.emplace_back(s);
  }
  out.paths.resize(n);
  return out;
}

const std::vector<std::size_t>& supported_caps() {
  static const std::vector<std::size_t> caps{2, 5, 10, 15};
  return caps;
}

bool is_supported_cap(std::size_t n) {
  const auto& caps = supported_caps();
  return std::find(caps.begin(), caps.end(), n) != caps.end();
}

nlohmann::json sample_json(const ScriptSample& s) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& p : s.paths) {
    if (p) {
      j.push_back(*p);
    } else {
      j.push_back(nullptr);
    }
  }
  return j;
}

ScriptSample sample_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw ValidationError("sample must be a JSON array");
  ScriptSample s;
  for (const auto& v : j) {
    if (v.is_null()) {
      s.paths.emplace_back(std::nullopt);
    } else if (v.is_string()) {
      s.paths.emplace_back(v.get<std::string>());
    } else {
      throw ValidationError("sample entries must be strings or null");
    }
  }
  return s;
}

}  // namespace topical::graphkit
