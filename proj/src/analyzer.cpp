#include "topical/analyzer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

#include "topical/python/parser.hpp"

namespace topical::analyzer {

namespace fs = std::filesystem;
using python::Node;
using python::NodeKind;

namespace {

std::vector<std::string> split_dots(std::string_view s) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto dot = s.find('.', start);
    parts.emplace_back(s.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (dot == std::string_view::npos) break;
    start = dot + 1;
  }
  return parts;
}

std::string join(const std::vector<std::string>& parts, std::size_t count) {
  std::string out;
  for (std::size_t i = 0; i < count && i < parts.size(); ++i) {
    if (i) out += '.';
    out += parts[i];
  }
  return out;
}

void push_unique(std::vector<std::string>& v, std::string s) {
  if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(std::move(s));
}

bool is_def(const Node& n) {
  return n.is(NodeKind::FunctionDef) || n.is(NodeKind::AsyncFunctionDef);
}

// name -> resolved dotted prefix; nullopt marks a plain local variable.
using Scope = std::unordered_map<std::string, std::optional<std::string>>;

struct ClassContext {
  std::string qualified;
  std::set<std::string> methods;
};

class ScriptAnalyzer {
 public:
  ScriptAnalyzer(std::string_view path, ScriptRecord& out) : out_(out) {
    module_ = module_name_for(path);
    std::string stem(path);
    const auto slash = stem.find_last_of('/');
    is_package_init_ = stem.substr(slash == std::string::npos ? 0 : slash + 1) == "__init__.py";
  }

  void run(const Node& module) {
    python::walk(module, [&](const Node& n) {
      if (n.is(NodeKind::Import)) {
        for (const auto& a : n.aliases) push_unique(out_.imports, a.name);
      } else if (n.is(NodeKind::ImportFrom)) {
        const std::string base = resolve_from(n);
        for (const auto& a : n.aliases) {
          push_unique(out_.imports, a.name == "*" ? base : base + "." + a.name);
        }
      }
    });
    Scope scope;
    collect_bindings(module.body, module_, scope);
    scopes_.push_back(&scope);
    visit_block(module.body, module_, nullptr);
    scopes_.pop_back();
  }

 private:
  std::string resolve_from(const Node& n) const {
    if (n.level == 0) return n.text;
    std::vector<std::string> pkg = split_dots(module_);
    if (!is_package_init_ && !pkg.empty()) pkg.pop_back();
    const std::size_t up = static_cast<std::size_t>(n.level - 1);
    std::string base = up <= pkg.size() ? join(pkg, pkg.size() - up) : std::string();
    if (!n.text.empty()) base = base.empty() ? n.text : base + "." + n.text;
    return base;
  }

  void bind_targets(const Node& target, Scope& scope) {
    if (target.is(NodeKind::Name)) {
      scope[target.text] = std::nullopt;
    } else if (target.is(NodeKind::Tuple) || target.is(NodeKind::List) || target.is(NodeKind::Starred)) {
      for (const auto& child : target.children) bind_targets(*child, scope);
    }
  }

  // Static bindings of one scope: imports and definitions bind names, plain
  // assignments turn them into unresolvable locals.
  void collect_bindings(const python::NodeList& body, const std::string& prefix, Scope& scope) {
    for (const auto& stmt : body) {
      const Node& s = *stmt;
      switch (s.kind) {
        case NodeKind::Import:
          for (const auto& a : s.aliases) {
            if (!a.asname.empty()) {
              scope[a.asname] = a.name;
            } else {
              const std::string root = split_dots(a.name).front();
              scope[root] = root;
            }
          }
          break;
        case NodeKind::ImportFrom: {
          const std::string base = resolve_from(s);
          for (const auto& a : s.aliases) {
            if (a.name == "*") continue;
            scope[a.asname.empty() ? a.name : a.asname] = base + "." + a.name;
          }
          break;
        }
        case NodeKind::FunctionDef:
        case NodeKind::AsyncFunctionDef:
        case NodeKind::ClassDef:
          scope[s.text] = prefix + "." + s.text;
          break;
        case NodeKind::Assign:
          for (std::size_t i = 0; i + 1 < s.children.size(); ++i) bind_targets(*s.children[i], scope);
          break;
        case NodeKind::AugAssign:
        case NodeKind::AnnAssign:
          if (s.children.front()->is(NodeKind::Name)) scope[s.children.front()->text] = std::nullopt;
          break;
        case NodeKind::For:
        case NodeKind::AsyncFor:
          bind_targets(*s.children.front(), scope);
          break;
        case NodeKind::With:
        case NodeKind::AsyncWith:
          for (const auto& item : s.children) {
            if (item->children.size() > 1) bind_targets(*item->children[1], scope);
          }
          break;
        default:
          break;
      }
      if (!is_def(s) && !s.is(NodeKind::ClassDef)) {
        collect_bindings(s.body, prefix, scope);
        if (s.is(NodeKind::Try)) {
          for (const auto& h : s.handlers) {
            if (!h->text.empty()) scope[h->text] = std::nullopt;
            collect_bindings(h->body, prefix, scope);
          }
        }
        collect_bindings(s.orelse, prefix, scope);
        collect_bindings(s.finalbody, prefix, scope);
        if (s.is(NodeKind::Match)) {
          for (const auto& c : s.handlers) collect_bindings(c->body, prefix, scope);
        }
      }
    }
  }

  std::optional<std::string> lookup(const std::string& name) const {
    for (auto it = scopes_.rbegin(); it != scopes_.rend(); ++it) {
      const auto found = (*it)->find(name);
      if (found != (*it)->end()) return found->second;
    }
    return std::nullopt;
  }

  static bool dotted_name(const Node& n, std::vector<std::string>& parts) {
    if (n.is(NodeKind::Name)) {
      parts.push_back(n.text);
      return true;
    }
    if (n.is(NodeKind::Attribute)) {
      if (!dotted_name(*n.children.front(), parts)) return false;
      parts.push_back(n.text);
      return true;
    }
    return false;
  }

  std::optional<std::string> resolve_callee(const Node& func) const {
    std::vector<std::string> parts;
    if (!dotted_name(func, parts)) return std::nullopt;
    const std::string raw = join(parts, parts.size());
    if (cls_ && !self_name_.empty() && parts.front() == self_name_) {
      if (parts.size() == 2 && cls_->methods.contains(parts[1])) return cls_->qualified + "." + parts[1];
      return raw;
    }
    const auto bound = lookup(parts.front());
    if (!bound) return raw;
    std::string out = *bound;
    for (std::size_t i = 1; i < parts.size(); ++i) out += "." + parts[i];
    return out;
  }

  FunctionInfo& function_entry(const std::string& qname) {
    for (auto& f : out_.functions) {
      if (f.qualified_name == qname) return f;
    }
    out_.functions.push_back({qname, std::nullopt, {}});
    return out_.functions.back();
  }

  void collect_calls(const Node& n, FunctionInfo& fn) {
    if (is_def(n) || n.is(NodeKind::ClassDef)) return;
    if (n.is(NodeKind::Call)) {
      if (auto callee = resolve_callee(*n.children.front())) push_unique(fn.calls, *callee);
    }
    for (const auto* list : {&n.decorators, &n.children, &n.body, &n.handlers, &n.orelse, &n.finalbody}) {
      for (const auto& child : *list) collect_calls(*child, fn);
    }
  }

  void visit_function(const Node& def, const std::string& prefix, const ClassContext* cls) {
    const std::string qname = prefix + "." + def.text;
    FunctionInfo* fn = &function_entry(qname);
    if (!fn->docstring) {
      if (const Node* doc = python::docstring_node(def)) fn->docstring = python::clean_docstring(doc->text);
    }
    for (const auto& dec : def.decorators) {
      const Node& target = dec->is(NodeKind::Call) ? *dec->children.front() : *dec;
      if (auto callee = resolve_callee(target)) push_unique(fn->calls, *callee);
      if (dec->is(NodeKind::Call)) collect_calls(*dec, *fn);
    }

    Scope scope;
    const Node& args = *def.children.front();
    std::string first_param;
    for (const auto& arg : args.children) {
      if (first_param.empty()) first_param = arg->text;
      scope[arg->text] = std::nullopt;
    }
    collect_bindings(def.body, qname, scope);

    const ClassContext* saved_cls = cls_;
    const std::string saved_self = self_name_;
    if (cls) {
      cls_ = cls;
      self_name_ = first_param;
      for (const auto& d : def.decorators) {
        if (d->is(NodeKind::Name) && d->text == "staticmethod") self_name_.clear();
      }
    }
    scopes_.push_back(&scope);
    for (const auto& stmt : def.body) collect_calls(*stmt, *fn);
    visit_block(def.body, qname, nullptr);
    scopes_.pop_back();
    cls_ = saved_cls;
    self_name_ = saved_self;
  }

  void visit_class(const Node& cls_node, const std::string& prefix) {
    ClassContext ctx;
    ctx.qualified = prefix + "." + cls_node.text;
    for (const auto& stmt : cls_node.body) {
      if (is_def(*stmt)) ctx.methods.insert(stmt->text);
    }
    visit_block(cls_node.body, ctx.qualified, &ctx);
  }

  // Finds definitions nested anywhere in a block (not inside other defs).
  void visit_block(const python::NodeList& body, const std::string& prefix, const ClassContext* cls) {
    for (const auto& stmt : body) {
      const Node& s = *stmt;
      if (is_def(s)) {
        visit_function(s, prefix, cls);
        continue;
      }
      if (s.is(NodeKind::ClassDef)) {
        visit_class(s, prefix);
        continue;
      }
      visit_block(s.body, prefix, cls);
      for (const auto& h : s.handlers) visit_block(h->body, prefix, cls);
      visit_block(s.orelse, prefix, cls);
      visit_block(s.finalbody, prefix, cls);
    }
  }

  ScriptRecord& out_;
  std::string module_;
  bool is_package_init_ = false;
  std::vector<Scope*> scopes_;
  const ClassContext* cls_ = nullptr;
  std::string self_name_;
};

}  // namespace

std::string_view to_string(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::Internal: return "internal";
    case EdgeKind::Import: return "import";
    case EdgeKind::Unresolved: return "unresolved";
  }
  return "unresolved";
}

EdgeKind edge_kind_from_string(std::string_view s) {
  if (s == "internal") return EdgeKind::Internal;
  if (s == "import") return EdgeKind::Import;
  if (s == "unresolved") return EdgeKind::Unresolved;
  throw std::invalid_argument("unknown edge kind: " + std::string(s));
}

std::string module_name_for(std::string_view path) {
  std::string p(path);
  std::replace(p.begin(), p.end(), '\\', '/');
  if (p.size() >= 3 && p.ends_with(".py")) p.resize(p.size() - 3);
  if (p == "__init__") return "__init__";
  if (p.ends_with("/__init__")) p.resize(p.size() - 9);
  std::replace(p.begin(), p.end(), '/', '.');
  return p;
}

ScriptRecord analyze_script(std::string_view source, std::string_view path) {
  ScriptRecord record;
  record.path = std::string(path);
  try {
    const auto module = python::parse_module(source);
    ScriptAnalyzer(path, record).run(*module);
  } catch (const python::SyntaxError&) {
    record.imports.clear();
    record.functions.clear();
    record.parse_ok = false;
  }
  return record;
}

Analysis link(std::vector<ScriptRecord> scripts) {
  std::sort(scripts.begin(), scripts.end(),
            [](const ScriptRecord& a, const ScriptRecord& b) { return a.path < b.path; });

  std::unordered_set<std::string> defined;
  std::unordered_set<std::string> import_roots;
  for (const auto& s : scripts) {
    for (const auto& f : s.functions) defined.insert(f.qualified_name);
    for (const auto& imp : s.imports) import_roots.insert(split_dots(imp).front());
  }

  // Suffix index for callees written against a different package root
  // (e.g. "pkg.mod.f" naming "src/pkg/mod.py").
  std::unordered_map<std::string, std::vector<std::string>> by_suffix;
  for (const auto& q : defined) {
    const auto parts = split_dots(q);
    for (std::size_t k = 1; k + 1 < parts.size(); ++k) {
      std::string suffix;
      for (std::size_t i = k; i < parts.size(); ++i) suffix += (i > k ? "." : "") + parts[i];
      by_suffix[suffix].push_back(q);
    }
  }

  auto internal_target = [&](const std::string& callee) -> std::optional<std::string> {
    for (const std::string& c : {callee, callee + ".__init__"}) {
      if (defined.contains(c)) return c;
      if (c.find('.') == std::string::npos) continue;
      const auto it = by_suffix.find(c);
      if (it != by_suffix.end() && it->second.size() == 1) return it->second.front();
    }
    return std::nullopt;
  };

  std::set<CallEdge> edges;
  for (const auto& s : scripts) {
    for (const auto& f : s.functions) {
      for (const auto& call : f.calls) {
        if (auto target = internal_target(call)) {
          edges.insert({f.qualified_name, *target, EdgeKind::Internal});
        } else if (import_roots.contains(split_dots(call).front())) {
          edges.insert({f.qualified_name, call, EdgeKind::Import});
        } else {
          edges.insert({f.qualified_name, call, EdgeKind::Unresolved});
        }
      }
    }
  }
  return {std::move(scripts), {edges.begin(), edges.end()}};
}

Analysis analyze_repository(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) {
    throw std::runtime_error("repository root missing or unreadable: " + root.string());
  }
  std::vector<fs::path> files;
  fs::recursive_directory_iterator it(root, fs::directory_options::none, ec);
  if (ec) throw std::runtime_error("cannot read repository root " + root.string() + ": " + ec.message());
  for (; it != fs::recursive_directory_iterator(); it.increment(ec)) {
    if (ec) throw std::runtime_error("error walking " + root.string() + ": " + ec.message());
    const fs::path& p = it->path();
    const std::string name = p.filename().string();
    if (it->is_symlink()) {
      if (it->is_directory()) it.disable_recursion_pending();
      continue;
    }
    if (it->is_directory()) {
      if (name.starts_with(".") || name == "__pycache__") it.disable_recursion_pending();
      continue;
    }
    if (it->is_regular_file() && p.extension() == ".py") files.push_back(p);
  }

  std::vector<ScriptRecord> records;
  records.reserve(files.size());
  for (const auto& file : files) {
    std::ifstream in(file, std::ios::binary);
    std::stringstream buf;
    buf << in.rdbuf();
    records.push_back(analyze_script(buf.str(), fs::relative(file, root).generic_string()));
  }
  return link(std::move(records));
}

nlohmann::ordered_json to_json(const Analysis& analysis) {
  nlohmann::ordered_json scripts = nlohmann::ordered_json::array();
  for (const auto& s : analysis.scripts) {
    nlohmann::ordered_json functions = nlohmann::ordered_json::array();
    for (const auto& f : s.functions) {
      nlohmann::ordered_json jf;
      jf["qualified_name"] = f.qualified_name;
      jf["docstring"] = f.docstring ? nlohmann::ordered_json(*f.docstring) : nlohmann::ordered_json();
      jf["calls"] = f.calls;
      functions.push_back(std::move(jf));
    }
    nlohmann::ordered_json js;
    js["path"] = s.path;
    js["imports"] = s.imports;
    js["functions"] = std::move(functions);
    js["parse_ok"] = s.parse_ok;
    scripts.push_back(std::move(js));
  }
  nlohmann::ordered_json edges = nlohmann::ordered_json::array();
  for (const auto& e : analysis.edges) {
    edges.push_back({{"caller", e.caller}, {"callee", e.callee}, {"kind", to_string(e.kind)}});
  }
  nlohmann::ordered_json out;
  out["scripts"] = std::move(scripts);
  out["edges"] = std::move(edges);
  return out;
}

Analysis analysis_from_json(const nlohmann::json& j) {
  Analysis a;
  for (const auto& js : j.at("scripts")) {
    ScriptRecord s;
    s.path = js.at("path").get<std::string>();
    s.imports = js.at("imports").get<std::vector<std::string>>();
    s.parse_ok = js.at("parse_ok").get<bool>();
    for (const auto& jf : js.at("functions")) {
      FunctionInfo f;
      f.qualified_name = jf.at("qualified_name").get<std::string>();
      if (!jf.at("docstring").is_null()) f.docstring = jf.at("docstring").get<std::string>();
      f.calls = jf.at("calls").get<std::vector<std::string>>();
      s.functions.push_back(std::move(f));
    }
    a.scripts.push_back(std::move(s));
  }
  for (const auto& je : j.at("edges")) {
    a.edges.push_back({je.at("caller").get<std::string>(), je.at("callee").get<std::string>(),
                       edge_kind_from_string(je.at("kind").get<std::string>())});
  }
  return a;
}

std::string dump(const Analysis& analysis) {
  return to_json(analysis).dump(2, ' ', false, nlohmann::ordered_json::error_handler_t::replace) + "\n";
}

}  // namespace topical::analyzer
