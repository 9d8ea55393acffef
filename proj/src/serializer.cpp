#include "topical/serializer.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include "topical/errors.hpp"

namespace topical::serializer {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

void append(std::vector<std::string>& out, std::vector<std::string> more) {
  for (auto& t : more) out.push_back(std::move(t));
}

void truncate(TokenSequence& s) {
  if (s.tokens.size() > kMaxTokens) s.tokens.resize(kMaxTokens);
}

// Name relative to the script's module: "pkg.mod.Cls.run" -> "Cls.run".
std::string local_name(const std::string& qualified, const std::string& module) {
  if (qualified.size() > module.size() && qualified.compare(0, module.size(), module) == 0 &&
      qualified[module.size()] == '.') {
    return qualified.substr(module.size() + 1);
  }
  return qualified;
}

std::string basename(const std::string& path) {
  const auto slash = path.find_last_of('/');
  return slash == std::string::npos ? path : path.substr(slash + 1);
}

}  // namespace

std::string_view to_string(Domain d) {
  switch (d) {
    case Domain::Code: return "code";
    case Domain::Doc: return "doc";
    case Domain::Dep: return "dep";
  }
  return "?";
}

Domain domain_from_string(std::string_view s) {
  if (s == "code") return Domain::Code;
  if (s == "doc") return Domain::Doc;
  if (s == "dep") return Domain::Dep;
  throw ValidationError("unknown domain '" + std::string(s) + "'");
}

const std::vector<Domain>& all_domains() {
  static const std::vector<Domain> d{Domain::Code, Domain::Doc, Domain::Dep};
  return d;
}

std::vector<std::string> split_name(std::string_view name) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < name.size(); ++i) {
    const auto c = static_cast<unsigned char>(name[i]);
    if (!is_word_byte(c) || c == '_') {
      flush();
      continue;
    }
    if (std::isupper(c) && !cur.empty()) {
      const auto prev = static_cast<unsigned char>(name[i - 1]);
      const bool next_lower = i + 1 < name.size() && std::islower(static_cast<unsigned char>(name[i + 1]));
      // "fooBar" and the "F" of "CSVFile" start a new word.
      if (std::islower(prev) || std::isdigit(prev) || (std::isupper(prev) && next_lower)) flush();
    }
    cur.push_back(static_cast<char>(std::tolower(c)));
  }
  flush();
  return out;
}

std::vector<std::string> word_tokens(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_word_byte(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t j = i;
    while (j < text.size() && is_word_byte(static_cast<unsigned char>(text[j]))) ++j;
    append(out, split_name(text.substr(i, j - i)));
    i = j;
  }
  return out;
}

TokenSequence serialize_code(std::string_view source, std::string path) {
  TokenSequence s{std::move(path), Domain::Code, {kCls}};
  std::size_t i = 0;
  while (i < source.size() && s.tokens.size() < kMaxTokens) {
    const auto c = static_cast<unsigned char>(source[i]);
    if (std::isspace(c)) {
      ++i;
    } else if (is_word_byte(c)) {
      std::size_t j = i;
      while (j < source.size() && is_word_byte(static_cast<unsigned char>(source[j]))) ++j;
      s.tokens.emplace_back(source.substr(i, j - i));
      i = j;
    } else {
      s.tokens.emplace_back(1, static_cast<char>(c));
      ++i;
    }
  }
  return s;
}

TokenSequence serialize_doc(const analyzer::ScriptRecord& record) {
  TokenSequence s{record.path, Domain::Doc, {kCls}};
  const std::string module = analyzer::module_name_for(record.path);
  append(s.tokens, split_name(basename(record.path)));
  for (const auto& f : record.functions) append(s.tokens, split_name(local_name(f.qualified_name, module)));
  s.tokens.push_back(kSep);
  for (const auto& f : record.functions) {
    if (s.tokens.size() >= kMaxTokens) break;
    if (f.docstring) append(s.tokens, word_tokens(*f.docstring));
  }
  truncate(s);
  return s;
}

TokenSequence serialize_dep(const analyzer::ScriptRecord& record, const std::vector<analyzer::CallEdge>& edges) {
  TokenSequence s{record.path, Domain::Dep, {kCls}};
  const std::string module = analyzer::module_name_for(record.path);
  std::set<std::string> own;
  for (const auto& f : record.functions) own.insert(f.qualified_name);

  std::vector<const analyzer::CallEdge*> first_rank;
  for (const auto& e : edges) {
    if (own.count(e.caller)) first_rank.push_back(&e);
  }
  std::sort(first_rank.begin(), first_rank.end(), [](const auto* a, const auto* b) { return *a < *b; });

  if (first_rank.empty()) {
    for (const auto& f : record.functions) append(s.tokens, split_name(local_name(f.qualified_name, module)));
    s.tokens.push_back(kSep);
    for (const auto& imp : record.imports) append(s.tokens, split_name(imp));
  }
  for (const auto* e : first_rank) {
    if (s.tokens.size() >= kMaxTokens) break;
    append(s.tokens, split_name(local_name(e->caller, module)));
    s.tokens.push_back(kEdge);
    append(s.tokens, split_name(e->callee));
    s.tokens.push_back(kSep);
  }
  truncate(s);
  return s;
}

nlohmann::ordered_json sequence_json(const TokenSequence& s) {
  nlohmann::ordered_json j;
  j["path"] = s.path;
  j["domain"] = to_string(s.domain);
  j["tokens"] = s.tokens;
  return j;
}

TokenSequence sequence_from_json(const nlohmann::json& j) {
  try {
    return {j.at("path").get<std::string>(), domain_from_string(j.at("domain").get<std::string>()),
            j.at("tokens").get<std::vector<std::string>>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed token record: ") + e.what());
  }
}

}  // namespace topical::serializer
