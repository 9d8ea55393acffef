#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "topical/analyzer.hpp"

namespace topical::serializer {

enum class Domain { Code, Doc, Dep };

inline constexpr std::size_t kMaxTokens = 512;
inline constexpr const char* kCls = "[CLS]";
inline constexpr const char* kSep = "[SEP]";
inline constexpr const char* kEdge = "[C]";
inline constexpr const char* kPad = "[PAD]";

struct TokenSequence {
  std::string path;
  Domain domain = Domain::Code;
  std::vector<std::string> tokens;
};

std::string_view to_string(Domain d);
Domain domain_from_string(std::string_view s);
const std::vector<Domain>& all_domains();

// Splits identifiers and dotted names into lowercase words on '.', '_' and
// camelCase boundaries: "os.path.readCSVFile" -> os path read csv file.
std::vector<std::string> split_name(std::string_view name);

// Lowercase alphanumeric runs, each further split by split_name.
std::vector<std::string> word_tokens(std::string_view text);

TokenSequence serialize_code(std::string_view source, std::string path = {});
TokenSequence serialize_doc(const analyzer::ScriptRecord& record);
TokenSequence serialize_dep(const analyzer::ScriptRecord& record, const std::vector<analyzer::CallEdge>& edges);

nlohmann::ordered_json sequence_json(const TokenSequence& s);
TokenSequence sequence_from_json(const nlohmann::json& j);

}  // namespace topical::serializer
