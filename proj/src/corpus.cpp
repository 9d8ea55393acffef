#include "topical/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "topical/errors.hpp"
#include "topical/io.hpp"
#include "topical/random.hpp"

namespace topical::corpus {

namespace {

std::vector<char32_t> folded_code_points(std::string_view s) {
  std::vector<char32_t> out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size();) {
    const auto b = static_cast<unsigned char>(s[i]);
    int extra = b >= 0xF0 ? 3 : b >= 0xE0 ? 2 : b >= 0xC0 ? 1 : 0;
    if (extra && i + static_cast<std::size_t>(extra) >= s.size()) extra = 0;
    char32_t cp = extra == 0 ? b : b & (0x3F >> extra);
    for (int k = 1; k <= extra; ++k) cp = (cp << 6) | (static_cast<unsigned char>(s[i + k]) & 0x3F);
    if (cp < 0x80) cp = static_cast<char32_t>(std::tolower(static_cast<int>(cp)));
    out.push_back(cp);
    i += static_cast<std::size_t>(extra) + 1;
  }
  return out;
}

std::size_t levenshtein(const std::vector<char32_t>& a, const std::vector<char32_t>& b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j) {
      const std::size_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

std::vector<std::string> string_list(const nlohmann::json& j, const char* field, std::size_t line) {
  if (!j.contains(field) || !j.at(field).is_array()) {
    throw ValidationError("manifest line " + std::to_string(line) + ": missing list field '" + field + "'");
  }
  std::vector<std::string> out;
  for (const auto& v : j.at(field)) {
    if (!v.is_string()) {
      throw ValidationError("manifest line " + std::to_string(line) + ": non-string in '" + field + "'");
    }
    out.push_back(v.get<std::string>());
  }
  return out;
}

}  // namespace

double levenshtein_ratio(std::string_view a, std::string_view b) {
  const auto ca = folded_code_points(a);
  const auto cb = folded_code_points(b);
  const std::size_t longest = std::max(ca.size(), cb.size());
  if (longest == 0) return 100.0;
  const std::size_t d = levenshtein(ca, cb);
  return 100.0 * (1.0 - static_cast<double>(d) / static_cast<double>(longest));
}

std::string topic_key(std::string_view topic) {
  std::string out;
  for (const char c : topic) {
    if (c == '-' || c == '_' || std::isspace(static_cast<unsigned char>(c))) continue;
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

std::vector<std::string> normalize_topics(const std::vector<std::string>& raw,
                                          const std::vector<std::string>& featured, double threshold) {
  std::vector<std::string> keys;
  keys.reserve(featured.size());
  for (const auto& f : featured) keys.push_back(topic_key(f));

  std::vector<std::string> out;
  for (const auto& r : raw) {
    const std::string key = topic_key(r);
    std::optional<std::size_t> best;
    double best_score = -1.0;
    for (std::size_t i = 0; i < featured.size(); ++i) {
      const double score = key == keys[i] ? 100.0 : levenshtein_ratio(r, featured[i]);
      if (score > best_score) {
        best_score = score;
        best = i;
        if (score == 100.0) break;
      }
    }
    if (best && best_score >= threshold &&
        std::find(out.begin(), out.end(), featured[*best]) == out.end()) {
      out.push_back(featured[*best]);
    }
  }
  return out;
}

TopicVocabulary build_label_matrix(const std::vector<RepoManifestEntry>& manifest, std::size_t top_k) {
  if (top_k < 1) throw ValidationError("top_k must be at least 1");
  std::map<std::string, std::size_t> counts;
  for (const auto& e : manifest) {
    std::set<std::string> seen(e.featured_topics.begin(), e.featured_topics.end());
    for (const auto& t : seen) ++counts[t];
  }
  if (counts.size() < top_k) {
    throw ValidationError("only " + std::to_string(counts.size()) + " distinct featured topics, top_k=" +
                          std::to_string(top_k));
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  TopicVocabulary v;
  for (std::size_t i = 0; i < top_k; ++i) v.topics.push_back(ranked[i].first);
  for (const auto& e : manifest) {
    std::vector<std::uint8_t> row(top_k, 0);
    bool any = false;
    for (std::size_t t = 0; t < top_k; ++t) {
      if (std::find(e.featured_topics.begin(), e.featured_topics.end(), v.topics[t]) !=
          e.featured_topics.end()) {
        row[t] = 1;
        any = true;
      }
    }
    if (!any) continue;
    v.repo_ids.push_back(e.repo_id);
    v.label_matrix.push_back(std::move(row));
  }
  return v;
}

Split split_corpus(std::size_t rows, double train_fraction, std::uint64_t seed, double validation_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ValidationError("train_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(rows);
  for (std::size_t i = 0; i < rows; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  const auto train_total = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows)));
  const auto val = static_cast<std::size_t>(std::llround(validation_fraction * static_cast<double>(train_total)));
  if (train_total > rows || val >= train_total || train_total == rows) {
    throw ValidationError("split of " + std::to_string(rows) + " rows at fraction " +
                          std::to_string(train_fraction) + " leaves an empty partition");
  }
  Split s;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(train_total - val));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(train_total - val),
                      order.begin() + static_cast<std::ptrdiff_t>(train_total));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(train_total), order.end());
  if (s.train.empty() || s.validation.empty() || s.test.empty()) {
    throw ValidationError("split of " + std::to_string(rows) + " rows leaves an empty partition");
  }
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::filesystem::path default_featured_topics_path() {
  return std::filesystem::path(TOPICAL_DATA_DIR) / "featured_topics.txt";
}

std::vector<std::string> load_featured_topics(const std::filesystem::path& path) {
  std::istringstream in(io::read_file(path));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    const auto start = line.find_first_not_of(" \t");
    if (start == std::string::npos) continue;
    line.erase(0, start);
    if (line.front() == '#') continue;
    if (std::find(out.begin(), out.end(), line) == out.end()) out.push_back(line);
  }
  if (out.empty()) throw ValidationError("featured topic list is empty: " + path.string());
  return out;
}

nlohmann::ordered_json manifest_entry_json(const RepoManifestEntry& e) {
  nlohmann::ordered_json j;
  j["repo_id"] = e.repo_id;
  j["local_path"] = e.local_path;
  j["raw_topics"] = e.raw_topics;
  j["featured_topics"] = e.featured_topics;
  return j;
}

std::vector<RepoManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::vector<RepoManifestEntry> out;
  std::set<std::string> ids;
  std::size_t line = 0;
  for (const auto& j : io::read_jsonl(path)) {
    ++line;
    if (!j.is_object() || !j.contains("repo_id") || !j.at("repo_id").is_string()) {
      throw ValidationError(path.string() + ": entry " + std::to_string(line) + " lacks repo_id");
    }
    RepoManifestEntry e;
    e.repo_id = j.at("repo_id").get<std::string>();
    if (e.repo_id.empty()) throw ValidationError(path.string() + ": empty repo_id");
    if (!ids.insert(e.repo_id).second) throw ValidationError(path.string() + ": duplicate repo_id " + e.repo_id);
    if (j.contains("local_path") && j.at("local_path").is_string()) e.local_path = j.at("local_path").get<std::string>();
    e.raw_topics = string_list(j, "raw_topics", line);
    e.featured_topics = string_list(j, "featured_topics", line);
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<RepoManifestEntry>& entries) {
  std::string text;
  for (const auto& e : entries) text += manifest_entry_json(e).dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace) + "\n";
  io::write_file(path, text);
}

nlohmann::ordered_json vocabulary_json(const TopicVocabulary& v) {
  nlohmann::ordered_json j;
  j["topics"] = v.topics;
  j["repo_ids"] = v.repo_ids;
  nlohmann::ordered_json m = nlohmann::ordered_json::array();
  for (const auto& row : v.label_matrix) {
    nlohmann::ordered_json r = nlohmann::ordered_json::array();
    for (const auto x : row) r.push_back(static_cast<int>(x));
    m.push_back(std::move(r));
  }
  j["label_matrix"] = std::move(m);
  return j;
}

TopicVocabulary vocabulary_from_json(const nlohmann::json& j) {
  TopicVocabulary v;
  try {
    v.topics = j.at("topics").get<std::vector<std::string>>();
    v.repo_ids = j.at("repo_ids").get<std::vector<std::string>>();
    for (const auto& row : j.at("label_matrix")) {
      std::vector<std::uint8_t> r;
      for (const auto& x : row) r.push_back(static_cast<std::uint8_t>(x.get<int>() != 0));
      if (r.size() != v.topics.size()) throw ValidationError("label row width differs from topic count");
      v.label_matrix.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed labels file: ") + e.what());
  }
  if (v.repo_ids.size() != v.label_matrix.size()) throw ValidationError("labels: repo_ids and rows differ in length");
  return v;
}

nlohmann::ordered_json split_json(const Split& s) {
  nlohmann::ordered_json j;
  j["train"] = s.train;
  j["validation"] = s.validation;
  j["test"] = s.test;
  return j;
}

Split split_from_json(const nlohmann::json& j) {
  try {
    return {j.at("train").get<std::vector<std::size_t>>(), j.at("validation").get<std::vector<std::size_t>>(),
            j.at("test").get<std::vector<std::size_t>>()};
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed split file: ") + e.what());
  }
}

}  // namespace topical::corpus
