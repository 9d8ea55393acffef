#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace topical::corpus {

struct RepoManifestEntry {
  std::string repo_id;
  std::string local_path;
  std::vector<std::string> raw_topics;
  std::vector<std::string> featured_topics;

  bool operator==(const RepoManifestEntry&) const = default;
};

struct TopicVocabulary {
  std::vector<std::string> topics;
  std::vector<std::string> repo_ids;  // row labels of label_matrix
  std::vector<std::vector<std::uint8_t>> label_matrix;

  [[nodiscard]] std::size_t rows() const { return label_matrix.size(); }
};

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

// 100 * (1 - d / max(|a|, |b|)) over case-folded code points, d = Levenshtein
// distance. Two empty strings score 100.
double levenshtein_ratio(std::string_view a, std::string_view b);

// Lowercase with '-', '_' and whitespace removed.
std::string topic_key(std::string_view topic);

std::vector<std::string> normalize_topics(const std::vector<std::string>& raw,
                                          const std::vector<std::string>& featured,
                                          double threshold = 90.0);

TopicVocabulary build_label_matrix(const std::vector<RepoManifestEntry>& manifest, std::size_t top_k);

Split split_corpus(std::size_t rows, double train_fraction, std::uint64_t seed,
                   double validation_fraction = 0.2);

std::vector<std::string> load_featured_topics(const std::filesystem::path& path);
std::filesystem::path default_featured_topics_path();

std::vector<RepoManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<RepoManifestEntry>& entries);
nlohmann::ordered_json manifest_entry_json(const RepoManifestEntry& e);

nlohmann::ordered_json vocabulary_json(const TopicVocabulary& v);
TopicVocabulary vocabulary_from_json(const nlohmann::json& j);

nlohmann::ordered_json split_json(const Split& s);
Split split_from_json(const nlohmann::json& j);

// ---------------------------------------------------------------- crawler

class AuthError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RetriableError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CrawlOptions {
  std::optional<std::string> auth_token;
  int per_page = 100;
  int max_retries = 5;
  std::chrono::seconds max_wait{3600};
  std::chrono::milliseconds backoff{500};
  // Replaceable for tests; defaults to std::this_thread::sleep_for.
  std::function<void(std::chrono::milliseconds)> sleep;
  // Seconds since the epoch, used with rate-limit reset headers.
  std::function<std::int64_t()> now;
};

struct CrawlStats {
  int requests = 0;
  int retries = 0;
};

std::vector<RepoManifestEntry> crawl_topic(const std::string& api_base, const std::string& topic,
                                           std::size_t max_repos, const CrawlOptions& options = {},
                                           CrawlStats* stats = nullptr);

// Crawls several topics with at most `concurrency` requests in flight and
// merges the results in topic order; repositories seen twice keep their
// first entry.
std::vector<RepoManifestEntry> crawl_topics(const std::string& api_base,
                                            const std::vector<std::string>& topics,
                                            std::size_t max_repos, std::size_t concurrency,
                                            const CrawlOptions& options = {},
                                            CrawlStats* stats = nullptr);

}  // namespace topical::corpus
