#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <algorithm>
#include <atomic>
#include <mutex>
#include <set>
#include <thread>

#include "topical/corpus.hpp"

namespace topical::corpus {

namespace {

std::string url_encode(std::string_view s) {
  static constexpr char hex[] = "0123456789ABCDEF";
  std::string out;
  for (const char c : s) {
    const auto u = static_cast<unsigned char>(c);
    if (std::isalnum(u) || c == '-' || c == '_' || c == '.' || c == '~' || c == ':') {
      out.push_back(c);
    } else {
      out.push_back('%');
      out.push_back(hex[u >> 4]);
      out.push_back(hex[u & 15]);
    }
  }
  return out;
}

std::int64_t header_int(const httplib::Response& res, const char* name, std::int64_t fallback) {
  if (!res.has_header(name)) return fallback;
  try {
    return std::stoll(res.get_header_value(name));
  } catch (const std::exception&) {
    return fallback;
  }
}

bool is_rate_limited(const httplib::Response& res) {
  if (res.status == 429) return true;
  if (res.status != 403) return false;
  return res.has_header("Retry-After") || header_int(res, "X-RateLimit-Remaining", 1) == 0;
}

class Fetcher {
 public:
  Fetcher(const std::string& api_base, const CrawlOptions& options, CrawlStats& stats)
      : client_(api_base), options_(options), stats_(stats) {
    client_.set_follow_location(true);
    client_.set_connection_timeout(10);
    client_.set_read_timeout(30);
  }

  nlohmann::json get(const std::string& path) {
    httplib::Headers headers{{"Accept", "application/vnd.github+json"}, {"User-Agent", "repotopical"}};
    if (options_.auth_token) headers.emplace("Authorization", "Bearer " + *options_.auth_token);

    for (int attempt = 0;; ++attempt) {
      ++stats_.requests;
      const auto res = client_.Get(path, headers);
      const bool last = attempt >= options_.max_retries;
      if (!res) {
        if (last) {
          throw RetriableError("network failure for " + path + ": " + httplib::to_string(res.error()));
        }
        retry_after(options_.backoff * (1 << std::min(attempt, 10)));
        continue;
      }
      if (res->status == 200) {
        try {
          return nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::exception& e) {
          throw RetriableError("malformed response for " + path + ": " + e.what());
        }
      }
      if (res->status == 401) throw AuthError("authentication rejected (HTTP 401)");
      if (is_rate_limited(*res)) {
        if (last) throw RetriableError("rate limit persisted after " + std::to_string(attempt) + " retries");
        retry_after(rate_limit_wait(*res));
        continue;
      }
      if (res->status == 403) throw AuthError("access forbidden (HTTP 403)");
      if (res->status >= 500 && !last) {
        retry_after(options_.backoff * (1 << std::min(attempt, 10)));
        continue;
      }
      throw RetriableError("HTTP " + std::to_string(res->status) + " for " + path);
    }
  }

 private:
  std::chrono::milliseconds rate_limit_wait(const httplib::Response& res) const {
    std::int64_t seconds = header_int(res, "Retry-After", -1);
    if (seconds < 0) {
      const std::int64_t reset = header_int(res, "X-RateLimit-Reset", -1);
      const std::int64_t now = options_.now ? options_.now()
                                            : std::chrono::duration_cast<std::chrono::seconds>(
                                                  std::chrono::system_clock::now().time_since_epoch())
                                                  .count();
      seconds = reset >= 0 ? reset - now : 60;
    }
    seconds = std::clamp<std::int64_t>(seconds, 0, options_.max_wait.count());
    return std::chrono::seconds(seconds);
  }

  void retry_after(std::chrono::milliseconds wait) {
    ++stats_.retries;
    if (options_.sleep) {
      options_.sleep(wait);
    } else {
      std::this_thread::sleep_for(wait);
    }
  }

  httplib::Client client_;
  const CrawlOptions& options_;
  CrawlStats& stats_;
};

}  // namespace

std::vector<RepoManifestEntry> crawl_topic(const std::string& api_base, const std::string& topic,
                                           std::size_t max_repos, const CrawlOptions& options,
                                           CrawlStats* stats) {
  if (max_repos < 1) throw std::invalid_argument("max_repos must be at least 1");
  CrawlStats local;
  CrawlStats& st = stats ? *stats : local;
  Fetcher fetcher(api_base, options, st);

  const auto per_page = static_cast<std::size_t>(std::clamp(options.per_page, 1, 100));
  std::vector<RepoManifestEntry> out;
  std::set<std::string> seen;
  for (int page = 1; out.size() < max_repos; ++page) {
    const std::size_t want = std::min(per_page, max_repos - out.size());
    const std::string path = "/search/repositories?q=" + url_encode("topic:" + topic) +
                             "&per_page=" + std::to_string(per_page) + "&page=" + std::to_string(page);
    const nlohmann::json body = fetcher.get(path);
    if (!body.contains("items") || !body.at("items").is_array()) break;
    const auto& items = body.at("items");
    for (const auto& item : items) {
      if (out.size() >= max_repos) break;
      if (!item.contains("full_name") || !item.at("full_name").is_string()) continue;
      RepoManifestEntry e;
      e.repo_id = item.at("full_name").get<std::string>();
      if (!seen.insert(e.repo_id).second) continue;
      if (item.contains("topics") && item.at("topics").is_array()) {
        for (const auto& t : item.at("topics")) {
          if (t.is_string()) e.raw_topics.push_back(t.get<std::string>());
        }
      }
      out.push_back(std::move(e));
    }
    if (items.size() < want || items.empty()) break;
  }
  return out;
}

std::vector<RepoManifestEntry> crawl_topics(const std::string& api_base, const std::vector<std::string>& topics,
                                            std::size_t max_repos, std::size_t concurrency,
                                            const CrawlOptions& options, CrawlStats* stats) {
  std::vector<std::vector<RepoManifestEntry>> results(topics.size());
  std::vector<CrawlStats> per_topic(topics.size());
  std::vector<std::exception_ptr> errors(topics.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < topics.size(); i = next++) {
      try {
        results[i] = crawl_topic(api_base, topics[i], max_repos, options, &per_topic[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(concurrency, topics.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  std::vector<RepoManifestEntry> merged;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < topics.size(); ++i) {
    if (stats) {
      stats->requests += per_topic[i].requests;
      stats->retries += per_topic[i].retries;
    }
    for (auto& e : results[i]) {
      if (seen.insert(e.repo_id).second) merged.push_back(std::move(e));
    }
  }
  return merged;
}

}  // namespace topical::corpus
