#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "support.hpp"
#include "topical/corpus.hpp"
#include "topical/errors.hpp"
#include "topical/io.hpp"
#include "topical/synth.hpp"

using namespace topical;
using namespace topical::corpus;
using topical::testing::TempDir;

namespace {

RepoManifestEntry entry(std::string id, std::vector<std::string> featured) {
  return {std::move(id), "", {}, std::move(featured)};
}

std::string random_word(std::mt19937& rng) {
  static const std::string alphabet = "abcdeAB-_ xyz";
  std::uniform_int_distribution<std::size_t> len(0, 10), pick(0, alphabet.size() - 1);
  std::string s;
  for (std::size_t i = len(rng); i > 0; --i) s.push_back(alphabet[pick(rng)]);
  return s;
}

}  // namespace

TEST(LevenshteinRatio, Examples) {
  EXPECT_EQ(levenshtein_ratio("machine-learning", "machine-learning"), 100.0);
  EXPECT_DOUBLE_EQ(levenshtein_ratio("machine-learning", "machinelearning"), 93.75);
  EXPECT_LT(levenshtein_ratio("django", "bitcoin"), 90.0);
  EXPECT_EQ(levenshtein_ratio("", ""), 100.0);
  EXPECT_EQ(levenshtein_ratio("abc", ""), 0.0);
  EXPECT_EQ(levenshtein_ratio("Django", "django"), 100.0);
}

TEST(LevenshteinRatio, SymmetricAndBounded) {
  std::mt19937 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const auto a = random_word(rng), b = random_word(rng);
    const double ab = levenshtein_ratio(a, b);
    EXPECT_EQ(ab, levenshtein_ratio(b, a)) << a << " / " << b;
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 100.0);
  }
}

TEST(LevenshteinRatio, CountsCodePointsNotBytes) {
  // one substitution over four characters
  EXPECT_DOUBLE_EQ(levenshtein_ratio("caf\xc3\xa9", "cafe"), 75.0);
}

TEST(NormalizeTopics, FixtureTable) {
  const auto featured = load_featured_topics(default_featured_topics_path());
  const auto rows = io::read_json(topical::testing::fixture("fuzzy_pairs.json"));
  ASSERT_EQ(rows.size(), 30u);
  bool saw_machinelearning = false;
  for (const auto& r : rows) {
    const std::string raw = r.at("raw");
    const auto got = normalize_topics({raw}, featured);
    if (r.at("expected").is_null()) {
      EXPECT_TRUE(got.empty()) << raw << " mapped to " << got.front();
    } else {
      ASSERT_EQ(got.size(), 1u) << raw;
      EXPECT_EQ(got.front(), r.at("expected").get<std::string>()) << raw;
    }
    EXPECT_NEAR(levenshtein_ratio(raw, r.at("best").get<std::string>()), r.at("ratio").get<double>(), 1e-9) << raw;
    if (raw == "machinelearning") {
      saw_machinelearning = true;
      EXPECT_DOUBLE_EQ(r.at("ratio").get<double>(), 93.75);
    }
  }
  EXPECT_TRUE(saw_machinelearning);
}

TEST(NormalizeTopics, Examples) {
  EXPECT_EQ(normalize_topics({"machinelearning"}, {"machine-learning", "django"}),
            std::vector<std::string>{"machine-learning"});
  EXPECT_TRUE(normalize_topics({}, {"django"}).empty());
  EXPECT_EQ(normalize_topics({"machine-learning", "ml-framework-x"}, {"machine-learning"}),
            std::vector<std::string>{"machine-learning"});
}

TEST(NormalizeTopics, DeduplicatesInFirstOccurrenceOrder) {
  EXPECT_EQ(normalize_topics({"Django", "database", "django", "Database"}, {"database", "django"}),
            (std::vector<std::string>{"django", "database"}));
}

TEST(NormalizeTopics, Idempotent) {
  const auto featured = load_featured_topics(default_featured_topics_path());
  std::mt19937 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> pick;
    for (int i = 0; i < 4; ++i) pick.push_back(featured[rng() % featured.size()]);
    const auto once = normalize_topics(pick, featured);
    EXPECT_EQ(normalize_topics(once, featured), once);
  }
}

TEST(NormalizeTopics, SyntheticVariantsAllMatch) {
  const auto featured = load_featured_topics(default_featured_topics_path());
  for (const auto& pool : synth::topic_pool()) {
    for (const auto& v : pool.raw_variants) {
      EXPECT_EQ(normalize_topics({v}, featured), std::vector<std::string>{pool.topic}) << v;
    }
  }
}

TEST(LabelMatrix, Examples) {
  auto v = build_label_matrix({entry("r1", {"A"}), entry("r2", {"A", "B"}), entry("r3", {"B"})}, 2);
  EXPECT_EQ(v.topics, (std::vector<std::string>{"A", "B"}));
  EXPECT_EQ(v.label_matrix, (std::vector<std::vector<std::uint8_t>>{{1, 0}, {1, 1}, {0, 1}}));

  v = build_label_matrix({entry("r1", {"A"}), entry("r2", {"A"}), entry("r3", {"C"})}, 1);
  EXPECT_EQ(v.topics, std::vector<std::string>{"A"});
  EXPECT_EQ(v.repo_ids, (std::vector<std::string>{"r1", "r2"}));
  EXPECT_EQ(v.label_matrix, (std::vector<std::vector<std::uint8_t>>{{1}, {1}}));

  v = build_label_matrix({entry("r1", {"A"}), entry("r2", {"A", "C"}), entry("r3", {"B"})}, 2);
  EXPECT_EQ(v.topics, (std::vector<std::string>{"A", "B"}));
}

TEST(LabelMatrix, TooFewTopics) {
  EXPECT_THROW(build_label_matrix({entry("r1", {"A"})}, 2), ValidationError);
}

TEST(LabelMatrix, RowsNonEmptyAndColumnsOrdered) {
  std::mt19937 rng(3);
  const std::vector<std::string> names{"a", "b", "c", "d", "e", "f"};
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<RepoManifestEntry> m;
    for (int r = 0; r < 30; ++r) {
      std::vector<std::string> tags;
      for (const auto& n : names) {
        if (rng() % 3 == 0) tags.push_back(n);
      }
      m.push_back(entry("r" + std::to_string(r), tags));
    }
    TopicVocabulary v;
    try {
      v = build_label_matrix(m, 3);
    } catch (const ValidationError&) {
      continue;
    }
    std::vector<int> freq(3, 0);
    for (const auto& row : v.label_matrix) {
      int sum = 0;
      for (std::size_t c = 0; c < 3; ++c) {
        sum += row[c];
        freq[c] += row[c];
      }
      EXPECT_GE(sum, 1);
    }
    EXPECT_GE(freq[0], freq[1]);
    EXPECT_GE(freq[1], freq[2]);
  }
}

TEST(Split, PartitionForAllSeeds) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const std::size_t rows = 10 + seed % 50;
    const auto s = split_corpus(rows, 0.7, seed);
    std::set<std::size_t> all;
    for (const auto* part : {&s.train, &s.validation, &s.test}) {
      EXPECT_FALSE(part->empty());
      for (const auto i : *part) EXPECT_TRUE(all.insert(i).second) << "index twice: " << i;
    }
    EXPECT_EQ(all.size(), rows);
    EXPECT_EQ(*all.rbegin(), rows - 1);
  }
}

TEST(Split, DefaultProportionsAndDeterminism) {
  const auto a = split_corpus(200, 0.7, 9);
  EXPECT_EQ(a.train.size() + a.validation.size(), 140u);
  EXPECT_EQ(a.validation.size(), 28u);
  EXPECT_EQ(a.test.size(), 60u);
  const auto b = split_corpus(200, 0.7, 9);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.test, b.test);
  EXPECT_NE(split_corpus(200, 0.7, 10).test, a.test);
}

TEST(Split, RejectsDegenerateFractions) {
  EXPECT_THROW(split_corpus(10, 1.0, 0), ValidationError);
  EXPECT_THROW(split_corpus(10, 0.0, 0), ValidationError);
  EXPECT_THROW(split_corpus(2, 0.7, 0), ValidationError);
}

TEST(Manifest, RoundTripAndValidation) {
  TempDir tmp;
  const std::vector<RepoManifestEntry> m{{"a/b", "repos/b", {"ML"}, {"machine-learning"}},
                                         {"c/d", "", {}, {}}};
  write_manifest(tmp / "m.jsonl", m);
  EXPECT_EQ(read_manifest(tmp / "m.jsonl"), m);
  const std::string first_line = io::read_file(tmp / "m.jsonl").substr(0, 40);
  EXPECT_EQ(first_line.rfind("{\"repo_id\":\"a/b\",\"local_path\"", 0), 0u);

  io::write_file(tmp / "dup.jsonl", "{\"repo_id\":\"x\",\"raw_topics\":[],\"featured_topics\":[]}\n"
                                    "{\"repo_id\":\"x\",\"raw_topics\":[],\"featured_topics\":[]}\n");
  EXPECT_THROW(read_manifest(tmp / "dup.jsonl"), ValidationError);
  io::write_file(tmp / "bad.jsonl", "{\"repo_id\":\"x\",\"raw_topics\":[3],\"featured_topics\":[]}\n");
  EXPECT_THROW(read_manifest(tmp / "bad.jsonl"), ValidationError);
}

TEST(Manifest, VocabularyAndSplitJson) {
  const auto v = build_label_matrix({entry("r1", {"A"}), entry("r2", {"A", "B"})}, 2);
  const auto back = vocabulary_from_json(nlohmann::json::parse(vocabulary_json(v).dump()));
  EXPECT_EQ(back.topics, v.topics);
  EXPECT_EQ(back.repo_ids, v.repo_ids);
  EXPECT_EQ(back.label_matrix, v.label_matrix);
  const auto s = split_corpus(30, 0.7, 1);
  const auto s2 = split_from_json(nlohmann::json::parse(split_json(s).dump()));
  EXPECT_EQ(s2.train, s.train);
  EXPECT_EQ(s2.validation, s.validation);
  EXPECT_EQ(s2.test, s.test);
}

TEST(FeaturedTopics, BundledListLoads) {
  const auto f = load_featured_topics(default_featured_topics_path());
  EXPECT_GT(f.size(), 100u);
  EXPECT_NE(std::find(f.begin(), f.end(), "machine-learning"), f.end());
  EXPECT_EQ(std::set<std::string>(f.begin(), f.end()).size(), f.size());
}
