#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace topical::synth {

struct SynthConfig {
  std::size_t repos = 200;
  std::size_t topics = 5;  // at most topic_pool().size()
  std::uint64_t seed = 1;
  double second_topic_rate = 0.35;
};

struct TopicPool {
  std::string topic;
  std::vector<std::string> raw_variants;
  std::vector<std::string> libraries;
  std::vector<std::string> words;
};

const std::vector<TopicPool>& topic_pool();

// Writes repos/<name>/... Python sources plus manifest.jsonl (local_path
// relative to `dir`) and returns the manifest path. Each repository gets one
// or two topics; its scripts, docstrings and imports draw on those topics'
// vocabularies plus a shared generic vocabulary.
std::filesystem::path generate(const std::filesystem::path& dir, const SynthConfig& config);

}  // namespace topical::synth
