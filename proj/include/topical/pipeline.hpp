#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "topical/analyzer.hpp"
#include "topical/corpus.hpp"
#include "topical/embedder.hpp"
#include "topical/metricskit.hpp"
#include "topical/model.hpp"
#include "topical/tf3d.hpp"

namespace topical::pipeline {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "0.1.0";

struct PipelineConfig {
  fs::path manifest;
  fs::path featured_topics;  // empty: the bundled list
  fs::path workdir;
  std::string provider = "hash";  // hash | file
  fs::path embeddings;            // provider = file
  std::size_t dim = 768;
  std::size_t pca_k = 64;
  std::size_t top_k = 5;
  std::size_t n = 5;
  double train_fraction = 0.7;
  std::uint64_t split_seed = 1;
  std::uint64_t sample_seed = 7;
  std::uint64_t embed_seed = 0;
  model::TrainConfig train;
  bool tf3d = true;
  tf3d::ForestConfig forest;

  // Relative paths are resolved against `base`.
  static PipelineConfig from_json(const nlohmann::json& j, const fs::path& base = {});
  static PipelineConfig load(const fs::path& path);
  [[nodiscard]] nlohmann::ordered_json to_json() const;
  [[nodiscard]] std::string hash() const;
};

using LogSink = std::function<void(const nlohmann::json&)>;
LogSink stderr_log();
LogSink null_log();

// Everything the model-side experiments need, held in memory.
struct Prepared {
  corpus::TopicVocabulary vocab;
  std::vector<fs::path> roots;  // aligned with vocab rows
  std::vector<analyzer::Analysis> analyses;
  embedder::EmbeddingStore store;
  corpus::Split split;
  std::map<std::string, std::string> stage_keys;  // stages run by prepare()
};

Eigen::MatrixXd label_matrix(const corpus::TopicVocabulary& vocab);
std::string repo_prefix(const std::string& repo_id);

// Serializes all three domains of every parse_ok script; paths are prefixed
// with the repository id.
std::vector<serializer::TokenSequence> serialize_repo(const analyzer::Analysis& analysis, const fs::path& root,
                                                      const std::string& repo_id);

embedder::Reducers fit_reducers(const Prepared& data, std::size_t k);

struct ExperimentConfig {
  std::size_t n = 5;
  std::uint64_t sample_seed = 7;
  std::optional<serializer::Domain> removed;  // zeroed domain block
  model::TrainConfig train;
  std::size_t domain_width = 64;              // linear reduction target
};

nlohmann::json experiment_json(const ExperimentConfig& c);

std::vector<embedder::RepoTensor> build_tensors(const Prepared& data, const embedder::Reducers* reducers,
                                                std::size_t n, std::uint64_t sample_seed,
                                                std::optional<serializer::Domain> removed = std::nullopt);

std::vector<embedder::RepoTensor> select(const std::vector<embedder::RepoTensor>& all,
                                         const std::vector<std::size_t>& rows);

Eigen::MatrixXd predict_all(model::Model& m, const std::vector<embedder::RepoTensor>& tensors);
Eigen::MatrixXd labels_of(const std::vector<embedder::RepoTensor>& tensors);

struct ExperimentResult {
  metricskit::EvalReport report;
  model::TrainResult trained;
};

ExperimentResult run_experiment(const Prepared& data, const embedder::Reducers& reducers, const ExperimentConfig& config);

struct Tf3dResult {
  metricskit::EvalReport report;
  tf3d::Model model;
};

Tf3dResult run_tf3d(const Prepared& data, const tf3d::ForestConfig& forest, double epsilon = 1e-6);

struct AblationOptions {
  std::vector<std::string> grids{"components", "scripts", "encoder", "reduction"};
  std::size_t seeds = 3;
};

std::vector<metricskit::GridRow> run_ablation(const Prepared& data, const embedder::Reducers& reducers,
                                              const ExperimentConfig& base, const AblationOptions& options,
                                              const LogSink& log);

// Runs labels -> analyze -> serialize -> embed -> split -> pca -> tensors ->
// train -> eval (+ tf3d) with content-hash stage caching under the workdir
// and returns the final report.
nlohmann::ordered_json run_pipeline(const PipelineConfig& config, const LogSink& log = stderr_log());

// Runs the stages up to pca (cached) and loads their artifacts.
Prepared prepare(const PipelineConfig& config, const LogSink& log, embedder::Reducers* reducers = nullptr);

// Loads labels, analyses and split from a finished workdir; embeddings only
// when `with_embeddings` is set.
Prepared load_workdir(const fs::path& workdir, bool with_embeddings = false,
                      const fs::path& labels_override = {});

std::string fingerprint_tree(const fs::path& root);

}  // namespace topical::pipeline
