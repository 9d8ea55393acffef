#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "topical/graphkit.hpp"
#include "topical/serializer.hpp"

namespace topical::embedder {

using serializer::Domain;

inline constexpr std::size_t kDefaultWidth = 768;
inline constexpr std::size_t kReducedWidth = 64;

struct ScriptEmbedding {
  std::string path;
  Domain domain = Domain::Code;
  Eigen::VectorXd vector;
};

// Signed feature hashing of a bag of tokens, L2-normalized.
Eigen::VectorXd hash_vector(const std::vector<std::string>& tokens, std::size_t width, std::uint64_t seed);
ScriptEmbedding hash_embed(const serializer::TokenSequence& seq, std::size_t width, std::uint64_t seed);

// Wire format: a header line {"format":"topical-emb","version":1,"dim":D}
// followed by one {"path","domain","vector"} object per line.
std::string format_embeddings(std::size_t dim, const std::vector<ScriptEmbedding>& embeddings);
std::vector<ScriptEmbedding> parse_embeddings(const std::string& text, const std::string& origin = "<memory>");
void write_embeddings(const std::filesystem::path& path, std::size_t dim, const std::vector<ScriptEmbedding>& embeddings);
std::vector<ScriptEmbedding> load_embeddings(const std::filesystem::path& path);

class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  explicit EmbeddingStore(std::vector<ScriptEmbedding> embeddings);

  void add(ScriptEmbedding e);
  [[nodiscard]] const Eigen::VectorXd* find(const std::string& path, Domain d) const;
  [[nodiscard]] const Eigen::VectorXd& at(const std::string& path, Domain d) const;
  [[nodiscard]] std::size_t dim() const { return dim_; }
  [[nodiscard]] std::size_t size() const { return vectors_.size(); }

 private:
  std::map<std::pair<std::string, Domain>, Eigen::VectorXd> vectors_;
  std::size_t dim_ = 0;
};

struct PcaReducer {
  Eigen::VectorXd mean;
  Eigen::MatrixXd components;  // k x D, orthonormal rows
  Eigen::VectorXd explained_variance;
  bool fitted = false;

  [[nodiscard]] std::size_t k() const { return static_cast<std::size_t>(components.rows()); }
  [[nodiscard]] Eigen::VectorXd transform(const Eigen::VectorXd& v) const;
  [[nodiscard]] Eigen::VectorXd reconstruct(const Eigen::VectorXd& v) const;
};

// `data` holds one sample per row.
PcaReducer fit_pca(const Eigen::MatrixXd& data, std::size_t k);

using Reducers = std::array<PcaReducer, 3>;  // code, doc, dep

void save_reducers(const std::filesystem::path& path, const Reducers& reducers);
Reducers load_reducers(const std::filesystem::path& path);

struct RepoTensor {
  std::string repo_id;
  Eigen::MatrixXd x;                 // n x 3w
  std::vector<std::uint8_t> mask;    // 1 = real script
  std::optional<Eigen::VectorXd> labels;

  [[nodiscard]] std::size_t n() const { return mask.size(); }
};

// With reducers each domain is projected to k and the three blocks are
// concatenated (code|doc|dep). Without reducers the raw vectors are
// concatenated; the model then learns its own reduction. Embedding keys are
// `key_prefix + path`.
RepoTensor assemble_repo_tensor(const graphkit::ScriptSample& sample, const EmbeddingStore& store,
                                const Reducers* reducers, const std::string& key_prefix = {});

nlohmann::json tensor_json(const RepoTensor& t);
RepoTensor tensor_from_json(const nlohmann::json& j);
void write_tensors(const std::filesystem::path& path, const std::vector<RepoTensor>& tensors);
std::vector<RepoTensor> read_tensors(const std::filesystem::path& path);

}  // namespace topical::embedder
