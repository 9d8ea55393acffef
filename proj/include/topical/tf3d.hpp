#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "topical/analyzer.hpp"

namespace topical::tf3d {

enum class TermDomain { CodeAst = 0, Docstring = 1, Dependency = 2 };
std::string_view to_string(TermDomain d);

using Counts = std::map<std::string, double>;
using TermCounts = std::array<Counts, 3>;

// code_ast: syntax-node kinds inside each function body (nested definitions
// are counted under their own function); docstring: docstring words plus
// split function names; dependency: segments of imported dotted names.
TermCounts extract_term_counts(const analyzer::ScriptRecord& record, std::string_view source);
void merge(TermCounts& into, const TermCounts& from);

struct TermVocab {
  std::array<std::vector<std::string>, 3> terms;
};

// Most frequent terms per domain over the given (training) repositories,
// ties broken lexicographically.
TermVocab fit_vocab(const std::vector<TermCounts>& repos, std::size_t cap = 5000);

struct Profile {
  std::array<Eigen::VectorXd, 3> S;
};

Profile repo_profile(const TermCounts& counts, const TermVocab& vocab, double epsilon = 1e-6);

struct ClarityMatrix {
  // C[d][t] is a vocabulary-length vector for domain d and topic t.
  std::array<std::vector<Eigen::VectorXd>, 3> C;
};

// labels: rows = repositories (aligned with profiles), cols = topics.
ClarityMatrix fit_clarity(const std::vector<Profile>& profiles, const Eigen::MatrixXd& labels);

// 3 x n_T cosine similarities between S^d and C(d, T).
Eigen::MatrixXd embed_repo(const Profile& profile, const ClarityMatrix& clarity);
Eigen::VectorXd flatten(const Eigen::MatrixXd& e);

struct ForestConfig {
  std::size_t trees = 100;
  int max_depth = 12;            // < 0: unlimited
  std::size_t min_leaf = 2;
  double feature_frac = 0;       // <= 0: sqrt(features)
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  int left = -1;
  int right = -1;
  Eigen::VectorXd value;
};

struct Tree {
  std::vector<TreeNode> nodes;
  [[nodiscard]] const Eigen::VectorXd& predict(const Eigen::VectorXd& x) const;
};

struct Forest {
  std::vector<Tree> trees;
  std::size_t n_features = 0;
  std::size_t n_outputs = 0;
};

// Multi-output regression forest: variance-reduction splits summed over
// outputs, bootstrap rows, leaf values are mean label vectors.
Forest forest_fit(const Eigen::MatrixXd& features, const Eigen::MatrixXd& labels, const ForestConfig& config);
Eigen::MatrixXd forest_predict(const Forest& forest, const Eigen::MatrixXd& features);

nlohmann::json forest_json(const Forest& f);
Forest forest_from_json(const nlohmann::json& j);

struct Model {
  std::vector<std::string> topics;
  TermVocab vocab;
  ClarityMatrix clarity;
  Forest forest;
  Eigen::VectorXd thresholds;
  double epsilon = 1e-6;
};

nlohmann::json model_json(const Model& m);
Model model_from_json(const nlohmann::json& j);

}  // namespace topical::tf3d
