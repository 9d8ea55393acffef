#include "topical/embedder.hpp"

#include <cmath>
#include <algorithm>
#include <set>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "topical/errors.hpp"
#include "topical/hashing.hpp"
#include "topical/io.hpp"
#include "topical/random.hpp"
#include "topical/tensorfile.hpp"

namespace topical::embedder {

Eigen::VectorXd hash_vector(const std::vector<std::string>& tokens, std::size_t width, std::uint64_t seed) {
  if (width < 1) throw ValidationError("embedding width must be at least 1");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(width));
  const std::uint64_t salt = splitmix64(seed);
  for (const auto& t : tokens) {
    const std::uint64_t h = splitmix64(fnv1a64(t) ^ salt);
    const auto index = static_cast<Eigen::Index>((h & 0x7FFFFFFFFFFFFFFFULL) % width);
    v[index] += (h >> 63) ? -1.0 : 1.0;
  }
  const double norm = v.norm();
  if (norm > 0.0) v /= norm;
  return v;
}

ScriptEmbedding hash_embed(const serializer::TokenSequence& seq, std::size_t width, std::uint64_t seed) {
  return {seq.path, seq.domain, hash_vector(seq.tokens, width, seed)};
}

std::string format_embeddings(std::size_t dim, const std::vector<ScriptEmbedding>& embeddings) {
  nlohmann::ordered_json header;
  header["format"] = "topical-emb";
  header["version"] = 1;
  header["dim"] = dim;
  std::string out = header.dump() + "\n";
  for (const auto& e : embeddings) {
    if (static_cast<std::size_t>(e.vector.size()) != dim) {
      throw ValidationError("embedding for " + e.path + " has width " + std::to_string(e.vector.size()));
    }
    nlohmann::ordered_json j;
    j["path"] = e.path;
    j["domain"] = serializer::to_string(e.domain);
    j["vector"] = std::vector<double>(e.vector.data(), e.vector.data() + e.vector.size());
    out += j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

std::vector<ScriptEmbedding> parse_embeddings(const std::string& text, const std::string& origin) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::optional<std::size_t> dim;
  std::set<std::pair<std::string, Domain>> keys;
  std::vector<ScriptEmbedding> out;
  auto fail = [&](const std::string& what) {
    throw ValidationError(origin + ":" + std::to_string(lineno) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(std::string("malformed JSON: ") + e.what());
    }
    if (!dim) {
      if (!j.is_object() || j.value("format", "") != "topical-emb") fail("missing topical-emb header");
      if (!j.contains("version") || j.at("version") != 1) fail("unsupported embedding format version");
      if (!j.contains("dim") || !j.at("dim").is_number_unsigned() || j.at("dim").get<std::size_t>() == 0) {
        fail("header lacks a positive dim");
      }
      dim = j.at("dim").get<std::size_t>();
      continue;
    }
    if (!j.is_object() || !j.contains("path") || !j.at("path").is_string() || !j.contains("domain") ||
        !j.at("domain").is_string() || !j.contains("vector") || !j.at("vector").is_array()) {
      fail("record needs path, domain and vector");
    }
    ScriptEmbedding e;
    e.path = j.at("path").get<std::string>();
    try {
      e.domain = serializer::domain_from_string(j.at("domain").get<std::string>());
    } catch (const ValidationError& err) {
      fail(err.what());
    }
    const auto& vec = j.at("vector");
    if (vec.size() != *dim) {
      fail("vector width " + std::to_string(vec.size()) + " differs from header dim " + std::to_string(*dim));
    }
    e.vector.resize(static_cast<Eigen::Index>(*dim));
    for (std::size_t i = 0; i < *dim; ++i) {
      if (!vec[i].is_number()) fail("non-numeric vector entry at index " + std::to_string(i));
      const double x = vec[i].get<double>();
      if (!std::isfinite(x)) fail("non-finite vector entry at index " + std::to_string(i));
      e.vector[static_cast<Eigen::Index>(i)] = x;
    }
    if (!keys.emplace(e.path, e.domain).second) {
      fail("duplicate key (" + e.path + ", " + std::string(serializer::to_string(e.domain)) + ")");
    }
    out.push_back(std::move(e));
  }
  if (!dim) throw ValidationError(origin + ": empty embedding file");
  return out;
}

void write_embeddings(const std::filesystem::path& path, std::size_t dim,
                      const std::vector<ScriptEmbedding>& embeddings) {
  io::write_file(path, format_embeddings(dim, embeddings));
}

std::vector<ScriptEmbedding> load_embeddings(const std::filesystem::path& path) {
  return parse_embeddings(io::read_file(path), path.string());
}

EmbeddingStore::EmbeddingStore(std::vector<ScriptEmbedding> embeddings) {
  for (auto& e : embeddings) add(std::move(e));
}

void EmbeddingStore::add(ScriptEmbedding e) {
  const auto width = static_cast<std::size_t>(e.vector.size());
  if (dim_ == 0) dim_ = width;
  if (width != dim_) throw ValidationError("embedding width mismatch for " + e.path);
  if (!vectors_.emplace(std::pair(e.path, e.domain), std::move(e.vector)).second) {
    throw ValidationError("duplicate embedding for " + e.path);
  }
}

const Eigen::VectorXd* EmbeddingStore::find(const std::string& path, Domain d) const {
  const auto it = vectors_.find({path, d});
  return it == vectors_.end() ? nullptr : &it->second;
}

const Eigen::VectorXd& EmbeddingStore::at(const std::string& path, Domain d) const {
  const auto* v = find(path, d);
  if (!v) {
    throw ValidationError("missing embedding for (" + path + ", " + std::string(serializer::to_string(d)) + ")");
  }
  return *v;
}

Eigen::VectorXd PcaReducer::transform(const Eigen::VectorXd& v) const {
  if (!fitted) throw std::logic_error("PCA reducer used before fitting");
  if (v.size() != mean.size()) throw ValidationError("vector width differs from the fitted PCA input width");
  return components * (v - mean);
}

Eigen::VectorXd PcaReducer::reconstruct(const Eigen::VectorXd& v) const {
  return mean + components.transpose() * transform(v);
}

PcaReducer fit_pca(const Eigen::MatrixXd& data, std::size_t k) {
  const auto rows = static_cast<std::size_t>(data.rows());
  const auto d = static_cast<std::size_t>(data.cols());
  if (k < 1 || k > d) throw ValidationError("PCA k=" + std::to_string(k) + " must lie in [1, " + std::to_string(d) + "]");
  if (rows < k || rows < 2) {
    throw ValidationError("PCA needs at least k=" + std::to_string(k) + " samples, got " + std::to_string(rows));
  }
  PcaReducer p;
  p.mean = data.colwise().mean().transpose();
  const Eigen::MatrixXd centered = data.rowwise() - p.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(rows - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw std::runtime_error("PCA eigendecomposition did not converge");

  const Eigen::VectorXd& values = eig.eigenvalues();  // ascending
  const double top = std::max(values[values.size() - 1], 0.0);
  const double tol = top * static_cast<double>(d) * 1e-12;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) rank += values[i] > tol && values[i] > 0.0;
  if (k > rank) {
    throw ValidationError("PCA k=" + std::to_string(k) + " exceeds the data rank; achievable rank is " +
                          std::to_string(rank));
  }

  p.components.resize(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(d));
  p.explained_variance.resize(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    const Eigen::Index src = values.size() - 1 - static_cast<Eigen::Index>(i);
    Eigen::VectorXd c = eig.eigenvectors().col(src);
    Eigen::Index arg = 0;
    c.cwiseAbs().maxCoeff(&arg);
    if (c[arg] < 0) c = -c;
    p.components.row(static_cast<Eigen::Index>(i)) = c.transpose();
    p.explained_variance[static_cast<Eigen::Index>(i)] = values[src];
  }
  p.fitted = true;
  return p;
}

void save_reducers(const std::filesystem::path& path, const Reducers& reducers) {
  tensorfile::TensorFile f{"TPCA", 1, tensorfile::Precision::F64, "{}", {}};
  for (const auto d : serializer::all_domains()) {
    const auto& r = reducers[static_cast<std::size_t>(d)];
    if (!r.fitted) throw std::logic_error("saving an unfitted PCA reducer");
    const std::string name(serializer::to_string(d));
    f.tensors.push_back({name + ".mean", r.mean.transpose()});
    f.tensors.push_back({name + ".components", r.components});
    f.tensors.push_back({name + ".explained_variance", r.explained_variance.transpose()});
  }
  tensorfile::save(path, f);
}

Reducers load_reducers(const std::filesystem::path& path) {
  const auto f = tensorfile::load(path, "TPCA");
  Reducers out;
  for (const auto d : serializer::all_domains()) {
    auto& r = out[static_cast<std::size_t>(d)];
    const std::string name(serializer::to_string(d));
    r.mean = f.get(name + ".mean").transpose();
    r.components = f.get(name + ".components");
    r.explained_variance = f.get(name + ".explained_variance").transpose();
    if (r.components.cols() != r.mean.size()) throw ValidationError(path.string() + ": PCA shapes disagree");
    r.fitted = true;
  }
  return out;
}

RepoTensor assemble_repo_tensor(const graphkit::ScriptSample& sample, const EmbeddingStore& store,
                                const Reducers* reducers, const std::string& key_prefix) {
  if (sample.real_count() == 0) throw ValidationError("sample has no real scripts");
  const auto width = static_cast<Eigen::Index>(reducers ? (*reducers)[0].k() : store.dim());
  RepoTensor t;
  t.x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(sample.paths.size()), 3 * width);
  t.mask.assign(sample.paths.size(), 0);
  for (std::size_t i = 0; i < sample.paths.size(); ++i) {
    if (!sample.paths[i]) continue;
    t.mask[i] = 1;
    for (const auto d : serializer::all_domains()) {
      const auto b = static_cast<std::size_t>(d);
      const Eigen::VectorXd& v = store.at(key_prefix + *sample.paths[i], d);
      const Eigen::VectorXd block = reducers ? (*reducers)[b].transform(v) : v;
      if (block.size() != width) throw ValidationError("reduced widths differ between domains");
      t.x.block(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(b) * width, 1, width) = block.transpose();
    }
  }
  return t;
}

nlohmann::json tensor_json(const RepoTensor& t) {
  nlohmann::json j;
  j["repo_id"] = t.repo_id;
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < t.x.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(t.x.cols()));
    for (Eigen::Index c = 0; c < t.x.cols(); ++c) row[static_cast<std::size_t>(c)] = t.x(r, c);
    rows.push_back(std::move(row));
  }
  j["x"] = std::move(rows);
  std::vector<int> mask(t.mask.begin(), t.mask.end());
  j["mask"] = mask;
  if (t.labels) {
    j["labels"] = std::vector<double>(t.labels->data(), t.labels->data() + t.labels->size());
  } else {
    j["labels"] = nullptr;
  }
  return j;
}

RepoTensor tensor_from_json(const nlohmann::json& j) {
  RepoTensor t;
  try {
    t.repo_id = j.value("repo_id", "");
    const auto& rows = j.at("x");
    const auto mask = j.at("mask").get<std::vector<int>>();
    if (rows.size() != mask.size() || rows.empty()) throw ValidationError("tensor x and mask disagree in length");
    const std::size_t width = rows[0].size();
    t.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(width));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != width) throw ValidationError("ragged tensor rows");
      for (std::size_t c = 0; c < width; ++c) {
        t.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c].get<double>();
      }
    }
    for (const int m : mask) t.mask.push_back(m ? 1 : 0);
    if (j.contains("labels") && !j.at("labels").is_null()) {
      const auto labels = j.at("labels").get<std::vector<double>>();
      t.labels = Eigen::Map<const Eigen::VectorXd>(labels.data(), static_cast<Eigen::Index>(labels.size()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed repo tensor: ") + e.what());
  }
  if (std::find(t.mask.begin(), t.mask.end(), 1) == t.mask.end()) throw ValidationError("tensor mask has no real script");
  return t;
}

void write_tensors(const std::filesystem::path& path, const std::vector<RepoTensor>& tensors) {
  std::string out;
  for (const auto& t : tensors) out += tensor_json(t).dump() + "\n";
  io::write_file(path, out);
}

std::vector<RepoTensor> read_tensors(const std::filesystem::path& path) {
  std::vector<RepoTensor> out;
  for (const auto& j : io::read_jsonl(path)) out.push_back(tensor_from_json(j));
  return out;
}

}  // namespace topical::embedder
