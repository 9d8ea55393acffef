#include "topical/pipeline.hpp"

#include <algorithm>
#include <iostream>
#include <map>

#include "topical/errors.hpp"
#include "topical/graphkit.hpp"
#include "topical/hashing.hpp"
#include "topical/io.hpp"

namespace topical::pipeline {

namespace {

using serializer::Domain;

fs::path resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return {};
  const fs::path path(p);
  return path.is_absolute() || base.empty() ? path : base / path;
}

template <typename Fn>
void with_context(const std::string& what, Fn&& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    throw ValidationError(what + ": " + e.what());
  } catch (const std::exception& e) {
    throw std::runtime_error(what + ": " + e.what());
  }
}

class Stages {
 public:
  Stages(const fs::path& workdir, const LogSink& log) : path_(workdir / "cache.json"), log_(log) {
    if (fs::exists(path_)) {
      try {
        cache_ = io::read_json(path_);
      } catch (const std::exception&) {
        cache_ = nlohmann::json::object();
      }
    }
    if (!cache_.is_object()) cache_ = nlohmann::json::object();
  }

  // Runs `body` unless the stage key and every recorded output hash match.
  void run(const std::string& name, const nlohmann::json& params, const std::vector<fs::path>& inputs,
           const std::vector<std::string>& fingerprints, const std::vector<fs::path>& outputs,
           const std::function<void()>& body) {
    std::string material = name + "\n" + params.dump() + "\n";
    for (const auto& in : inputs) material += sha256_file(in) + "\n";
    for (const auto& f : fingerprints) material += f + "\n";
    const std::string key = sha256_hex(material);
    keys_[name] = key;

    if (cache_.contains(name) && cache_[name].value("key", "") == key) {
      bool intact = true;
      const auto& recorded = cache_[name]["outputs"];
      for (const auto& out : outputs) {
        const std::string k = out.filename().string();
        if (!fs::exists(out) || !recorded.contains(k) || recorded[k] != sha256_file(out)) {
          intact = false;
          break;
        }
      }
      if (intact) {
        log_({{"stage", name}, {"event", "cache_hit"}, {"key", key.substr(0, 16)}});
        return;
      }
    }
    log_({{"stage", name}, {"event", "run"}, {"key", key.substr(0, 16)}});
    with_context("stage " + name + " [inputs " + key.substr(0, 12) + "]", body);
    nlohmann::json rec{{"key", key}, {"outputs", nlohmann::json::object()}};
    for (const auto& out : outputs) rec["outputs"][out.filename().string()] = sha256_file(out);
    cache_[name] = rec;
    io::write_file(path_, io::dump_json(cache_));
  }

  [[nodiscard]] const std::map<std::string, std::string>& keys() const { return keys_; }

 private:
  fs::path path_;
  const LogSink& log_;
  nlohmann::json cache_ = nlohmann::json::object();
  std::map<std::string, std::string> keys_;
};

struct Paths {
  fs::path normalized, labels, analysis, tokens, emb, split, pca, tensors, model, train_log, model_report,
      tf3d_model, tf3d_report, report;

  explicit Paths(const fs::path& w)
      : normalized(w / "manifest.normalized.jsonl"),
        labels(w / "labels.json"),
        analysis(w / "analysis.jsonl"),
        tokens(w / "tokens.jsonl"),
        emb(w / "emb.jsonl"),
        split(w / "split.json"),
        pca(w / "pca.bin"),
        tensors(w / "tensors.jsonl"),
        model(w / "model.tpcl"),
        train_log(w / "train_log.json"),
        model_report(w / "model_report.json"),
        tf3d_model(w / "model_tf3d.json"),
        tf3d_report(w / "tf3d_report.json"),
        report(w / "report.json") {}
};

std::map<std::string, fs::path> repo_roots(const fs::path& manifest_path, const std::vector<corpus::RepoManifestEntry>& entries) {
  std::map<std::string, fs::path> out;
  for (const auto& e : entries) {
    if (e.local_path.empty()) throw ValidationError("repository " + e.repo_id + " has no local_path");
    out[e.repo_id] = resolve(manifest_path.parent_path(), e.local_path);
  }
  return out;
}

std::vector<std::string> fingerprints(const std::vector<fs::path>& roots, const std::vector<std::string>& ids) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < roots.size(); ++i) {
    with_context("repository " + ids[i], [&] { out.push_back(fingerprint_tree(roots[i])); });
  }
  return out;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const fs::path& base) {
  PipelineConfig c;
  try {
    c.manifest = resolve(base, j.at("manifest").get<std::string>());
    c.featured_topics = resolve(base, j.value("featured_topics", ""));
    c.workdir = resolve(base, j.value("workdir", "work"));
    c.provider = j.value("provider", c.provider);
    c.embeddings = resolve(base, j.value("embeddings", ""));
    c.dim = j.value("dim", c.dim);
    c.pca_k = j.value("pca_k", c.pca_k);
    c.top_k = j.value("top_k", c.top_k);
    c.n = j.value("n", c.n);
    c.train_fraction = j.value("train_fraction", c.train_fraction);
    c.split_seed = j.value("split_seed", c.split_seed);
    c.sample_seed = j.value("sample_seed", c.sample_seed);
    c.embed_seed = j.value("embed_seed", c.embed_seed);
    if (j.contains("train")) c.train = model::train_config_from_json(j.at("train"));
    c.tf3d = j.value("tf3d", c.tf3d);
    if (j.contains("forest")) {
      const auto& f = j.at("forest");
      c.forest.trees = f.value("trees", c.forest.trees);
      c.forest.max_depth = f.value("max_depth", c.forest.max_depth);
      c.forest.min_leaf = f.value("min_leaf", c.forest.min_leaf);
      c.forest.feature_frac = f.value("feature_frac", c.forest.feature_frac);
      c.forest.bootstrap = f.value("bootstrap", c.forest.bootstrap);
      c.forest.seed = f.value("seed", c.forest.seed);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed pipeline config: ") + e.what());
  }
  if (c.provider != "hash" && c.provider != "file") throw ValidationError("provider must be 'hash' or 'file'");
  if (c.provider == "file" && c.embeddings.empty()) throw ValidationError("provider 'file' needs an embeddings path");
  if (c.n < 1 || c.top_k < 1 || c.dim < 1 || c.pca_k < 1) throw ValidationError("n, top_k, dim and pca_k must be positive");
  return c;
}

PipelineConfig PipelineConfig::load(const fs::path& path) {
  return from_json(io::read_json(path), fs::absolute(path).parent_path());
}

nlohmann::ordered_json PipelineConfig::to_json() const {
  nlohmann::ordered_json j;
  j["manifest"] = manifest.string();
  j["featured_topics"] = featured_topics.string();
  j["workdir"] = workdir.string();
  j["provider"] = provider;
  j["embeddings"] = embeddings.string();
  j["dim"] = dim;
  j["pca_k"] = pca_k;
  j["top_k"] = top_k;
  j["n"] = n;
  j["train_fraction"] = train_fraction;
  j["split_seed"] = split_seed;
  j["sample_seed"] = sample_seed;
  j["embed_seed"] = embed_seed;
  j["train"] = model::train_config_json(train);
  j["tf3d"] = tf3d;
  j["forest"] = {{"trees", forest.trees},         {"max_depth", forest.max_depth}, {"min_leaf", forest.min_leaf},
                 {"feature_frac", forest.feature_frac}, {"bootstrap", forest.bootstrap}, {"seed", forest.seed}};
  return j;
}

std::string PipelineConfig::hash() const {
  auto j = to_json();
  j.erase("workdir");
  return sha256_hex(j.dump());
}

LogSink stderr_log() {
  return [](const nlohmann::json& j) { std::cerr << j.dump() << std::endl; };
}

LogSink null_log() {
  return [](const nlohmann::json&) {};
}

Eigen::MatrixXd label_matrix(const corpus::TopicVocabulary& vocab) {
  Eigen::MatrixXd y(static_cast<Eigen::Index>(vocab.rows()), static_cast<Eigen::Index>(vocab.topics.size()));
  for (std::size_t r = 0; r < vocab.rows(); ++r) {
    for (std::size_t c = 0; c < vocab.topics.size(); ++c) {
      y(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = vocab.label_matrix[r][c];
    }
  }
  return y;
}

std::string repo_prefix(const std::string& repo_id) { return repo_id + "/"; }

std::string fingerprint_tree(const fs::path& root) {
  if (!fs::is_directory(root)) throw ValidationError("repository directory not found: " + root.string());
  std::vector<std::string> lines;
  for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
    if (it->is_regular_file() && it->path().extension() == ".py") {
      lines.push_back(fs::relative(it->path(), root).generic_string() + "\t" + sha256_file(it->path()));
    }
  }
  std::sort(lines.begin(), lines.end());
  std::string all;
  for (const auto& l : lines) all += l + "\n";
  return sha256_hex(all);
}

std::vector<serializer::TokenSequence> serialize_repo(const analyzer::Analysis& analysis, const fs::path& root,
                                                      const std::string& repo_id) {
  std::vector<serializer::TokenSequence> out;
  const std::string prefix = repo_prefix(repo_id);
  for (const auto& s : analysis.scripts) {
    if (!s.parse_ok) continue;
    auto code = serializer::serialize_code(io::read_file(root / s.path), prefix + s.path);
    auto doc = serializer::serialize_doc(s);
    auto dep = serializer::serialize_dep(s, analysis.edges);
    doc.path = dep.path = prefix + s.path;
    out.push_back(std::move(code));
    out.push_back(std::move(doc));
    out.push_back(std::move(dep));
  }
  return out;
}

embedder::Reducers fit_reducers(const Prepared& data, std::size_t k) {
  embedder::Reducers reducers;
  for (const auto d : serializer::all_domains()) {
    std::vector<const Eigen::VectorXd*> rows;
    for (const auto i : data.split.train) {
      const std::string prefix = repo_prefix(data.vocab.repo_ids[i]);
      for (const auto& s : data.analyses[i].scripts) {
        if (s.parse_ok) rows.push_back(&data.store.at(prefix + s.path, d));
      }
    }
    if (rows.empty()) throw ValidationError("no training scripts to fit PCA on");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(data.store.dim()));
    for (std::size_t r = 0; r < rows.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = rows[r]->transpose();
    with_context(std::string("PCA for domain ") + std::string(serializer::to_string(d)),
                 [&] { reducers[static_cast<std::size_t>(d)] = embedder::fit_pca(m, k); });
  }
  return reducers;
}

nlohmann::json experiment_json(const ExperimentConfig& c) {
  return {{"n", c.n},
          {"sample_seed", c.sample_seed},
          {"removed", c.removed ? std::string(serializer::to_string(*c.removed)) : std::string("none")},
          {"domain_width", c.domain_width},
          {"train", model::train_config_json(c.train)}};
}

std::vector<embedder::RepoTensor> build_tensors(const Prepared& data, const embedder::Reducers* reducers,
                                                std::size_t n, std::uint64_t sample_seed,
                                                std::optional<serializer::Domain> removed) {
  const Eigen::MatrixXd y = label_matrix(data.vocab);
  std::vector<embedder::RepoTensor> out;
  for (std::size_t i = 0; i < data.vocab.rows(); ++i) {
    const std::string& id = data.vocab.repo_ids[i];
    with_context("repository " + id, [&] {
      const auto graph = graphkit::build_graph(data.analyses[i]);
      const auto sample = graphkit::sample_scripts(graph, n, sample_seed ^ fnv1a64(id));
      auto t = embedder::assemble_repo_tensor(sample, data.store, reducers, repo_prefix(id));
      t.repo_id = id;
      t.labels = y.row(static_cast<Eigen::Index>(i)).transpose();
      if (removed) {
        const Eigen::Index w = t.x.cols() / 3;
        t.x.middleCols(static_cast<Eigen::Index>(*removed) * w, w).setZero();
      }
      out.push_back(std::move(t));
    });
  }
  return out;
}

std::vector<embedder::RepoTensor> select(const std::vector<embedder::RepoTensor>& all, const std::vector<std::size_t>& rows) {
  std::vector<embedder::RepoTensor> out;
  for (const auto r : rows) {
    if (r >= all.size()) throw ValidationError("split index " + std::to_string(r) + " out of range");
    out.push_back(all[r]);
  }
  return out;
}

Eigen::MatrixXd predict_all(model::Model& m, const std::vector<embedder::RepoTensor>& tensors) {
  Eigen::MatrixXd f(static_cast<Eigen::Index>(tensors.size()), static_cast<Eigen::Index>(m.shape.n_topics));
  for (std::size_t i = 0; i < tensors.size(); ++i) f.row(static_cast<Eigen::Index>(i)) = model::predict(m, tensors[i]).transpose();
  return f;
}

Eigen::MatrixXd labels_of(const std::vector<embedder::RepoTensor>& tensors) {
  if (tensors.empty() || !tensors.front().labels) throw ValidationError("tensors carry no labels");
  Eigen::MatrixXd y(static_cast<Eigen::Index>(tensors.size()), tensors.front().labels->size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    if (!tensors[i].labels) throw ValidationError("tensor " + tensors[i].repo_id + " has no labels");
    y.row(static_cast<Eigen::Index>(i)) = tensors[i].labels->transpose();
  }
  return y;
}

ExperimentResult run_experiment(const Prepared& data, const embedder::Reducers& reducers, const ExperimentConfig& config) {
  const bool pca = config.train.reduction == model::Reduction::Pca;
  const auto all = build_tensors(data, pca ? &reducers : nullptr, config.n, config.sample_seed, config.removed);
  const auto train = select(all, data.split.train);
  const auto val = select(all, data.split.validation);
  const auto test = select(all, data.split.test);
  ExperimentResult r{{}, model::train(train, config.train, config.domain_width)};
  model::Model& m = r.trained.model;
  r.report = metricskit::evaluate(labels_of(val), predict_all(m, val), labels_of(test), predict_all(m, test));
  r.report.train_size = train.size();
  r.report.config = experiment_json(config);
  return r;
}

Tf3dResult run_tf3d(const Prepared& data, const tf3d::ForestConfig& forest, double epsilon) {
  std::vector<tf3d::TermCounts> counts(data.vocab.rows());
  for (std::size_t i = 0; i < data.vocab.rows(); ++i) {
    for (const auto& s : data.analyses[i].scripts) {
      if (!s.parse_ok) continue;
      tf3d::merge(counts[i], tf3d::extract_term_counts(s, io::read_file(data.roots[i] / s.path)));
    }
  }
  const Eigen::MatrixXd y = label_matrix(data.vocab);
  auto rows_of = [&](const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), y.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = y.row(static_cast<Eigen::Index>(idx[k]));
    return out;
  };

  Tf3dResult r;
  r.model.topics = data.vocab.topics;
  r.model.epsilon = epsilon;
  std::vector<tf3d::TermCounts> train_counts;
  for (const auto i : data.split.train) train_counts.push_back(counts[i]);
  r.model.vocab = tf3d::fit_vocab(train_counts);
  std::vector<tf3d::Profile> profiles;
  for (const auto& c : counts) profiles.push_back(tf3d::repo_profile(c, r.model.vocab, epsilon));
  std::vector<tf3d::Profile> train_profiles;
  for (const auto i : data.split.train) train_profiles.push_back(profiles[i]);
  r.model.clarity = tf3d::fit_clarity(train_profiles, rows_of(data.split.train));

  auto features = [&](const std::vector<std::size_t>& idx) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(idx.size()), 3 * y.cols());
    for (std::size_t k = 0; k < idx.size(); ++k) {
      x.row(static_cast<Eigen::Index>(k)) = tf3d::flatten(tf3d::embed_repo(profiles[idx[k]], r.model.clarity)).transpose();
    }
    return x;
  };
  r.model.forest = tf3d::forest_fit(features(data.split.train), rows_of(data.split.train), forest);
  const Eigen::MatrixXd f_val = tf3d::forest_predict(r.model.forest, features(data.split.validation));
  const Eigen::MatrixXd f_test = tf3d::forest_predict(r.model.forest, features(data.split.test));
  r.report = metricskit::evaluate(rows_of(data.split.validation), f_val, rows_of(data.split.test), f_test);
  r.report.train_size = data.split.train.size();
  r.model.thresholds = r.report.thresholds;
  r.report.config = {{"trees", forest.trees}, {"max_depth", forest.max_depth}, {"min_leaf", forest.min_leaf},
                     {"feature_frac", forest.feature_frac}, {"bootstrap", forest.bootstrap}, {"seed", forest.seed},
                     {"epsilon", epsilon}};
  return r;
}

std::vector<metricskit::GridRow> run_ablation(const Prepared& data, const embedder::Reducers& reducers,
                                              const ExperimentConfig& base, const AblationOptions& options,
                                              const LogSink& log) {
  if (options.seeds < 1) throw ValidationError("ablation needs at least one seed");
  struct Point {
    std::string grid, label;
    ExperimentConfig config;
  };
  std::vector<Point> points;
  for (const auto& grid : options.grids) {
    if (grid == "components") {
      points.push_back({grid, "None", base});
      for (const auto& [d, label] : {std::pair{Domain::Code, "Code"}, {Domain::Doc, "Docstring"}, {Domain::Dep, "Dependency Graph"}}) {
        ExperimentConfig c = base;
        c.removed = d;
        points.push_back({grid, label, c});
      }
    } else if (grid == "scripts") {
      for (const auto n : graphkit::supported_caps()) {
        ExperimentConfig c = base;
        c.n = n;
        points.push_back({grid, "n=" + std::to_string(n), c});
      }
    } else if (grid == "encoder") {
      for (const auto& [k, label] : {std::pair{model::EncoderKind::BiGru, "Bi-GRU"}, {model::EncoderKind::BiLstm, "Bi-LSTM"},
                                     {model::EncoderKind::Mlp, "MLP"}}) {
        ExperimentConfig c = base;
        c.train.encoder = k;
        points.push_back({grid, label, c});
      }
    } else if (grid == "reduction") {
      for (const auto& [r, label] : {std::pair{model::Reduction::Pca, "PCA"}, {model::Reduction::Linear, "Linear Layer"}}) {
        ExperimentConfig c = base;
        c.train.reduction = r;
        points.push_back({grid, label, c});
      }
    } else {
      throw ValidationError("unknown ablation grid '" + grid + "' (components, scripts, encoder, reduction)");
    }
  }

  std::map<std::string, metricskit::EvalReport> done;
  std::vector<metricskit::GridRow> rows;
  for (const auto& p : points) {
    metricskit::GridRow row{p.grid, p.label, experiment_json(p.config), {}};
    for (std::size_t s = 0; s < options.seeds; ++s) {
      ExperimentConfig c = p.config;
      c.train.seed += s;
      c.sample_seed += s;
      const std::string key = experiment_json(c).dump();
      if (!done.count(key)) {
        with_context("ablation " + p.grid + "/" + p.label + " seed " + std::to_string(s),
                     [&] { done[key] = run_experiment(data, reducers, c).report; });
        log({{"stage", "ablate"}, {"grid", p.grid}, {"label", p.label}, {"seed", s},
             {"micro_f1", done[key].micro_f1}, {"lrap", done[key].lrap}});
      }
      row.runs.push_back(done[key]);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

Prepared prepare(const PipelineConfig& config, const LogSink& log, embedder::Reducers* reducers) {
  const fs::path featured = config.featured_topics.empty() ? corpus::default_featured_topics_path() : config.featured_topics;
  for (const auto& p : {config.manifest, featured}) {
    if (!fs::is_regular_file(p)) throw ValidationError("input file not found: " + p.string());
  }
  if (config.provider == "file" && !fs::is_regular_file(config.embeddings)) {
    throw ValidationError("embeddings file not found: " + config.embeddings.string());
  }
  fs::create_directories(config.workdir);
  const Paths P(config.workdir);
  Stages stages(config.workdir, log);

  stages.run("labels", {{"top_k", config.top_k}}, {config.manifest, featured}, {}, {P.normalized, P.labels}, [&] {
    const auto topics = corpus::load_featured_topics(featured);
    auto entries = corpus::read_manifest(config.manifest);
    for (auto& e : entries) {
      if (!e.raw_topics.empty()) e.featured_topics = corpus::normalize_topics(e.raw_topics, topics);
      // Keep local paths valid from the workdir.
      if (!e.local_path.empty()) e.local_path = fs::absolute(resolve(config.manifest.parent_path(), e.local_path)).string();
    }
    corpus::write_manifest(P.normalized, entries);
    io::write_file(P.labels, io::dump_json(corpus::vocabulary_json(corpus::build_label_matrix(entries, config.top_k))));
  });

  Prepared data;
  data.vocab = corpus::vocabulary_from_json(io::read_json(P.labels));
  const auto roots = repo_roots(P.normalized, corpus::read_manifest(P.normalized));
  for (const auto& id : data.vocab.repo_ids) data.roots.push_back(roots.at(id));
  const auto tree_prints = fingerprints(data.roots, data.vocab.repo_ids);

  stages.run("analyze", nlohmann::json::object(), {P.labels}, tree_prints, {P.analysis}, [&] {
    std::string out;
    for (std::size_t i = 0; i < data.roots.size(); ++i) {
      nlohmann::ordered_json j;
      j["repo_id"] = data.vocab.repo_ids[i];
      with_context("repository " + data.vocab.repo_ids[i],
                   [&] { j["analysis"] = analyzer::to_json(analyzer::analyze_repository(data.roots[i])); });
      out += j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace) + "\n";
    }
    io::write_file(P.analysis, out);
  });
  for (const auto& j : io::read_jsonl(P.analysis)) data.analyses.push_back(analyzer::analysis_from_json(j.at("analysis")));
  if (data.analyses.size() != data.vocab.rows()) throw ValidationError("analysis.jsonl does not match labels.json");

  stages.run("serialize", nlohmann::json::object(), {P.analysis}, tree_prints, {P.tokens}, [&] {
    std::string out;
    for (std::size_t i = 0; i < data.roots.size(); ++i) {
      for (const auto& seq : serialize_repo(data.analyses[i], data.roots[i], data.vocab.repo_ids[i])) {
        out += serializer::sequence_json(seq).dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace) + "\n";
      }
    }
    io::write_file(P.tokens, out);
  });

  std::vector<fs::path> embed_inputs{P.tokens};
  if (config.provider == "file") embed_inputs.push_back(config.embeddings);
  stages.run("embed", {{"provider", config.provider}, {"dim", config.dim}, {"seed", config.embed_seed}}, embed_inputs, {},
             {P.emb}, [&] {
               std::vector<embedder::ScriptEmbedding> out;
               std::size_t dim = config.dim;
               if (config.provider == "hash") {
                 for (const auto& j : io::read_jsonl(P.tokens)) {
                   out.push_back(embedder::hash_embed(serializer::sequence_from_json(j), config.dim, config.embed_seed));
                 }
               } else {
                 const embedder::EmbeddingStore given(embedder::load_embeddings(config.embeddings));
                 dim = given.dim();
                 for (const auto& j : io::read_jsonl(P.tokens)) {
                   const auto seq = serializer::sequence_from_json(j);
                   out.push_back({seq.path, seq.domain, given.at(seq.path, seq.domain)});
                 }
               }
               embedder::write_embeddings(P.emb, dim, out);
             });

  stages.run("split", {{"train_fraction", config.train_fraction}, {"seed", config.split_seed}}, {P.labels}, {}, {P.split}, [&] {
    io::write_file(P.split, io::dump_json(corpus::split_json(corpus::split_corpus(data.vocab.rows(), config.train_fraction,
                                                                                  config.split_seed))));
  });
  data.split = corpus::split_from_json(io::read_json(P.split));
  data.store = embedder::EmbeddingStore(embedder::load_embeddings(P.emb));

  stages.run("pca", {{"k", config.pca_k}}, {P.emb, P.split, P.analysis}, {}, {P.pca},
             [&] { embedder::save_reducers(P.pca, fit_reducers(data, config.pca_k)); });
  if (reducers) *reducers = embedder::load_reducers(P.pca);
  data.stage_keys = stages.keys();
  return data;
}

Prepared load_workdir(const fs::path& workdir, bool with_embeddings, const fs::path& labels_override) {
  const Paths P(workdir);
  const fs::path labels = labels_override.empty() ? P.labels : labels_override;
  for (const auto& p : {labels, P.normalized, P.analysis, P.split}) {
    if (!fs::is_regular_file(p)) throw ValidationError("workdir artifact not found: " + p.string());
  }
  Prepared data;
  data.vocab = corpus::vocabulary_from_json(io::read_json(labels));
  const auto roots = repo_roots(P.normalized, corpus::read_manifest(P.normalized));
  std::map<std::string, analyzer::Analysis> by_id;
  for (const auto& j : io::read_jsonl(P.analysis)) {
    by_id[j.at("repo_id").get<std::string>()] = analyzer::analysis_from_json(j.at("analysis"));
  }
  for (const auto& id : data.vocab.repo_ids) {
    const auto root = roots.find(id);
    const auto a = by_id.find(id);
    if (root == roots.end() || a == by_id.end()) throw ValidationError("repository " + id + " missing from workdir artifacts");
    data.roots.push_back(root->second);
    data.analyses.push_back(a->second);
  }
  data.split = corpus::split_from_json(io::read_json(P.split));
  if (with_embeddings) data.store = embedder::EmbeddingStore(embedder::load_embeddings(P.emb));
  return data;
}

nlohmann::ordered_json run_pipeline(const PipelineConfig& config, const LogSink& log) {
  embedder::Reducers reducers;
  const Prepared data = prepare(config, log, &reducers);
  const Paths P(config.workdir);
  Stages stages(config.workdir, log);
  const bool pca = config.train.reduction == model::Reduction::Pca;

  stages.run("tensors", {{"n", config.n}, {"sample_seed", config.sample_seed}, {"reduction", model::to_string(config.train.reduction)}},
             {P.emb, P.pca, P.analysis, P.labels}, {}, {P.tensors}, [&] {
               embedder::write_tensors(P.tensors, build_tensors(data, pca ? &reducers : nullptr, config.n, config.sample_seed));
             });

  stages.run("train", model::train_config_json(config.train), {P.tensors, P.split}, {}, {P.model, P.train_log}, [&] {
    const auto tensors = embedder::read_tensors(P.tensors);
    const auto result = model::train(select(tensors, data.split.train), config.train, config.pca_k);
    model::save_model(P.model, result.model, {{"topics", data.vocab.topics}, {"train", model::train_config_json(config.train)}});
    io::write_file(P.train_log, io::dump_json(nlohmann::json{{"epoch_loss", result.epoch_loss}}));
  });

  stages.run("eval", nlohmann::json::object(), {P.model, P.tensors, P.split}, {}, {P.model_report}, [&] {
    const auto tensors = embedder::read_tensors(P.tensors);
    model::Model m = model::load_model(P.model);
    const auto val = select(tensors, data.split.validation);
    const auto test = select(tensors, data.split.test);
    auto report = metricskit::evaluate(labels_of(val), predict_all(m, val), labels_of(test), predict_all(m, test));
    report.train_size = data.split.train.size();
    report.config = model::train_config_json(config.train);
    io::write_file(P.model_report, io::dump_json(metricskit::report_json(report)));
  });

  if (config.tf3d) {
    stages.run("tf3d", {{"trees", config.forest.trees}, {"max_depth", config.forest.max_depth}, {"min_leaf", config.forest.min_leaf},
                        {"feature_frac", config.forest.feature_frac}, {"bootstrap", config.forest.bootstrap},
                        {"seed", config.forest.seed}},
               {P.analysis, P.labels, P.split}, fingerprints(data.roots, data.vocab.repo_ids), {P.tf3d_model, P.tf3d_report}, [&] {
                 const auto r = run_tf3d(data, config.forest);
                 io::write_file(P.tf3d_model, tf3d::model_json(r.model).dump() + "\n");
                 io::write_file(P.tf3d_report, io::dump_json(metricskit::report_json(r.report)));
               });
  }

  nlohmann::ordered_json report;
  report["tool_version"] = kToolVersion;
  report["config_hash"] = config.hash();
  report["seeds"] = {{"split", config.split_seed}, {"sample", config.sample_seed}, {"embed", config.embed_seed},
                     {"train", config.train.seed}, {"forest", config.forest.seed}};
  report["artifact_versions"] = {{"analysis", 1}, {"tokens", 1}, {"embedding_format", 1}, {"pca", 1}, {"checkpoint", 1}};
  report["topics"] = data.vocab.topics;
  report["model"] = io::read_json(P.model_report);
  if (config.tf3d) report["tf3d"] = io::read_json(P.tf3d_report);
  nlohmann::ordered_json keys;
  for (const auto& [k, v] : data.stage_keys) keys[k] = v;
  for (const auto& [k, v] : stages.keys()) keys[k] = v;
  report["stage_keys"] = keys;
  report["config"] = config.to_json();
  io::write_file(P.report, io::dump_json(report));
  return report;
}

}  // namespace topical::pipeline
