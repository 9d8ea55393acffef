#include <CLI11.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "topical/analyzer.hpp"
#include "topical/corpus.hpp"
#include "topical/embedder.hpp"
#include "topical/errors.hpp"
#include "topical/graphkit.hpp"
#include "topical/io.hpp"
#include "topical/metricskit.hpp"
#include "topical/model.hpp"
#include "topical/pipeline.hpp"
#include "topical/serializer.hpp"
#include "topical/synth.hpp"
#include "topical/tf3d.hpp"

namespace fs = std::filesystem;
using namespace topical;

namespace {

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--config", c.config, "JSON config file");
  cmd->add_option("--out", c.out, "output path (stdout when omitted)");
}

void emit(const Common& c, const std::string& text) {
  if (c.out.empty()) {
    std::cout << text;
  } else {
    io::write_file(c.out, text);
  }
}

void require(const std::string& path, const char* what) {
  if (path.empty()) throw ValidationError(std::string("missing --") + what);
  if (!fs::exists(path)) throw ValidationError(std::string(what) + " not found: " + path);
}

std::string jsonl(const std::vector<nlohmann::ordered_json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::replace) + "\n";
  return out;
}

pipeline::PipelineConfig pipeline_config(const Common& c, const std::string& workdir) {
  if (c.config.empty()) throw ValidationError("missing --config (pipeline config)");
  auto cfg = pipeline::PipelineConfig::load(c.config);
  if (!workdir.empty()) cfg.workdir = workdir;
  if (c.seed) cfg.train.seed = *c.seed;
  return cfg;
}

std::vector<embedder::RepoTensor> read_tensor_input(const std::string& path) {
  require(path, "tensors");
  if (fs::path(path).extension() == ".json") return {embedder::tensor_from_json(io::read_json(path))};
  return embedder::read_tensors(path);
}

std::vector<std::string> model_topics(const nlohmann::json& extra, std::size_t n) {
  if (extra.is_object() && extra.contains("topics")) return extra.at("topics").get<std::vector<std::string>>();
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("topic_" + std::to_string(i));
  return out;
}

// Rows of `split` selected by name; an empty name keeps everything.
std::vector<embedder::RepoTensor> pick(const std::vector<embedder::RepoTensor>& all, const std::string& split_path,
                                       const char* part) {
  if (split_path.empty()) return all;
  const auto j = io::read_json(split_path);
  const auto s = corpus::split_from_json(j);
  const std::string name(part);
  return pipeline::select(all, name == "train" ? s.train : name == "validation" ? s.validation : s.test);
}

int run(int argc, char** argv) {
  CLI::App app{"Topic tagging for source-code repositories"};
  app.require_subcommand(1);
  std::map<std::string, Common> common;
  auto sub = [&](const std::string& name, const std::string& help) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, common[name]);
    return cmd;
  };

  // crawl
  std::vector<std::string> crawl_topics;
  std::size_t crawl_max = 100, crawl_conc = 4;
  std::string api_base = "https://api.github.com", token_env = "GITHUB_TOKEN";
  auto* crawl = sub("crawl", "search repositories by topic and write a manifest");
  crawl->add_option("--topic", crawl_topics, "topic (repeatable)")->required();
  crawl->add_option("--max", crawl_max, "repositories per topic");
  crawl->add_option("--concurrency", crawl_conc, "topics fetched in parallel");
  crawl->add_option("--api-base", api_base);
  crawl->add_option("--token-env", token_env, "environment variable holding the API token");

  // labels
  std::string manifest, featured, normalized_out;
  std::size_t top_k = 20;
  auto* labels = sub("labels", "normalize topics and build the label matrix");
  labels->add_option("--manifest", manifest)->required();
  labels->add_option("--featured", featured, "featured topic list (bundled list by default)");
  labels->add_option("--top-k", top_k);
  labels->add_option("--normalized", normalized_out, "also write the normalized manifest here");

  // analyze
  std::string repo;
  auto* analyze = sub("analyze", "extract scripts, functions and call edges");
  analyze->add_option("--repo", repo)->required();

  // sample
  std::string analysis;
  std::size_t n = 5;
  auto* sample = sub("sample", "sample n scripts along dependency paths");
  sample->add_option("--analysis", analysis)->required();
  sample->add_option("--n", n);

  // serialize
  std::string prefix;
  auto* serialize = sub("serialize", "serialize scripts into code, doc and dep token sequences");
  serialize->add_option("--analysis", analysis)->required();
  serialize->add_option("--repo", repo, "repository root holding the sources")->required();
  serialize->add_option("--prefix", prefix, "prepended to every path");

  // embed
  std::string tokens, provider = "hash", emb_file;
  std::size_t dim = embedder::kDefaultWidth;
  auto* embed = sub("embed", "embed token sequences");
  embed->add_option("--tokens", tokens)->required();
  embed->add_option("--provider", provider)->check(CLI::IsMember({"hash", "file"}));
  embed->add_option("--embeddings", emb_file, "precomputed embeddings (provider file)");
  embed->add_option("--dim", dim);

  // pca
  std::string emb, split, labels_path;
  std::size_t k = embedder::kReducedWidth;
  auto* pca = sub("pca", "fit per-domain PCA reducers");
  pca->add_option("--emb", emb)->required();
  pca->add_option("--k", k);
  pca->add_option("--split", split, "JSON list of training repo ids, or split.json with --labels");
  pca->add_option("--labels", labels_path);

  // train
  std::string tensors;
  std::size_t domain_width = embedder::kReducedWidth;
  auto* train = sub("train", "train the repository classifier");
  train->add_option("--tensors", tensors)->required();
  train->add_option("--split", split, "train on the split's training rows");
  train->add_option("--labels", labels_path, "labels.json, stores topic names in the checkpoint");
  train->add_option("--domain-width", domain_width, "linear reduction width");

  // infer
  std::string model_path, tensor;
  auto* infer = sub("infer", "score one repository tensor");
  infer->add_option("--model", model_path)->required();
  infer->add_option("--tensor", tensor)->required();

  // eval
  auto* eval = sub("eval", "tune thresholds on validation rows and report test metrics");
  eval->add_option("--model", model_path)->required();
  eval->add_option("--tensors", tensors)->required();
  eval->add_option("--split", split)->required();

  // tf3d
  std::string workdir;
  bool tf3d_eval = false;
  std::string analysis_dir;
  auto* tf3d_cmd = sub("tf3d", "fit the TF3D baseline from a pipeline config or a finished workdir");
  tf3d_cmd->add_option("--workdir", workdir, "overrides the config's workdir");
  tf3d_cmd->add_option("--analysis-dir", analysis_dir, "workdir holding analysis.jsonl, split.json and the manifest");
  tf3d_cmd->add_option("--labels", labels_path, "labels.json (defaults to the workdir's)");
  tf3d_cmd->add_flag("--eval", tf3d_eval, "write the metrics report instead of the model");

  // ablate
  std::vector<std::string> grids{"components", "scripts", "encoder", "reduction"};
  std::size_t seeds = 3;
  auto* ablate = sub("ablate", "run ablation grids (needs a pipeline config)");
  ablate->add_option("--workdir", workdir);
  ablate->add_option("--grid", grids, "components, scripts, encoder, reduction");
  ablate->add_option("--seeds", seeds);

  // project
  std::size_t dims = 2;
  auto* project = sub("project", "project repository vectors to 2-D or 3-D as CSV");
  project->add_option("--model", model_path)->required();
  project->add_option("--tensors", tensors)->required();
  project->add_option("--dims", dims)->check(CLI::IsMember({2, 3}));

  // pipeline
  auto* pipe = sub("pipeline", "run every stage with caching");
  pipe->add_option("--workdir", workdir);

  // synth
  synth::SynthConfig sc;
  auto* synth_cmd = sub("synth", "generate a synthetic corpus directory");
  synth_cmd->add_option("--repos", sc.repos);
  synth_cmd->add_option("--topics", sc.topics);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string verb = app.get_subcommands().front()->get_name();
  const Common& c = common[verb];
  const std::uint64_t seed = c.seed.value_or(0);

  if (verb == "crawl") {
    corpus::CrawlOptions opts;
    if (const char* t = std::getenv(token_env.c_str()); t && *t) opts.auth_token = t;
    corpus::CrawlStats stats;
    const auto entries = corpus::crawl_topics(api_base, crawl_topics, crawl_max, crawl_conc, opts, &stats);
    std::vector<nlohmann::ordered_json> rows;
    for (const auto& e : entries) rows.push_back(corpus::manifest_entry_json(e));
    emit(c, jsonl(rows));
    std::cerr << nlohmann::json{{"verb", "crawl"}, {"repos", entries.size()}, {"requests", stats.requests},
                                {"retries", stats.retries}}.dump()
              << "\n";
  } else if (verb == "labels") {
    require(manifest, "manifest");
    const auto topics = corpus::load_featured_topics(featured.empty() ? corpus::default_featured_topics_path() : fs::path(featured));
    auto entries = corpus::read_manifest(manifest);
    for (auto& e : entries) {
      if (!e.raw_topics.empty()) e.featured_topics = corpus::normalize_topics(e.raw_topics, topics);
    }
    if (!normalized_out.empty()) corpus::write_manifest(normalized_out, entries);
    emit(c, io::dump_json(corpus::vocabulary_json(corpus::build_label_matrix(entries, top_k))));
  } else if (verb == "analyze") {
    require(repo, "repo");
    emit(c, analyzer::dump(analyzer::analyze_repository(repo)));
  } else if (verb == "sample") {
    require(analysis, "analysis");
    const auto graph = graphkit::build_graph(analyzer::analysis_from_json(io::read_json(analysis)));
    emit(c, graphkit::sample_json(graphkit::sample_scripts(graph, n, c.seed.value_or(7))).dump() + "\n");
  } else if (verb == "serialize") {
    require(analysis, "analysis");
    require(repo, "repo");
    const auto a = analyzer::analysis_from_json(io::read_json(analysis));
    std::vector<nlohmann::ordered_json> rows;
    for (const auto& s : a.scripts) {
      if (!s.parse_ok) continue;
      auto code = serializer::serialize_code(io::read_file(fs::path(repo) / s.path), prefix + s.path);
      auto doc = serializer::serialize_doc(s);
      auto dep = serializer::serialize_dep(s, a.edges);
      doc.path = dep.path = prefix + s.path;
      for (const auto* seq : {&code, &doc, &dep}) rows.push_back(serializer::sequence_json(*seq));
    }
    emit(c, jsonl(rows));
  } else if (verb == "embed") {
    require(tokens, "tokens");
    std::vector<embedder::ScriptEmbedding> out;
    if (provider == "hash") {
      for (const auto& j : io::read_jsonl(tokens)) out.push_back(embedder::hash_embed(serializer::sequence_from_json(j), dim, seed));
    } else {
      require(emb_file, "embeddings");
      const embedder::EmbeddingStore given(embedder::load_embeddings(emb_file));
      dim = given.dim();
      for (const auto& j : io::read_jsonl(tokens)) {
        const auto seq = serializer::sequence_from_json(j);
        out.push_back({seq.path, seq.domain, given.at(seq.path, seq.domain)});
      }
    }
    emit(c, embedder::format_embeddings(dim, out));
  } else if (verb == "pca") {
    require(emb, "emb");
    if (c.out.empty()) throw ValidationError("pca needs --out (binary output)");
    const auto all = embedder::load_embeddings(emb);
    std::optional<std::set<std::string>> keep;
    if (!split.empty()) {
      const auto j = io::read_json(split);
      keep.emplace();
      if (j.is_array()) {
        for (const auto& id : j) keep->insert(id.get<std::string>());
      } else {
        require(labels_path, "labels");
        const auto vocab = corpus::vocabulary_from_json(io::read_json(labels_path));
        for (const auto r : corpus::split_from_json(j).train) keep->insert(vocab.repo_ids.at(r));
      }
    }
    embedder::Reducers reducers;
    for (const auto d : serializer::all_domains()) {
      std::vector<const embedder::ScriptEmbedding*> rows;
      for (const auto& e : all) {
        if (e.domain != d) continue;
        if (keep) {
          const auto slash = e.path.find('/');
          if (slash == std::string::npos || !keep->count(e.path.substr(0, slash))) continue;
        }
        rows.push_back(&e);
      }
      if (rows.empty()) throw ValidationError("no embeddings selected for domain " + std::string(serializer::to_string(d)));
      Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front()->vector.size());
      for (std::size_t r = 0; r < rows.size(); ++r) m.row(static_cast<Eigen::Index>(r)) = rows[r]->vector.transpose();
      reducers[static_cast<std::size_t>(d)] = embedder::fit_pca(m, k);
    }
    embedder::save_reducers(c.out, reducers);
  } else if (verb == "train") {
    auto cfg = c.config.empty() ? model::TrainConfig{} : model::train_config_from_json(io::read_json(c.config));
    if (c.seed) cfg.seed = *c.seed;
    if (c.out.empty()) throw ValidationError("train needs --out (checkpoint path)");
    const auto data = pick(read_tensor_input(tensors), split, "train");
    const auto result = model::train(data, cfg, domain_width);
    nlohmann::json extra{{"train", model::train_config_json(cfg)}, {"epoch_loss", result.epoch_loss}};
    if (!labels_path.empty()) extra["topics"] = corpus::vocabulary_from_json(io::read_json(labels_path)).topics;
    model::save_model(c.out, result.model, extra);
    std::cerr << nlohmann::json{{"verb", "train"}, {"repos", data.size()}, {"final_loss", result.epoch_loss.back()}}.dump() << "\n";
  } else if (verb == "infer") {
    require(model_path, "model");
    nlohmann::json extra;
    model::Model m = model::load_model(model_path, &extra);
    const auto topics = model_topics(extra, m.shape.n_topics);
    std::vector<nlohmann::ordered_json> rows;
    for (const auto& t : read_tensor_input(tensor)) {
      const Eigen::VectorXd s = model::predict(m, t);
      nlohmann::ordered_json scores;
      for (std::size_t i = 0; i < topics.size(); ++i) scores[topics[i]] = s(static_cast<Eigen::Index>(i));
      rows.push_back({{"repo_id", t.repo_id}, {"scores", scores}});
    }
    emit(c, jsonl(rows));
  } else if (verb == "eval") {
    require(model_path, "model");
    require(split, "split");
    model::Model m = model::load_model(model_path);
    const auto all = read_tensor_input(tensors);
    const auto val = pick(all, split, "validation");
    const auto test = pick(all, split, "test");
    auto report = metricskit::evaluate(pipeline::labels_of(val), pipeline::predict_all(m, val), pipeline::labels_of(test),
                                       pipeline::predict_all(m, test));
    report.train_size = corpus::split_from_json(io::read_json(split)).train.size();
    emit(c, io::dump_json(metricskit::report_json(report)));
  } else if (verb == "tf3d") {
    tf3d::ForestConfig forest;
    pipeline::Prepared data;
    if (!analysis_dir.empty()) {
      if (!c.config.empty()) forest = pipeline::PipelineConfig::load(c.config).forest;
      data = pipeline::load_workdir(analysis_dir, false, labels_path);
    } else {
      const auto cfg = pipeline_config(c, workdir);
      forest = cfg.forest;
      data = pipeline::prepare(cfg, pipeline::stderr_log());
    }
    if (c.seed) forest.seed = *c.seed;
    const auto r = pipeline::run_tf3d(data, forest);
    emit(c, tf3d_eval ? io::dump_json(metricskit::report_json(r.report)) : tf3d::model_json(r.model).dump() + "\n");
  } else if (verb == "ablate") {
    const auto cfg = pipeline_config(c, workdir);
    embedder::Reducers reducers;
    const auto log = pipeline::stderr_log();
    const auto data = pipeline::prepare(cfg, log, &reducers);
    pipeline::ExperimentConfig base;
    base.n = cfg.n;
    base.sample_seed = cfg.sample_seed;
    base.train = cfg.train;
    base.domain_width = cfg.pca_k;
    const auto rows = pipeline::run_ablation(data, reducers, base, {grids, seeds}, log);
    std::cout << metricskit::grid_table(rows);
    if (!c.out.empty()) io::write_file(c.out, io::dump_json(metricskit::grid_json(rows)));
  } else if (verb == "project") {
    require(model_path, "model");
    model::Model m = model::load_model(model_path);
    const auto all = read_tensor_input(tensors);
    metricskit::Matrix v(static_cast<Eigen::Index>(all.size()), 0);
    for (std::size_t i = 0; i < all.size(); ++i) {
      const Eigen::VectorXd r = model::repo_vector(m, all[i]);
      if (i == 0) v.resize(static_cast<Eigen::Index>(all.size()), r.size());
      v.row(static_cast<Eigen::Index>(i)) = r.transpose();
    }
    const auto p = metricskit::project(v, dims);
    std::ostringstream csv;
    csv.precision(17);
    csv << "repo_id" << (dims == 3 ? ",x,y,z\n" : ",x,y\n");
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
      csv << all[static_cast<std::size_t>(i)].repo_id;
      for (Eigen::Index d = 0; d < p.cols(); ++d) csv << ',' << p(i, d);
      csv << '\n';
    }
    emit(c, csv.str());
  } else if (verb == "pipeline") {
    const auto cfg = pipeline_config(c, workdir);
    emit(c, io::dump_json(pipeline::run_pipeline(cfg)));
  } else if (verb == "synth") {
    if (c.out.empty()) throw ValidationError("synth needs --out (directory)");
    if (c.seed) sc.seed = *c.seed;
    std::cout << synth::generate(c.out, sc).string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
