#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <memory>

#include "support.hpp"
#include "topical/errors.hpp"
#include "topical/io.hpp"
#include "topical/pipeline.hpp"
#include "topical/synth.hpp"

using namespace topical;
using namespace topical::pipeline;

namespace {

struct Cmd {
  int code = -1;
  std::string out;
};

Cmd cli(const std::string& args) {
  const std::string cmd = std::string(TOPICAL_CLI) + " " + args + " 2>/dev/null";
  std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
  Cmd r;
  char buf[4096];
  std::size_t got;
  while ((got = fread(buf, 1, sizeof buf, pipe.get())) > 0) r.out.append(buf, got);
  const int status = pclose(pipe.release());
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

nlohmann::json small_config(const fs::path& manifest, const fs::path& workdir) {
  return {{"manifest", manifest.string()},
          {"workdir", workdir.string()},
          {"dim", 256},
          {"pca_k", 16},
          {"top_k", 3},
          {"n", 5},
          {"train", {{"epochs", 8}, {"hidden", 16}, {"seed", 2}}},
          {"forest", {{"trees", 10}, {"seed", 3}}}};
}

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new topical::testing::TempDir();
    synth::SynthConfig sc;
    sc.repos = 50;
    sc.topics = 3;
    sc.seed = 4;
    manifest_ = new fs::path(synth::generate(dir_->path() / "corpus", sc));
    config_ = new PipelineConfig(PipelineConfig::from_json(small_config(*manifest_, dir_->path() / "work")));
    std::vector<nlohmann::json> events;
    report_ = new nlohmann::ordered_json(run_pipeline(*config_, [&](const nlohmann::json& j) { events.push_back(j); }));
    first_events_ = new std::vector<nlohmann::json>(events);
  }
  static void TearDownTestSuite() {
    delete report_;
    delete first_events_;
    delete config_;
    delete manifest_;
    delete dir_;
  }

  static topical::testing::TempDir* dir_;
  static fs::path* manifest_;
  static PipelineConfig* config_;
  static nlohmann::ordered_json* report_;
  static std::vector<nlohmann::json>* first_events_;
};

topical::testing::TempDir* Pipeline::dir_ = nullptr;
fs::path* Pipeline::manifest_ = nullptr;
PipelineConfig* Pipeline::config_ = nullptr;
nlohmann::ordered_json* Pipeline::report_ = nullptr;
std::vector<nlohmann::json>* Pipeline::first_events_ = nullptr;

}  // namespace

TEST_F(Pipeline, ReportIsComplete) {
  const auto& r = *report_;
  for (const char* k : {"tool_version", "config_hash", "seeds", "artifact_versions", "topics", "model", "tf3d", "stage_keys", "config"}) {
    EXPECT_TRUE(r.contains(k)) << k;
  }
  EXPECT_EQ(r["topics"].size(), 3u);
  for (const char* m : {"model", "tf3d"}) {
    EXPECT_GT(r[m]["lrap"].get<double>(), 0.0);
    EXPECT_LE(r[m]["lrap"].get<double>(), 1.0);
    EXPECT_EQ(r[m]["per_topic_thresholds"].size(), 3u);
    EXPECT_EQ(r[m]["split_sizes"]["train"].get<int>() + r[m]["split_sizes"]["validation"].get<int>() +
                  r[m]["split_sizes"]["test"].get<int>(),
              50);
  }
  EXPECT_EQ(r["stage_keys"].size(), 10u);
  EXPECT_EQ(r["config_hash"], config_->hash());
  for (const char* f : {"labels.json", "analysis.jsonl", "tokens.jsonl", "emb.jsonl", "split.json", "pca.bin",
                        "tensors.jsonl", "model.tpcl", "train_log.json", "model_report.json", "model_tf3d.json",
                        "tf3d_report.json", "report.json", "cache.json"}) {
    EXPECT_TRUE(fs::is_regular_file(config_->workdir / f)) << f;
  }
  EXPECT_EQ(io::read_json(config_->workdir / "train_log.json")["epoch_loss"].size(), 8u);
  for (const auto& e : *first_events_) EXPECT_EQ(e["event"], "run") << e.dump();
}

TEST_F(Pipeline, SecondRunIsAllCacheHitsWithIdenticalReport) {
  std::vector<nlohmann::json> events;
  const auto again = run_pipeline(*config_, [&](const nlohmann::json& j) { events.push_back(j); });
  EXPECT_EQ(events.size(), 10u);
  for (const auto& e : events) EXPECT_EQ(e["event"], "cache_hit") << e.dump();
  EXPECT_EQ(again.dump(), report_->dump());
}

TEST_F(Pipeline, FreshWorkdirReproducesReport) {
  auto j = small_config(*manifest_, dir_->path() / "work2");
  const auto second = run_pipeline(PipelineConfig::from_json(j), null_log());
  EXPECT_EQ(second["model"].dump(), (*report_)["model"].dump());
  EXPECT_EQ(second["tf3d"].dump(), (*report_)["tf3d"].dump());
  EXPECT_EQ(second["stage_keys"].dump(), (*report_)["stage_keys"].dump());
  EXPECT_EQ(io::read_file(dir_->path() / "work2" / "model.tpcl"), io::read_file(config_->workdir / "model.tpcl"));
}

TEST_F(Pipeline, ChangedParameterRerunsOnlyDownstream) {
  const fs::path w = dir_->path() / "work3";
  fs::copy(config_->workdir, w, fs::copy_options::recursive);
  auto j = small_config(*manifest_, w);
  j["train"]["epochs"] = 3;
  j["tf3d"] = false;
  std::map<std::string, std::string> seen;
  run_pipeline(PipelineConfig::from_json(j), [&](const nlohmann::json& e) { seen[e["stage"]] = e["event"]; });
  for (const char* s : {"labels", "analyze", "serialize", "embed", "split", "pca", "tensors"}) EXPECT_EQ(seen[s], "cache_hit") << s;
  EXPECT_EQ(seen["train"], "run");
  EXPECT_EQ(seen["eval"], "run");
  EXPECT_EQ(seen.count("tf3d"), 0u);
}

TEST_F(Pipeline, TamperedOutputIsRebuilt) {
  const fs::path w = dir_->path() / "work4";
  fs::copy(config_->workdir, w, fs::copy_options::recursive);
  io::write_file(w / "split.json", "{}");
  std::map<std::string, std::string> seen;
  const auto r = run_pipeline(PipelineConfig::from_json(small_config(*manifest_, w)),
                              [&](const nlohmann::json& e) { seen[e["stage"]] = e["event"]; });
  EXPECT_EQ(seen["split"], "run");
  EXPECT_EQ(seen["embed"], "cache_hit");
  EXPECT_EQ(r["model"].dump(), (*report_)["model"].dump());
}

TEST_F(Pipeline, FileProviderMatchesHashProvider) {
  // the exporter's wire format carries the same vectors, so results agree
  auto j = small_config(*manifest_, dir_->path() / "work5");
  j["provider"] = "file";
  j["embeddings"] = (config_->workdir / "emb.jsonl").string();
  j["tf3d"] = false;
  const auto r = run_pipeline(PipelineConfig::from_json(j), null_log());
  EXPECT_EQ(r["model"].dump(), (*report_)["model"].dump());
}

TEST_F(Pipeline, SourceEditInvalidatesAnalysis) {
  const fs::path corpus2 = dir_->path() / "corpus_edit";
  fs::copy(manifest_->parent_path(), corpus2, fs::copy_options::recursive);
  const fs::path w = dir_->path() / "work6";
  auto j = small_config(corpus2 / manifest_->filename(), w);
  j["tf3d"] = false;
  run_pipeline(PipelineConfig::from_json(j), null_log());
  for (const auto& e : fs::recursive_directory_iterator(corpus2)) {
    if (e.path().extension() == ".py") {
      io::write_file(e.path(), io::read_file(e.path()) + "\ndef added_later():\n    return 1\n");
      break;
    }
  }
  std::map<std::string, std::string> seen;
  run_pipeline(PipelineConfig::from_json(j), [&](const nlohmann::json& e) { seen[e["stage"]] = e["event"]; });
  EXPECT_EQ(seen["labels"], "cache_hit");
  EXPECT_EQ(seen["analyze"], "run");
  EXPECT_EQ(seen["serialize"], "run");
}

TEST(PipelineErrors, MissingManifestFailsBeforeWork) {
  topical::testing::TempDir dir;
  const auto cfg = PipelineConfig::from_json(small_config(dir / "nope.jsonl", dir / "work"));
  int events = 0;
  EXPECT_THROW(run_pipeline(cfg, [&](const nlohmann::json&) { ++events; }), ValidationError);
  EXPECT_EQ(events, 0);
  EXPECT_FALSE(fs::exists(dir / "work" / "labels.json"));
}

TEST(PipelineErrors, ConfigValidation) {
  EXPECT_THROW(PipelineConfig::from_json({{"workdir", "w"}}), ValidationError);
  EXPECT_THROW(PipelineConfig::from_json({{"manifest", "m"}, {"provider", "bert"}}), ValidationError);
  EXPECT_THROW(PipelineConfig::from_json({{"manifest", "m"}, {"provider", "file"}}), ValidationError);
  EXPECT_THROW(PipelineConfig::from_json({{"manifest", "m"}, {"n", 0}}), ValidationError);
  const auto c = PipelineConfig::from_json({{"manifest", "m.jsonl"}}, "/base");
  EXPECT_EQ(c.manifest, fs::path("/base/m.jsonl"));
  const auto back = PipelineConfig::from_json(nlohmann::json::parse(c.to_json().dump()));
  EXPECT_EQ(back.to_json().dump(), c.to_json().dump());
  EXPECT_EQ(back.hash(), c.hash());
  auto other = c;
  other.workdir = "/elsewhere";
  EXPECT_EQ(other.hash(), c.hash());
  other.n = 10;
  EXPECT_NE(other.hash(), c.hash());
}

TEST(PipelineErrors, BrokenRepositoryIsNamed) {
  topical::testing::TempDir dir;
  synth::SynthConfig sc;
  sc.repos = 12;
  sc.topics = 2;
  const auto manifest = synth::generate(dir / "c", sc);
  auto entries = corpus::read_manifest(manifest);
  const std::string victim = entries[3].repo_id;
  fs::remove_all(dir / "c" / entries[3].local_path);
  try {
    auto j = small_config(manifest, dir / "w");
    j["top_k"] = 2;
    run_pipeline(PipelineConfig::from_json(j), null_log());
    ADD_FAILURE();
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find(victim), std::string::npos) << e.what();
  }
}

TEST(Cli, ExitCodes) {
  EXPECT_EQ(cli("").code, 2);
  EXPECT_EQ(cli("frobnicate").code, 2);
  EXPECT_EQ(cli("labels --manifest /definitely/missing.jsonl").code, 2);
  EXPECT_EQ(cli("labels").code, 2);
  EXPECT_EQ(cli("project --model x --tensors y --dims 4").code, 2);
  EXPECT_EQ(cli("--help").code, 0);
}

TEST(Cli, VerbsChain) {
  topical::testing::TempDir dir;
  const std::string d = dir.path().string();
  const Cmd synth = cli("synth --repos 40 --topics 2 --seed 5 --out " + d + "/c");
  ASSERT_EQ(synth.code, 0);
  const std::string manifest = synth.out.substr(0, synth.out.find('\n'));
  EXPECT_TRUE(fs::is_regular_file(manifest));

  const Cmd labels = cli("labels --manifest " + manifest + " --top-k 2");
  ASSERT_EQ(labels.code, 0);
  EXPECT_EQ(nlohmann::json::parse(labels.out)["topics"].size(), 2u);

  const auto entries = corpus::read_manifest(manifest);
  const std::string repo = (fs::path(manifest).parent_path() / entries[0].local_path).string();
  ASSERT_EQ(cli("analyze --repo " + repo + " --out " + d + "/a.json").code, 0);
  const Cmd sample = cli("sample --analysis " + d + "/a.json --n 2");
  ASSERT_EQ(sample.code, 0);
  EXPECT_EQ(nlohmann::json::parse(sample.out).size(), 2u);
  ASSERT_EQ(cli("serialize --analysis " + d + "/a.json --repo " + repo + " --out " + d + "/t.jsonl").code, 0);
  const Cmd emb = cli("embed --tokens " + d + "/t.jsonl --dim 32");
  ASSERT_EQ(emb.code, 0);
  EXPECT_EQ(emb.out.substr(0, emb.out.find('\n')), R"({"format":"topical-emb","version":1,"dim":32})");

  nlohmann::json cfg = small_config(manifest, d + "/w");
  cfg["tf3d"] = false;
  cfg["top_k"] = 2;
  io::write_file(dir / "cfg.json", cfg.dump());
  const Cmd pipe = cli("pipeline --config " + d + "/cfg.json");
  ASSERT_EQ(pipe.code, 0);
  EXPECT_EQ(nlohmann::json::parse(pipe.out)["topics"].size(), 2u);

  const std::string w = d + "/w";
  const Cmd infer = cli("infer --model " + w + "/model.tpcl --tensor " + w + "/tensors.jsonl");
  ASSERT_EQ(infer.code, 0);
  const auto first = nlohmann::json::parse(infer.out.substr(0, infer.out.find('\n')));
  EXPECT_EQ(first["scores"].size(), 2u);

  const Cmd eval = cli("eval --model " + w + "/model.tpcl --tensors " + w + "/tensors.jsonl --split " + w + "/split.json");
  ASSERT_EQ(eval.code, 0);
  EXPECT_EQ(nlohmann::json::parse(eval.out)["micro_f1"], io::read_json(w + "/model_report.json")["micro_f1"]);

  const Cmd proj = cli("project --model " + w + "/model.tpcl --tensors " + w + "/tensors.jsonl --dims 3");
  ASSERT_EQ(proj.code, 0);
  EXPECT_EQ(proj.out.substr(0, proj.out.find('\n')), "repo_id,x,y,z");
  EXPECT_EQ(std::count(proj.out.begin(), proj.out.end(), '\n'), 41);

  const Cmd tf = cli("tf3d --analysis-dir " + w + " --eval");
  ASSERT_EQ(tf.code, 0);
  EXPECT_TRUE(nlohmann::json::parse(tf.out).contains("lrap"));
}
