#include "topical/synth.hpp"

#include <algorithm>
#include <set>

#include "topical/corpus.hpp"
#include "topical/errors.hpp"
#include "topical/io.hpp"
#include "topical/random.hpp"

namespace topical::synth {

namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kGenericWords{
    "util", "helper", "config", "load", "save", "parse", "run", "setup", "logger", "path",
    "file", "read", "write", "data", "value", "result", "item", "get", "update", "check",
    "process", "build", "make", "options", "args", "default", "format", "output", "input", "state"};

const std::vector<std::string> kGenericLibs{"os", "sys", "json", "logging", "argparse", "re", "collections", "pathlib"};

const std::vector<std::string> kNoiseTags{"my-project", "homework", "wip", "side-project", "experiment"};

class Writer {
 public:
  Writer(Rng& rng, std::vector<const TopicPool*> topics) : rng_(rng), topics_(std::move(topics)) {}

  const std::string& pick(const std::vector<std::string>& v) { return v[rng_.below(v.size())]; }

  const TopicPool& topic() { return *topics_[rng_.below(topics_.size())]; }

  std::string sentence(const std::vector<std::string>& words, std::size_t lo, std::size_t hi) {
    const std::size_t n = lo + rng_.below(hi - lo + 1);
    std::string s;
    for (std::size_t i = 0; i < n; ++i) {
      if (i) s += ' ';
      s += pick(words);
    }
    s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s + ".";
  }

  std::string name(const std::vector<std::string>& words) { return pick(words) + "_" + pick(words); }

  std::string alias(const std::string& lib) {
    std::string a = lib;
    std::replace(a.begin(), a.end(), '.', '_');
    return a;
  }

  Rng& rng() { return rng_; }

 private:
  Rng& rng_;
  std::vector<const TopicPool*> topics_;
};

struct Module {
  std::string path;    // relative file path
  std::string dotted;  // import path
  std::vector<std::string> functions;
  const TopicPool* topic = nullptr;  // nullptr: generic
};

std::string render_module(Writer& w, const Module& m, const std::vector<const Module*>& callees) {
  const auto& words = m.topic ? m.topic->words : kGenericWords;
  const auto& libs = m.topic ? m.topic->libraries : kGenericLibs;
  std::string src = "\"\"\"" + w.sentence(words, 4, 8) + "\"\"\"\n";
  std::vector<std::string> used;
  const std::size_t nlibs = 1 + w.rng().below(2);
  for (std::size_t i = 0; i < nlibs; ++i) {
    const std::string lib = w.pick(libs);
    if (std::find(used.begin(), used.end(), lib) != used.end()) continue;
    used.push_back(lib);
    src += "import " + lib + "\n";
  }
  src += "import " + w.pick(kGenericLibs) + "\n";
  for (const auto* c : callees) src += "from " + c->dotted + " import " + c->functions.front() + "\n";
  src += "\n";

  for (std::size_t f = 0; f < m.functions.size(); ++f) {
    const std::string arg = w.pick(words);
    src += "\ndef " + m.functions[f] + "(" + arg + ", " + w.pick(kGenericWords) + "_opts=None):\n";
    src += "    \"\"\"" + w.sentence(words, 5, 10) + "\n\n    " + w.sentence(kGenericWords, 3, 6) + "\n    \"\"\"\n";
    const std::string lib = used[w.rng().below(used.size())];
    src += "    " + w.pick(words) + " = " + lib + "." + w.name(words) + "(" + arg + ")\n";
    if (f > 0) src += "    " + m.functions[f - 1] + "(" + arg + ")\n";
    if (f == 0) {
      for (const auto* c : callees) src += "    " + c->functions.front() + "(" + arg + ")\n";
    }
    src += "    for " + w.pick(words) + "_item in " + arg + ":\n";
    src += "        " + lib + "." + w.pick(words) + "(" + arg + ")\n";
    src += "    return " + arg + "\n";
  }
  return src;
}

}  // namespace

const std::vector<TopicPool>& topic_pool() {
  static const std::vector<TopicPool> pool{
      {"machine-learning",
       {"machine-learning", "machinelearning", "Machine-Learning", "machine_learning"},
       {"sklearn", "torch", "xgboost", "lightgbm", "keras", "joblib"},
       {"train", "model", "classifier", "regression", "gradient", "epoch", "feature", "predict", "tensor", "loss",
        "optimizer", "layer", "neural", "dataset", "batch", "accuracy", "tuning", "hyperparameter", "embedding",
        "inference", "weights", "sigmoid", "kernel", "forest", "boosting", "validation", "overfit", "learner",
        "label", "logits"}},
      {"django",
       {"django", "Django", "DJANGO", "django-"},
       {"django", "rest_framework", "celery", "jinja2", "werkzeug", "gunicorn"},
       {"view", "template", "request", "response", "route", "middleware", "session", "form", "url", "render",
        "csrf", "cookie", "admin", "serializer", "queryset", "login", "user", "http", "endpoint", "static",
        "redirect", "handler", "auth", "permission", "page", "blog", "comment", "widget", "migration", "settings"}},
      {"database",
       {"database", "Database", "data_base", "data-base"},
       {"sqlalchemy", "psycopg2", "pymongo", "redis", "sqlite3", "alembic"},
       {"query", "table", "index", "column", "transaction", "commit", "rollback", "schema", "cursor", "row",
        "join", "shard", "replica", "connection", "pool", "record", "insert", "upsert", "primary", "foreign",
        "key", "select", "cache", "store", "partition", "journal", "vacuum", "tuple", "collection", "trigger"}},
      {"computer-vision",
       {"computer-vision", "computervision", "Computer-Vision", "computer_vision"},
       {"cv2", "PIL", "skimage", "imageio", "torchvision", "albumentations"},
       {"image", "pixel", "frame", "camera", "contour", "edge", "blur", "filter", "segment", "mask",
        "detect", "bounding", "box", "color", "histogram", "resize", "crop", "rotate", "convolve", "lens",
        "video", "optical", "flow", "keypoint", "descriptor", "grayscale", "stereo", "depth", "scene", "face"}},
      {"cryptocurrency",
       {"cryptocurrency", "Cryptocurrency", "crypto_currency", "crypto-currency"},
       {"web3", "bitcoinlib", "ecdsa", "ccxt", "eth_account", "nacl"},
       {"wallet", "block", "chain", "coin", "token", "mining", "miner", "hash", "nonce", "address",
        "signature", "exchange", "trade", "price", "market", "satoshi", "ether", "contract", "gas", "stake",
        "consensus", "peer", "mempool", "fork", "halving", "balance", "deposit", "withdraw", "swap", "ledger"}},
      {"reinforcement-learning",
       {"reinforcement-learning", "reinforcementlearning", "Reinforcement-Learning"},
       {"gym", "stable_baselines3", "ray", "dm_control", "pettingzoo", "mujoco"},
       {"agent", "reward", "policy", "environment", "episode", "action", "observation", "qvalue", "actor",
        "critic", "rollout", "discount", "exploration", "replay", "buffer", "bandit", "markov", "trajectory",
        "advantage", "horizon", "simulator", "return", "step", "greedy", "bellman", "sarsa", "temporal",
        "curiosity", "curriculum", "planner"}},
  };
  return pool;
}

fs::path generate(const fs::path& dir, const SynthConfig& config) {
  const auto& pool = topic_pool();
  if (config.topics < 1 || config.topics > pool.size()) {
    throw ValidationError("synthetic corpus supports 1.." + std::to_string(pool.size()) + " topics");
  }
  if (config.repos < 1) throw ValidationError("synthetic corpus needs at least one repository");
  Rng rng(config.seed);
  std::vector<corpus::RepoManifestEntry> manifest;

  for (std::size_t r = 0; r < config.repos; ++r) {
    std::vector<const TopicPool*> topics{&pool[rng.below(config.topics)]};
    if (config.topics > 1 && rng.uniform() < config.second_topic_rate) {
      const TopicPool* second;
      do {
        second = &pool[rng.below(config.topics)];
      } while (second == topics.front());
      topics.push_back(second);
    }
    Writer w(rng, topics);
    char name[32];
    std::snprintf(name, sizeof name, "repo-%03zu", r);
    const std::string pkg = w.pick(topics.front()->words) + "kit";

    std::vector<Module> modules;
    std::set<std::string> used_paths;
    auto add_module = [&](const TopicPool* topic, const std::string& base) {
      std::string stem = base;
      for (int k = 2; used_paths.count(stem); ++k) stem = base + std::to_string(k);
      used_paths.insert(stem);
      Module m;
      m.path = pkg + "/" + stem + ".py";
      m.dotted = pkg + "." + stem;
      m.topic = topic;
      const auto& words = topic ? topic->words : kGenericWords;
      const std::size_t nf = 2 + rng.below(2);
      std::set<std::string> names;
      while (names.size() < nf) {
        const std::string fn = w.name(words);
        if (names.insert(fn).second) m.functions.push_back(fn);
      }
      modules.push_back(std::move(m));
    };
    for (const auto* t : topics) {
      const std::size_t count = 2 + rng.below(2);
      for (std::size_t i = 0; i < count; ++i) add_module(t, w.name(t->words));
    }
    for (const char* generic : {"config", "utils"}) add_module(nullptr, generic);
    if (rng.uniform() < 0.5) add_module(nullptr, "helpers");

    const fs::path root = dir / "repos" / name;
    io::write_file(root / pkg / "__init__.py", "");
    // Topic modules of the same topic form a chain; generic modules hang off the first.
    for (std::size_t i = 0; i < modules.size(); ++i) {
      std::vector<const Module*> callees;
      if (i + 1 < modules.size() && modules[i + 1].topic == modules[i].topic && modules[i].topic) {
        callees.push_back(&modules[i + 1]);
      }
      if (i == 0) callees.push_back(&modules.back());
      io::write_file(root / modules[i].path, render_module(w, modules[i], callees));
    }

    std::string main = "\"\"\"Command line entry point.\"\"\"\nimport argparse\n";
    std::vector<const Module*> heads;
    for (std::size_t i = 0; i < modules.size(); ++i) {
      if (modules[i].topic && (i == 0 || modules[i - 1].topic != modules[i].topic)) heads.push_back(&modules[i]);
    }
    for (const auto* h : heads) main += "from " + h->dotted + " import " + h->functions.front() + "\n";
    main += "\n\ndef main():\n    \"\"\"Parse options and run the tool.\"\"\"\n";
    main += "    args = argparse.ArgumentParser().parse_args()\n";
    for (const auto* h : heads) main += "    " + h->functions.front() + "(args)\n";
    main += "\n\nif __name__ == \"__main__\":\n    main()\n";
    io::write_file(root / "main.py", main);

    corpus::RepoManifestEntry e;
    e.repo_id = std::string("synth/") + name;
    e.local_path = (fs::path("repos") / name).string();
    for (const auto* t : topics) e.raw_topics.push_back(w.pick(t->raw_variants));
    if (rng.uniform() < 0.5) e.raw_topics.push_back(w.pick(kNoiseTags));
    manifest.push_back(std::move(e));
  }
  const fs::path path = dir / "manifest.jsonl";
  corpus::write_manifest(path, manifest);
  return path;
}

}  // namespace topical::synth
