// Prints one PASS/FAIL line per acceptance criterion; exits non-zero if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>

#include "../support.hpp"
#include "topical/analyzer.hpp"
#include "topical/corpus.hpp"
#include "topical/embedder.hpp"
#include "topical/io.hpp"
#include "topical/metricskit.hpp"
#include "topical/model.hpp"
#include "topical/pipeline.hpp"
#include "topical/synth.hpp"
#include "topical/tf3d.hpp"

using namespace topical;
namespace ag = topical::autograd;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using topical::testing::fixture;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

MatrixXd randn(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double s = 1.0) {
  std::normal_distribution<double> g(0.0, s);
  MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = g(rng);
  return m;
}

// ---------------------------------------------------------------- gradients

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  double worst = 0;
  for (const auto enc : {model::EncoderKind::BiGru, model::EncoderKind::BiLstm, model::EncoderKind::Mlp}) {
    model::ModelShape s;
    s.encoder = enc;
    s.fused_width = 8;
    s.hidden = 4;
    s.n_topics = 2;
    s.max_scripts = 3;
    model::Model m = model::make_model(s, 17);
    for (auto& v : m.params.values) v += randn(rng, v.rows(), v.cols(), 0.3);
    const MatrixXd x = randn(rng, 3, 8);
    const std::vector<std::uint8_t> mask{1, 1, 0};
    MatrixXd y(2, 1);
    y << 1, 0;
    auto loss = [&] {
      ag::Tape t;
      return ag::bce_with_logits(model::forward(t, m, x, mask).logits, y).value()(0, 0);
    };
    m.params.zero_grad();
    model::accumulate_gradients(m, {"micro", x, mask, VectorXd(y.col(0))});
    const double h = 1e-4;  // smaller steps are dominated by roundoff on ~1e-7 gradients
    for (std::size_t p = 0; p < m.params.count(); ++p) {
      for (Eigen::Index i = 0; i < m.params.values[p].size(); ++i) {
        double& w = m.params.values[p](i);
        const double keep = w;
        w = keep + h;
        const double up = loss();
        w = keep - h;
        const double down = loss();
        w = keep;
        const double num = (up - down) / (2 * h);
        const double ana = m.params.grads[p](i);
        worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-7}));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10, fmt("max relative error %.2e over bigru/bilstm/mlp micro-models, %.2f s", worst, secs)};
}

// --------------------------------------------------------------------- LRAP

double lrap_brute(const MatrixXd& y, const MatrixXd& f) {
  double total = 0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    std::vector<Eigen::Index> truth;
    for (Eigen::Index j = 0; j < y.cols(); ++j)
      if (y(i, j) != 0) truth.push_back(j);
    double row = 0;
    for (const auto j : truth) {
      double rank = 0, l = 0;
      for (Eigen::Index k = 0; k < y.cols(); ++k) {
        if (!(f(i, k) >= f(i, j))) continue;
        rank += 1;
        if (std::find(truth.begin(), truth.end(), k) != truth.end()) l += 1;
      }
      row += l / rank;
    }
    total += row / static_cast<double>(truth.size());
  }
  return total / static_cast<double>(y.rows());
}

Outcome lrap_oracle() {
  MatrixXd y0(1, 3), f0(1, 3);
  y0 << 1, 0, 1;
  f0 << 0.8, 0.5, 0.3;
  const double worked = metricskit::lrap(y0, f0);
  std::mt19937_64 rng(202);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int rows = 1 + static_cast<int>(rng() % 16), cols = 1 + static_cast<int>(rng() % 8);
    const int levels = trial % 3 == 0 ? 3 : 1000;
    MatrixXd y = MatrixXd::Zero(rows, cols), f(rows, cols);
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        y(i, j) = rng() % 3 == 0;
        f(i, j) = static_cast<double>(rng() % static_cast<unsigned>(levels)) / levels;
      }
      if (y.row(i).sum() == 0) y(i, static_cast<Eigen::Index>(rng() % static_cast<unsigned>(cols))) = 1;
    }
    worst = std::max(worst, std::abs(metricskit::lrap(y, f) - lrap_brute(y, f)));
  }
  const bool ok = std::abs(worked - 5.0 / 6.0) <= 1e-12 && worst <= 1e-12;
  return {ok, fmt("worked case %.15f, max deviation %.1e over 1000 cases", worked, worst)};
}

// ------------------------------------------------------------------ masking

Outcome masking_exactness() {
  std::mt19937_64 rng(303);
  std::uniform_real_distribution<double> huge(-1e300, 1e300), unit(-1, 1);
  int failures = 0;
  for (int trial = 0; trial < 100; ++trial) {
    model::ModelShape s;
    s.domain_width = 4;
    s.hidden = 6;
    s.n_topics = 3;
    s.encoder = trial % 2 ? model::EncoderKind::BiLstm : model::EncoderKind::BiGru;
    model::Model m = model::make_model(s, static_cast<std::uint64_t>(trial));
    const int n = 2 + trial % 14;
    std::vector<std::uint8_t> mask(static_cast<std::size_t>(n), 1);
    mask[rng() % mask.size()] = 0;
    for (auto& b : mask)
      if (rng() % 3 == 0) b = 0;
    mask[0] = 1;
    MatrixXd x = randn(rng, n, 12);
    for (int i = 0; i < n; ++i)
      if (!mask[static_cast<std::size_t>(i)]) x.row(i).setZero();

    ag::Tape t;
    const auto f = model::forward(t, m, x, mask);
    const auto p = model::bind(t, m);
    const auto enc = model::encode_sequence(t.constant(x), mask, p, s);
    const ag::Var y = ag::stack_rows(enc.y);
    const auto base = model::masked_attention(y, enc.h_n, mask);
    MatrixXd y2 = y.value();
    for (int i = 0; i < n; ++i)
      if (!mask[static_cast<std::size_t>(i)])
        for (Eigen::Index c = 0; c < y2.cols(); ++c) y2(i, c) = trial % 2 ? huge(rng) : unit(rng);
    const auto pert = model::masked_attention(t.constant(y2), enc.h_n, mask);

    bool ok = std::memcmp(base.output.value().data(), pert.output.value().data(),
                          sizeof(double) * static_cast<std::size_t>(base.output.value().size())) == 0;
    for (int i = 0; i < n; ++i) {
      if (mask[static_cast<std::size_t>(i)]) continue;
      ok = ok && base.weights.value()(i, 0) == 0.0 && f.weights.value()(i, 0) == 0.0 && pert.weights.value()(i, 0) == 0.0;
    }
    failures += !ok;
  }
  return {failures == 0, fmt("%.0f of 100 randomized trials violated exact masking", failures)};
}

// ---------------------------------------------------------- synthetic corpus

struct Corpus {
  topical::testing::TempDir dir;
  pipeline::PipelineConfig config;
  nlohmann::ordered_json report;
  double seconds = 0;
  pipeline::Prepared data;
  embedder::Reducers reducers;
};

std::unique_ptr<Corpus> build_corpus() {
  auto c = std::make_unique<Corpus>();
  synth::SynthConfig sc;  // 200 repositories, 5 topics, seed 1
  const auto manifest = synth::generate(c->dir / "corpus", sc);
  c->config = pipeline::PipelineConfig::from_json({{"manifest", manifest.string()}, {"workdir", (c->dir / "work").string()},
                                                   {"tf3d", false}});
  const auto t0 = std::chrono::steady_clock::now();
  c->report = pipeline::run_pipeline(c->config, pipeline::null_log());
  c->seconds = seconds_since(t0);
  c->data = pipeline::prepare(c->config, pipeline::null_log(), &c->reducers);
  return c;
}

Outcome synthetic_end_to_end(Corpus& c) {
  const auto& r = c.report["model"];
  const double f1 = r["micro_f1"].get<double>(), lr = r["lrap"].get<double>();
  pipeline::ExperimentConfig mean;
  mean.n = c.config.n;
  mean.sample_seed = c.config.sample_seed;
  mean.train = c.config.train;
  mean.train.aggregation = model::Aggregation::Mean;
  const auto base = pipeline::run_experiment(c.data, c.reducers, mean);
  const bool ok = f1 >= 0.90 && lr >= 0.95 && c.seconds < 120 && base.report.micro_f1 < f1;
  return {ok, fmt("attention F1 %.3f LRAP %.3f in %.1f s; mean-aggregation F1 %.3f", f1, lr, c.seconds,
                  base.report.micro_f1)};
}

Outcome tf3d_end_to_end(Corpus& c) {
  const auto r = pipeline::run_tf3d(c.data, c.config.forest);

  const auto toy = io::read_json(fixture("tf3d_toy.json"));
  std::vector<tf3d::TermCounts> counts;
  MatrixXd labels(static_cast<Eigen::Index>(toy["repos"].size()), 2);
  for (std::size_t i = 0; i < toy["repos"].size(); ++i) {
    tf3d::TermCounts tc;
    for (std::size_t d = 0; d < 3; ++d)
      for (const auto& [term, v] : toy["repos"][i]["counts"][d].items()) tc[d][term] = v.get<double>();
    counts.push_back(tc);
    for (int k = 0; k < 2; ++k) labels(static_cast<Eigen::Index>(i), k) = toy["repos"][i]["labels"][k].get<double>();
  }
  const auto vocab = tf3d::fit_vocab(counts);
  std::vector<tf3d::Profile> profiles;
  for (const auto& tc : counts) profiles.push_back(tf3d::repo_profile(tc, vocab, toy["epsilon"].get<double>()));
  const auto clarity = tf3d::fit_clarity(profiles, labels);
  double worst = 0;
  for (std::size_t d = 0; d < 3; ++d)
    for (std::size_t t = 0; t < 2; ++t) {
      const auto want = toy["clarity"][d][t].get<std::vector<double>>();
      if (want.size() != static_cast<std::size_t>(clarity.C[d][t].size())) return {false, "toy vocabulary size differs"};
      for (std::size_t i = 0; i < want.size(); ++i)
        worst = std::max(worst, std::abs(clarity.C[d][t][static_cast<Eigen::Index>(i)] - want[i]));
    }
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    const MatrixXd e = tf3d::embed_repo(profiles[i], clarity);
    for (int d = 0; d < 3; ++d)
      for (int t = 0; t < 2; ++t) worst = std::max(worst, std::abs(e(d, t) - toy["embeddings"][i][d][t].get<double>()));
  }
  const bool ok = r.report.micro_f1 >= 0.80 && worst <= 1e-12;
  return {ok, fmt("F1 %.3f LRAP %.3f; toy clarity/embedding max deviation %.1e", r.report.micro_f1, r.report.lrap, worst)};
}

// ------------------------------------------------------------------- parser

std::string unhex(const std::string& h) {
  std::string out;
  for (std::size_t i = 0; i + 1 < h.size(); i += 2) out.push_back(static_cast<char>(std::stoi(h.substr(i, 2), nullptr, 16)));
  return out;
}

Outcome parser_golden() {
  const auto root = fixture("golden_repo");
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(root)) files += e.path().extension() == ".py";
  const bool golden = analyzer::dump(analyzer::analyze_repository(root)) == io::read_file(fixture("golden_repo.analysis.json"));
  std::size_t crashes = 0, agree = 0;
  const auto cases = io::read_jsonl(fixture("fuzz_corpus.jsonl"));
  for (const auto& c : cases) {
    try {
      const auto r = analyzer::analyze_script(unhex(c.at("hex").get<std::string>()), "fuzz.py");
      agree += r.parse_ok == c.at("parse_ok").get<bool>();
    } catch (...) {
      ++crashes;
    }
  }
  const bool ok = files >= 20 && golden && cases.size() == 1000 && crashes == 0;
  std::ostringstream s;
  s << files << " golden files " << (golden ? "byte-identical" : "DIFFER") << "; fuzz " << cases.size() << " files, "
    << crashes << " crashes, parse_ok agrees with CPython on " << agree;
  return {ok, s.str()};
}

// -------------------------------------------------------------------- fuzzy

Outcome fuzzy_normalization() {
  const auto featured = corpus::load_featured_topics(corpus::default_featured_topics_path());
  const auto rows = io::read_json(fixture("fuzzy_pairs.json"));
  std::size_t right = 0;
  for (const auto& r : rows) {
    const auto got = corpus::normalize_topics({r.at("raw").get<std::string>()}, featured, 90.0);
    const bool match = r.at("expected").is_null() ? got.empty()
                                                  : got == std::vector<std::string>{r.at("expected").get<std::string>()};
    right += match;
  }
  const double ml = corpus::levenshtein_ratio("machinelearning", "machine-learning");
  const auto ml_mapped = corpus::normalize_topics({"machinelearning"}, featured, 90.0);
  const bool ok = rows.size() == 30 && right == 30 && ml == 93.75 && ml_mapped == std::vector<std::string>{"machine-learning"};
  return {ok, fmt("%.0f/%.0f pairs mapped; machinelearning ratio %.2f", static_cast<double>(right),
                  static_cast<double>(rows.size()), ml)};
}

// ---------------------------------------------------------------------- PCA

// Cyclic Jacobi rotations, eigenvalues sorted descending.
std::vector<double> jacobi_eigenvalues(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (a[p][q] == 0) continue;
        const double theta = (a[q][q] - a[p][p]) / (2 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> vals;
  for (std::size_t i = 0; i < n; ++i) vals.push_back(a[i][i]);
  std::sort(vals.rbegin(), vals.rend());
  return vals;
}

Outcome pca_oracle() {
  std::mt19937_64 rng(404);
  std::normal_distribution<double> g;
  MatrixXd data(200, 20);
  for (int r = 0; r < 200; ++r)
    for (int c = 0; c < 20; ++c) data(r, c) = g(rng) * (0.5 + 0.25 * c);
  const auto p = embedder::fit_pca(data, 20);
  std::vector<std::vector<double>> cov(20, std::vector<double>(20, 0.0));
  std::vector<double> mean(20, 0.0);
  for (int r = 0; r < 200; ++r)
    for (int c = 0; c < 20; ++c) mean[c] += data(r, c) / 200;
  for (int r = 0; r < 200; ++r)
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j) cov[i][j] += (data(r, i) - mean[i]) * (data(r, j) - mean[j]) / 199;
  const auto vals = jacobi_eigenvalues(cov);
  double dev = 0;
  for (int i = 0; i < 20; ++i) dev = std::max(dev, std::abs(p.explained_variance[i] - vals[static_cast<std::size_t>(i)]));
  const double ortho = (p.components * p.components.transpose() - MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff();
  return {dev <= 1e-8 && ortho <= 1e-8, fmt("explained variance deviation %.1e, orthonormality error %.1e", dev, ortho)};
}

// ----------------------------------------------------------------- ablation

Outcome ablation(Corpus& c) {
  pipeline::ExperimentConfig base;
  base.n = c.config.n;
  base.sample_seed = c.config.sample_seed;
  base.train = c.config.train;
  base.domain_width = c.config.pca_k;
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = pipeline::run_ablation(c.data, c.reducers, base, {}, pipeline::null_log());
  const double secs = seconds_since(t0);
  std::map<std::string, std::size_t> per_grid;
  bool seeds = true;
  for (const auto& r : rows) {
    ++per_grid[r.grid];
    seeds = seeds && r.runs.size() == 3;
  }
  std::cout << metricskit::grid_table(rows);
  const bool shape = per_grid["components"] == 4 && per_grid["scripts"] == 4 && per_grid["encoder"] == 3 &&
                     per_grid["reduction"] == 2;
  return {shape && seeds && secs < 1800, fmt("%.0f rows x 3 seeds in %.1f s", static_cast<double>(rows.size()), secs)};
}

// -------------------------------------------------------------- determinism

Outcome determinism(Corpus& c) {
  fs::remove_all(c.config.workdir);
  const auto fresh = pipeline::run_pipeline(c.config, pipeline::null_log());
  std::size_t runs = 0, hits = 0;
  const auto cached = pipeline::run_pipeline(c.config, [&](const nlohmann::json& e) {
    (e["event"] == "cache_hit" ? hits : runs) += 1;
  });
  std::size_t differing = 0;
  for (const auto& [k, v] : c.report.items()) differing += fresh[k].dump() != v.dump() || cached[k].dump() != v.dump();
  const bool ok = differing == 0 && fresh.dump() == c.report.dump() && runs == 0;
  return {ok, fmt("%.0f differing report fields after a fresh rerun; cached rerun %.0f hits / %.0f runs",
                  static_cast<double>(differing), static_cast<double>(hits), static_cast<double>(runs))};
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  };

  report("gradient oracle", gradient_oracle);
  report("lrap oracle", lrap_oracle);
  report("masking exactness", masking_exactness);

  std::unique_ptr<Corpus> corpus;
  try {
    corpus = build_corpus();
  } catch (const std::exception& e) {
    std::cout << "synthetic corpus failed: " << e.what() << std::endl;
  }
  auto with_corpus = [&](Outcome (*fn)(Corpus&)) {
    return [&corpus, fn]() -> Outcome { return corpus ? fn(*corpus) : Outcome{false, "no synthetic corpus"}; };
  };
  report("synthetic end-to-end", with_corpus(synthetic_end_to_end));
  report("tf3d end-to-end", with_corpus(tf3d_end_to_end));
  report("parser golden corpus", parser_golden);
  report("fuzzy normalization", fuzzy_normalization);
  report("pca oracle", pca_oracle);
  report("ablation harness", with_corpus(ablation));
  report("determinism", with_corpus(determinism));
  return failed == 0 ? 0 : 1;
}
