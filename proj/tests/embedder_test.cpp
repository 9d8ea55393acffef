#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "support.hpp"
#include "topical/embedder.hpp"
#include "topical/errors.hpp"

using namespace topical;
using namespace topical::embedder;
using serializer::Domain;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

// Cyclic Jacobi rotations on a plain nested-vector matrix; returns
// (eigenvalues descending, eigenvectors as columns in the same order).
std::pair<std::vector<double>, std::vector<std::vector<double>>> jacobi(std::vector<std::vector<double>> a) {
  const std::size_t n = a.size();
  std::vector<std::vector<double>> v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-30) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-300) continue;
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
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a[x][x] > a[y][y]; });
  std::vector<double> vals;
  std::vector<std::vector<double>> vecs;
  for (const auto i : order) {
    vals.push_back(a[i][i]);
    std::vector<double> col(n);
    for (std::size_t k = 0; k < n; ++k) col[k] = v[k][i];
    vecs.push_back(col);
  }
  return {vals, vecs};
}

MatrixXd random_matrix(int rows, int cols, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  MatrixXd m(rows, cols);
  // uneven column scales so the spectrum is well separated
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = g(rng) * (1.0 + 0.5 * c) + 0.1 * c;
  return m;
}

std::string emb_line(const std::string& path, const char* domain, std::vector<double> v) {
  nlohmann::json j{{"path", path}, {"domain", domain}, {"vector", v}};
  return j.dump() + "\n";
}

const std::string kHeader3 = R"({"format":"topical-emb","version":1,"dim":3})" "\n";

void expect_error_mentions(const std::string& text, const std::string& needle) {
  try {
    parse_embeddings(text, "emb.jsonl");
    ADD_FAILURE() << "expected failure mentioning " << needle;
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
  }
}

}  // namespace

TEST(HashEmbed, Deterministic) {
  const std::vector<std::string> toks{"[CLS]", "import", "numpy", "as", "np"};
  EXPECT_EQ(hash_vector(toks, 768, 3), hash_vector(toks, 768, 3));
  EXPECT_NE(hash_vector(toks, 768, 3), hash_vector(toks, 768, 4));
}

TEST(HashEmbed, UnitNormAndZero) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<std::string> toks;
    for (int i = static_cast<int>(rng() % 40) + 1; i > 0; --i) toks.push_back("t" + std::to_string(rng() % 30));
    const auto v = hash_vector(toks, 1 + rng() % 800, 0);
    // a single width-1 bucket can cancel exactly
    if (v.squaredNorm() == 0) continue;
    EXPECT_NEAR(v.norm(), 1.0, 1e-12);
  }
  EXPECT_EQ(hash_vector({}, 16, 0), VectorXd::Zero(16));
  EXPECT_EQ(hash_vector({"a", "a"}, 16, 0).cwiseAbs().maxCoeff(), 1.0);
  EXPECT_THROW(hash_vector({"a"}, 0, 0), ValidationError);
}

TEST(HashEmbed, PermutationInvariant) {
  serializer::TokenSequence seq{"a.py", Domain::Code, {"[CLS]", "def", "train", "(", "model", ")", ":", "model", "."}};
  const auto base = hash_embed(seq, 768, 11);
  std::mt19937 rng(9);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(seq.tokens.begin(), seq.tokens.end(), rng);
    EXPECT_EQ(hash_embed(seq, 768, 11).vector, base.vector);
  }
  EXPECT_EQ(base.path, "a.py");
  EXPECT_EQ(base.domain, Domain::Code);
}

TEST(WireFormat, RoundTrip) {
  std::vector<ScriptEmbedding> es{{"a.py", Domain::Code, VectorXd::LinSpaced(3, -1, 1)},
                                  {"a.py", Domain::Doc, VectorXd::Constant(3, 0.1)},
                                  {"b/c.py", Domain::Dep, VectorXd::Constant(3, 1e-300)}};
  const auto text = format_embeddings(3, es);
  EXPECT_EQ(text.substr(0, text.find('\n')), R"({"format":"topical-emb","version":1,"dim":3})");
  const auto back = parse_embeddings(text);
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].path, es[i].path);
    EXPECT_EQ(back[i].domain, es[i].domain);
    EXPECT_EQ(back[i].vector, es[i].vector);
  }
  topical::testing::TempDir dir;
  write_embeddings(dir / "emb.jsonl", 3, es);
  EXPECT_EQ(load_embeddings(dir / "emb.jsonl").size(), 3u);
}

TEST(WireFormat, ThreeLinesOfWidth768) {
  std::string text = R"({"format":"topical-emb","version":1,"dim":768})" "\n";
  for (const char* d : {"code", "doc", "dep"}) text += emb_line("m.py", d, std::vector<double>(768, 0.5));
  EXPECT_EQ(parse_embeddings(text).size(), 3u);
}

TEST(WireFormat, Errors) {
  std::string mixed = R"({"format":"topical-emb","version":1,"dim":768})" "\n";
  mixed += emb_line("a.py", "code", std::vector<double>(768, 0.0));
  mixed += emb_line("b.py", "code", std::vector<double>(512, 0.0));
  expect_error_mentions(mixed, "emb.jsonl:3:");
  expect_error_mentions(mixed, "512");

  expect_error_mentions(kHeader3 + emb_line("a.py", "doc", {1, 2, 3}) + emb_line("a.py", "doc", {1, 2, 3}),
                        "emb.jsonl:3: duplicate");
  expect_error_mentions(kHeader3 + R"({"path":"a.py","domain":"code","vector":[1,NaN,3]})" "\n", "emb.jsonl:2:");
  expect_error_mentions(kHeader3 + R"({"path":"a.py","domain":"code","vector":[1,"x",3]})" "\n", "emb.jsonl:2:");
  expect_error_mentions(kHeader3 + "\n" + R"({"path":"a.py","domain":"readme","vector":[1,2,3]})" "\n", "emb.jsonl:3:");
  expect_error_mentions(kHeader3 + R"({"path":"a.py","vector":[1,2,3]})" "\n", "emb.jsonl:2:");
  expect_error_mentions(emb_line("a.py", "code", {1, 2, 3}), "emb.jsonl:1: missing topical-emb header");
  expect_error_mentions(R"({"format":"topical-emb","version":2,"dim":3})" "\n", "version");
  expect_error_mentions(R"({"format":"topical-emb","version":1,"dim":0})" "\n", "dim");
  expect_error_mentions("", "empty");
  // same path in another domain is a different key
  EXPECT_EQ(parse_embeddings(kHeader3 + emb_line("a.py", "doc", {1, 2, 3}) + emb_line("a.py", "dep", {1, 2, 3})).size(), 2u);
}

TEST(Pca, MatchesJacobiOracle) {
  const MatrixXd data = random_matrix(200, 20, 42);
  const auto p = fit_pca(data, 5);

  std::vector<double> mean(20, 0.0);
  for (int r = 0; r < 200; ++r)
    for (int c = 0; c < 20; ++c) mean[c] += data(r, c) / 200.0;
  std::vector<std::vector<double>> cov(20, std::vector<double>(20, 0.0));
  for (int r = 0; r < 200; ++r)
    for (int i = 0; i < 20; ++i)
      for (int j = 0; j < 20; ++j) cov[i][j] += (data(r, i) - mean[i]) * (data(r, j) - mean[j]) / 199.0;
  const auto [vals, vecs] = jacobi(cov);

  for (int c = 0; c < 20; ++c) EXPECT_NEAR(p.mean[c], mean[c], 1e-12);
  for (int i = 0; i < 5; ++i) {
    EXPECT_NEAR(p.explained_variance[i], vals[i], 1e-8);
    double dot = 0;
    for (int k = 0; k < 20; ++k) dot += p.components(i, k) * vecs[i][k];
    EXPECT_NEAR(std::abs(dot), 1.0, 1e-8);
    if (i > 0) {
      EXPECT_GE(p.explained_variance[i - 1], p.explained_variance[i]);
    }
  }
  const MatrixXd gram = p.components * p.components.transpose();
  EXPECT_LE((gram - MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Pca, SignConvention) {
  const auto p = fit_pca(random_matrix(60, 8, 3), 8);
  for (int i = 0; i < 8; ++i) {
    Eigen::Index arg = 0;
    p.components.row(i).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(p.components(i, arg), 0.0);
  }
}

TEST(Pca, SingleVaryingAxis) {
  MatrixXd data = MatrixXd::Constant(10, 4, 2.5);
  for (int r = 0; r < 10; ++r) data(r, 0) = r % 2 ? -3.0 * r : 1.0 * r;
  const auto p = fit_pca(data, 1);
  EXPECT_NEAR(p.components(0, 0), 1.0, 1e-12);
  EXPECT_NEAR(p.components.row(0).tail(3).norm(), 0.0, 1e-12);
  try {
    fit_pca(data, 2);
    ADD_FAILURE();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("achievable rank is 1"), std::string::npos) << e.what();
  }
}

TEST(Pca, FullBasisReconstructs) {
  const MatrixXd data = random_matrix(50, 12, 7);
  const auto p = fit_pca(data, 12);
  for (int r = 0; r < 50; ++r) {
    EXPECT_LE((p.reconstruct(data.row(r).transpose()) - data.row(r).transpose()).norm(), 1e-8);
  }
}

TEST(Pca, ReconstructionErrorNonIncreasingInK) {
  const MatrixXd data = random_matrix(80, 10, 13);
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    VectorXd v(10);
    for (int i = 0; i < 10; ++i) v[i] = 3 * g(rng);
    double prev = INFINITY;
    for (std::size_t k = 1; k <= 10; ++k) {
      const auto p = fit_pca(data, k);
      const double err = (v - p.reconstruct(v)).norm();
      EXPECT_LE(err, prev + 1e-10);
      prev = err;
    }
    EXPECT_LE(prev, 1e-8);
  }
}

TEST(Pca, Preconditions) {
  EXPECT_THROW(fit_pca(random_matrix(3, 5, 1), 4), ValidationError);
  EXPECT_THROW(fit_pca(random_matrix(30, 5, 1), 6), ValidationError);
  EXPECT_THROW(fit_pca(random_matrix(30, 5, 1), 0), ValidationError);
  PcaReducer unfitted;
  EXPECT_THROW((void)unfitted.transform(VectorXd::Zero(5)), std::logic_error);
  EXPECT_THROW((void)fit_pca(random_matrix(30, 5, 1), 2).transform(VectorXd::Zero(4)), ValidationError);
}

TEST(Pca, ReducersFileRoundTrip) {
  Reducers rs{fit_pca(random_matrix(40, 6, 1), 3), fit_pca(random_matrix(40, 6, 2), 3), fit_pca(random_matrix(40, 6, 3), 3)};
  topical::testing::TempDir dir;
  save_reducers(dir / "pca.bin", rs);
  const auto back = load_reducers(dir / "pca.bin");
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].components, rs[i].components);
    EXPECT_EQ(back[i].mean, rs[i].mean);
    EXPECT_TRUE(back[i].fitted);
  }
}

TEST(RepoTensor, PadRowsZeroAndMatrixProductOracle) {
  std::vector<ScriptEmbedding> es;
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g;
  auto rv = [&] {
    VectorXd v(6);
    for (int i = 0; i < 6; ++i) v[i] = g(rng);
    return v;
  };
  for (const char* p : {"a.py", "b.py"})
    for (const auto d : serializer::all_domains()) es.push_back({std::string("r/") + p, d, rv()});
  const EmbeddingStore store(es);

  Reducers rs{fit_pca(random_matrix(40, 6, 1), 2), fit_pca(random_matrix(40, 6, 2), 2), fit_pca(random_matrix(40, 6, 3), 2)};
  graphkit::ScriptSample sample{{std::string("b.py"), std::nullopt, std::string("a.py")}};
  const auto t = assemble_repo_tensor(sample, store, &rs, "r/");
  ASSERT_EQ(t.x.rows(), 3);
  ASSERT_EQ(t.x.cols(), 6);
  EXPECT_EQ(t.mask, (std::vector<std::uint8_t>{1, 0, 1}));
  EXPECT_EQ(t.x.row(1), Eigen::RowVectorXd::Zero(6));
  for (const auto& [row, path] : {std::pair{0, "r/b.py"}, {2, "r/a.py"}}) {
    for (int d = 0; d < 3; ++d) {
      const VectorXd& v = store.at(path, static_cast<Domain>(d));
      for (int c = 0; c < 2; ++c) {
        double expect = 0;
        for (int k = 0; k < 6; ++k) expect += rs[d].components(c, k) * (v[k] - rs[d].mean[k]);
        EXPECT_NEAR(t.x(row, d * 2 + c), expect, 1e-12);
      }
    }
  }

  const auto raw = assemble_repo_tensor(sample, store, nullptr, "r/");
  EXPECT_EQ(raw.x.cols(), 18);
  EXPECT_EQ(raw.x.block(0, 6, 1, 6).transpose(), store.at("r/b.py", Domain::Doc));

  try {
    assemble_repo_tensor({{std::string("zz.py")}}, store, &rs, "r/");
    ADD_FAILURE();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("(r/zz.py, code)"), std::string::npos) << e.what();
  }
  EXPECT_THROW(assemble_repo_tensor({{std::nullopt, std::nullopt}}, store, &rs), ValidationError);
}

TEST(RepoTensor, JsonRoundTrip) {
  RepoTensor t{"o/r", MatrixXd::Zero(2, 3), {1, 0}, VectorXd::Ones(2)};
  t.x(0, 1) = 0.125;
  const auto back = tensor_from_json(nlohmann::json::parse(tensor_json(t).dump()));
  EXPECT_EQ(back.repo_id, "o/r");
  EXPECT_EQ(back.x, t.x);
  EXPECT_EQ(back.mask, t.mask);
  ASSERT_TRUE(back.labels);
  EXPECT_EQ(*back.labels, *t.labels);
  auto j = tensor_json(t);
  j["mask"] = {0, 0};
  EXPECT_THROW(tensor_from_json(j), ValidationError);
}
