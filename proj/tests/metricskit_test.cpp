#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "support.hpp"
#include "topical/errors.hpp"
#include "topical/io.hpp"
#include "topical/metricskit.hpp"

using namespace topical;
using namespace topical::metricskit;

namespace {

std::mt19937_64 rng(31);

// By definition: for each true label j, the fraction of labels ranked at or
// above j that are themselves true.
double lrap_by_definition(const Matrix& y, const Matrix& f) {
  double total = 0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    std::set<Eigen::Index> truth;
    for (Eigen::Index j = 0; j < y.cols(); ++j)
      if (y(i, j) == 1) truth.insert(j);
    double acc = 0;
    for (const auto j : truth) {
      std::set<Eigen::Index> above;
      for (Eigen::Index k = 0; k < y.cols(); ++k)
        if (f(i, k) >= f(i, j)) above.insert(k);
      std::set<Eigen::Index> hits;
      for (const auto k : above)
        if (truth.count(k)) hits.insert(k);
      acc += static_cast<double>(hits.size()) / static_cast<double>(above.size());
    }
    total += acc / static_cast<double>(truth.size());
  }
  return total / static_cast<double>(y.rows());
}

Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index r = 0;
  for (const auto& row : rows) {
    Eigen::Index c = 0;
    for (const double v : row) m(r, c++) = v;
    ++r;
  }
  return m;
}

std::pair<Matrix, Matrix> random_case(int rows, int cols, int levels) {
  Matrix y = Matrix::Zero(rows, cols), f(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      y(i, j) = rng() % 5 < 2;
      f(i, j) = static_cast<double>(rng() % static_cast<unsigned>(levels)) / levels;
    }
    if (y.row(i).sum() == 0) y(i, static_cast<Eigen::Index>(rng() % static_cast<unsigned>(cols))) = 1;
  }
  return {y, f};
}

double column_f1(const Matrix& y, const Matrix& f, Eigen::Index c, double t) {
  Matrix yc = y.col(c), pc(y.rows(), 1);
  for (Eigen::Index r = 0; r < y.rows(); ++r) pc(r, 0) = f(r, c) >= t;
  return micro_f1(yc, pc).f1;
}

EvalReport report(double f1, double lr) {
  EvalReport r;
  r.micro_f1 = f1;
  r.lrap = lr;
  r.thresholds = Eigen::VectorXd::Constant(2, 0.5);
  return r;
}

}  // namespace

TEST(Lrap, WorkedExample) {
  EXPECT_NEAR(lrap(from_rows({{1, 0, 1}}), from_rows({{0.8, 0.5, 0.3}})), 5.0 / 6.0, 1e-15);
  EXPECT_EQ(lrap(from_rows({{0, 1, 1, 0}}), from_rows({{0.1, 0.9, 0.7, 0.2}})), 1.0);
  // a tie counts the whole tied group as ranked above
  EXPECT_NEAR(lrap(from_rows({{1, 0}}), from_rows({{0.5, 0.5}})), 0.5, 1e-15);
}

TEST(Lrap, MatchesDefinitionOnRandomCases) {
  for (int trial = 0; trial < 1000; ++trial) {
    const auto [y, f] = random_case(1 + static_cast<int>(rng() % 6), 1 + static_cast<int>(rng() % 8),
                                    trial % 2 ? 4 : 1000);
    EXPECT_NEAR(lrap(y, f), lrap_by_definition(y, f), 1e-12) << trial;
  }
}

TEST(Lrap, MatchesFrozenReferenceCases) {
  const auto cases = nlohmann::json::parse(io::read_file(topical::testing::fixture("lrap_cases.json")));
  ASSERT_EQ(cases.size(), 200u);
  for (const auto& c : cases) {
    const auto yv = c.at("y").get<std::vector<std::vector<double>>>();
    const auto fv = c.at("f").get<std::vector<std::vector<double>>>();
    Matrix y(yv.size(), yv[0].size()), f(fv.size(), fv[0].size());
    for (std::size_t i = 0; i < yv.size(); ++i)
      for (std::size_t j = 0; j < yv[0].size(); ++j) {
        y(i, j) = yv[i][j];
        f(i, j) = fv[i][j];
      }
    EXPECT_NEAR(lrap(y, f), c.at("lrap").get<double>(), 1e-12);
    EXPECT_NEAR(lrap_by_definition(y, f), c.at("lrap").get<double>(), 1e-12);
  }
}

TEST(Lrap, InvariantUnderMonotoneTransforms) {
  for (int trial = 0; trial < 200; ++trial) {
    const auto [y, f] = random_case(4, 6, 7);
    Matrix g = f;
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double a = 0.1 + static_cast<double>(rng() % 100), b = static_cast<double>(rng() % 7) - 3;
      for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = std::exp(a * f(i, j)) + b;
    }
    EXPECT_NEAR(lrap(y, f), lrap(y, g), 1e-12);
  }
}

TEST(Lrap, Errors) {
  EXPECT_THROW(lrap(from_rows({{1, 0}, {0, 0}}), from_rows({{1, 0}, {0, 1}})), ValidationError);
  EXPECT_THROW(lrap(from_rows({{1, 0}}), from_rows({{1, 0, 0}})), ValidationError);
  EXPECT_THROW(lrap(Matrix(0, 3), Matrix(0, 3)), ValidationError);
}

TEST(MicroF1, Examples) {
  const Matrix y = from_rows({{1, 1, 0}, {1, 0, 0}});
  EXPECT_EQ(micro_f1(y, y).f1, 1.0);
  const F1 none = micro_f1(y, Matrix::Zero(2, 3));
  EXPECT_EQ(none.recall, 0.0);
  EXPECT_EQ(none.precision, 0.0);
  EXPECT_EQ(none.f1, 0.0);
  // TP=2, FP=1, FN=1
  const F1 s = micro_f1(y, from_rows({{1, 0, 1}, {1, 0, 0}}));
  EXPECT_EQ(s.tp, 2);
  EXPECT_EQ(s.fp, 1);
  EXPECT_EQ(s.fn, 1);
  EXPECT_NEAR(s.precision, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.recall, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.f1, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(micro_f1(Matrix::Zero(1, 2), Matrix::Zero(1, 2)).f1, 0.0);
  EXPECT_THROW(micro_f1(y, Matrix::Zero(3, 2)), ValidationError);
}

TEST(Thresholds, WorkedExample) {
  const auto t = optimize_thresholds(from_rows({{1}, {1}, {0}}), from_rows({{0.9}, {0.8}, {0.2}}));
  EXPECT_EQ(t[0], 0.5);
  EXPECT_EQ(optimize_thresholds(from_rows({{1}, {1}}), from_rows({{0.3}, {0.7}}))[0], 0.0);
  EXPECT_EQ(optimize_thresholds(from_rows({{0}, {0}}), from_rows({{0.3}, {0.7}}))[0], 1.0);
  EXPECT_THROW(optimize_thresholds(Matrix(0, 2), Matrix(0, 2)), ValidationError);
}

TEST(Thresholds, OptimalOverTheContinuumAndNoWorseThanHalf) {
  for (int trial = 0; trial < 300; ++trial) {
    const auto [y, f] = random_case(2 + static_cast<int>(rng() % 20), 3, trial % 3 ? 10 : 1000);
    const auto t = optimize_thresholds(y, f);
    for (Eigen::Index c = 0; c < y.cols(); ++c) {
      ASSERT_GE(t[c], 0.0);
      ASSERT_LE(t[c], 1.0);
      if (y.col(c).sum() == 0) continue;
      // F1 is piecewise constant between observed scores, so trying every
      // score itself and one point past the top covers every achievable value
      double best = column_f1(y, f, c, 2.0);
      for (Eigen::Index r = 0; r < y.rows(); ++r) best = std::max(best, column_f1(y, f, c, f(r, c)));
      EXPECT_NEAR(column_f1(y, f, c, t[c]), best, 1e-15);
      EXPECT_GE(column_f1(y, f, c, t[c]), column_f1(y, f, c, 0.5));
      // nothing smaller among the candidates does as well
      for (double lower = t[c] - 1e-3; lower >= 0; lower -= 1e-3) {
        bool candidate = lower < 1e-12;
        for (Eigen::Index a = 0; a < y.rows() && !candidate; ++a)
          for (Eigen::Index b = 0; b < y.rows() && !candidate; ++b)
            candidate = f(a, c) < f(b, c) && std::abs((f(a, c) + f(b, c)) / 2 - lower) < 5e-4;
        if (candidate) {
          EXPECT_LT(column_f1(y, f, c, lower), best + 1e-15);
        }
      }
    }
  }
}

TEST(Evaluate, ThresholdsFromValidationMetricsFromTest) {
  const Matrix yv = from_rows({{1, 0}, {0, 1}, {1, 1}});
  const Matrix fv = from_rows({{0.9, 0.1}, {0.2, 0.6}, {0.7, 0.8}});
  const Matrix yt = from_rows({{1, 0}, {0, 1}});
  const Matrix ft = from_rows({{0.5, 0.4}, {0.1, 0.9}});
  const auto r = evaluate(yv, fv, yt, ft);
  EXPECT_NEAR(r.thresholds[0], 0.45, 1e-15);
  EXPECT_NEAR(r.thresholds[1], 0.35, 1e-15);
  EXPECT_EQ(r.micro_f1, 0.8);
  EXPECT_EQ(r.lrap, 1.0);
  EXPECT_EQ(r.validation_size, 3u);
  EXPECT_EQ(r.test_size, 2u);

  const auto back = report_from_json(nlohmann::json::parse(report_json(r).dump()));
  EXPECT_EQ(back.thresholds, r.thresholds);
  EXPECT_EQ(back.micro_f1, r.micro_f1);
  EXPECT_NEAR(report_json(r)["mean_threshold"].get<double>(), 0.4, 1e-15);
  EXPECT_THROW(report_from_json(nlohmann::json{{"lrap", 1}}), ValidationError);
}

TEST(Summary, MeanAndSampleSd) {
  const auto s = summarize({0.9, 0.8, 1.0});
  EXPECT_NEAR(s.mean, 0.9, 1e-15);
  EXPECT_NEAR(s.sd, 0.1, 1e-15);
  EXPECT_EQ(summarize({0.4}).sd, 0.0);
  EXPECT_EQ(summarize({}).mean, 0.0);
}

TEST(Grid, JsonAndTable) {
  std::vector<GridRow> rows{
      {"encoder", "Bi-GRU", {{"encoder", "bigru"}}, {report(0.9, 0.95), report(0.8, 0.97), report(1.0, 0.99)}},
      {"encoder", "Bi-LSTM", {{"encoder", "bilstm"}}, {report(0.7, 0.9), report(0.7, 0.9), report(0.7, 0.9)}},
      {"components", "Dependency Graph", {}, {report(0.5, 0.5)}}};
  const auto j = grid_json(rows);
  ASSERT_EQ(j.size(), 3u);
  EXPECT_EQ(j[0]["label"], "Bi-GRU");
  EXPECT_EQ(j[0]["seeds"], 3);
  EXPECT_NEAR(j[0]["micro_f1"]["mean"].get<double>(), 0.9, 1e-15);
  EXPECT_NEAR(j[0]["micro_f1"]["sd"].get<double>(), 0.1, 1e-15);
  EXPECT_NEAR(j[1]["micro_f1"]["sd"].get<double>(), 0.0, 1e-15);
  EXPECT_EQ(j[0]["runs"].size(), 3u);

  const std::string table = grid_table(rows);
  EXPECT_NE(table.find("  Bi-GRU           0.900 ± 0.100     0.970 ± 0.020\n"), std::string::npos) << table;
  EXPECT_NE(table.find("\ncomponents"), std::string::npos);
  EXPECT_NE(table.find("  Dependency Graph 0.500 ± 0.000"), std::string::npos) << table;
}

TEST(Project, ShapesAndCentering) {
  Matrix v(6, 4);
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = static_cast<double>(rng() % 100) / 10.0;
  const Matrix p2 = project(v, 2), p3 = project(v, 3);
  EXPECT_EQ(p2.cols(), 2);
  EXPECT_EQ(p3.rows(), 6);
  EXPECT_LE(p2.colwise().sum().cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_LE((p3.leftCols(2) - p2).cwiseAbs().maxCoeff(), 1e-9);
  // first axis carries the most variance
  EXPECT_GE(p3.col(0).squaredNorm(), p3.col(1).squaredNorm());
  // two points span one direction only
  const Matrix two = project(v.topRows(2), 3);
  EXPECT_EQ(two.col(1), Eigen::VectorXd::Zero(2));
  EXPECT_THROW(project(v.topRows(1), 2), ValidationError);
}
