#include "topical/metricskit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>

#include "topical/errors.hpp"

namespace topical::metricskit {

namespace {

void same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ValidationError(std::string(what) + ": shapes differ");
}

double ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

std::vector<double> eigen_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

}  // namespace

double lrap(const Matrix& y, const Matrix& f) {
  same_shape(y, f, "lrap");
  if (y.rows() == 0) throw ValidationError("lrap of zero samples");
  double total = 0.0;
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    double positives = 0;
    double row = 0.0;
    for (Eigen::Index j = 0; j < y.cols(); ++j) {
      if (y(i, j) == 0) continue;
      ++positives;
      double rank = 0, hits = 0;
      for (Eigen::Index k = 0; k < y.cols(); ++k) {
        if (f(i, k) >= f(i, j)) {
          ++rank;
          if (y(i, k) != 0) ++hits;
        }
      }
      row += hits / rank;
    }
    if (positives == 0) throw ValidationError("lrap: sample " + std::to_string(i) + " has no true label");
    total += row / positives;
  }
  return total / static_cast<double>(y.rows());
}

F1 micro_f1(const Matrix& y, const Matrix& pred) {
  same_shape(y, pred, "micro_f1");
  F1 r;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const bool t = y(i) != 0, p = pred(i) != 0;
    r.tp += t && p;
    r.fp += !t && p;
    r.fn += t && !p;
  }
  r.precision = ratio(static_cast<double>(r.tp), static_cast<double>(r.tp + r.fp));
  r.recall = ratio(static_cast<double>(r.tp), static_cast<double>(r.tp + r.fn));
  r.f1 = ratio(2 * r.precision * r.recall, r.precision + r.recall);
  return r;
}

Eigen::VectorXd optimize_thresholds(const Matrix& y, const Matrix& f) {
  same_shape(y, f, "optimize_thresholds");
  if (y.rows() == 0) throw ValidationError("threshold optimization needs validation rows");
  Eigen::VectorXd out(y.cols());
  for (Eigen::Index c = 0; c < y.cols(); ++c) {
    if ((y.col(c).array() != 0).count() == 0) {
      out[c] = 1.0;
      continue;
    }
    const std::set<double> distinct(f.col(c).data(), f.col(c).data() + f.rows());
    std::vector<double> candidates{0.0, 1.0};
    for (auto it = distinct.begin(), next = std::next(it); next != distinct.end(); ++it, ++next) {
      candidates.push_back((*it + *next) / 2.0);
    }
    std::sort(candidates.begin(), candidates.end());
    double best = -1.0, best_t = 0.0;
    for (const double t : candidates) {
      long tp = 0, fp = 0, fn = 0;
      for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const bool truth = y(r, c) != 0, p = f(r, c) >= t;
        tp += truth && p;
        fp += !truth && p;
        fn += truth && !p;
      }
      const double f1 = ratio(2.0 * static_cast<double>(tp), static_cast<double>(2 * tp + fp + fn));
      if (f1 > best) {
        best = f1;
        best_t = t;
      }
    }
    out[c] = best_t;
  }
  return out;
}

Matrix apply_thresholds(const Matrix& f, const Eigen::VectorXd& thresholds) {
  if (f.cols() != thresholds.size()) throw ValidationError("threshold count differs from label count");
  Matrix out(f.rows(), f.cols());
  for (Eigen::Index r = 0; r < f.rows(); ++r) {
    for (Eigen::Index c = 0; c < f.cols(); ++c) out(r, c) = f(r, c) >= thresholds[c] ? 1.0 : 0.0;
  }
  return out;
}

EvalReport evaluate(const Matrix& y_val, const Matrix& f_val, const Matrix& y_test, const Matrix& f_test) {
  EvalReport r;
  r.thresholds = optimize_thresholds(y_val, f_val);
  const F1 s = micro_f1(y_test, apply_thresholds(f_test, r.thresholds));
  r.micro_f1 = s.f1;
  r.precision = s.precision;
  r.recall = s.recall;
  r.lrap = lrap(y_test, f_test);
  r.validation_size = static_cast<std::size_t>(y_val.rows());
  r.test_size = static_cast<std::size_t>(y_test.rows());
  return r;
}

nlohmann::ordered_json report_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["lrap"] = r.lrap;
  j["micro_f1"] = r.micro_f1;
  j["precision"] = r.precision;
  j["recall"] = r.recall;
  j["per_topic_thresholds"] = eigen_vec(r.thresholds);
  j["mean_threshold"] = r.thresholds.size() ? r.thresholds.mean() : 0.0;
  j["split_sizes"] = {{"train", r.train_size}, {"validation", r.validation_size}, {"test", r.test_size}};
  j["config"] = r.config;
  return j;
}

EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  try {
    r.lrap = j.at("lrap").get<double>();
    r.micro_f1 = j.at("micro_f1").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    const auto t = j.at("per_topic_thresholds").get<std::vector<double>>();
    r.thresholds = Eigen::Map<const Eigen::VectorXd>(t.data(), static_cast<Eigen::Index>(t.size()));
    r.train_size = j.at("split_sizes").at("train").get<std::size_t>();
    r.validation_size = j.at("split_sizes").at("validation").get<std::size_t>();
    r.test_size = j.at("split_sizes").at("test").get<std::size_t>();
    r.config = j.value("config", nlohmann::json{});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed report: ") + e.what());
  }
  return r;
}

Summary summarize(const std::vector<double>& values) {
  Summary s;
  if (values.empty()) return s;
  for (const double v : values) s.mean += v;
  s.mean /= static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0;
    for (const double v : values) ss += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return s;
}

nlohmann::ordered_json grid_json(const std::vector<GridRow>& rows) {
  nlohmann::ordered_json out = nlohmann::ordered_json::array();
  for (const auto& row : rows) {
    std::vector<double> f1, lr, prec, rec;
    nlohmann::ordered_json runs = nlohmann::ordered_json::array();
    for (const auto& r : row.runs) {
      f1.push_back(r.micro_f1);
      lr.push_back(r.lrap);
      prec.push_back(r.precision);
      rec.push_back(r.recall);
      runs.push_back(report_json(r));
    }
    nlohmann::ordered_json j;
    j["grid"] = row.grid;
    j["label"] = row.label;
    j["config"] = row.config;
    for (const auto& [name, v] : {std::pair{"micro_f1", &f1}, {"lrap", &lr}, {"precision", &prec}, {"recall", &rec}}) {
      const Summary s = summarize(*v);
      j[name] = {{"mean", s.mean}, {"sd", s.sd}};
    }
    j["seeds"] = row.runs.size();
    j["runs"] = std::move(runs);
    out.push_back(std::move(j));
  }
  return out;
}

std::string grid_table(const std::vector<GridRow>& rows) {
  int width = 12;
  for (const auto& row : rows) width = std::max(width, static_cast<int>(row.label.size()));
  std::string out;
  char line[512];
  std::string current;
  for (const auto& row : rows) {
    if (row.grid != current) {
      current = row.grid;
      std::snprintf(line, sizeof line, "%s%-*s   %-17s %s\n", out.empty() ? "" : "\n", width, current.c_str(), "F1", "LRAP");
      out += line;
    }
    std::vector<double> f1, lr;
    for (const auto& r : row.runs) {
      f1.push_back(r.micro_f1);
      lr.push_back(r.lrap);
    }
    const Summary a = summarize(f1), b = summarize(lr);
    std::snprintf(line, sizeof line, "  %-*s %.3f ± %.3f     %.3f ± %.3f\n", width, row.label.c_str(), a.mean, a.sd, b.mean, b.sd);
    out += line;
  }
  return out;
}

Matrix project(const Matrix& vectors, std::size_t dims) {
  if (vectors.rows() < 2) throw ValidationError("projection needs at least two vectors");
  const auto rank_cap = static_cast<std::size_t>(std::min(vectors.rows() - 1, vectors.cols()));
  const std::size_t k = std::min(dims, rank_cap);
  const Eigen::VectorXd mean = vectors.colwise().mean().transpose();
  const Matrix centered = vectors.rowwise() - mean.transpose();
  Eigen::SelfAdjointEigenSolver<Matrix> eig(centered.transpose() * centered);
  Matrix out = Matrix::Zero(vectors.rows(), static_cast<Eigen::Index>(dims));
  for (std::size_t i = 0; i < k; ++i) {
    Eigen::VectorXd c = eig.eigenvectors().col(eig.eigenvectors().cols() - 1 - static_cast<Eigen::Index>(i));
    Eigen::Index arg = 0;
    c.cwiseAbs().maxCoeff(&arg);
    if (c[arg] < 0) c = -c;
    out.col(static_cast<Eigen::Index>(i)) = centered * c;
  }
  return out;
}

}  // namespace topical::metricskit
