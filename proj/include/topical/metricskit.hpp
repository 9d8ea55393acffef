#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace topical::metricskit {

using Matrix = Eigen::MatrixXd;  // rows = samples, cols = labels

// Label ranking average precision with rank_ij = |{k : f_ik >= f_ij}|.
double lrap(const Matrix& y, const Matrix& f);

struct F1 {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  long tp = 0;
  long fp = 0;
  long fn = 0;
};

F1 micro_f1(const Matrix& y, const Matrix& pred);

// Per topic, the candidate (0, 1 and midpoints of consecutive distinct
// scores) maximizing that topic's F1 under `score >= threshold`; ties go to
// the smallest candidate. A column without positives gets 1.
Eigen::VectorXd optimize_thresholds(const Matrix& y, const Matrix& f);

Matrix apply_thresholds(const Matrix& f, const Eigen::VectorXd& thresholds);

struct EvalReport {
  double lrap = 0;
  double micro_f1 = 0;
  double precision = 0;
  double recall = 0;
  Eigen::VectorXd thresholds;
  nlohmann::json config;
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
  std::size_t test_size = 0;
};

// Thresholds fitted on validation scores, metrics measured on test scores.
EvalReport evaluate(const Matrix& y_val, const Matrix& f_val, const Matrix& y_test, const Matrix& f_test);

nlohmann::ordered_json report_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

struct Summary {
  double mean = 0;
  double sd = 0;  // sample standard deviation; 0 for one value
};
Summary summarize(const std::vector<double>& values);

// One row of an ablation table: a label plus per-seed reports.
struct GridRow {
  std::string grid;
  std::string label;
  nlohmann::json config;
  std::vector<EvalReport> runs;
};

nlohmann::ordered_json grid_json(const std::vector<GridRow>& rows);
// Plain-text table with mean ± sd columns.
std::string grid_table(const std::vector<GridRow>& rows);

// Projects rows onto their top `dims` principal directions.
Matrix project(const Matrix& vectors, std::size_t dims);

}  // namespace topical::metricskit
