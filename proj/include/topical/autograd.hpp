#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

namespace topical::autograd {

using Mat = Eigen::MatrixXd;

class Tape;

struct Var {
  Tape* tape = nullptr;
  int id = -1;

  [[nodiscard]] const Mat& value() const;
  [[nodiscard]] const Mat& grad() const;
};

// Reverse-mode tape over dense matrices. Nodes are appended in evaluation
// order, so a single reverse sweep visits every consumer before its inputs.
class Tape {
 public:
  Var constant(Mat value);
  Var leaf(Mat value);
  // Reads `value` in place and adds its gradient into `*grad` on backward().
  Var parameter(const Mat& value, Mat* grad);

  [[nodiscard]] const Mat& value(int id) const;
  [[nodiscard]] const Mat& grad(int id) const;
  [[nodiscard]] bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

  // Seeds d(root)/d(root) = 1; root must be 1x1.
  void backward(Var root);

  [[nodiscard]] std::size_t size() const { return nodes_.size(); }
  [[nodiscard]] int next_id() const { return static_cast<int>(nodes_.size()); }

  // Used by op implementations.
  Var push(Mat value, std::vector<int> inputs, std::function<void(Tape&, const Mat& g)> backward);
  Mat& grad_buffer(int id);

 private:
  struct Node {
    Mat owned;
    const Mat* external = nullptr;
    Mat* sink = nullptr;
    Mat grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Mat&)> backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
Var add(Var a, Var b);
// a (r x c) plus the row vector b (1 x c) on every row.
Var add_row(Var a, Var b);
Var mul(Var a, Var b);
Var one_minus(Var a);
Var scale(Var a, double s);
Var sigmoid(Var a);
Var tanh(Var a);
Var transpose(Var a);
// Row i of a (r x c) as a c x 1 column.
Var row(Var a, int i);
// Stacks equally sized columns on top of each other.
Var vconcat(const std::vector<Var>& parts);
// Places blocks with equal row counts side by side.
Var hconcat(const std::vector<Var>& parts);
// Turns k columns of width c into a k x c matrix.
Var stack_rows(const std::vector<Var>& columns);
// Softmax over a column of scores. Entries with mask 0 are replaced by -1e9
// before normalization, which drives their weight to exactly zero.
Var masked_softmax(Var scores, const std::vector<std::uint8_t>& mask);
// sum_i w_i * rows_i over unmasked rows only, returned as a column.
Var masked_weighted_sum(Var rows, Var weights, const std::vector<std::uint8_t>& mask);
// Binary cross-entropy from logits summed over entries; labels are constants.
Var bce_with_logits(Var logits, const Mat& labels);
// Multiplies each row of a by mask (constant 0/1).
Var mask_rows(Var a, const std::vector<std::uint8_t>& mask);
Var mean_rows(Var a, const std::vector<std::uint8_t>& mask);

}  // namespace topical::autograd
