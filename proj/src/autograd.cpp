#include "topical/autograd.hpp"

#include <cmath>
#include <stdexcept>

namespace topical::autograd {

namespace {

constexpr double kMasked = -1e9;

void check_same(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

}  // namespace

const Mat& Var::value() const { return tape->value(id); }
const Mat& Var::grad() const { return tape->grad(id); }

Var Tape::constant(Mat value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::leaf(Mat value) {
  Node n;
  n.owned = std::move(value);
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(const Mat& value, Mat* grad) {
  Node n;
  n.external = &value;
  n.sink = grad;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.external ? *n.external : n.owned;
}

const Mat& Tape::grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }

Mat& Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.size() == 0) {
    const Mat& v = value(id);
    n.grad = Mat::Zero(v.rows(), v.cols());
  }
  return n.grad;
}

Var Tape::push(Mat value, std::vector<int> inputs, std::function<void(Tape&, const Mat&)> backward) {
  Node n;
  n.owned = std::move(value);
  for (const int i : inputs) n.requires_grad = n.requires_grad || requires_grad(i);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root) {
  if (value(root.id).size() != 1) throw std::invalid_argument("backward() needs a scalar root");
  grad_buffer(root.id).setOnes();
  for (int i = root.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.size() == 0) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
    } else if (n.sink) {
      *n.sink += n.grad;
    }
  }
}

#define TOPICAL_ACC(var, expr)                                   \
  do {                                                           \
    if (t.requires_grad((var).id)) t.grad_buffer((var).id) += (expr); \
  } while (0)

Var matmul(Var a, Var b) {
  if (a.value().cols() != b.value().rows()) throw std::invalid_argument("matmul: inner dimensions differ");
  return a.tape->push(a.value() * b.value(), {a.id, b.id}, [a, b](Tape& t, const Mat& g) {
    TOPICAL_ACC(a, g * b.value().transpose());
    TOPICAL_ACC(b, a.value().transpose() * g);
  });
}

Var add(Var a, Var b) {
  check_same(a.value(), b.value(), "add");
  return a.tape->push(a.value() + b.value(), {a.id, b.id}, [a, b](Tape& t, const Mat& g) {
    TOPICAL_ACC(a, g);
    TOPICAL_ACC(b, g);
  });
}

Var add_row(Var a, Var b) {
  if (b.value().rows() != 1 || b.value().cols() != a.value().cols()) throw std::invalid_argument("add_row: shape mismatch");
  Mat out = a.value();
  out.rowwise() += b.value().row(0);
  return a.tape->push(std::move(out), {a.id, b.id}, [a, b](Tape& t, const Mat& g) {
    TOPICAL_ACC(a, g);
    TOPICAL_ACC(b, g.colwise().sum());
  });
}

Var mul(Var a, Var b) {
  check_same(a.value(), b.value(), "mul");
  return a.tape->push(a.value().cwiseProduct(b.value()), {a.id, b.id}, [a, b](Tape& t, const Mat& g) {
    TOPICAL_ACC(a, g.cwiseProduct(b.value()));
    TOPICAL_ACC(b, g.cwiseProduct(a.value()));
  });
}

Var one_minus(Var a) {
  return a.tape->push((1.0 - a.value().array()).matrix(), {a.id}, [a](Tape& t, const Mat& g) { TOPICAL_ACC(a, -g); });
}

Var scale(Var a, double s) {
  return a.tape->push(a.value() * s, {a.id}, [a, s](Tape& t, const Mat& g) { TOPICAL_ACC(a, g * s); });
}

Var sigmoid(Var a) {
  Mat y = a.value().unaryExpr([](double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
  });
  const int id = a.tape->next_id();
  return a.tape->push(std::move(y), {a.id}, [a, id](Tape& t, const Mat& g) {
    const Mat& y = t.value(id);
    TOPICAL_ACC(a, g.cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var tanh(Var a) {
  const int id = a.tape->next_id();
  return a.tape->push(a.value().array().tanh().matrix(), {a.id}, [a, id](Tape& t, const Mat& g) {
    const Mat& y = t.value(id);
    TOPICAL_ACC(a, g.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var transpose(Var a) {
  return a.tape->push(a.value().transpose(), {a.id}, [a](Tape& t, const Mat& g) { TOPICAL_ACC(a, g.transpose()); });
}

Var row(Var a, int i) {
  return a.tape->push(a.value().row(i).transpose(), {a.id}, [a, i](Tape& t, const Mat& g) {
    if (t.requires_grad(a.id)) t.grad_buffer(a.id).row(i) += g.transpose();
  });
}

Var vconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("vconcat of nothing");
  Eigen::Index rows = 0;
  const Eigen::Index cols = parts[0].value().cols();
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.value().cols() != cols) throw std::invalid_argument("vconcat: column counts differ");
    rows += p.value().rows();
    ids.push_back(p.id);
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleRows(at, p.value().rows()) = p.value();
    at += p.value().rows();
  }
  return parts[0].tape->push(std::move(out), ids, [parts](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      const Eigen::Index r = p.value().rows();
      TOPICAL_ACC(p, g.middleRows(at, r));
      at += r;
    }
  });
}

Var hconcat(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("hconcat of nothing");
  Eigen::Index cols = 0;
  const Eigen::Index rows = parts[0].value().rows();
  std::vector<int> ids;
  for (const auto& p : parts) {
    if (p.value().rows() != rows) throw std::invalid_argument("hconcat: row counts differ");
    cols += p.value().cols();
    ids.push_back(p.id);
  }
  Mat out(rows, cols);
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    out.middleCols(at, p.value().cols()) = p.value();
    at += p.value().cols();
  }
  return parts[0].tape->push(std::move(out), ids, [parts](Tape& t, const Mat& g) {
    Eigen::Index at = 0;
    for (const auto& p : parts) {
      const Eigen::Index c = p.value().cols();
      TOPICAL_ACC(p, g.middleCols(at, c));
      at += c;
    }
  });
}

Var stack_rows(const std::vector<Var>& columns) {
  if (columns.empty()) throw std::invalid_argument("stack_rows of nothing");
  const Eigen::Index width = columns[0].value().rows();
  Mat out(static_cast<Eigen::Index>(columns.size()), width);
  std::vector<int> ids;
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].value().rows() != width || columns[i].value().cols() != 1) {
      throw std::invalid_argument("stack_rows: columns differ in shape");
    }
    out.row(static_cast<Eigen::Index>(i)) = columns[i].value().transpose();
    ids.push_back(columns[i].id);
  }
  return columns[0].tape->push(std::move(out), ids, [columns](Tape& t, const Mat& g) {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      TOPICAL_ACC(columns[i], g.row(static_cast<Eigen::Index>(i)).transpose());
    }
  });
}

Var masked_softmax(Var scores, const std::vector<std::uint8_t>& mask) {
  const Mat& s = scores.value();
  if (s.cols() != 1 || static_cast<std::size_t>(s.rows()) != mask.size()) {
    throw std::invalid_argument("masked_softmax: scores must be a column matching the mask");
  }
  Mat z(s.rows(), 1);
  bool any = false;
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    z(i, 0) = mask[static_cast<std::size_t>(i)] ? s(i, 0) : kMasked;
    any = any || mask[static_cast<std::size_t>(i)];
  }
  if (!any) throw std::invalid_argument("attention mask has no real position");
  const double top = z.maxCoeff();
  // scalar exp: the vectorized one clamps and leaves masked weights subnormal, not zero
  Mat w = (z.array() - top).unaryExpr([](double v) { return std::exp(v); }).matrix();
  w /= w.sum();
  const int id = scores.tape->next_id();
  return scores.tape->push(std::move(w), {scores.id}, [scores, id, mask](Tape& t, const Mat& g) {
    const Mat& w = t.value(id);
    const double dot = w.col(0).dot(g.col(0));
    Mat gs = w.cwiseProduct((g.array() - dot).matrix());
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) gs(static_cast<Eigen::Index>(i), 0) = 0.0;
    }
    TOPICAL_ACC(scores, gs);
  });
}

Var masked_weighted_sum(Var rows, Var weights, const std::vector<std::uint8_t>& mask) {
  const Mat& y = rows.value();
  const Mat& w = weights.value();
  Mat out = Mat::Zero(y.cols(), 1);
  for (Eigen::Index i = 0; i < y.rows(); ++i) {
    if (mask[static_cast<std::size_t>(i)]) out += w(i, 0) * y.row(i).transpose();
  }
  return rows.tape->push(std::move(out), {rows.id, weights.id}, [rows, weights, mask](Tape& t, const Mat& g) {
    const Mat& y = rows.value();
    const Mat& w = weights.value();
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      if (!mask[static_cast<std::size_t>(i)]) continue;
      if (t.requires_grad(rows.id)) t.grad_buffer(rows.id).row(i) += w(i, 0) * g.transpose();
      if (t.requires_grad(weights.id)) t.grad_buffer(weights.id)(i, 0) += y.row(i).dot(g.col(0));
    }
  });
}

Var bce_with_logits(Var logits, const Mat& labels) {
  check_same(logits.value(), labels, "bce_with_logits");
  const Mat& z = logits.value();
  double loss = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double x = z(i);
    loss += std::max(x, 0.0) - x * labels(i) + std::log1p(std::exp(-std::abs(x)));
  }
  Mat out(1, 1);
  out(0, 0) = loss;
  return logits.tape->push(std::move(out), {logits.id}, [logits, labels](Tape& t, const Mat& g) {
    const Mat& z = logits.value();
    Mat d(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
      const double x = z(i);
      const double p = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
      d(i) = (p - labels(i)) * g(0, 0);
    }
    TOPICAL_ACC(logits, d);
  });
}

Var mask_rows(Var a, const std::vector<std::uint8_t>& mask) {
  Mat out = a.value();
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) out.row(static_cast<Eigen::Index>(i)).setZero();
  }
  return a.tape->push(std::move(out), {a.id}, [a, mask](Tape& t, const Mat& g) {
    Mat d = g;
    for (std::size_t i = 0; i < mask.size(); ++i) {
      if (!mask[i]) d.row(static_cast<Eigen::Index>(i)).setZero();
    }
    TOPICAL_ACC(a, d);
  });
}

Var mean_rows(Var a, const std::vector<std::uint8_t>& mask) {
  const Mat& x = a.value();
  double count = 0;
  Mat out = Mat::Zero(x.cols(), 1);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    if (!mask[static_cast<std::size_t>(i)]) continue;
    out += x.row(i).transpose();
    ++count;
  }
  if (count == 0) throw std::invalid_argument("mean over an empty set of rows");
  out /= count;
  return a.tape->push(std::move(out), {a.id}, [a, mask, count](Tape& t, const Mat& g) {
    if (!t.requires_grad(a.id)) return;
    Mat& d = t.grad_buffer(a.id);
    for (Eigen::Index i = 0; i < d.rows(); ++i) {
      if (mask[static_cast<std::size_t>(i)]) d.row(i) += g.transpose() / count;
    }
  });
}

#undef TOPICAL_ACC

}  // namespace topical::autograd
