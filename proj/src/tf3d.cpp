#include "topical/tf3d.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <thread>

#include "topical/errors.hpp"
#include "topical/python/parser.hpp"
#include "topical/random.hpp"
#include "topical/serializer.hpp"

namespace topical::tf3d {

using python::Node;
using python::NodeKind;

namespace {

const char* kind_term(NodeKind k) {
  switch (k) {
    case NodeKind::For:
    case NodeKind::AsyncFor: return "for";
    case NodeKind::While: return "while";
    case NodeKind::If: return "if";
    case NodeKind::IfExp: return "ifexp";
    case NodeKind::Call: return "call";
    case NodeKind::Assign:
    case NodeKind::AugAssign:
    case NodeKind::AnnAssign: return "assign";
    case NodeKind::NamedExpr: return "walrus";
    case NodeKind::Return: return "return";
    case NodeKind::With:
    case NodeKind::AsyncWith: return "with";
    case NodeKind::Try: return "try";
    case NodeKind::ExceptHandler: return "except";
    case NodeKind::Raise: return "raise";
    case NodeKind::Assert: return "assert";
    case NodeKind::Delete: return "delete";
    case NodeKind::Global:
    case NodeKind::Nonlocal: return "global";
    case NodeKind::Import:
    case NodeKind::ImportFrom: return "import";
    case NodeKind::Lambda: return "lambda";
    case NodeKind::ListComp:
    case NodeKind::SetComp:
    case NodeKind::DictComp:
    case NodeKind::GeneratorExp: return "comprehension";
    case NodeKind::Yield:
    case NodeKind::YieldFrom: return "yield";
    case NodeKind::Await: return "await";
    case NodeKind::Match: return "match";
    case NodeKind::BoolOp: return "boolop";
    case NodeKind::Compare: return "compare";
    case NodeKind::BinOp: return "binop";
    case NodeKind::Subscript: return "subscript";
    case NodeKind::Attribute: return "attribute";
    case NodeKind::Break: return "break";
    case NodeKind::Continue: return "continue";
    default: return nullptr;
  }
}

bool is_scope(const Node& n) {
  return n.is(NodeKind::FunctionDef) || n.is(NodeKind::AsyncFunctionDef) || n.is(NodeKind::ClassDef);
}

void count_body(const Node& n, Counts& out) {
  if (is_scope(n)) return;
  if (const char* t = kind_term(n.kind)) out[t] += 1;
  for (const auto* list : {&n.decorators, &n.children, &n.body, &n.handlers, &n.orelse, &n.finalbody}) {
    for (const auto& c : *list) count_body(*c, out);
  }
}

double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ValidationError("cosine similarity of a zero vector");
  return a.dot(b) / (na * nb);
}

struct Builder {
  const Eigen::MatrixXd& X;
  const Eigen::MatrixXd& Y;
  const ForestConfig& cfg;
  std::size_t per_split;
  Rng rng;
  Tree tree;

  int leaf(const std::vector<std::size_t>& rows) {
    TreeNode n;
    n.value = Eigen::VectorXd::Zero(Y.cols());
    for (const auto r : rows) n.value += Y.row(static_cast<Eigen::Index>(r)).transpose();
    n.value /= static_cast<double>(rows.size());
    tree.nodes.push_back(std::move(n));
    return static_cast<int>(tree.nodes.size()) - 1;
  }

  bool pure(const std::vector<std::size_t>& rows) const {
    for (const auto r : rows) {
      if (Y.row(static_cast<Eigen::Index>(r)) != Y.row(static_cast<Eigen::Index>(rows.front()))) return false;
    }
    return true;
  }

  int build(std::vector<std::size_t> rows, int depth) {
    if ((cfg.max_depth >= 0 && depth >= cfg.max_depth) || rows.size() < 2 * cfg.min_leaf || pure(rows)) {
      return leaf(rows);
    }
    std::vector<std::size_t> features(static_cast<std::size_t>(X.cols()));
    std::iota(features.begin(), features.end(), 0);
    for (std::size_t i = 0; i < per_split; ++i) {
      std::swap(features[i], features[i + rng.below(features.size() - i)]);
    }
    features.resize(per_split);

    const auto outputs = Y.cols();
    Eigen::VectorXd total = Eigen::VectorXd::Zero(outputs);
    for (const auto r : rows) total += Y.row(static_cast<Eigen::Index>(r)).transpose();
    const double n = static_cast<double>(rows.size());
    const double base = total.squaredNorm() / n;

    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0;
    std::vector<std::size_t> order = rows;
    for (const auto f : features) {
      const auto fi = static_cast<Eigen::Index>(f);
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return X(static_cast<Eigen::Index>(a), fi) < X(static_cast<Eigen::Index>(b), fi); });
      Eigen::VectorXd left = Eigen::VectorXd::Zero(outputs);
      for (std::size_t i = 0; i + 1 < order.size(); ++i) {
        left += Y.row(static_cast<Eigen::Index>(order[i])).transpose();
        const double xa = X(static_cast<Eigen::Index>(order[i]), fi);
        const double xb = X(static_cast<Eigen::Index>(order[i + 1]), fi);
        const std::size_t nl = i + 1, nr = order.size() - nl;
        if (xa == xb || nl < cfg.min_leaf || nr < cfg.min_leaf) continue;
        const Eigen::VectorXd right = total - left;
        const double gain = left.squaredNorm() / static_cast<double>(nl) + right.squaredNorm() / static_cast<double>(nr) - base;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = xa + (xb - xa) / 2.0;
        }
      }
    }
    if (best_feature < 0) return leaf(rows);

    std::vector<std::size_t> lrows, rrows;
    for (const auto r : rows) {
      (X(static_cast<Eigen::Index>(r), best_feature) <= best_threshold ? lrows : rrows).push_back(r);
    }
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({best_feature, best_threshold, -1, -1, {}});
    const int l = build(std::move(lrows), depth + 1);
    const int r = build(std::move(rrows), depth + 1);
    tree.nodes[static_cast<std::size_t>(id)].left = l;
    tree.nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }
};

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

Eigen::VectorXd from_vec(const std::vector<double>& v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

std::string_view to_string(TermDomain d) {
  switch (d) {
    case TermDomain::CodeAst: return "code_ast";
    case TermDomain::Docstring: return "docstring";
    case TermDomain::Dependency: return "dependency";
  }
  return "?";
}

TermCounts extract_term_counts(const analyzer::ScriptRecord& record, std::string_view source) {
  TermCounts out;
  if (!record.parse_ok) return out;
  const auto module = python::parse_module(source);
  python::walk(*module, [&](const Node& n) {
    if (!n.is(NodeKind::FunctionDef) && !n.is(NodeKind::AsyncFunctionDef)) return;
    Counts& code = out[0];
    code["def"] += 1;
    for (const auto& stmt : n.body) count_body(*stmt, code);
  });
  for (const auto& f : record.functions) {
    if (f.docstring) {
      for (auto& w : serializer::word_tokens(*f.docstring)) out[1][w] += 1;
    }
    const auto dot = f.qualified_name.find_last_of('.');
    for (auto& w : serializer::split_name(f.qualified_name.substr(dot == std::string::npos ? 0 : dot + 1))) {
      out[1][w] += 1;
    }
  }
  for (const auto& imp : record.imports) {
    std::size_t start = 0;
    while (start <= imp.size()) {
      const auto dot = imp.find('.', start);
      const std::string seg = imp.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!seg.empty()) out[2][seg] += 1;
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
  }
  return out;
}

void merge(TermCounts& into, const TermCounts& from) {
  for (std::size_t d = 0; d < 3; ++d) {
    for (const auto& [term, c] : from[d]) into[d][term] += c;
  }
}

TermVocab fit_vocab(const std::vector<TermCounts>& repos, std::size_t cap) {
  TermVocab v;
  for (std::size_t d = 0; d < 3; ++d) {
    Counts total;
    for (const auto& r : repos) {
      for (const auto& [term, c] : r[d]) total[term] += c;
    }
    std::vector<std::pair<std::string, double>> ranked(total.begin(), total.end());
    std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (ranked.size() > cap) ranked.resize(cap);
    for (auto& [term, c] : ranked) v.terms[d].push_back(term);
    if (v.terms[d].empty()) {
      throw ValidationError(std::string("no ") + std::string(to_string(static_cast<TermDomain>(d))) +
                            " terms in the training repositories");
    }
  }
  return v;
}

Profile repo_profile(const TermCounts& counts, const TermVocab& vocab, double epsilon) {
  if (!(epsilon > 0)) throw ValidationError("smoothing epsilon must be positive");
  Profile p;
  for (std::size_t d = 0; d < 3; ++d) {
    const auto& terms = vocab.terms[d];
    Eigen::VectorXd s(static_cast<Eigen::Index>(terms.size()));
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const auto it = counts[d].find(terms[i]);
      s[static_cast<Eigen::Index>(i)] = (it == counts[d].end() ? 0.0 : it->second) + epsilon;
    }
    p.S[d] = s / s.sum();
  }
  return p;
}

ClarityMatrix fit_clarity(const std::vector<Profile>& profiles, const Eigen::MatrixXd& labels) {
  if (profiles.empty() || static_cast<std::size_t>(labels.rows()) != profiles.size()) {
    throw ValidationError("clarity fit needs one label row per profile");
  }
  ClarityMatrix m;
  for (Eigen::Index t = 0; t < labels.cols(); ++t) {
    const auto members = (labels.col(t).array() != 0).count();
    if (members == 0 || members == labels.rows()) {
      throw ValidationError("topic " + std::to_string(t) + " needs both member and non-member training repositories");
    }
  }
  for (std::size_t d = 0; d < 3; ++d) {
    const Eigen::Index width = profiles.front().S[d].size();
    for (Eigen::Index t = 0; t < labels.cols(); ++t) {
      Eigen::VectorXd in = Eigen::VectorXd::Zero(width), out = Eigen::VectorXd::Zero(width);
      double n_in = 0, n_out = 0;
      for (std::size_t i = 0; i < profiles.size(); ++i) {
        const Eigen::VectorXd logs = profiles[i].S[d].array().log().matrix();
        if (labels(static_cast<Eigen::Index>(i), t) != 0) {
          in += logs;
          ++n_in;
        } else {
          out += logs;
          ++n_out;
        }
      }
      // a zero mean log means the term carries all the mass in every repo
      // (one-term vocabulary), so it is equally distributed: ratio 1
      const Eigen::ArrayXd num = (in / n_in).array(), den = (out / n_out).array();
      m.C[d].push_back((den == 0.0).select(Eigen::ArrayXd::Ones(width), num / den).matrix());
    }
  }
  return m;
}

Eigen::MatrixXd embed_repo(const Profile& profile, const ClarityMatrix& clarity) {
  const auto topics = static_cast<Eigen::Index>(clarity.C[0].size());
  Eigen::MatrixXd e(3, topics);
  for (std::size_t d = 0; d < 3; ++d) {
    for (Eigen::Index t = 0; t < topics; ++t) {
      const auto& c = clarity.C[d][static_cast<std::size_t>(t)];
      if (c.size() != profile.S[d].size()) throw ValidationError("profile and clarity vocabularies differ");
      e(static_cast<Eigen::Index>(d), t) = cosine(profile.S[d], c);
    }
  }
  return e;
}

Eigen::VectorXd flatten(const Eigen::MatrixXd& e) {
  Eigen::VectorXd out(e.size());
  for (Eigen::Index r = 0; r < e.rows(); ++r) out.segment(r * e.cols(), e.cols()) = e.row(r).transpose();
  return out;
}

const Eigen::VectorXd& Tree::predict(const Eigen::VectorXd& x) const {
  std::size_t i = 0;
  while (nodes[i].feature >= 0) {
    i = static_cast<std::size_t>(x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right);
  }
  return nodes[i].value;
}

Forest forest_fit(const Eigen::MatrixXd& features, const Eigen::MatrixXd& labels, const ForestConfig& config) {
  if (features.rows() < 2) throw ValidationError("forest needs at least two training rows");
  if (features.rows() != labels.rows()) throw ValidationError("feature and label row counts differ");
  if (config.trees < 1 || config.min_leaf < 1) throw ValidationError("forest needs trees >= 1 and min_leaf >= 1");
  const auto n_features = static_cast<std::size_t>(features.cols());
  std::size_t per_split = config.feature_frac <= 0
                              ? static_cast<std::size_t>(std::sqrt(static_cast<double>(n_features)))
                              : static_cast<std::size_t>(std::ceil(config.feature_frac * static_cast<double>(n_features)));
  per_split = std::clamp<std::size_t>(per_split, 1, n_features);

  Forest forest;
  forest.n_features = n_features;
  forest.n_outputs = static_cast<std::size_t>(labels.cols());
  forest.trees.resize(config.trees);
  auto grow = [&](std::size_t t) {
    Builder b{features, labels, config, per_split, Rng(splitmix64(config.seed + t)), {}};
    std::vector<std::size_t> rows(static_cast<std::size_t>(features.rows()));
    if (config.bootstrap) {
      for (auto& r : rows) r = b.rng.below(rows.size());
    } else {
      std::iota(rows.begin(), rows.end(), 0);
    }
    b.build(std::move(rows), 0);
    forest.trees[t] = std::move(b.tree);
  };
  const std::size_t workers = std::clamp<std::size_t>(config.workers, 1, config.trees);
  if (workers == 1) {
    for (std::size_t t = 0; t < config.trees; ++t) grow(t);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t t = w; t < config.trees; t += workers) grow(t);
      });
    }
    for (auto& th : pool) th.join();
  }
  return forest;
}

Eigen::MatrixXd forest_predict(const Forest& forest, const Eigen::MatrixXd& features) {
  if (static_cast<std::size_t>(features.cols()) != forest.n_features) throw ValidationError("feature width differs from the forest's");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(features.rows(), static_cast<Eigen::Index>(forest.n_outputs));
  for (Eigen::Index r = 0; r < features.rows(); ++r) {
    const Eigen::VectorXd x = features.row(r).transpose();
    for (const auto& tree : forest.trees) out.row(r) += tree.predict(x).transpose();
  }
  return out / static_cast<double>(forest.trees.size());
}

nlohmann::json forest_json(const Forest& f) {
  nlohmann::json trees = nlohmann::json::array();
  for (const auto& t : f.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& n : t.nodes) {
      if (n.feature < 0) {
        nodes.push_back({{"value", to_vec(n.value)}});
      } else {
        nodes.push_back({{"feature", n.feature}, {"threshold", n.threshold}, {"left", n.left}, {"right", n.right}});
      }
    }
    trees.push_back(std::move(nodes));
  }
  return {{"n_features", f.n_features}, {"n_outputs", f.n_outputs}, {"trees", std::move(trees)}};
}

Forest forest_from_json(const nlohmann::json& j) {
  Forest f;
  f.n_features = j.at("n_features").get<std::size_t>();
  f.n_outputs = j.at("n_outputs").get<std::size_t>();
  for (const auto& jt : j.at("trees")) {
    Tree t;
    for (const auto& jn : jt) {
      TreeNode n;
      if (jn.contains("value")) {
        n.value = from_vec(jn.at("value").get<std::vector<double>>());
      } else {
        n.feature = jn.at("feature").get<int>();
        n.threshold = jn.at("threshold").get<double>();
        n.left = jn.at("left").get<int>();
        n.right = jn.at("right").get<int>();
      }
      t.nodes.push_back(std::move(n));
    }
    for (const auto& n : t.nodes) {
      const int size = static_cast<int>(t.nodes.size());
      if (n.feature >= 0 && (n.left <= 0 || n.left >= size || n.right <= 0 || n.right >= size ||
                             static_cast<std::size_t>(n.feature) >= f.n_features)) {
        throw ValidationError("forest node references are out of range");
      }
    }
    if (t.nodes.empty()) throw ValidationError("empty tree in forest");
    f.trees.push_back(std::move(t));
  }
  return f;
}

nlohmann::json model_json(const Model& m) {
  nlohmann::json vocab, clarity;
  for (std::size_t d = 0; d < 3; ++d) {
    const std::string name(to_string(static_cast<TermDomain>(d)));
    vocab[name] = m.vocab.terms[d];
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& c : m.clarity.C[d]) rows.push_back(to_vec(c));
    clarity[name] = std::move(rows);
  }
  return {{"topics", m.topics},
          {"epsilon", m.epsilon},
          {"vocab", vocab},
          {"clarity", clarity},
          {"thresholds", to_vec(m.thresholds)},
          {"forest", forest_json(m.forest)}};
}

Model model_from_json(const nlohmann::json& j) {
  Model m;
  try {
    m.topics = j.at("topics").get<std::vector<std::string>>();
    m.epsilon = j.at("epsilon").get<double>();
    for (std::size_t d = 0; d < 3; ++d) {
      const std::string name(to_string(static_cast<TermDomain>(d)));
      m.vocab.terms[d] = j.at("vocab").at(name).get<std::vector<std::string>>();
      for (const auto& row : j.at("clarity").at(name)) m.clarity.C[d].push_back(from_vec(row.get<std::vector<double>>()));
    }
    m.thresholds = from_vec(j.at("thresholds").get<std::vector<double>>());
    m.forest = forest_from_json(j.at("forest"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed TF3D model: ") + e.what());
  }
  return m;
}

}  // namespace topical::tf3d
