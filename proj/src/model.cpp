#include "topical/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "topical/errors.hpp"
#include "topical/random.hpp"
#include "topical/tensorfile.hpp"

namespace topical::model {

namespace ag = autograd;

namespace {

constexpr const char* kDirections[] = {"fwd", "bwd"};
constexpr const char* kDomains[] = {"code", "doc", "dep"};

Mat uniform(Rng& rng, std::size_t rows, std::size_t cols, double bound) {
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = rng.uniform(-bound, bound);
  }
  return m;
}

Mat zeros(std::size_t rows, std::size_t cols) {
  return Mat::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Var affine(Var w, Var x, Var b) { return ag::add(ag::matmul(w, x), b); }

}  // namespace

std::string_view to_string(EncoderKind k) {
  switch (k) {
    case EncoderKind::BiGru: return "bigru";
    case EncoderKind::BiLstm: return "bilstm";
    case EncoderKind::Mlp: return "mlp";
  }
  return "?";
}

std::string_view to_string(Reduction r) { return r == Reduction::Pca ? "pca" : "linear"; }

std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::Attention: return "attention";
    case Aggregation::Mean: return "mean";
    case Aggregation::Concat: return "concat";
  }
  return "?";
}

EncoderKind encoder_from_string(std::string_view s) {
  if (s == "bigru") return EncoderKind::BiGru;
  if (s == "bilstm") return EncoderKind::BiLstm;
  if (s == "mlp") return EncoderKind::Mlp;
  throw ValidationError("unknown encoder '" + std::string(s) + "' (bigru, bilstm, mlp)");
}

Reduction reduction_from_string(std::string_view s) {
  if (s == "pca") return Reduction::Pca;
  if (s == "linear") return Reduction::Linear;
  throw ValidationError("unknown reduction '" + std::string(s) + "' (pca, linear)");
}

Aggregation aggregation_from_string(std::string_view s) {
  if (s == "attention") return Aggregation::Attention;
  if (s == "mean") return Aggregation::Mean;
  if (s == "concat") return Aggregation::Concat;
  throw ValidationError("unknown aggregation '" + std::string(s) + "' (attention, mean, concat)");
}

std::size_t ModelShape::repo_width() const {
  switch (aggregation) {
    case Aggregation::Attention: return 2 * hidden;
    case Aggregation::Mean: return input_width();
    case Aggregation::Concat: return max_scripts * input_width();
  }
  return 0;
}

nlohmann::json shape_json(const ModelShape& s) {
  return {{"encoder", to_string(s.encoder)},   {"aggregation", to_string(s.aggregation)},
          {"reduction", to_string(s.reduction)}, {"domain_width", s.domain_width},
          {"raw_width", s.raw_width},           {"hidden", s.hidden},
          {"n_topics", s.n_topics},             {"max_scripts", s.max_scripts},
          {"fused_width", s.fused_width}};
}

ModelShape shape_from_json(const nlohmann::json& j) {
  ModelShape s;
  try {
    s.encoder = encoder_from_string(j.at("encoder").get<std::string>());
    s.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
    s.reduction = reduction_from_string(j.at("reduction").get<std::string>());
    s.domain_width = j.at("domain_width").get<std::size_t>();
    s.raw_width = j.at("raw_width").get<std::size_t>();
    s.hidden = j.at("hidden").get<std::size_t>();
    s.n_topics = j.at("n_topics").get<std::size_t>();
    s.max_scripts = j.at("max_scripts").get<std::size_t>();
    s.fused_width = j.value("fused_width", std::size_t{0});
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed model shape: ") + e.what());
  }
  return s;
}

void Params::add(std::string name, Mat value) {
  if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
  index_[name] = names_.size();
  names_.push_back(std::move(name));
  grads.push_back(Mat::Zero(value.rows(), value.cols()));
  m.push_back(Mat::Zero(value.rows(), value.cols()));
  v.push_back(Mat::Zero(value.rows(), value.cols()));
  values.push_back(std::move(value));
}

std::size_t Params::index(const std::string& name) const {
  const auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
  return it->second;
}

const Mat& Params::value(const std::string& name) const { return values[index(name)]; }
Mat& Params::value(const std::string& name) { return values[index(name)]; }
Mat& Params::grad(const std::string& name) { return grads[index(name)]; }

void Params::zero_grad() {
  for (auto& g : grads) g.setZero();
}

Model make_model(const ModelShape& shape, std::uint64_t seed) {
  if (shape.n_topics < 1) throw ValidationError("model needs at least one topic");
  Model model{shape, {}};
  Params& p = model.params;
  Rng rng(seed);
  const std::size_t in = shape.input_width();
  const std::size_t h = shape.hidden;

  if (shape.reduction == Reduction::Linear) {
    for (const char* d : kDomains) {
      const std::string base = std::string("reduce.") + d;
      p.add(base + ".W", uniform(rng, shape.raw_width, shape.domain_width, 1.0 / std::sqrt(double(shape.raw_width))));
      p.add(base + ".b", zeros(1, shape.domain_width));
    }
  }
  if (shape.aggregation == Aggregation::Attention) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(h));
    if (shape.encoder == EncoderKind::BiGru || shape.encoder == EncoderKind::BiLstm) {
      const bool gru = shape.encoder == EncoderKind::BiGru;
      const std::vector<std::string> gates = gru ? std::vector<std::string>{"z", "r", "h"}
                                                 : std::vector<std::string>{"i", "f", "o", "g"};
      for (const char* dir : kDirections) {
        const std::string base = std::string(gru ? "gru." : "lstm.") + dir + ".";
        for (const auto& g : gates) {
          p.add(base + "W_" + g, uniform(rng, h, in, bound));
          p.add(base + "U_" + g, uniform(rng, h, h, bound));
          p.add(base + "b_" + g, zeros(h, 1));
        }
      }
    } else {
      p.add("mlp.W1", uniform(rng, 2 * h, in, 1.0 / std::sqrt(static_cast<double>(in))));
      p.add("mlp.b1", zeros(2 * h, 1));
      p.add("mlp.W2", uniform(rng, 2 * h, 2 * h, 1.0 / std::sqrt(static_cast<double>(2 * h))));
      p.add("mlp.b2", zeros(2 * h, 1));
    }
  }
  const std::size_t width = shape.repo_width();
  p.add("classifier.W", uniform(rng, shape.n_topics, width, 1.0 / std::sqrt(static_cast<double>(width))));
  p.add("classifier.b", zeros(shape.n_topics, 1));
  return model;
}

std::map<std::string, Var> bind(Tape& tape, Model& model) {
  std::map<std::string, Var> vars;
  for (std::size_t i = 0; i < model.params.count(); ++i) {
    vars.emplace(model.params.names()[i], tape.parameter(model.params.values[i], &model.params.grads[i]));
  }
  return vars;
}

Var gru_cell(Var x, Var h, const std::map<std::string, Var>& p, const std::string& prefix) {
  auto P = [&](const char* n) { return p.at(prefix + n); };
  const Var z = ag::sigmoid(ag::add(affine(P("W_z"), x, P("b_z")), ag::matmul(P("U_z"), h)));
  const Var r = ag::sigmoid(ag::add(affine(P("W_r"), x, P("b_r")), ag::matmul(P("U_r"), h)));
  const Var cand = ag::tanh(ag::add(affine(P("W_h"), x, P("b_h")), ag::matmul(P("U_h"), ag::mul(r, h))));
  return ag::add(ag::mul(ag::one_minus(z), h), ag::mul(z, cand));
}

LstmState lstm_cell(Var x, LstmState prev, const std::map<std::string, Var>& p, const std::string& prefix) {
  auto gate = [&](const std::string& g) {
    return ag::add(affine(p.at(prefix + "W_" + g), x, p.at(prefix + "b_" + g)), ag::matmul(p.at(prefix + "U_" + g), prev.h));
  };
  const Var i = ag::sigmoid(gate("i"));
  const Var f = ag::sigmoid(gate("f"));
  const Var o = ag::sigmoid(gate("o"));
  const Var g = ag::tanh(gate("g"));
  const Var c = ag::add(ag::mul(f, prev.c), ag::mul(i, g));
  return {ag::mul(o, ag::tanh(c)), c};
}

Encoded encode_sequence(Var x, const std::vector<std::uint8_t>& mask, const std::map<std::string, Var>& p,
                        const ModelShape& shape) {
  Tape& tape = *x.tape;
  const int n = static_cast<int>(x.value().rows());
  if (n < 1 || static_cast<std::size_t>(n) != mask.size()) throw std::invalid_argument("encode_sequence: bad length");
  Encoded out;

  if (shape.encoder == EncoderKind::Mlp) {
    int last = -1;
    for (int t = 0; t < n; ++t) {
      const Var a = ag::tanh(affine(p.at("mlp.W1"), ag::row(x, t), p.at("mlp.b1")));
      out.y.push_back(ag::tanh(affine(p.at("mlp.W2"), a, p.at("mlp.b2"))));
      if (mask[static_cast<std::size_t>(t)]) last = t;
    }
    if (last < 0) throw std::invalid_argument("encode_sequence: no real position");
    out.h_n = out.y[static_cast<std::size_t>(last)];
    return out;
  }

  const auto h = static_cast<Eigen::Index>(shape.hidden);
  const bool gru = shape.encoder == EncoderKind::BiGru;
  std::vector<Var> fwd(static_cast<std::size_t>(n)), bwd(static_cast<std::size_t>(n));
  for (int dir = 0; dir < 2; ++dir) {
    const std::string prefix = std::string(gru ? "gru." : "lstm.") + kDirections[dir] + ".";
    LstmState state{tape.constant(Mat::Zero(h, 1)), tape.constant(Mat::Zero(h, 1))};
    for (int k = 0; k < n; ++k) {
      const int t = dir == 0 ? k : n - 1 - k;
      const Var xt = ag::row(x, t);
      state = gru ? LstmState{gru_cell(xt, state.h, p, prefix), state.c} : lstm_cell(xt, state, p, prefix);
      (dir == 0 ? fwd : bwd)[static_cast<std::size_t>(t)] = state.h;
    }
  }
  for (int t = 0; t < n; ++t) out.y.push_back(ag::vconcat({fwd[static_cast<std::size_t>(t)], bwd[static_cast<std::size_t>(t)]}));
  out.h_n = ag::vconcat({fwd.back(), bwd.front()});
  return out;
}

Attended masked_attention(Var y, Var h_n, const std::vector<std::uint8_t>& mask) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(h_n.value().rows()));
  const Var scores = ag::scale(ag::matmul(y, h_n), scale);
  const Var weights = ag::masked_softmax(scores, mask);
  return {ag::masked_weighted_sum(y, weights, mask), weights};
}

Forward forward(Tape& tape, Model& model, const Mat& x, const std::vector<std::uint8_t>& mask) {
  const ModelShape& s = model.shape;
  if (static_cast<std::size_t>(x.cols()) != s.tensor_width()) {
    throw ValidationError("tensor width " + std::to_string(x.cols()) + " does not match model width " +
                          std::to_string(s.tensor_width()));
  }
  if (static_cast<std::size_t>(x.rows()) != mask.size()) throw ValidationError("tensor rows and mask differ");
  if (s.aggregation == Aggregation::Concat && mask.size() != s.max_scripts) {
    throw ValidationError("concat aggregation expects " + std::to_string(s.max_scripts) + " slots");
  }
  const auto p = bind(tape, model);
  Forward f;
  if (s.reduction == Reduction::Linear) {
    const auto raw = static_cast<Eigen::Index>(s.raw_width);
    std::vector<Var> blocks;
    for (int d = 0; d < 3; ++d) {
      const Var xd = tape.constant(x.middleCols(d * raw, raw));
      const std::string base = std::string("reduce.") + kDomains[d];
      blocks.push_back(ag::add_row(ag::matmul(xd, p.at(base + ".W")), p.at(base + ".b")));
    }
    f.input = ag::mask_rows(ag::hconcat(blocks), mask);
  } else {
    f.input = tape.constant(x);
  }

  switch (s.aggregation) {
    case Aggregation::Attention: {
      const Encoded enc = encode_sequence(f.input, mask, p, s);
      const Attended att = masked_attention(ag::stack_rows(enc.y), enc.h_n, mask);
      f.repo_vec = att.output;
      f.weights = att.weights;
      break;
    }
    case Aggregation::Mean:
      f.repo_vec = ag::mean_rows(f.input, mask);
      break;
    case Aggregation::Concat: {
      std::vector<Var> rows;
      for (int t = 0; t < static_cast<int>(mask.size()); ++t) rows.push_back(ag::row(f.input, t));
      f.repo_vec = ag::vconcat(rows);
      break;
    }
  }
  f.logits = affine(p.at("classifier.W"), f.repo_vec, p.at("classifier.b"));
  return f;
}

Eigen::VectorXd predict(Model& model, const embedder::RepoTensor& t) {
  Tape tape;
  const Forward f = forward(tape, model, t.x, t.mask);
  return ag::sigmoid(f.logits).value().col(0);
}

Eigen::VectorXd repo_vector(Model& model, const embedder::RepoTensor& t) {
  Tape tape;
  return forward(tape, model, t.x, t.mask).repo_vec.value().col(0);
}

double accumulate_gradients(Model& model, const embedder::RepoTensor& t) {
  if (!t.labels) throw ValidationError("training tensor " + t.repo_id + " has no labels");
  if (static_cast<std::size_t>(t.labels->size()) != model.shape.n_topics) {
    throw ValidationError("label width of " + t.repo_id + " differs from the model's topic count");
  }
  Tape tape;
  const Forward f = forward(tape, model, t.x, t.mask);
  const Var loss = ag::bce_with_logits(f.logits, *t.labels);
  tape.backward(loss);
  return loss.value()(0, 0);
}

nlohmann::json train_config_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate}, {"weight_decay", c.weight_decay}, {"beta1", c.beta1},
          {"beta2", c.beta2},                 {"epsilon", c.epsilon},           {"batch_size", c.batch_size},
          {"epochs", c.epochs},               {"seed", c.seed},                 {"encoder", to_string(c.encoder)},
          {"reduction", to_string(c.reduction)}, {"aggregation", to_string(c.aggregation)}, {"hidden", c.hidden}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.seed = j.value("seed", c.seed);
    c.hidden = j.value("hidden", c.hidden);
    if (j.contains("encoder")) c.encoder = encoder_from_string(j.at("encoder").get<std::string>());
    if (j.contains("reduction")) c.reduction = reduction_from_string(j.at("reduction").get<std::string>());
    if (j.contains("aggregation")) c.aggregation = aggregation_from_string(j.at("aggregation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("malformed training config: ") + e.what());
  }
  if (!(c.learning_rate > 0)) throw ValidationError("learning_rate must be positive");
  if (c.batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (c.hidden < 1) throw ValidationError("hidden must be at least 1");
  return c;
}

void adamw_step(Params& params, const TrainConfig& c) {
  ++params.step;
  const double t = static_cast<double>(params.step);
  const double c1 = 1.0 - std::pow(c.beta1, t);
  const double c2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.count(); ++i) {
    Mat& w = params.values[i];
    const Mat& g = params.grads[i];
    w *= 1.0 - c.learning_rate * c.weight_decay;
    params.m[i] = c.beta1 * params.m[i] + (1.0 - c.beta1) * g;
    params.v[i] = c.beta2 * params.v[i] + (1.0 - c.beta2) * g.cwiseProduct(g);
    w.array() -= c.learning_rate * (params.m[i].array() / c1) / ((params.v[i].array() / c2).sqrt() + c.epsilon);
  }
}

TrainResult train(const std::vector<embedder::RepoTensor>& data, const TrainConfig& config, std::size_t domain_width) {
  if (data.empty()) throw ValidationError("training set is empty");
  if (!(config.learning_rate > 0)) throw ValidationError("learning_rate must be positive");
  const auto& first = data.front();
  if (!first.labels) throw ValidationError("training tensor " + first.repo_id + " has no labels");
  for (const auto& t : data) {
    if (t.n() != first.n() || t.x.cols() != first.x.cols() || !t.labels || t.labels->size() != first.labels->size()) {
      throw ValidationError("training tensors disagree in shape (" + t.repo_id + ")");
    }
  }
  ModelShape shape;
  shape.encoder = config.encoder;
  shape.aggregation = config.aggregation;
  shape.reduction = config.reduction;
  shape.hidden = config.hidden;
  shape.n_topics = static_cast<std::size_t>(first.labels->size());
  shape.max_scripts = first.n();
  if (first.x.cols() % 3 != 0) throw ValidationError("tensor width is not divisible into three domains");
  if (config.reduction == Reduction::Pca) {
    shape.domain_width = static_cast<std::size_t>(first.x.cols()) / 3;
  } else {
    shape.domain_width = domain_width;
    shape.raw_width = static_cast<std::size_t>(first.x.cols()) / 3;
  }

  TrainResult result{make_model(shape, config.seed), {}};
  Model& model = result.model;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffler(splitmix64(config.seed ^ 0x5348554646ULL));

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffler.shuffle(order);
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      model.params.zero_grad();
      for (std::size_t i = start; i < end; ++i) total += accumulate_gradients(model, data[order[i]]);
      const double inv = 1.0 / static_cast<double>(end - start);
      for (auto& g : model.params.grads) g *= inv;
      adamw_step(model.params, config);
    }
    const double mean = total / static_cast<double>(data.size());
    if (!std::isfinite(mean)) {
      throw std::runtime_error("training diverged at epoch " + std::to_string(epoch + 1) +
                               " (non-finite loss); try a smaller learning rate than " +
                               std::to_string(config.learning_rate));
    }
    result.epoch_loss.push_back(mean);
  }
  if (config.epochs > 0) {
    for (auto& w : model.params.values) w = w.cast<float>().cast<double>();
  }
  model.params.zero_grad();
  return result;
}

Eigen::VectorXd aggregate_vectors(const std::vector<Eigen::VectorXd>& vectors, Aggregation mode, std::size_t max_count,
                                  Model* model) {
  if (vectors.empty()) throw ValidationError("cannot aggregate an empty vector list");
  const Eigen::Index k = vectors.front().size();
  for (const auto& v : vectors) {
    if (v.size() != k) throw ValidationError("aggregated vectors differ in width");
  }
  switch (mode) {
    case Aggregation::Mean: {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(k);
      for (const auto& v : vectors) sum += v;
      return sum / static_cast<double>(vectors.size());
    }
    case Aggregation::Concat: {
      if (max_count < 1) throw ValidationError("concat aggregation needs a positive max count");
      Eigen::VectorXd out = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(max_count) * k);
      for (std::size_t i = 0; i < std::min(max_count, vectors.size()); ++i) {
        out.segment(static_cast<Eigen::Index>(i) * k, k) = vectors[i];
      }
      return out;
    }
    case Aggregation::Attention: {
      if (!model || model->shape.aggregation != Aggregation::Attention ||
          model->shape.reduction != Reduction::Pca || static_cast<std::size_t>(k) != model->shape.input_width()) {
        throw ValidationError("attention aggregation needs an attention model over " + std::to_string(k) + "-wide inputs");
      }
      Mat x(static_cast<Eigen::Index>(vectors.size()), k);
      for (std::size_t i = 0; i < vectors.size(); ++i) x.row(static_cast<Eigen::Index>(i)) = vectors[i].transpose();
      const std::vector<std::uint8_t> mask(vectors.size(), 1);
      Tape tape;
      const auto p = bind(tape, *model);
      const Encoded enc = encode_sequence(tape.constant(x), mask, p, model->shape);
      return masked_attention(ag::stack_rows(enc.y), enc.h_n, mask).output.value().col(0);
    }
  }
  return {};
}

void save_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra) {
  nlohmann::json config{{"shape", shape_json(model.shape)}, {"extra", extra}};
  tensorfile::TensorFile f{"TPCL", 1, tensorfile::Precision::F32, config.dump(), {}};
  for (std::size_t i = 0; i < model.params.count(); ++i) {
    f.tensors.push_back({model.params.names()[i], model.params.values[i]});
  }
  tensorfile::save(path, f);
}

Model load_model(const std::filesystem::path& path, nlohmann::json* extra) {
  const auto f = tensorfile::load(path, "TPCL");
  nlohmann::json config;
  try {
    config = nlohmann::json::parse(f.config);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(path.string() + ": checkpoint config is not JSON");
  }
  Model model = make_model(shape_from_json(config.at("shape")), 0);
  if (f.tensors.size() != model.params.count()) throw ValidationError(path.string() + ": parameter count mismatch");
  for (const auto& t : f.tensors) {
    if (!std::count(model.params.names().begin(), model.params.names().end(), t.name)) {
      throw ValidationError(path.string() + ": unexpected tensor " + t.name);
    }
    Mat& dst = model.params.value(t.name);
    if (dst.rows() != t.value.rows() || dst.cols() != t.value.cols()) {
      throw ValidationError(path.string() + ": shape mismatch for " + t.name);
    }
    dst = t.value;
  }
  if (extra) *extra = config.value("extra", nlohmann::json{});
  return model;
}

}  // namespace topical::model
