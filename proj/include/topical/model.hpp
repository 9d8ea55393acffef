#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "topical/autograd.hpp"
#include "topical/embedder.hpp"

namespace topical::model {

using autograd::Mat;
using autograd::Tape;
using autograd::Var;

enum class EncoderKind { BiGru, BiLstm, Mlp };
enum class Reduction { Pca, Linear };
// How script vectors become one repository vector before the classifier.
enum class Aggregation { Attention, Mean, Concat };

std::string_view to_string(EncoderKind k);
std::string_view to_string(Reduction r);
std::string_view to_string(Aggregation a);
EncoderKind encoder_from_string(std::string_view s);
Reduction reduction_from_string(std::string_view s);
Aggregation aggregation_from_string(std::string_view s);

struct ModelShape {
  EncoderKind encoder = EncoderKind::BiGru;
  Aggregation aggregation = Aggregation::Attention;
  Reduction reduction = Reduction::Pca;
  std::size_t domain_width = 64;  // per-domain width entering the encoder
  std::size_t raw_width = 768;    // per-domain tensor width when reduction is linear
  std::size_t hidden = 48;        // per direction
  std::size_t n_topics = 0;
  std::size_t max_scripts = 5;    // slot count, used by concat aggregation
  std::size_t fused_width = 0;    // pca only: explicit encoder input width; 0 means 3 * domain_width

  [[nodiscard]] std::size_t input_width() const {
    return reduction == Reduction::Pca && fused_width ? fused_width : 3 * domain_width;
  }
  [[nodiscard]] std::size_t tensor_width() const { return reduction == Reduction::Pca ? input_width() : 3 * raw_width; }
  [[nodiscard]] std::size_t repo_width() const;
};

nlohmann::json shape_json(const ModelShape& s);
ModelShape shape_from_json(const nlohmann::json& j);

class Params {
 public:
  void add(std::string name, Mat value);
  [[nodiscard]] const Mat& value(const std::string& name) const;
  Mat& value(const std::string& name);
  Mat& grad(const std::string& name);

  void zero_grad();
  [[nodiscard]] std::size_t count() const { return names_.size(); }
  [[nodiscard]] const std::vector<std::string>& names() const { return names_; }
  [[nodiscard]] std::size_t index(const std::string& name) const;

  std::vector<Mat> values;
  std::vector<Mat> grads;
  std::vector<Mat> m;
  std::vector<Mat> v;
  std::uint64_t step = 0;

 private:
  std::vector<std::string> names_;
  std::map<std::string, std::size_t> index_;
};

struct Model {
  ModelShape shape;
  Params params;
};

// Uniform(+-1/sqrt(fan_in)) weights, zero biases, drawn in parameter order.
Model make_model(const ModelShape& shape, std::uint64_t seed);

// Binds every parameter onto the tape; gradients flow into model.params.grads.
std::map<std::string, Var> bind(Tape& tape, Model& model);

Var gru_cell(Var x, Var h, const std::map<std::string, Var>& p, const std::string& prefix);

struct LstmState {
  Var h;
  Var c;
};
LstmState lstm_cell(Var x, LstmState prev, const std::map<std::string, Var>& p, const std::string& prefix);

struct Encoded {
  std::vector<Var> y;  // one 2H column per position
  Var h_n;
};
Encoded encode_sequence(Var x, const std::vector<std::uint8_t>& mask, const std::map<std::string, Var>& p,
                        const ModelShape& shape);

struct Attended {
  Var output;
  Var weights;
};
Attended masked_attention(Var y, Var h_n, const std::vector<std::uint8_t>& mask);

struct Forward {
  Var input;     // n x 3w after any learned reduction
  Var repo_vec;
  Var logits;
  Var weights;   // attention weights, attention aggregation only
};
Forward forward(Tape& tape, Model& model, const Mat& x, const std::vector<std::uint8_t>& mask);

Eigen::VectorXd predict(Model& model, const embedder::RepoTensor& t);
Eigen::VectorXd repo_vector(Model& model, const embedder::RepoTensor& t);

// Adds d(loss)/d(params) into the gradient buffers and returns the loss.
double accumulate_gradients(Model& model, const embedder::RepoTensor& t);

struct TrainConfig {
  double learning_rate = 0.002;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t batch_size = 16;
  std::size_t epochs = 50;
  std::uint64_t seed = 0;
  EncoderKind encoder = EncoderKind::BiGru;
  Reduction reduction = Reduction::Pca;
  Aggregation aggregation = Aggregation::Attention;
  std::size_t hidden = 48;
};

nlohmann::json train_config_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

void adamw_step(Params& params, const TrainConfig& config);

struct TrainResult {
  Model model;
  std::vector<double> epoch_loss;
};

// Shapes are inferred from the data; all tensors must share n, width and
// label count. Parameters are rounded to f32 at the end so a checkpoint
// round trip is exact.
TrainResult train(const std::vector<embedder::RepoTensor>& data, const TrainConfig& config,
                  std::size_t domain_width = 64);

// Generic set aggregation over externally supplied item vectors.
Eigen::VectorXd aggregate_vectors(const std::vector<Eigen::VectorXd>& vectors, Aggregation mode,
                                  std::size_t max_count = 0, Model* model = nullptr);

void save_model(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra = {});
Model load_model(const std::filesystem::path& path, nlohmann::json* extra = nullptr);

}  // namespace topical::model
