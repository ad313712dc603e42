#include "hydra/nnet.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace hydra::nn {
namespace {

constexpr double kSeluLambda = 1.0507009873554804934193349852946;
constexpr double kSeluAlpha = 1.6732632423543772848170429916717;

[[noreturn]] void dim_error(const std::string& what) {
  throw Error(ErrorCode::kDimMismatch, what);
}

// Activation that consumes this fc layer's output, skipping dropout.
LayerKind following_activation(const std::vector<LayerSpec>& layers, std::size_t i) {
  for (std::size_t j = i + 1; j < layers.size(); ++j) {
    if (layers[j].kind != LayerKind::kDropout) return layers[j].kind;
  }
  return LayerKind::kFc;
}

}  // namespace

std::string_view to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kFc: return "fc";
    case LayerKind::kSelu: return "selu";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kDropout: return "dropout";
    case LayerKind::kResidualFc: return "residual_fc_block";
  }
  return "?";
}

LayerKind layer_kind_from_string(std::string_view name) {
  for (LayerKind k : {LayerKind::kFc, LayerKind::kSelu, LayerKind::kRelu,
                      LayerKind::kDropout, LayerKind::kResidualFc}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::kParseError, "unknown layer kind '" + std::string(name) + "'");
}

std::size_t LayerSpec::parameter_count() const {
  switch (kind) {
    case LayerKind::kFc:
      return static_cast<std::size_t>(output_dim) * (input_dim + 1);
    case LayerKind::kResidualFc:
      return static_cast<std::size_t>(input_dim) * (input_dim + 1);
    default:
      return 0;
  }
}

// ---------------------------------------------------------------------------
// MlpModel
// ---------------------------------------------------------------------------

MlpModel::MlpModel(std::vector<LayerSpec> body,
                   std::vector<std::vector<LayerSpec>> heads, std::uint64_t seed)
    : MlpModel(std::move(body), std::move(heads), seed, true) {}

MlpModel::MlpModel(std::vector<LayerSpec> body,
                   std::vector<std::vector<LayerSpec>> heads, std::uint64_t seed,
                   bool initialize)
    : body_(std::move(body)), heads_(std::move(heads)), seed_(seed) {
  validate_and_layout();
  if (initialize) initialize_parameters();
}

MlpModel MlpModel::from_parameters(std::vector<LayerSpec> body,
                                   std::vector<std::vector<LayerSpec>> heads,
                                   std::uint64_t seed, Vector parameters) {
  MlpModel model(std::move(body), std::move(heads), seed, false);
  if (parameters.size() != model.params_.size()) {
    std::ostringstream os;
    os << "checkpoint has " << parameters.size() << " parameters, layers need "
       << model.params_.size();
    dim_error(os.str());
  }
  model.params_ = std::move(parameters);
  return model;
}

void MlpModel::validate_and_layout() {
  if (body_.empty()) dim_error("model body has no layers");
  if (heads_.empty()) dim_error("model has no heads");

  std::size_t offset = 0;
  auto check_chain = [&](const std::vector<LayerSpec>& layers, int in_dim,
                         std::vector<std::size_t>& offsets) {
    int dim = in_dim;
    for (const auto& l : layers) {
      if (l.input_dim != dim || l.input_dim <= 0 || l.output_dim <= 0) {
        std::ostringstream os;
        os << to_string(l.kind) << " layer expects " << l.input_dim
           << " inputs but receives " << dim;
        dim_error(os.str());
      }
      if (l.kind != LayerKind::kFc && l.input_dim != l.output_dim) {
        dim_error(std::string(to_string(l.kind)) + " layer must preserve width");
      }
      if (l.kind == LayerKind::kDropout && !(l.p >= 0.0 && l.p < 1.0)) {
        throw Error(ErrorCode::kInvalidConfig, "dropout probability outside [0, 1)");
      }
      offsets.push_back(offset);
      offset += l.parameter_count();
      dim = l.output_dim;
    }
    return dim;
  };

  body_offsets_.clear();
  head_offsets_.assign(heads_.size(), {});
  const int body_out = check_chain(body_, body_.front().input_dim, body_offsets_);
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    if (heads_[h].empty()) dim_error("head has no layers");
    check_chain(heads_[h], body_out, head_offsets_[h]);
  }
  params_ = Vector::Zero(static_cast<Eigen::Index>(offset));
}

void MlpModel::initialize_parameters() {
  Rng rng(seed_);
  auto init_layers = [&](const std::vector<LayerSpec>& layers,
                         const std::vector<std::size_t>& offsets) {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.kind != LayerKind::kFc && l.kind != LayerKind::kResidualFc) continue;
      double gain = 1.0;  // LeCun
      if (l.kind == LayerKind::kResidualFc ||
          following_activation(layers, i) == LayerKind::kRelu) {
        gain = 2.0;  // He
      }
      std::normal_distribution<double> normal(0.0, std::sqrt(gain / l.input_dim));
      const std::size_t nw = static_cast<std::size_t>(l.output_dim) * l.input_dim;
      for (std::size_t k = 0; k < nw; ++k) params_[offsets[i] + k] = normal(rng);
    }
  };
  init_layers(body_, body_offsets_);
  for (std::size_t h = 0; h < heads_.size(); ++h) init_layers(heads_[h], head_offsets_[h]);
}

int MlpModel::input_dim() const { return body_.front().input_dim; }
int MlpModel::body_output_dim() const { return body_.back().output_dim; }
int MlpModel::head_output_dim(int head) const {
  return heads_.at(static_cast<std::size_t>(head)).back().output_dim;
}

Matrix MlpModel::run_layer(const LayerSpec& spec, std::size_t offset,
                           const Matrix& x, Mode mode, Rng* rng,
                           LayerTrace* trace) const {
  if (trace) trace->input = x;
  switch (spec.kind) {
    case LayerKind::kFc: {
      Eigen::Map<const Matrix> W(params_.data() + offset, spec.output_dim, spec.input_dim);
      Eigen::Map<const Vector> b(params_.data() + offset + W.size(), spec.output_dim);
      Matrix y = W * x;
      y.colwise() += b;
      return y;
    }
    case LayerKind::kSelu: {
      const auto a = x.array();
      const Eigen::ArrayXXd e = a.min(0.0).exp();
      Matrix y = (a > 0.0).select(kSeluLambda * a, (kSeluLambda * kSeluAlpha) * (e - 1.0));
      if (trace) trace->aux = y;
      return y;
    }
    case LayerKind::kRelu:
      return x.cwiseMax(0.0);
    case LayerKind::kDropout: {
      if (mode == Mode::kEval || spec.p == 0.0) {
        if (trace) trace->aux.resize(0, 0);
        return x;
      }
      std::uniform_real_distribution<double> uniform(0.0, 1.0);
      const double keep = 1.0 - spec.p;
      Matrix mask(x.rows(), x.cols());
      for (Eigen::Index j = 0; j < mask.cols(); ++j) {
        for (Eigen::Index i = 0; i < mask.rows(); ++i) {
          mask(i, j) = uniform(*rng) < keep ? 1.0 / keep : 0.0;
        }
      }
      Matrix y = x.cwiseProduct(mask);
      if (trace) trace->aux = std::move(mask);
      return y;
    }
    case LayerKind::kResidualFc: {
      Eigen::Map<const Matrix> W(params_.data() + offset, spec.output_dim, spec.input_dim);
      Eigen::Map<const Vector> b(params_.data() + offset + W.size(), spec.output_dim);
      Matrix z = W * x;
      z.colwise() += b;
      Matrix y = x + z.cwiseMax(0.0);
      if (trace) trace->aux = std::move(z);
      return y;
    }
  }
  return x;
}

Matrix MlpModel::backprop_layer(const LayerSpec& spec, std::size_t offset,
                                const LayerTrace& trace, const Matrix& g,
                                Vector& grad) const {
  const Matrix& x = trace.input;
  switch (spec.kind) {
    case LayerKind::kFc: {
      Eigen::Map<const Matrix> W(params_.data() + offset, spec.output_dim, spec.input_dim);
      Eigen::Map<Matrix> gW(grad.data() + offset, spec.output_dim, spec.input_dim);
      Eigen::Map<Vector> gb(grad.data() + offset + W.size(), spec.output_dim);
      gW.noalias() = g * x.transpose();
      gb = g.rowwise().sum();
      return W.transpose() * g;
    }
    case LayerKind::kSelu:
      // lambda alpha e^x = y + lambda alpha on the negative branch
      return (x.array() > 0.0)
          .select(kSeluLambda * g.array(),
                  g.array() * (trace.aux.array() + kSeluLambda * kSeluAlpha))
          .matrix();
    case LayerKind::kRelu:
      return g.cwiseProduct(
          x.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
    case LayerKind::kDropout:
      if (trace.aux.size() == 0) return g;
      return g.cwiseProduct(trace.aux);
    case LayerKind::kResidualFc: {
      Eigen::Map<const Matrix> W(params_.data() + offset, spec.output_dim, spec.input_dim);
      Eigen::Map<Matrix> gW(grad.data() + offset, spec.output_dim, spec.input_dim);
      Eigen::Map<Vector> gb(grad.data() + offset + W.size(), spec.output_dim);
      const Matrix gz = g.cwiseProduct(
          trace.aux.unaryExpr([](double v) { return v > 0.0 ? 1.0 : 0.0; }));
      gW.noalias() = gz * x.transpose();
      gb = gz.rowwise().sum();
      Matrix gx = g;
      gx.noalias() += W.transpose() * gz;
      return gx;
    }
  }
  return g;
}

ForwardResult MlpModel::forward(const Matrix& input, Mode mode, Rng& rng) const {
  if (input.rows() != input_dim()) {
    std::ostringstream os;
    os << "input has " << input.rows() << " rows, model expects " << input_dim();
    dim_error(os.str());
  }
  ForwardResult result;
  result.trace.mode = mode;
  result.trace.body.resize(body_.size());
  Matrix x = input;
  for (std::size_t i = 0; i < body_.size(); ++i) {
    x = run_layer(body_[i], body_offsets_[i], x, mode, &rng, &result.trace.body[i]);
  }
  result.trace.heads.resize(heads_.size());
  result.outputs.reserve(heads_.size());
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    result.trace.heads[h].resize(heads_[h].size());
    Matrix y = x;
    for (std::size_t i = 0; i < heads_[h].size(); ++i) {
      y = run_layer(heads_[h][i], head_offsets_[h][i], y, mode, &rng,
                    &result.trace.heads[h][i]);
    }
    result.outputs.push_back(std::move(y));
  }
  return result;
}

std::vector<Matrix> MlpModel::predict(const Matrix& input) const {
  if (input.rows() != input_dim()) {
    std::ostringstream os;
    os << "input has " << input.rows() << " rows, model expects " << input_dim();
    dim_error(os.str());
  }
  Matrix x = input;
  for (std::size_t i = 0; i < body_.size(); ++i) {
    x = run_layer(body_[i], body_offsets_[i], x, Mode::kEval, nullptr, nullptr);
  }
  std::vector<Matrix> outputs;
  outputs.reserve(heads_.size());
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    Matrix y = x;
    for (std::size_t i = 0; i < heads_[h].size(); ++i) {
      y = run_layer(heads_[h][i], head_offsets_[h][i], y, Mode::kEval, nullptr, nullptr);
    }
    outputs.push_back(std::move(y));
  }
  return outputs;
}

Vector MlpModel::backward(const Trace& trace, std::span<const Matrix> output_grads) const {
  if (output_grads.size() != heads_.size()) {
    dim_error("one output gradient per head is required");
  }
  // Every parameter block is written exactly once below, except those of
  // skipped heads.
  Vector grad(params_.size());
  const Eigen::Index batch =
      trace.body.empty() ? 0 : trace.body.front().input.cols();
  Matrix body_grad = Matrix::Zero(body_output_dim(), batch);
  for (std::size_t h = 0; h < heads_.size(); ++h) {
    if (output_grads[h].size() == 0) {
      for (std::size_t i = 0; i < heads_[h].size(); ++i) {
        grad.segment(static_cast<Eigen::Index>(head_offsets_[h][i]),
                     static_cast<Eigen::Index>(heads_[h][i].parameter_count()))
            .setZero();
      }
      continue;
    }
    if (output_grads[h].rows() != head_output_dim(static_cast<int>(h)) ||
        output_grads[h].cols() != batch) {
      dim_error("output gradient shape does not match head output");
    }
    Matrix g = output_grads[h];
    for (std::size_t i = heads_[h].size(); i-- > 0;) {
      g = backprop_layer(heads_[h][i], head_offsets_[h][i], trace.heads[h][i], g, grad);
    }
    body_grad += g;
  }
  for (std::size_t i = body_.size(); i-- > 0;) {
    body_grad = backprop_layer(body_[i], body_offsets_[i], trace.body[i], body_grad, grad);
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

double mse_loss(const Matrix& pred, const Matrix& target, Matrix* grad) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    dim_error("mse: prediction and target shapes differ");
  }
  const double n = static_cast<double>(pred.cols());
  const Matrix diff = pred - target;
  if (grad) *grad = (2.0 / n) * diff;
  return diff.squaredNorm() / n;
}

double gaussian_nll_1d(const Matrix& mean, const Matrix& log_sigma,
                       const Matrix& target, double sigma_min, Matrix* d_mean,
                       Matrix* d_log_sigma) {
  if (mean.size() != target.size() || log_sigma.size() != target.size()) {
    dim_error("gaussian_nll_1d: shape mismatch");
  }
  const double n = static_cast<double>(target.size());
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  if (d_mean) d_mean->resize(mean.rows(), mean.cols());
  if (d_log_sigma) d_log_sigma->resize(log_sigma.rows(), log_sigma.cols());
  double total = 0.0;
  for (Eigen::Index i = 0; i < target.size(); ++i) {
    const double raw = std::exp(log_sigma(i));
    const bool floored = !(raw > sigma_min);
    const double sigma = floored ? sigma_min : raw;
    const double var = sigma * sigma;
    const double r = mean(i) - target(i);
    total += half_log_2pi + std::log(sigma) + 0.5 * r * r / var;
    if (d_mean) (*d_mean)(i) = r / var / n;
    if (d_log_sigma) (*d_log_sigma)(i) = floored ? 0.0 : (1.0 - r * r / var) / n;
  }
  return total / n;
}

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::kInvalidConfig, "learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw Error(ErrorCode::kInvalidConfig, "momentum outside [0, 1)");
  if (epochs < 1) throw Error(ErrorCode::kInvalidConfig, "epochs must be >= 1");
  if (minibatch_size < 1) throw Error(ErrorCode::kInvalidConfig, "minibatch_size must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw Error(ErrorCode::kInvalidConfig, "dropout_p outside [0, 1)");
  if (!(clip_norm >= 0.0)) throw Error(ErrorCode::kInvalidConfig, "clip_norm must be non-negative");
}

void step(OptimizerState& state, Vector& params, const Vector& grads,
          const TrainConfig& config) {
  if (grads.size() != params.size()) dim_error("gradient and parameter sizes differ");
  if (state.first.size() != params.size()) {
    state.first = Vector::Zero(params.size());
    state.second = Vector::Zero(params.size());
    state.steps = 0;
  }
  ++state.steps;
  if (config.optimizer == OptimizerKind::kSgdMomentum) {
    state.first = config.momentum * state.first - config.learning_rate * grads;
    params += state.first;
    return;
  }
  state.first = kAdamBeta1 * state.first + (1.0 - kAdamBeta1) * grads;
  state.second = kAdamBeta2 * state.second + (1.0 - kAdamBeta2) * grads.cwiseAbs2();
  const double c1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.steps));
  params.array() -= config.learning_rate * (state.first.array() / c1) /
                    ((state.second.array() / c2).sqrt() + kAdamEpsilon);
}

TrainHistory fit(MlpModel& model, const Matrix& inputs, const BatchLoss& loss,
                 const TrainConfig& config, Rng& rng) {
  config.validate();
  const int n = static_cast<int>(inputs.cols());
  if (n == 0) throw Error(ErrorCode::kEmptyDataset, "no training samples");
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  OptimizerState state;
  TrainHistory history;
  std::vector<Matrix> grads;
  Matrix batch;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (int start = 0; start < n; start += config.minibatch_size) {
      const int size = std::min(config.minibatch_size, n - start);
      std::span<const int> idx(order.data() + start, static_cast<std::size_t>(size));
      batch.resize(inputs.rows(), size);
      for (int j = 0; j < size; ++j) batch.col(j) = inputs.col(idx[static_cast<std::size_t>(j)]);
      ForwardResult fr = model.forward(batch, Mode::kTrain, rng);
      grads.assign(fr.outputs.size(), Matrix());
      const double l = loss(idx, fr.outputs, grads);
      epoch_loss += l * size;
      Vector g = model.backward(fr.trace, grads);
      if (config.clip_norm > 0.0) {
        const double norm = g.norm();
        if (norm > config.clip_norm) g *= config.clip_norm / norm;
      }
      step(state, model.parameters(), g, config);
    }
    history.epoch_loss.push_back(epoch_loss / n);
  }
  return history;
}

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

GradCheckResult grad_check(const MlpModel& model, const LossFn& loss,
                           const Matrix& input, const GradCheckOptions& options) {
  MlpModel probe = model;
  auto evaluate = [&](std::vector<Matrix>& grads) {
    Rng rng(options.seed);
    ForwardResult fr = probe.forward(input, options.mode, rng);
    grads.assign(fr.outputs.size(), Matrix());
    const double value = loss(fr.outputs, grads);
    return std::make_pair(value, std::move(fr.trace));
  };

  std::vector<Matrix> grads;
  auto [value, trace] = evaluate(grads);
  (void)value;
  const Vector analytic = probe.backward(trace, grads);

  const auto total = static_cast<std::size_t>(probe.parameter_count());
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng pick(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(idx.begin(), idx.end(), pick);
  const auto count = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::ceil(options.fraction * static_cast<double>(total))),
      std::size_t{1}, total);

  GradCheckResult result;
  std::vector<Matrix> scratch;
  for (std::size_t k = 0; k < count; ++k) {
    const auto i = static_cast<Eigen::Index>(idx[k]);
    const double saved = probe.parameters()[i];
    probe.parameters()[i] = saved + options.step;
    const double plus = evaluate(scratch).first;
    probe.parameters()[i] = saved - options.step;
    const double minus = evaluate(scratch).first;
    probe.parameters()[i] = saved;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
    result.max_relative_error = std::max(result.max_relative_error, rel);
  }
  result.checked = count;
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

namespace {

nlohmann::json layers_to_json(const std::vector<LayerSpec>& layers) {
  auto out = nlohmann::json::array();
  for (const auto& l : layers) {
    out.push_back({{"kind", to_string(l.kind)},
                   {"input_dim", l.input_dim},
                   {"output_dim", l.output_dim},
                   {"p", l.p}});
  }
  return out;
}

std::vector<LayerSpec> layers_from_json(const nlohmann::json& j) {
  std::vector<LayerSpec> layers;
  for (const auto& item : j) {
    layers.push_back({layer_kind_from_string(item.at("kind").get<std::string>()),
                      item.at("input_dim").get<int>(), item.at("output_dim").get<int>(),
                      item.at("p").get<double>()});
  }
  return layers;
}

}  // namespace

std::string checkpoint_to_json(const MlpModel& model) {
  if (!model.parameters().allFinite()) {
    throw Error(ErrorCode::kInvalidConfig, "cannot checkpoint non-finite parameters");
  }
  nlohmann::json j;
  j["format"] = "hydra-mlp";
  j["version"] = kCheckpointVersion;
  j["seed"] = model.seed();
  j["body"] = layers_to_json(model.body());
  j["heads"] = nlohmann::json::array();
  for (const auto& h : model.heads()) j["heads"].push_back(layers_to_json(h));
  const Vector& p = model.parameters();
  j["parameters"] = std::vector<double>(p.data(), p.data() + p.size());
  return j.dump();
}

MlpModel checkpoint_from_json(std::string_view text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("format") != "hydra-mlp" || j.at("version").get<int>() != kCheckpointVersion) {
      throw Error(ErrorCode::kParseError, "unsupported checkpoint format/version");
    }
    std::vector<std::vector<LayerSpec>> heads;
    for (const auto& h : j.at("heads")) heads.push_back(layers_from_json(h));
    const auto values = j.at("parameters").get<std::vector<double>>();
    Vector params = Eigen::Map<const Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
    return MlpModel::from_parameters(layers_from_json(j.at("body")), std::move(heads),
                                     j.at("seed").get<std::uint64_t>(), std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("checkpoint: ") + e.what());
  }
}

void save_checkpoint(const MlpModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kParseError, "cannot write " + path);
  out << checkpoint_to_json(model);
}

MlpModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kParseError, "cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return checkpoint_from_json(ss.str());
}

}  // namespace hydra::nn
