#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hydra/so3.hpp"

namespace hydra::nn {

/// Activations are column-major batches: one column per sample.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class LayerKind { kFc, kSelu, kRelu, kDropout, kResidualFc };

std::string_view to_string(LayerKind kind);
LayerKind layer_kind_from_string(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::kFc;
  int input_dim = 0;
  int output_dim = 0;
  double p = 0.0;  // dropout probability

  static LayerSpec fc(int in, int out) { return {LayerKind::kFc, in, out, 0.0}; }
  static LayerSpec selu(int dim) { return {LayerKind::kSelu, dim, dim, 0.0}; }
  static LayerSpec relu(int dim) { return {LayerKind::kRelu, dim, dim, 0.0}; }
  static LayerSpec dropout(int dim, double p) {
    return {LayerKind::kDropout, dim, dim, p};
  }
  /// y = x + relu(W x + b), W square.
  static LayerSpec residual_fc(int width) {
    return {LayerKind::kResidualFc, width, width, 0.0};
  }

  std::size_t parameter_count() const;
  bool operator==(const LayerSpec&) const = default;
};

enum class Mode { kTrain, kEval };

struct LayerTrace {
  Matrix input;
  Matrix aux;  // dropout mask (already scaled) or residual pre-activation
};

struct Trace {
  Mode mode = Mode::kEval;
  std::vector<LayerTrace> body;
  std::vector<std::vector<LayerTrace>> heads;
};

struct ForwardResult {
  std::vector<Matrix> outputs;  // one per head
  Trace trace;
};

/**
 * Feed-forward network with a shared body and any number of heads. All
 * weights live in one flat parameter vector so optimizers and gradient checks
 * can treat the model as a single point in parameter space.
 *
 * Fully connected layers are initialized LeCun-normal when followed by SELU
 * (or by nothing) and He-normal when followed by ReLU; biases start at zero.
 * Dropout is inverted, so eval mode never touches the RNG.
 */
class MlpModel {
 public:
  MlpModel(std::vector<LayerSpec> body, std::vector<std::vector<LayerSpec>> heads,
           std::uint64_t seed);

  /// Rebuilds a model from stored parameters (checkpoints).
  static MlpModel from_parameters(std::vector<LayerSpec> body,
                                  std::vector<std::vector<LayerSpec>> heads,
                                  std::uint64_t seed, Vector parameters);

  int input_dim() const;
  int body_output_dim() const;
  int num_heads() const { return static_cast<int>(heads_.size()); }
  int head_output_dim(int head) const;

  const std::vector<LayerSpec>& body() const { return body_; }
  const std::vector<std::vector<LayerSpec>>& heads() const { return heads_; }
  std::uint64_t seed() const { return seed_; }

  const Vector& parameters() const { return params_; }
  Vector& parameters() { return params_; }
  std::size_t parameter_count() const { return static_cast<std::size_t>(params_.size()); }

  ForwardResult forward(const Matrix& input, Mode mode, Rng& rng) const;

  /// Eval-mode forward without recording a trace.
  std::vector<Matrix> predict(const Matrix& input) const;

  /// Exact gradient of sum_h <output_grads[h], outputs[h]> with respect to
  /// the parameters. An empty gradient matrix means the head is unused.
  Vector backward(const Trace& trace, std::span<const Matrix> output_grads) const;

 private:
  MlpModel(std::vector<LayerSpec> body, std::vector<std::vector<LayerSpec>> heads,
           std::uint64_t seed, bool initialize);
  void validate_and_layout();
  void initialize_parameters();

  Matrix run_layer(const LayerSpec& spec, std::size_t offset, const Matrix& x,
                   Mode mode, Rng* rng, LayerTrace* trace) const;
  Matrix backprop_layer(const LayerSpec& spec, std::size_t offset,
                        const LayerTrace& trace, const Matrix& grad_out,
                        Vector& grad) const;

  std::vector<LayerSpec> body_;
  std::vector<std::vector<LayerSpec>> heads_;
  std::vector<std::size_t> body_offsets_;
  std::vector<std::vector<std::size_t>> head_offsets_;
  std::uint64_t seed_ = 0;
  Vector params_;
};

// ---------------------------------------------------------------------------
// Losses. Each returns the batch-mean loss and writes d loss / d output.
// ---------------------------------------------------------------------------

enum class LossKind { kMse, kGaussianNll1d, kSo3Nll };

/// mean_n |pred_n - target_n|^2
double mse_loss(const Matrix& pred, const Matrix& target, Matrix* grad);

/// mean_n [0.5 log(2 pi s^2) + 0.5 (y - mu)^2 / s^2], s = max(exp(u), sigma_min).
double gaussian_nll_1d(const Matrix& mean, const Matrix& log_sigma,
                       const Matrix& target, double sigma_min, Matrix* d_mean,
                       Matrix* d_log_sigma);

// ---------------------------------------------------------------------------
// Optimization
// ---------------------------------------------------------------------------

enum class OptimizerKind { kSgdMomentum, kAdam };

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  OptimizerKind optimizer = OptimizerKind::kSgdMomentum;
  int epochs = 100;
  int minibatch_size = 50;
  double dropout_p = 0.0;
  LossKind loss = LossKind::kMse;
  /// Rescales a minibatch gradient whose norm exceeds this; 0 disables it.
  double clip_norm = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct OptimizerState {
  Vector first;   // SGD velocity or Adam first moment
  Vector second;  // Adam second moment
  long steps = 0;
};

inline constexpr double kAdamBeta1 = 0.9;
inline constexpr double kAdamBeta2 = 0.999;
inline constexpr double kAdamEpsilon = 1e-8;

/// SGD: v <- mu v - lr g, theta <- theta + v. Adam uses the standard betas.
void step(OptimizerState& state, Vector& params, const Vector& grads,
          const TrainConfig& config);

/// Loss over a minibatch. Receives the sample indices of the batch and the
/// head outputs; fills one gradient matrix per head (empty = unused head).
using BatchLoss = std::function<double(std::span<const int> indices,
                                       std::span<const Matrix> outputs,
                                       std::vector<Matrix>& grads)>;

struct TrainHistory {
  std::vector<double> epoch_loss;
};

/// Minibatch training over the columns of inputs, reshuffled every epoch.
TrainHistory fit(MlpModel& model, const Matrix& inputs, const BatchLoss& loss,
                 const TrainConfig& config, Rng& rng);

// ---------------------------------------------------------------------------
// Gradient checking
// ---------------------------------------------------------------------------

/// Whole-batch loss used for gradient checks.
using LossFn = std::function<double(std::span<const Matrix> outputs,
                                    std::vector<Matrix>& grads)>;

struct GradCheckOptions {
  double fraction = 0.05;
  double step = 1e-5;
  /// In train mode the dropout masks are frozen by re-seeding every pass.
  Mode mode = Mode::kEval;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Central differences over a random subset of parameters. The relative
/// error is |a - n| / max(|a| + |n|, 1e-6).
GradCheckResult grad_check(const MlpModel& model, const LossFn& loss,
                           const Matrix& input,
                           const GradCheckOptions& options = {});

// ---------------------------------------------------------------------------
// Checkpoints: JSON with layer specs, seed and the parameter vector.
// ---------------------------------------------------------------------------

inline constexpr int kCheckpointVersion = 1;

std::string checkpoint_to_json(const MlpModel& model);
MlpModel checkpoint_from_json(std::string_view text);
void save_checkpoint(const MlpModel& model, const std::string& path);
MlpModel load_checkpoint(const std::string& path);

}  // namespace hydra::nn
