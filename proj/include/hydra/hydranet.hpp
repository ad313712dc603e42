#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hydra/averaging.hpp"
#include "hydra/nnet.hpp"
#include "hydra/uncertainty.hpp"

namespace hydra {

// ---------------------------------------------------------------------------
// One-dimensional uncertainty estimators
// ---------------------------------------------------------------------------

enum class Method1D {
  kDirectSigma,
  kMcDropout,
  kBagging,
  kHydraHeadsOnly,
  kHydraFull,
};

inline constexpr Method1D kAllMethods1D[] = {
    Method1D::kDirectSigma, Method1D::kMcDropout, Method1D::kBagging,
    Method1D::kHydraHeadsOnly, Method1D::kHydraFull};

std::string_view to_string(Method1D method);
Method1D method_1d_from_string(std::string_view name);

struct Dataset1D {
  std::vector<double> x;
  std::vector<double> y;
};

struct Options1D {
  int width = 20;
  int heads = 10;        // HydraNet mean heads
  int bag_models = 10;   // bagging ensemble size
  int mc_passes = 50;    // stochastic passes for MC dropout
  /// Zero-mean Gaussian noise added to each head's regression target during
  /// training; 0 disables it.
  double target_noise_sigma = 0.0;
  double sigma_min = kSigmaMin;

  void validate(Method1D method) const;
};

/// Gradient-norm cap for MC dropout and the NLL-trained estimators. Plain
/// SGD at their tabulated learning rates overflows without it.
inline constexpr double kClipNorm1D = 10.0;

/// Learning rate, momentum and dropout per method (SGD with momentum,
/// 3000 epochs, minibatches of 50).
nn::TrainConfig default_train_config_1d(Method1D method);

/// Methods with a variance head keep it as head 0.
bool has_sigma_head(Method1D method);

struct Estimator1D {
  Method1D method = Method1D::kHydraFull;
  std::vector<nn::MlpModel> models;
  nn::TrainConfig config;
  Options1D options;
};

/// Untrained estimator with freshly initialized model(s).
Estimator1D make_estimator_1d(Method1D method, const nn::TrainConfig& config,
                              const Options1D& options, Rng& rng);

Estimator1D train_1d(Method1D method, const Dataset1D& data,
                     const nn::TrainConfig& config, const Options1D& options,
                     Rng& rng);

struct Prediction1D {
  double mean = 0.0;
  double var_e = 0.0;  // spread of heads / passes / models (unbiased)
  double var_a = 0.0;  // directly regressed variance, 0 without a sigma head
  double var = 0.0;    // var_e + var_a
};

/// rng is consumed only by MC dropout.
std::vector<Prediction1D> predict_1d(const Estimator1D& estimator,
                                     std::span<const double> xs, Rng& rng);

/// Unbiased mean / variance of ensemble outputs plus an optional aleatoric
/// term, exactly as the estimators combine them.
Prediction1D combine_outputs_1d(std::span<const double> outputs, double var_a);

// ---------------------------------------------------------------------------
// SO(3) HydraNet
// ---------------------------------------------------------------------------

struct So3Options {
  int heads = 25;
  int body_width = 128;
  int residual_blocks = 5;
  int head_width = 64;
  double head_dropout = 0.0;
  /// Tangent-space std (rad) of per-head target noise; 0 disables it.
  double target_noise_sigma = 0.0;
  double sigma_min = kSigmaMin;

  void validate() const;
};

struct So3Dataset {
  nn::Matrix inputs;  // one column per sample
  std::vector<UnitQuaternion> targets;
};

/// Head 0 regresses covariance logits (3), heads 1..H regress raw
/// quaternions (4).
struct HydraNetSO3 {
  nn::MlpModel model;
  int heads = 0;
  So3Options options;
};

HydraNetSO3 make_hydranet_so3(int input_dim, const So3Options& options,
                              std::uint64_t seed);

/// Sum over quaternion heads of the batch-mean rotation NLL, all heads
/// sharing the covariance head. Fills gradients for every head.
double hydranet_so3_loss(std::span<const nn::Matrix> outputs,
                         std::span<const UnitQuaternion> targets,
                         double sigma_min, std::vector<nn::Matrix>& grads);

struct So3TrainResult {
  HydraNetSO3 net;
  nn::TrainHistory history;
};

/// Throws kNonUnitTarget if a target deviates from unit norm by > 1e-6.
So3TrainResult train_so3(const So3Dataset& data, const nn::TrainConfig& config,
                         const So3Options& options, Rng& rng);

struct So3Prediction {
  RotationBelief belief;
  std::vector<UnitQuaternion> head_quats;
  bool dispersion_warning = false;
};

/// Mean of the head quaternions, their sample covariance about that mean,
/// and the regressed covariance combined into one belief.
So3Prediction belief_from_heads(std::span<const UnitQuaternion> head_quats,
                                const Vec3& logits, double sigma_min = kSigmaMin);

std::vector<So3Prediction> predict_so3(const HydraNetSO3& net,
                                       const nn::Matrix& inputs);

// ---------------------------------------------------------------------------
// Gradient-check suite
// ---------------------------------------------------------------------------

struct NamedGradCheck {
  std::string name;
  nn::GradCheckResult result;
};

/// Central-difference checks of every layer kind (MSE loss, dropout in train
/// mode), the 1D Gaussian NLL and the SO(3) HydraNet NLL on small random
/// models. Every parameter is checked.
std::vector<NamedGradCheck> standard_grad_checks(std::uint64_t seed);

}  // namespace hydra
