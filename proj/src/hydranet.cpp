#include "hydra/hydranet.hpp"

#include <cmath>
#include <sstream>

namespace hydra {
namespace {

using nn::LayerSpec;
using nn::Matrix;

std::vector<LayerSpec> selu_stack(int in, int width, int fc_layers, double dropout_p) {
  std::vector<LayerSpec> layers;
  int dim = in;
  for (int i = 0; i < fc_layers; ++i) {
    layers.push_back(LayerSpec::fc(dim, width));
    layers.push_back(LayerSpec::selu(width));
    if (dropout_p > 0.0) layers.push_back(LayerSpec::dropout(width, dropout_p));
    dim = width;
  }
  return layers;
}

nn::MlpModel build_model_1d(Method1D method, const nn::TrainConfig& config,
                            const Options1D& opt, std::uint64_t seed) {
  const int w = opt.width;
  switch (method) {
    case Method1D::kDirectSigma:
      return nn::MlpModel(selu_stack(1, w, 3, 0.0),
                          {{LayerSpec::fc(w, 1)}, {LayerSpec::fc(w, 1)}}, seed);
    case Method1D::kMcDropout:
      return nn::MlpModel(selu_stack(1, w, 3, config.dropout_p),
                          {{LayerSpec::fc(w, 1)}}, seed);
    case Method1D::kBagging:
      return nn::MlpModel(selu_stack(1, w, 3, 0.0), {{LayerSpec::fc(w, 1)}}, seed);
    case Method1D::kHydraHeadsOnly:
    case Method1D::kHydraFull: {
      std::vector<std::vector<LayerSpec>> heads;
      const int count = opt.heads + (method == Method1D::kHydraFull ? 1 : 0);
      for (int h = 0; h < count; ++h) {
        auto head = selu_stack(w, w, 1, config.dropout_p);
        head.push_back(LayerSpec::fc(w, 1));
        heads.push_back(std::move(head));
      }
      return nn::MlpModel(selu_stack(1, w, 2, config.dropout_p), std::move(heads), seed);
    }
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown 1D method");
}

Matrix row_of(std::span<const double> values) {
  Matrix m(1, static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) m(0, static_cast<Eigen::Index>(i)) = values[i];
  return m;
}

}  // namespace

std::string_view to_string(Method1D method) {
  switch (method) {
    case Method1D::kDirectSigma: return "direct_sigma";
    case Method1D::kMcDropout: return "mc_dropout";
    case Method1D::kBagging: return "bagging";
    case Method1D::kHydraHeadsOnly: return "hydranet_heads_only";
    case Method1D::kHydraFull: return "hydranet_full";
  }
  return "?";
}

Method1D method_1d_from_string(std::string_view name) {
  for (Method1D m : kAllMethods1D) {
    if (to_string(m) == name) return m;
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown 1D method '" + std::string(name) + "'");
}

void Options1D::validate(Method1D method) const {
  if (width < 1) throw Error(ErrorCode::kInvalidConfig, "width must be >= 1");
  if ((method == Method1D::kHydraFull || method == Method1D::kHydraHeadsOnly) && heads < 2) {
    throw Error(ErrorCode::kInvalidConfig, "HydraNet needs at least 2 heads");
  }
  if (method == Method1D::kBagging && bag_models < 2) {
    throw Error(ErrorCode::kInvalidConfig, "bagging needs at least 2 models");
  }
  if (method == Method1D::kMcDropout && mc_passes < 2) {
    throw Error(ErrorCode::kInvalidConfig, "MC dropout needs at least 2 passes");
  }
  if (!(target_noise_sigma >= 0.0) || !(sigma_min > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "noise and sigma floor must be non-negative");
  }
}

nn::TrainConfig default_train_config_1d(Method1D method) {
  nn::TrainConfig c;
  c.optimizer = nn::OptimizerKind::kSgdMomentum;
  c.epochs = 3000;
  c.minibatch_size = 50;
  c.dropout_p = 0.0;
  switch (method) {
    case Method1D::kMcDropout:
      c.learning_rate = 0.05;
      c.momentum = 0.5;
      c.dropout_p = 0.03;
      c.loss = nn::LossKind::kMse;
      c.clip_norm = kClipNorm1D;
      break;
    case Method1D::kDirectSigma:
      c.learning_rate = 0.0001;
      c.momentum = 0.0;
      c.loss = nn::LossKind::kGaussianNll1d;
      c.clip_norm = kClipNorm1D;
      break;
    case Method1D::kBagging:
    case Method1D::kHydraHeadsOnly:
      c.learning_rate = 0.01;
      c.momentum = 0.9;
      c.loss = nn::LossKind::kMse;
      break;
    case Method1D::kHydraFull:
      c.learning_rate = 0.01;
      c.momentum = 0.1;
      c.loss = nn::LossKind::kGaussianNll1d;
      c.clip_norm = kClipNorm1D;
      break;
  }
  return c;
}

bool has_sigma_head(Method1D method) {
  return method == Method1D::kDirectSigma || method == Method1D::kHydraFull;
}

Estimator1D make_estimator_1d(Method1D method, const nn::TrainConfig& config,
                              const Options1D& options, Rng& rng) {
  options.validate(method);
  config.validate();
  Estimator1D est{method, {}, config, options};
  const int count = method == Method1D::kBagging ? options.bag_models : 1;
  for (int m = 0; m < count; ++m) {
    est.models.push_back(build_model_1d(method, config, options, rng()));
  }
  return est;
}

Estimator1D train_1d(Method1D method, const Dataset1D& data,
                     const nn::TrainConfig& config, const Options1D& options,
                     Rng& rng) {
  if (data.x.empty() || data.x.size() != data.y.size()) {
    throw Error(ErrorCode::kEmptyDataset, "1D training set is empty or ragged");
  }
  Estimator1D est = make_estimator_1d(method, config, options, rng);
  const double sigma_min = options.sigma_min;
  const bool sigma_head = has_sigma_head(method);
  const bool nll = config.loss == nn::LossKind::kGaussianNll1d;
  if (nll && !sigma_head) {
    throw Error(ErrorCode::kInvalidConfig, "Gaussian NLL requires a variance head");
  }
  std::normal_distribution<double> normal(0.0, 1.0);

  for (auto& model : est.models) {
    Dataset1D train = data;
    if (method == Method1D::kBagging) {
      std::uniform_int_distribution<std::size_t> pick(0, data.x.size() - 1);
      for (std::size_t i = 0; i < data.x.size(); ++i) {
        const std::size_t j = pick(rng);
        train.x[i] = data.x[j];
        train.y[i] = data.y[j];
      }
    }
    const Matrix inputs = row_of(train.x);

    nn::BatchLoss loss = [&](std::span<const int> idx, std::span<const Matrix> outputs,
                             std::vector<Matrix>& grads) {
      const auto n = static_cast<Eigen::Index>(idx.size());
      Matrix target(1, n);
      for (Eigen::Index j = 0; j < n; ++j) target(0, j) = train.y[static_cast<std::size_t>(idx[j])];
      const std::size_t first_mean = sigma_head ? 1 : 0;
      double total = 0.0;
      Matrix d_log_sigma_sum;
      if (sigma_head) d_log_sigma_sum = Matrix::Zero(1, n);
      for (std::size_t h = first_mean; h < outputs.size(); ++h) {
        Matrix head_target = target;
        if (options.target_noise_sigma > 0.0) {
          for (Eigen::Index j = 0; j < n; ++j) {
            head_target(0, j) += options.target_noise_sigma * normal(rng);
          }
        }
        if (nll) {
          Matrix d_log_sigma;
          total += nn::gaussian_nll_1d(outputs[h], outputs[0], head_target, sigma_min,
                                       &grads[h], &d_log_sigma);
          d_log_sigma_sum += d_log_sigma;
        } else {
          total += nn::mse_loss(outputs[h], head_target, &grads[h]);
        }
      }
      if (sigma_head) {
        // Under MSE training the variance head receives no gradient.
        grads[0] = nll ? d_log_sigma_sum : Matrix::Zero(1, n);
      }
      return total;
    };
    nn::fit(model, inputs, loss, config, rng);
  }
  return est;
}

Prediction1D combine_outputs_1d(std::span<const double> outputs, double var_a) {
  Prediction1D p;
  const double n = static_cast<double>(outputs.size());
  for (double v : outputs) p.mean += v;
  p.mean /= n;
  if (outputs.size() >= 2) {
    for (double v : outputs) p.var_e += (v - p.mean) * (v - p.mean);
    p.var_e /= n - 1.0;
  }
  p.var_a = var_a;
  p.var = p.var_e + p.var_a;
  return p;
}

std::vector<Prediction1D> predict_1d(const Estimator1D& est,
                                     std::span<const double> xs, Rng& rng) {
  const Matrix inputs = row_of(xs);
  const auto n = static_cast<std::size_t>(inputs.cols());
  // samples[i] collects every ensemble output for input i.
  std::vector<std::vector<double>> samples(n);
  std::vector<double> var_a(n, 0.0);
  const bool sigma_head = has_sigma_head(est.method);
  const double sigma_min = est.options.sigma_min;

  auto collect = [&](const std::vector<Matrix>& outputs) {
    for (std::size_t h = sigma_head ? 1 : 0; h < outputs.size(); ++h) {
      for (std::size_t i = 0; i < n; ++i) {
        samples[i].push_back(outputs[h](0, static_cast<Eigen::Index>(i)));
      }
    }
    if (sigma_head) {
      for (std::size_t i = 0; i < n; ++i) {
        const double s = std::max(std::exp(outputs[0](0, static_cast<Eigen::Index>(i))), sigma_min);
        var_a[i] = s * s;
      }
    }
  };

  if (est.method == Method1D::kMcDropout) {
    for (int k = 0; k < est.options.mc_passes; ++k) {
      collect(est.models.front().forward(inputs, nn::Mode::kTrain, rng).outputs);
    }
  } else {
    for (const auto& model : est.models) collect(model.predict(inputs));
  }

  std::vector<Prediction1D> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(combine_outputs_1d(samples[i], var_a[i]));
  return out;
}

// ---------------------------------------------------------------------------
// SO(3)
// ---------------------------------------------------------------------------

void So3Options::validate() const {
  if (heads < 2) throw Error(ErrorCode::kInvalidConfig, "HydraNet needs at least 2 heads");
  if (body_width < 1 || head_width < 1 || residual_blocks < 0) {
    throw Error(ErrorCode::kInvalidConfig, "invalid SO(3) network shape");
  }
  if (!(head_dropout >= 0.0 && head_dropout < 1.0)) {
    throw Error(ErrorCode::kInvalidConfig, "head dropout outside [0, 1)");
  }
  if (!(target_noise_sigma >= 0.0) || !(sigma_min > 0.0)) {
    throw Error(ErrorCode::kInvalidConfig, "invalid noise or sigma floor");
  }
}

HydraNetSO3 make_hydranet_so3(int input_dim, const So3Options& opt, std::uint64_t seed) {
  opt.validate();
  std::vector<LayerSpec> body{LayerSpec::fc(input_dim, opt.body_width),
                              LayerSpec::relu(opt.body_width)};
  for (int b = 0; b < opt.residual_blocks; ++b) body.push_back(LayerSpec::residual_fc(opt.body_width));

  auto head = [&](int out, double dropout) {
    std::vector<LayerSpec> layers{LayerSpec::fc(opt.body_width, opt.head_width),
                                  LayerSpec::relu(opt.head_width)};
    if (dropout > 0.0) layers.push_back(LayerSpec::dropout(opt.head_width, dropout));
    layers.push_back(LayerSpec::fc(opt.head_width, out));
    return layers;
  };
  std::vector<std::vector<LayerSpec>> heads{head(3, 0.0)};
  for (int h = 0; h < opt.heads; ++h) heads.push_back(head(4, opt.head_dropout));
  return HydraNetSO3{nn::MlpModel(std::move(body), std::move(heads), seed), opt.heads, opt};
}

double hydranet_so3_loss(std::span<const Matrix> outputs,
                         std::span<const UnitQuaternion> targets, double sigma_min,
                         std::vector<Matrix>& grads) {
  const auto n = static_cast<Eigen::Index>(targets.size());
  if (outputs.size() < 2 || outputs[0].rows() != 3 || outputs[0].cols() != n) {
    throw Error(ErrorCode::kDimMismatch, "SO(3) loss expects a 3-row covariance head");
  }
  grads.assign(outputs.size(), Matrix());
  grads[0] = Matrix::Zero(3, n);
  const double inv_n = 1.0 / static_cast<double>(n);
  double total = 0.0;
  for (std::size_t h = 1; h < outputs.size(); ++h) {
    if (outputs[h].rows() != 4 || outputs[h].cols() != n) {
      throw Error(ErrorCode::kDimMismatch, "quaternion heads must output 4 rows");
    }
    grads[h].resize(4, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const auto t = so3_nll_terms(outputs[h].col(j), targets[static_cast<std::size_t>(j)],
                                   outputs[0].col(j), sigma_min);
      total += t.value * inv_n;
      grads[h].col(j) = t.d_raw_quat * inv_n;
      grads[0].col(j) += t.d_logits * inv_n;
    }
  }
  return total;
}

So3TrainResult train_so3(const So3Dataset& data, const nn::TrainConfig& config,
                         const So3Options& options, Rng& rng) {
  if (data.targets.empty()) throw Error(ErrorCode::kEmptyDataset, "no SO(3) training samples");
  if (static_cast<std::size_t>(data.inputs.cols()) != data.targets.size()) {
    throw Error(ErrorCode::kLengthMismatch, "inputs and targets differ in count");
  }
  for (const auto& q : data.targets) {
    if (std::abs(q.coeffs().norm() - 1.0) > 1e-6) {
      throw Error(ErrorCode::kNonUnitTarget, "target quaternion is not unit norm");
    }
  }
  So3TrainResult result{make_hydranet_so3(static_cast<int>(data.inputs.rows()), options, rng()), {}};
  const double sigma_min = options.sigma_min;
  const CovSO3 target_noise =
      CovSO3::diagonal(Vec3::Constant(options.target_noise_sigma * options.target_noise_sigma));

  std::vector<UnitQuaternion> batch_targets;
  nn::BatchLoss loss = [&](std::span<const int> idx, std::span<const Matrix> outputs,
                           std::vector<Matrix>& grads) {
    batch_targets.clear();
    for (int i : idx) batch_targets.push_back(data.targets[static_cast<std::size_t>(i)]);
    if (options.target_noise_sigma <= 0.0) {
      return hydranet_so3_loss(outputs, batch_targets, sigma_min, grads);
    }
    // Independent target noise per head: evaluate each head on its own copy.
    grads.assign(outputs.size(), Matrix());
    grads[0] = Matrix::Zero(3, static_cast<Eigen::Index>(idx.size()));
    double total = 0.0;
    std::vector<UnitQuaternion> noisy(batch_targets.size());
    std::vector<Matrix> pair(2);
    std::vector<Matrix> pair_grads;
    for (std::size_t h = 1; h < outputs.size(); ++h) {
      for (std::size_t j = 0; j < noisy.size(); ++j) {
        noisy[j] = sample_rotation(batch_targets[j], target_noise, rng);
      }
      pair[0] = outputs[0];
      pair[1] = outputs[h];
      total += hydranet_so3_loss(pair, noisy, sigma_min, pair_grads);
      grads[0] += pair_grads[0];
      grads[h] = std::move(pair_grads[1]);
    }
    return total;
  };
  result.history = nn::fit(result.net.model, data.inputs, loss, config, rng);
  return result;
}

So3Prediction belief_from_heads(std::span<const UnitQuaternion> head_quats,
                                const Vec3& logits, double sigma_min) {
  const QuatMeanResult mean = quat_mean(head_quats);
  So3Prediction p;
  p.head_quats.assign(head_quats.begin(), head_quats.end());
  p.dispersion_warning = mean.dispersion_warning;
  p.belief.mean = mean.mean;
  p.belief.epistemic = sample_covariance(mean.mean, head_quats);
  p.belief.aleatoric = cov_from_logits(logits, sigma_min);
  p.belief.total = combine(p.belief.epistemic, p.belief.aleatoric);
  return p;
}

std::vector<So3Prediction> predict_so3(const HydraNetSO3& net, const Matrix& inputs) {
  const std::vector<Matrix> outputs = net.model.predict(inputs);
  std::vector<So3Prediction> out;
  out.reserve(static_cast<std::size_t>(inputs.cols()));
  std::vector<UnitQuaternion> quats(outputs.size() - 1);
  for (Eigen::Index j = 0; j < inputs.cols(); ++j) {
    for (std::size_t h = 1; h < outputs.size(); ++h) {
      quats[h - 1] = quat_normalize(outputs[h].col(j));
    }
    out.push_back(belief_from_heads(quats, outputs[0].col(j), net.options.sigma_min));
  }
  return out;
}

std::vector<NamedGradCheck> standard_grad_checks(std::uint64_t seed) {
  using nn::LayerSpec;
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto random = [&](Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = normal(rng);
    return m;
  };
  nn::GradCheckOptions full;
  full.fraction = 1.0;
  full.seed = seed;
  std::vector<NamedGradCheck> out;

  struct LayerCase {
    const char* name;
    std::vector<LayerSpec> body;
    nn::Mode mode;
  };
  const std::vector<LayerCase> layers{
      {"fc", {LayerSpec::fc(3, 5)}, nn::Mode::kEval},
      {"selu", {LayerSpec::fc(3, 5), LayerSpec::selu(5)}, nn::Mode::kEval},
      {"relu", {LayerSpec::fc(3, 5), LayerSpec::relu(5)}, nn::Mode::kEval},
      {"dropout", {LayerSpec::fc(3, 5), LayerSpec::selu(5), LayerSpec::dropout(5, 0.3)}, nn::Mode::kTrain},
      {"residual_fc_block", {LayerSpec::fc(3, 5), LayerSpec::residual_fc(5), LayerSpec::residual_fc(5)},
       nn::Mode::kEval},
  };
  for (const auto& c : layers) {
    nn::MlpModel m(c.body, {{LayerSpec::fc(5, 2)}, {LayerSpec::fc(5, 5), LayerSpec::selu(5), LayerSpec::fc(5, 1)}},
                   rng());
    // Nonzero biases keep activations off their kinks.
    m.parameters() += 0.1 * random(static_cast<Eigen::Index>(m.parameter_count()), 1);
    const Matrix x = random(3, 9);
    const std::vector<Matrix> targets{random(2, 9), random(1, 9)};
    const nn::LossFn loss = [&](std::span<const Matrix> outputs, std::vector<Matrix>& grads) {
      double total = 0.0;
      for (std::size_t h = 0; h < outputs.size(); ++h) total += nn::mse_loss(outputs[h], targets[h], &grads[h]);
      return total;
    };
    nn::GradCheckOptions opt = full;
    opt.mode = c.mode;
    out.push_back({c.name, nn::grad_check(m, loss, x, opt)});
  }

  {
    nn::MlpModel m({LayerSpec::fc(1, 8), LayerSpec::selu(8), LayerSpec::fc(8, 8), LayerSpec::selu(8)},
                   {{LayerSpec::fc(8, 1)}, {LayerSpec::fc(8, 1)}}, rng());
    m.parameters() += 0.1 * random(static_cast<Eigen::Index>(m.parameter_count()), 1);
    const Matrix target = random(1, 12);
    const nn::LossFn loss = [&](std::span<const Matrix> o, std::vector<Matrix>& grads) {
      return nn::gaussian_nll_1d(o[1], o[0], target, kSigmaMin, &grads[1], &grads[0]);
    };
    out.push_back({"gaussian_nll_1d", nn::grad_check(m, loss, random(1, 12), full)});
  }

  {
    So3Options o;
    o.heads = 3;
    o.body_width = 10;
    o.head_width = 6;
    o.residual_blocks = 2;
    auto net = make_hydranet_so3(6, o, rng());
    // Zero biases can leave a quaternion head exactly at the origin.
    net.model.parameters() += 0.1 * random(static_cast<Eigen::Index>(net.model.parameter_count()), 1);
    std::vector<UnitQuaternion> targets;
    for (int i = 0; i < 7; ++i) targets.push_back(random_rotation(rng));
    // Logits are shrunk so sigma stays near 1; with random heads the loss
    // can otherwise reach 1e6 and round-off swamps the difference quotient.
    constexpr double kLogitScale = 0.1;
    const nn::LossFn loss = [&](std::span<const Matrix> outputs, std::vector<Matrix>& grads) {
      std::vector<Matrix> scaled(outputs.begin(), outputs.end());
      scaled[0] *= kLogitScale;
      const double value = hydranet_so3_loss(scaled, targets, kSigmaMin, grads);
      grads[0] *= kLogitScale;
      return value;
    };
    out.push_back({"so3_nll", nn::grad_check(net.model, loss, random(6, 7), full)});
  }
  return out;
}

}  // namespace hydra
