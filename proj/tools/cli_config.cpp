#include "cli_config.hpp"

#include <fstream>
#include <sstream>

namespace hydra::cli {
namespace {

json vec3_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

Vec3 vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw Error(ErrorCode::kInvalidConfig, "expected a 3-vector");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

json interval_json(const Interval& i) { return json::array({i.lo, i.hi}); }

Interval interval_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(ErrorCode::kInvalidConfig, "expected [lo, hi]");
  return {j[0].get<double>(), j[1].get<double>()};
}

std::string optimizer_name(nn::OptimizerKind k) {
  return k == nn::OptimizerKind::kAdam ? "adam" : "sgd_momentum";
}

nn::OptimizerKind optimizer_from(const std::string& s) {
  if (s == "adam") return nn::OptimizerKind::kAdam;
  if (s == "sgd_momentum") return nn::OptimizerKind::kSgdMomentum;
  throw Error(ErrorCode::kInvalidConfig, "unknown optimizer '" + s + "'");
}

// nlohmann's get<> throws its own exception types; report them as config errors.
template <typename T>
T field(const json& j, const char* key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("field '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const Config1D& c) {
  json ranges = json::array();
  for (const auto& r : c.train_ranges) ranges.push_back(interval_json(r));
  return {
      {"n_train", c.n_train},
      {"train_ranges", ranges},
      {"n_test", c.n_test},
      {"test_range", interval_json(c.test_range)},
      {"noise_sigma", c.noise_sigma},
      {"repetitions", c.repetitions},
      {"seed", c.seed},
      {"epochs", c.epochs},
      {"minibatch_size", c.minibatch_size},
      {"curve_points", c.curve_points},
      {"options",
       {{"width", c.options.width},
        {"heads", c.options.heads},
        {"bag_models", c.options.bag_models},
        {"mc_passes", c.options.mc_passes},
        {"target_noise_sigma", c.options.target_noise_sigma},
        {"sigma_min", c.options.sigma_min}}},
  };
}

Config1D config_1d_from_json(const json& j) {
  Config1D c;
  c.n_train = field<int>(j, "n_train");
  c.train_ranges.clear();
  for (const auto& r : j.at("train_ranges")) c.train_ranges.push_back(interval_from(r));
  c.n_test = field<int>(j, "n_test");
  c.test_range = interval_from(j.at("test_range"));
  c.noise_sigma = field<double>(j, "noise_sigma");
  c.repetitions = field<int>(j, "repetitions");
  c.seed = field<std::uint64_t>(j, "seed");
  c.epochs = field<int>(j, "epochs");
  c.minibatch_size = field<int>(j, "minibatch_size");
  c.curve_points = field<int>(j, "curve_points");
  const json& o = j.at("options");
  c.options.width = field<int>(o, "width");
  c.options.heads = field<int>(o, "heads");
  c.options.bag_models = field<int>(o, "bag_models");
  c.options.mc_passes = field<int>(o, "mc_passes");
  c.options.target_noise_sigma = field<double>(o, "target_noise_sigma");
  c.options.sigma_min = field<double>(o, "sigma_min");
  c.validate();
  return c;
}

json to_json(const HemisphereConfig& c) {
  return {
      {"grid_size", c.grid_size},
      {"grid_spacing", c.grid_spacing},
      {"radius", c.radius},
      {"camera",
       {{"focal", c.camera.focal},
        {"cu", c.camera.cu},
        {"cv", c.camera.cv},
        {"width", c.camera.width},
        {"height", c.camera.height}}},
      {"pixel_noise", c.pixel_noise},
      {"n_train", c.n_train},
      {"train_polar_max_deg", c.train_polar_max_deg},
      {"n_test", c.n_test},
      {"test_polar_max_deg", c.test_polar_max_deg},
      {"seed", c.seed},
      {"train",
       {{"optimizer", optimizer_name(c.train.optimizer)},
        {"learning_rate", c.train.learning_rate},
        {"momentum", c.train.momentum},
        {"epochs", c.train.epochs},
        {"minibatch_size", c.train.minibatch_size},
        {"clip_norm", c.train.clip_norm}}},
      {"net",
       {{"heads", c.net.heads},
        {"body_width", c.net.body_width},
        {"residual_blocks", c.net.residual_blocks},
        {"head_width", c.net.head_width},
        {"head_dropout", c.net.head_dropout},
        {"target_noise_sigma", c.net.target_noise_sigma},
        {"sigma_min", c.net.sigma_min}}},
  };
}

HemisphereConfig hemisphere_config_from_json(const json& j) {
  HemisphereConfig c;
  c.grid_size = field<int>(j, "grid_size");
  c.grid_spacing = field<double>(j, "grid_spacing");
  c.radius = field<double>(j, "radius");
  const json& cam = j.at("camera");
  c.camera.focal = field<double>(cam, "focal");
  c.camera.cu = field<double>(cam, "cu");
  c.camera.cv = field<double>(cam, "cv");
  c.camera.width = field<int>(cam, "width");
  c.camera.height = field<int>(cam, "height");
  c.pixel_noise = field<double>(j, "pixel_noise");
  c.n_train = field<int>(j, "n_train");
  c.train_polar_max_deg = field<double>(j, "train_polar_max_deg");
  c.n_test = field<int>(j, "n_test");
  c.test_polar_max_deg = field<double>(j, "test_polar_max_deg");
  c.seed = field<std::uint64_t>(j, "seed");
  const json& t = j.at("train");
  c.train.optimizer = optimizer_from(field<std::string>(t, "optimizer"));
  c.train.learning_rate = field<double>(t, "learning_rate");
  c.train.momentum = field<double>(t, "momentum");
  c.train.epochs = field<int>(t, "epochs");
  c.train.minibatch_size = field<int>(t, "minibatch_size");
  c.train.clip_norm = field<double>(t, "clip_norm");
  const json& n = j.at("net");
  c.net.heads = field<int>(n, "heads");
  c.net.body_width = field<int>(n, "body_width");
  c.net.residual_blocks = field<int>(n, "residual_blocks");
  c.net.head_width = field<int>(n, "head_width");
  c.net.head_dropout = field<double>(n, "head_dropout");
  c.net.target_noise_sigma = field<double>(n, "target_noise_sigma");
  c.net.sigma_min = field<double>(n, "sigma_min");
  c.validate();
  return c;
}

json to_json(const FusionSimConfig& c) {
  return {
      {"poses", c.poses},
      {"step_length", c.step_length},
      {"sigma_trans", c.sigma_trans},
      {"rot_vo_sigma_deg", c.rot_vo_sigma_deg},
      {"rot_hn_sigma_deg", c.rot_hn_sigma_deg},
      {"rot_bias_deg", vec3_json(c.rot_bias_deg)},
      {"seed", c.seed},
      {"solver",
       {{"max_iterations", c.solver.max_iterations},
        {"update_tolerance", c.solver.update_tolerance},
        {"jacobian_step", c.solver.jacobian_step},
        {"damping", c.solver.damping}}},
  };
}

FusionSimConfig fusion_config_from_json(const json& j) {
  FusionSimConfig c;
  c.poses = field<int>(j, "poses");
  c.step_length = field<double>(j, "step_length");
  c.sigma_trans = field<double>(j, "sigma_trans");
  c.rot_vo_sigma_deg = field<double>(j, "rot_vo_sigma_deg");
  c.rot_hn_sigma_deg = field<double>(j, "rot_hn_sigma_deg");
  c.rot_bias_deg = vec3_from(j.at("rot_bias_deg"));
  c.seed = field<std::uint64_t>(j, "seed");
  const json& s = j.at("solver");
  c.solver.max_iterations = field<int>(s, "max_iterations");
  c.solver.update_tolerance = field<double>(s, "update_tolerance");
  c.solver.jacobian_step = field<double>(s, "jacobian_step");
  c.solver.damping = field<double>(s, "damping");
  c.validate();
  return c;
}

void merge_strict(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw Error(ErrorCode::kInvalidConfig, "config must be a JSON object");
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    const std::string key = path.empty() ? it.key() : path + "." + it.key();
    if (!base.contains(it.key())) throw Error(ErrorCode::kInvalidConfig, "unknown config field '" + key + "'");
    json& target = base[it.key()];
    if (target.is_object() && it.value().is_object()) {
      merge_strict(target, it.value(), key);
    } else {
      target = it.value();
    }
  }
}

void apply_overrides(json& base, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw Error(ErrorCode::kInvalidConfig, "override '" + a + "' is not key=value");
    }
    const std::string path = a.substr(0, eq);
    const std::string text = a.substr(eq + 1);
    json value = json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;

    json patch = value;
    std::size_t end = path.size();
    while (true) {
      const auto dot = path.rfind('.', end - 1);
      const std::size_t start = dot == std::string::npos ? 0 : dot + 1;
      patch = json{{path.substr(start, end - start), patch}};
      if (dot == std::string::npos) break;
      end = dot;
    }
    merge_strict(base, patch);
  }
}

json load_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kInvalidConfig, "cannot open config " + path);
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::kInvalidConfig, "config " + path + " is not valid JSON");
  return j;
}

}  // namespace hydra::cli
