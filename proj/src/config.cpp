#include "stf/config.hpp"

#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace stf {

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::Single: return "single";
    case FusionMode::Data: return "data";
    case FusionMode::Feature: return "feature";
    case FusionMode::ST: return "st";
  }
  return "?";
}

FusionMode parse_fusion_mode(const std::string& text) {
  if (text == "single") return FusionMode::Single;
  if (text == "data") return FusionMode::Data;
  if (text == "feature") return FusionMode::Feature;
  if (text == "st") return FusionMode::ST;
  throw ConfigError("unknown fusion_mode '" + text + "' (expected single|data|feature|st)");
}

GridSpec ExperimentConfig::grid() const {
  const auto n = static_cast<std::size_t>(grid_size);
  return GridSpec{-area_extent / 2, area_extent / 2, -area_extent / 2, area_extent / 2, n, n};
}

SceneConfig ExperimentConfig::scene_config(std::uint64_t scene_seed) const {
  SceneConfig s;
  s.num_objects = num_objects;
  s.class_mix = class_mix;
  s.area_extent = area_extent;
  s.clutter_density = clutter_density;
  s.ghost_density = ghost_density;
  s.ghost_points = ghost_points;
  s.points_per_object = points_per_object;
  s.k = k - 1;
  s.frame_interval = frame_interval;
  s.max_speed = max_speed;
  s.noise_sigma = noise_sigma;
  s.seed = scene_seed;
  return s;
}

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  }
}

long long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const long long i = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError("'" + key + "' expects an integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("'" + key + "' expects a boolean, got '" + v + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <typename T>
Field int_field(T ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = static_cast<T>(parse_int(k, v));
          },
          [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

Field double_field(double ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_double(k, v);
          },
          [member](const ExperimentConfig& c) { return format_double(c.*member); }};
}

Field bool_field(bool ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_bool(k, v);
          },
          [member](const ExperimentConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

// Ordered list so that to_text() output is stable.
const std::vector<std::pair<std::string, Field>>& fields() {
  using C = ExperimentConfig;
  static const std::vector<std::pair<std::string, Field>> table{
      {"seed", int_field(&C::seed)},
      {"train_scenes", int_field(&C::train_scenes)},
      {"eval_scenes", int_field(&C::eval_scenes)},
      {"num_objects", int_field(&C::num_objects)},
      {"points_per_object", int_field(&C::points_per_object)},
      {"clutter_density", double_field(&C::clutter_density)},
      {"ghost_density", double_field(&C::ghost_density)},
      {"ghost_points", int_field(&C::ghost_points)},
      {"area_extent", double_field(&C::area_extent)},
      {"max_speed", double_field(&C::max_speed)},
      {"noise_sigma", double_field(&C::noise_sigma)},
      {"frame_interval", double_field(&C::frame_interval)},
      {"class_mix",
       {[](C& c, const std::string& k, const std::string& v) {
          std::vector<double> mix;
          std::stringstream ss(v);
          std::string item;
          while (std::getline(ss, item, ',')) mix.push_back(parse_double(k, trim(item)));
          c.class_mix = mix;
        },
        [](const C& c) {
          std::string out;
          for (std::size_t i = 0; i < c.class_mix.size(); ++i) {
            out += (i ? "," : "") + format_double(c.class_mix[i]);
          }
          return out;
        }}},
      {"grid_size", int_field(&C::grid_size)},
      {"point_channels", int_field(&C::point_channels)},
      {"channels", int_field(&C::channels)},
      {"k", int_field(&C::k)},
      {"fusion_mode",
       {[](C& c, const std::string&, const std::string& v) { c.fusion_mode = parse_fusion_mode(v); },
        [](const C& c) { return to_string(c.fusion_mode); }}},
      {"use_sa", bool_field(&C::use_sa)},
      {"use_tm", bool_field(&C::use_tm)},
      {"use_sup", bool_field(&C::use_sup)},
      {"semantic_encoding",
       {[](C& c, const std::string&, const std::string& v) {
          if (v == "integer") c.semantic_encoding = SemanticEncoding::Integer;
          else if (v == "onehot") c.semantic_encoding = SemanticEncoding::OneHot;
          else throw ConfigError("semantic_encoding must be integer|onehot, got '" + v + "'");
        },
        [](const C& c) {
          return std::string(c.semantic_encoding == SemanticEncoding::Integer ? "integer" : "onehot");
        }}},
      {"injection",
       {[](C& c, const std::string&, const std::string& v) { c.injection = v; },
        [](const C& c) { return c.injection; }}},
      {"lambda", double_field(&C::lambda)},
      {"alpha", double_field(&C::alpha)},
      {"beta", double_field(&C::beta)},
      {"sigma_gauss", double_field(&C::sigma_gauss)},
      {"target_sigma", double_field(&C::target_sigma)},
      {"reg_weight", double_field(&C::reg_weight)},
      {"learning_rate", double_field(&C::learning_rate)},
      {"teacher_learning_rate", double_field(&C::teacher_learning_rate)},
      {"epochs", int_field(&C::epochs)},
      {"teacher_epochs", int_field(&C::teacher_epochs)},
      {"batch_size", int_field(&C::batch_size)},
      {"momentum", double_field(&C::momentum)},
      {"lr_decay_at", double_field(&C::lr_decay_at)},
      {"grad_clip", double_field(&C::grad_clip)},
      {"score_thresh", double_field(&C::score_thresh)},
      {"max_dets", int_field(&C::max_dets)},
      {"iou_thresh", double_field(&C::iou_thresh)},
      {"eval_every", int_field(&C::eval_every)},
      {"log_wall_time", bool_field(&C::log_wall_time)},
      {"seeds", int_field(&C::seeds)},
      {"jobs", int_field(&C::jobs)},
  };
  return table;
}

}  // namespace

void ExperimentConfig::set(const std::string& key, const std::string& value) {
  for (const auto& [name, field] : fields()) {
    if (name == key) {
      field.set(*this, key, trim(value));
      return;
    }
  }
  throw ConfigError("unknown configuration key '" + key + "'");
}

std::vector<std::string> ExperimentConfig::keys() {
  std::vector<std::string> out;
  for (const auto& [name, _] : fields()) out.push_back(name);
  return out;
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const auto& [name, field] : fields()) out += name + " = " + field.get(*this) + "\n";
  return out;
}

void ExperimentConfig::normalise() {
  if (fusion_mode == FusionMode::Single) k = 1;
}

void ExperimentConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
  };
  require(k >= 1, "k must be >= 1");
  require(fusion_mode != FusionMode::Single || k == 1, "fusion_mode=single requires k=1");
  require(lambda >= 0 && alpha >= 0 && beta >= 0, "lambda, alpha and beta must be non-negative");
  require(sigma_gauss > 0 && target_sigma > 0, "Gaussian scales must be positive");
  require(train_scenes >= 1 && eval_scenes >= 1, "scene counts must be positive");
  require(grid_size >= 8, "grid_size must be at least 8");
  require(point_channels >= 1 && channels >= 1, "channel widths must be positive");
  require(epochs >= 1 && teacher_epochs >= 1, "epoch counts must be positive");
  require(batch_size >= 1, "batch_size must be positive");
  require(learning_rate > 0 && teacher_learning_rate > 0, "learning rates must be positive");
  require(momentum >= 0 && momentum < 1, "momentum must lie in [0, 1)");
  require(grad_clip >= 0, "grad_clip must be non-negative");
  require(lr_decay_at > 0 && lr_decay_at <= 1, "lr_decay_at must lie in (0, 1]");
  require(!class_mix.empty() && class_mix.size() <= class_templates().size(),
          "class_mix must list 1.." + std::to_string(class_templates().size()) + " weights");
  require(seeds >= 1 && jobs >= 1, "seeds and jobs must be positive");
  require(max_dets >= 1, "max_dets must be positive");
  require(eval_every >= 0, "eval_every must be non-negative");
  if (injection == "geometric") {
    throw ConfigError("injection=geometric (multi-frame object densification) is not implemented; use semantic");
  }
  require(injection == "semantic", "injection must be 'semantic'");
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text, const ExperimentConfig& base) {
  ExperimentConfig cfg = base;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path, const ExperimentConfig& base) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return from_text(ss.str(), base);
}

ExperimentConfig ExperimentConfig::from_text(const std::string& text) { return from_text(text, ExperimentConfig{}); }

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) { return load(path, ExperimentConfig{}); }

}  // namespace stf
