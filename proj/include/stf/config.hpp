#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "stf/bev.hpp"
#include "stf/scene.hpp"

namespace stf {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FusionMode { Single, Data, Feature, ST };

std::string to_string(FusionMode mode);
FusionMode parse_fusion_mode(const std::string& text);

struct ExperimentConfig {
  std::uint64_t seed = 1;

  // Data.
  int train_scenes = 200;
  int eval_scenes = 50;
  int num_objects = 5;
  int points_per_object = 20;
  double clutter_density = 0.15;
  double ghost_density = 0.5;
  int ghost_points = 20;
  double area_extent = 32.0;
  double max_speed = 1.0;
  double noise_sigma = 0.02;
  double frame_interval = 0.5;
  std::vector<double> class_mix{0.6, 0.4};

  // Model.
  int grid_size = 64;
  int point_channels = 16;
  int channels = 32;
  /// Total frames fed to the model, current one included.
  int k = 4;
  FusionMode fusion_mode = FusionMode::ST;
  bool use_sa = true;
  bool use_tm = true;
  bool use_sup = true;
  SemanticEncoding semantic_encoding = SemanticEncoding::Integer;
  std::string injection = "semantic";

  // Objective.
  double lambda = 0.1;
  double alpha = 1.0;
  double beta = 0.1;
  double sigma_gauss = 7.0;
  double target_sigma = 2.0;
  double reg_weight = 1.0;

  // Optimisation.
  double learning_rate = 0.01;
  double teacher_learning_rate = 0.01;
  int epochs = 30;
  int teacher_epochs = 30;
  int batch_size = 4;
  double momentum = 0.9;
  double lr_decay_at = 0.8;
  /// Global gradient-norm clip per step; 0 disables it.
  double grad_clip = 0.0;

  // Evaluation and logging.
  double score_thresh = 0.1;
  int max_dets = 50;
  double iou_thresh = 0.5;
  /// Evaluate every n epochs; 0 evaluates after the final epoch only.
  int eval_every = 0;
  bool log_wall_time = false;

  // Ablation.
  int seeds = 5;
  int jobs = 1;

  int num_classes() const noexcept { return static_cast<int>(class_mix.size()); }
  GridSpec grid() const;
  /// Scene settings for a given seed; the scene holds k - 1 preceding frames.
  SceneConfig scene_config(std::uint64_t scene_seed) const;

  /// Throws ConfigError on any inconsistent value. fusion_mode=single must
  /// come with k=1; normalise() applies that.
  void validate() const;
  void normalise();

  /// Sets one field from its text form; unknown keys are errors.
  void set(const std::string& key, const std::string& value);
  /// Every field as `key = value` lines, in a fixed order.
  std::string to_text() const;
  static std::vector<std::string> keys();

  /// Parses `key = value` lines (# starts a comment) on top of `base`.
  static ExperimentConfig from_text(const std::string& text, const ExperimentConfig& base);
  static ExperimentConfig from_text(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path, const ExperimentConfig& base);
  static ExperimentConfig load(const std::filesystem::path& path);
};

}  // namespace stf
