#pragma once

#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "stf/model.hpp"

namespace stf {

/// A loss or gradient went non-finite during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Dataset {
  std::vector<SceneSequence> train;
  std::vector<SceneSequence> eval;
};

/// Scenes with cfg.k - 1 preceding frames. Scene i of each split depends
/// only on (cfg.seed, split, i) and the scene settings, so the current
/// frames are the same for every k.
Dataset make_dataset(const ExperimentConfig& cfg);

struct MetricsRecord {
  int epoch = 0;
  double learning_rate = 0;
  double l_det = 0;
  std::optional<double> l_sup_d;
  std::optional<double> l_sup_r;
  double l_total = 0;
  std::optional<double> ap;
  std::optional<double> attention_entropy;
  std::optional<double> wall_time_s;

  /// One JSON object, keys in a fixed order, no trailing newline.
  std::string to_json() const;
};

using ProgressFn = std::function<void(const MetricsRecord&)>;

struct TrainOptions {
  /// Receives one JSON line per epoch, flushed as it is written.
  std::ostream* metrics = nullptr;
  ProgressFn progress;
};

struct EvalResult {
  double map = 0;
  std::vector<double> class_ap;  // NaN for classes without ground truth
  std::vector<EvalFrame> frames;
};

/// Teacher trained with the detection loss on injected current frames, then frozen.
ParameterStore train_teacher(const ExperimentConfig& cfg, const Dataset& data, const TrainOptions& options = {});

struct StudentRun {
  ParameterStore params;
  std::vector<MetricsRecord> history;
  EvalResult eval;
};

/// Trains a student; `teacher` is required when cfg.use_sup is set.
StudentRun train_student(const ExperimentConfig& cfg, const Dataset& data, const ParameterStore* teacher,
                         const TrainOptions& options = {});

EvalResult evaluate(const ParameterStore& params, const ExperimentConfig& cfg,
                    const std::vector<SceneSequence>& scenes);
EvalResult evaluate_teacher(const ParameterStore& teacher, const ExperimentConfig& cfg,
                            const std::vector<SceneSequence>& scenes);

/// Learning rate for a 0-based epoch: decays by 10x from lr_decay_at * epochs on.
double scheduled_lr(double base, int epoch, int epochs, double decay_at);

}  // namespace stf
