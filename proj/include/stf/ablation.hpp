#pragma once

#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "stf/gradcheck.hpp"
#include "stf/trainer.hpp"

namespace stf {

enum class Suite { FusionTable, PruningTable, KSweep };

std::string to_string(Suite suite);
Suite parse_suite(const std::string& text);

struct RowSpec {
  std::string label;
  ExperimentConfig cfg;  // seed is replaced per run
};

/// The config grid of a suite, derived from `base`.
std::vector<RowSpec> suite_rows(Suite suite, const ExperimentConfig& base);

struct RowResult {
  std::string label;
  ExperimentConfig cfg;
  std::vector<double> ap;  // AP points (0..100), one per seed
  double mean = 0;
  double stddev = 0;       // sample standard deviation
};

struct AblationTable {
  std::string suite;
  std::vector<RowResult> rows;

  const RowResult& row(const std::string& label) const;
};

/// Memoises teachers, datasets and student runs by (config, seed), so rows
/// shared between suites are trained once. Safe to use from several threads.
class RunCache {
 public:
  /// Final-epoch eval mAP in AP points, training whatever is missing.
  double student_ap(const ExperimentConfig& cfg);
  std::shared_ptr<const ParameterStore> teacher(const ExperimentConfig& cfg);
  std::shared_ptr<const Dataset> dataset(const ExperimentConfig& cfg);

  std::size_t trained_students() const;

 private:
  template <typename T>
  struct Slot {
    std::once_flag once;
    std::shared_ptr<const T> value;
  };
  template <typename T>
  std::shared_ptr<const T> memo(std::map<std::string, std::shared_ptr<Slot<T>>>& table, const std::string& key,
                                const std::function<T()>& make);

  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<Slot<Dataset>>> datasets_;
  std::map<std::string, std::shared_ptr<Slot<ParameterStore>>> teachers_;
  std::map<std::string, std::shared_ptr<Slot<double>>> students_;
};

using LogFn = std::function<void(const std::string&)>;

/// Runs every row for seeds base.seed .. base.seed + base.seeds - 1 on
/// base.jobs worker threads.
AblationTable run_rows(const std::string& name, const std::vector<RowSpec>& rows, const ExperimentConfig& base,
                       RunCache& cache, const LogFn& log = {});
AblationTable run_ablation(Suite suite, const ExperimentConfig& base, RunCache& cache, const LogFn& log = {});

/// Fixed-width text table: label, mean, std, then the per-seed values.
void write_table(std::ostream& os, const AblationTable& table);

struct DirectionalCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// The directional expectations attached to a suite.
std::vector<DirectionalCheck> check_table(Suite suite, const AblationTable& table);

/// Finite-difference check of every parameter tensor of a small student
/// (encoder, SA, TM, phi1, phi2, head) and teacher, on 16x16 maps.
GradCheckReport gradcheck_all(const GradCheckOptions& options = {});

/// Gradient check of one prebuilt student; used for fault injection.
GradCheckReport gradcheck_student(const ExperimentConfig& cfg, ParameterStore& params, const SceneSequence& scene,
                                  const Tensor& teacher_feats, const GradCheckOptions& options = {});

/// The 16x16 configuration gradcheck_all uses.
ExperimentConfig gradcheck_config();

}  // namespace stf
