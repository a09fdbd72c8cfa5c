#include "stf/ablation.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <thread>

#include "stf/ops.hpp"
#include "stf/rng.hpp"

namespace stf {

std::string to_string(Suite suite) {
  switch (suite) {
    case Suite::FusionTable: return "fusion_table";
    case Suite::PruningTable: return "pruning_table";
    case Suite::KSweep: return "k_sweep";
  }
  return "?";
}

Suite parse_suite(const std::string& text) {
  if (text == "fusion_table") return Suite::FusionTable;
  if (text == "pruning_table") return Suite::PruningTable;
  if (text == "k_sweep") return Suite::KSweep;
  throw ConfigError("unknown suite '" + text + "' (expected fusion_table|pruning_table|k_sweep)");
}

namespace {

ExperimentConfig with_mode(ExperimentConfig cfg, FusionMode mode, bool sa, bool tm, bool sup) {
  cfg.fusion_mode = mode;
  cfg.use_sa = sa;
  cfg.use_tm = tm;
  cfg.use_sup = sup;
  cfg.normalise();
  return cfg;
}

std::string flags_label(bool sa, bool tm, bool sup) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += "+";
    out += name;
  };
  add(sa, "SA");
  add(tm, "TM");
  add(sup, "SUP");
  return out.empty() ? "baseline" : out;
}

// Fields that never change a run's outcome are pinned so they do not split the cache.
std::string run_key(ExperimentConfig cfg) {
  cfg.seeds = 1;
  cfg.jobs = 1;
  cfg.log_wall_time = false;
  return cfg.to_text();
}

// Teacher training reads current frames only, so frame count and student
// settings are pinned too.
std::string teacher_key(ExperimentConfig cfg) {
  cfg.fusion_mode = FusionMode::Single;
  cfg.k = 1;
  cfg.use_sa = cfg.use_tm = cfg.use_sup = false;
  cfg.learning_rate = 0.01;
  cfg.epochs = 1;
  cfg.lambda = cfg.alpha = cfg.beta = 0;
  cfg.eval_every = 0;
  return run_key(cfg);
}

std::string dataset_key(const ExperimentConfig& cfg) {
  ExperimentConfig d;
  d.seed = cfg.seed;
  d.k = cfg.k;
  d.train_scenes = cfg.train_scenes;
  d.eval_scenes = cfg.eval_scenes;
  d.num_objects = cfg.num_objects;
  d.points_per_object = cfg.points_per_object;
  d.clutter_density = cfg.clutter_density;
  d.ghost_density = cfg.ghost_density;
  d.ghost_points = cfg.ghost_points;
  d.area_extent = cfg.area_extent;
  d.max_speed = cfg.max_speed;
  d.noise_sigma = cfg.noise_sigma;
  d.frame_interval = cfg.frame_interval;
  d.class_mix = cfg.class_mix;
  return d.to_text();
}

double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double stddev_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

void run_parallel(std::size_t count, int jobs, const std::function<void(std::size_t)>& fn) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, jobs));
  if (n == 1 || count <= 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (std::size_t t = 0; t < std::min(n, count); ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

std::vector<RowSpec> suite_rows(Suite suite, const ExperimentConfig& base) {
  std::vector<RowSpec> rows;
  switch (suite) {
    case Suite::FusionTable:
      rows.push_back({"single", with_mode(base, FusionMode::Single, false, false, false)});
      rows.push_back({"data", with_mode(base, FusionMode::Data, false, false, false)});
      rows.push_back({"feature", with_mode(base, FusionMode::Feature, false, false, false)});
      rows.push_back({"st+SUP", with_mode(base, FusionMode::ST, true, true, true)});
      break;
    case Suite::PruningTable:
      for (int mask = 0; mask < 8; ++mask) {
        const bool sa = mask & 1, tm = mask & 2, sup = mask & 4;
        rows.push_back({flags_label(sa, tm, sup), with_mode(base, FusionMode::ST, sa, tm, sup)});
      }
      break;
    case Suite::KSweep:
      for (int k : {1, 2, 4, 8}) {
        ExperimentConfig cfg = with_mode(base, FusionMode::ST, true, true, true);
        cfg.k = k;
        rows.push_back({"k=" + std::to_string(k), cfg});
      }
      break;
  }
  return rows;
}

const RowResult& AblationTable::row(const std::string& label) const {
  for (const auto& r : rows) {
    if (r.label == label) return r;
  }
  throw std::out_of_range("no row '" + label + "' in " + suite);
}

template <typename T>
std::shared_ptr<const T> RunCache::memo(std::map<std::string, std::shared_ptr<Slot<T>>>& table,
                                        const std::string& key, const std::function<T()>& make) {
  std::shared_ptr<Slot<T>> slot;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto& entry = table[key];
    if (!entry) entry = std::make_shared<Slot<T>>();
    slot = entry;
  }
  std::call_once(slot->once, [&] { slot->value = std::make_shared<const T>(make()); });
  return slot->value;
}

std::shared_ptr<const Dataset> RunCache::dataset(const ExperimentConfig& cfg) {
  return memo<Dataset>(datasets_, dataset_key(cfg), [&] { return make_dataset(cfg); });
}

std::shared_ptr<const ParameterStore> RunCache::teacher(const ExperimentConfig& cfg) {
  return memo<ParameterStore>(teachers_, teacher_key(cfg), [&] {
    ExperimentConfig t = cfg;
    t.k = 1;
    return train_teacher(t, *dataset(t));
  });
}

double RunCache::student_ap(const ExperimentConfig& cfg) {
  return *memo<double>(students_, run_key(cfg), [&] {
    std::shared_ptr<const ParameterStore> t;
    if (cfg.use_sup) t = teacher(cfg);
    return 100.0 * train_student(cfg, *dataset(cfg), t.get()).eval.map;
  });
}

std::size_t RunCache::trained_students() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return students_.size();
}

AblationTable run_rows(const std::string& name, const std::vector<RowSpec>& rows, const ExperimentConfig& base,
                       RunCache& cache, const LogFn& log) {
  const auto seeds = static_cast<std::size_t>(base.seeds);
  std::vector<ExperimentConfig> runs;
  for (const auto& row : rows) {
    for (std::size_t s = 0; s < seeds; ++s) {
      ExperimentConfig cfg = row.cfg;
      cfg.seed = base.seed + s;
      cfg.validate();
      runs.push_back(cfg);
    }
  }
  // Teachers first, so worker threads never wait on one another.
  std::vector<ExperimentConfig> teacher_runs;
  for (std::size_t s = 0; s < seeds; ++s) {
    for (const auto& cfg : runs) {
      if (cfg.use_sup && cfg.seed == base.seed + s) {
        teacher_runs.push_back(cfg);
        break;
      }
    }
  }
  run_parallel(teacher_runs.size(), base.jobs, [&](std::size_t i) {
    cache.teacher(teacher_runs[i]);
    if (log) log(name + ": teacher seed " + std::to_string(teacher_runs[i].seed) + " ready");
  });

  std::vector<double> ap(runs.size());
  run_parallel(runs.size(), base.jobs, [&](std::size_t i) {
    ap[i] = cache.student_ap(runs[i]);
    if (log) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%s: %s seed %llu AP %.2f", name.c_str(), rows[i / seeds].label.c_str(),
                    static_cast<unsigned long long>(runs[i].seed), ap[i]);
      log(buf);
    }
  });

  AblationTable table{name, {}};
  for (std::size_t r = 0; r < rows.size(); ++r) {
    RowResult res{rows[r].label, rows[r].cfg, {}, 0, 0};
    res.ap.assign(ap.begin() + static_cast<std::ptrdiff_t>(r * seeds),
                  ap.begin() + static_cast<std::ptrdiff_t>((r + 1) * seeds));
    res.mean = mean_of(res.ap);
    res.stddev = stddev_of(res.ap);
    table.rows.push_back(std::move(res));
  }
  return table;
}

AblationTable run_ablation(Suite suite, const ExperimentConfig& base, RunCache& cache, const LogFn& log) {
  return run_rows(to_string(suite), suite_rows(suite, base), base, cache, log);
}

void write_table(std::ostream& os, const AblationTable& table) {
  char buf[64];
  os << "# suite " << table.suite << "\n";
  os << "# ap: mean average precision x100 on the eval split; std is the sample deviation over seeds\n";
  std::snprintf(buf, sizeof(buf), "%-12s %8s %8s", "row", "mean", "std");
  os << buf;
  if (!table.rows.empty()) {
    for (std::size_t s = 0; s < table.rows.front().ap.size(); ++s) {
      std::snprintf(buf, sizeof(buf), " %8s", ("s" + std::to_string(table.rows.front().cfg.seed + s)).c_str());
      os << buf;
    }
  }
  os << "\n";
  for (const auto& row : table.rows) {
    std::snprintf(buf, sizeof(buf), "%-12s %8.3f %8.3f", row.label.c_str(), row.mean, row.stddev);
    os << buf;
    for (double v : row.ap) {
      std::snprintf(buf, sizeof(buf), " %8.3f", v);
      os << buf;
    }
    os << "\n";
  }
}

std::vector<DirectionalCheck> check_table(Suite suite, const AblationTable& t) {
  std::vector<DirectionalCheck> out;
  char buf[200];
  auto gap = [&](const std::string& name, const std::string& hi, const std::string& lo, double min_gap) {
    const double d = t.row(hi).mean - t.row(lo).mean;
    std::snprintf(buf, sizeof(buf), "%s %.3f vs %s %.3f (gap %.3f, need >= %.3f)", hi.c_str(), t.row(hi).mean,
                  lo.c_str(), t.row(lo).mean, d, min_gap);
    out.push_back({name, d >= min_gap, buf});
  };
  switch (suite) {
    case Suite::FusionTable:
      gap("st+SUP beats single by >= 3 AP", "st+SUP", "single", 3.0);
      gap("st+SUP >= feature", "st+SUP", "feature", 0.0);
      gap("feature >= data", "feature", "data", 0.0);
      break;
    case Suite::PruningTable:
      gap("SUP on top of SA+TM adds >= 1 AP", "SA+TM+SUP", "SA+TM", 1.0);
      break;
    case Suite::KSweep:
      gap("k=4 >= k=1", "k=4", "k=1", 0.0);
      break;
  }
  return out;
}

ExperimentConfig gradcheck_config() {
  ExperimentConfig cfg;
  cfg.grid_size = 16;
  cfg.area_extent = 16;
  cfg.num_objects = 2;
  cfg.points_per_object = 12;
  cfg.channels = 4;
  cfg.point_channels = 4;
  cfg.k = 4;
  cfg.sigma_gauss = 3;
  return cfg;
}

GradCheckReport gradcheck_student(const ExperimentConfig& cfg, ParameterStore& params, const SceneSequence& scene,
                                  const Tensor& teacher_feats, const GradCheckOptions& options) {
  const Tensor weight = gaussian_weight_map(scene.gt, cfg.grid(), cfg.sigma_gauss);
  return finite_diff_check(
      [&](Tape& tape) {
        const StudentOutput out = student_forward(tape, params, cfg, scene);
        return student_objective(tape, out, cfg, scene, params, teacher_feats, weight).total;
      },
      params, options);
}

namespace {

// Zero biases put empty cells exactly on ReLU kinks, and TM's zero projection
// leaves attention uniform; a small keyed jitter moves every tensor to a
// generic point first.
void jitter(ParameterStore& params, std::uint64_t seed) {
  for (const auto& name : params.names()) {
    CounterRng rng(derive_key(seed, fnv1a(name)), 1);
    for (double& v : params.get(name).mutable_data()) v += rng.uniform(-0.1, 0.1);
  }
}

}  // namespace

GradCheckReport gradcheck_all(const GradCheckOptions& options) {
  const ExperimentConfig base = gradcheck_config();
  const SceneSequence scene = generate_scene(base.scene_config(11));
  GradCheckReport report;
  auto append = [&](const std::string& prefix, const GradCheckReport& part) {
    for (auto e : part.entries) {
      e.name = prefix + e.name;
      report.entries.push_back(e);
    }
  };

  ParameterStore teacher = build_teacher(base, base.seed);
  jitter(teacher, base.seed);
  append("teacher/", finite_diff_check(
                         [&](Tape& tape) {
                           const HeadOutput head = teacher_forward(tape, teacher, base, scene);
                           return detection_loss(tape, head, scene.gt, base.grid(), detection_options(base)).total;
                         },
                         teacher, options));

  ParameterStore frozen = build_teacher(base, base.seed);
  jitter(frozen, base.seed + 1);
  frozen.freeze();
  Tape feat_tape;
  const Tensor teacher_feats = teacher_features(feat_tape, inject_frame(scene, 0, TieBreak::FirstByIndex),
                                                base.grid(), frozen);

  ParameterStore student = build_student(base, base.seed);
  jitter(student, base.seed);
  append("st/", gradcheck_student(base, student, scene, teacher_feats, options));

  ExperimentConfig ff = base;
  ff.fusion_mode = FusionMode::Feature;
  ff.use_sup = false;
  ParameterStore feature = build_student(ff, base.seed);
  jitter(feature, base.seed);
  append("feature/", gradcheck_student(ff, feature, scene, Tensor(), options));
  return report;
}

}  // namespace stf
