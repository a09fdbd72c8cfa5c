// Command-line driver: data generation, training, evaluation, ablations and
// gradient checks.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "stf/ablation.hpp"
#include "stf/textio.hpp"

namespace fs = std::filesystem;
using namespace stf;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitAssert = 4;

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_path, "key = value config file");
  cmd->add_option("--set", args.overrides, "override a config key (key=value), repeatable");
}

ExperimentConfig resolve(const CommonArgs& args, ExperimentConfig base = {}) {
  ExperimentConfig cfg = args.config_path.empty() ? base : ExperimentConfig::load(args.config_path, base);
  for (const auto& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.normalise();
  cfg.validate();
  return cfg;
}

fs::path config_path_for(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".config"); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

void save_with_config(const ParameterStore& params, const ExperimentConfig& cfg, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  params.save(path);
  write_text(config_path_for(path), cfg.to_text());
}

// A checkpoint's saved config is the base that --config and --set refine.
ExperimentConfig resolve_for_checkpoint(const CommonArgs& args, const fs::path& checkpoint) {
  const fs::path saved = config_path_for(checkpoint);
  return resolve(args, fs::exists(saved) ? ExperimentConfig::load(saved) : ExperimentConfig{});
}

std::ofstream open_metrics(const std::string& path) {
  if (path.empty()) return {};
  const fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}

void print_record(const char* what, const MetricsRecord& rec) {
  std::fprintf(stderr, "[%s] epoch %d l_total %.6f%s\n", what, rec.epoch, rec.l_total,
               rec.ap ? (" ap " + std::to_string(*rec.ap)).c_str() : "");
}

int cmd_gen_data(const CommonArgs& args, const std::string& out_dir) {
  const ExperimentConfig cfg = resolve(args);
  const Dataset data = make_dataset(cfg);
  auto dump = [&](const std::vector<SceneSequence>& scenes, const std::string& split) {
    for (std::size_t i = 0; i < scenes.size(); ++i) {
      std::vector<std::vector<int>> semantic;
      for (int age = scenes[i].k(); age >= 0; --age) {
        semantic.push_back(inject_frame(scenes[i], age, TieBreak::FirstByIndex).classes);
      }
      char name[64];
      std::snprintf(name, sizeof(name), "%s_%04zu.scene", split.c_str(), i);
      write_scene(fs::path(out_dir) / split / name, scenes[i], &semantic);
    }
  };
  fs::create_directories(fs::path(out_dir) / "train");
  fs::create_directories(fs::path(out_dir) / "eval");
  dump(data.train, "train");
  dump(data.eval, "eval");
  write_text(fs::path(out_dir) / "config.txt", cfg.to_text());
  std::printf("wrote %zu train and %zu eval scenes to %s\n", data.train.size(), data.eval.size(), out_dir.c_str());
  return 0;
}

int cmd_train_teacher(const CommonArgs& args, const std::string& out, const std::string& metrics_path) {
  ExperimentConfig cfg = resolve(args);
  cfg.k = 1;
  std::ofstream metrics = open_metrics(metrics_path);
  TrainOptions opts;
  if (metrics.is_open()) opts.metrics = &metrics;
  opts.progress = [](const MetricsRecord& r) { print_record("teacher", r); };
  const ParameterStore teacher = train_teacher(cfg, make_dataset(cfg), opts);
  save_with_config(teacher, cfg, out);
  std::printf("teacher checkpoint: %s\n", out.c_str());
  return 0;
}

int cmd_train_student(const CommonArgs& args, const std::string& teacher_path, const std::string& out,
                      const std::string& metrics_path) {
  const ExperimentConfig cfg = resolve(args);
  ParameterStore teacher;
  const ParameterStore* teacher_ptr = nullptr;
  if (cfg.use_sup) {
    if (teacher_path.empty()) throw ConfigError("use_sup=true requires --teacher");
    teacher = ParameterStore::load(teacher_path);
    if (!teacher.frozen()) throw ConfigError("teacher checkpoint " + teacher_path + " is not frozen");
    teacher_ptr = &teacher;
  }
  std::ofstream metrics = open_metrics(metrics_path);
  TrainOptions opts;
  if (metrics.is_open()) opts.metrics = &metrics;
  opts.progress = [](const MetricsRecord& r) { print_record("student", r); };
  const StudentRun run = train_student(cfg, make_dataset(cfg), teacher_ptr, opts);
  save_with_config(run.params, cfg, out);
  std::printf("student checkpoint: %s\nmAP %.6f\n", out.c_str(), run.eval.map);
  return 0;
}

int cmd_eval(const CommonArgs& args, const std::string& ckpt, const std::string& dets_path) {
  const ExperimentConfig cfg = resolve_for_checkpoint(args, ckpt);
  const ParameterStore params = ParameterStore::load(ckpt);
  const Dataset data = make_dataset(cfg);
  const EvalResult res = evaluate(params, cfg, data.eval);
  if (!dets_path.empty()) {
    std::ostringstream os;
    for (std::size_t i = 0; i < res.frames.size(); ++i) {
      os << "frame " << i << " " << res.frames[i].detections.size() << "\n";
      write_detections(os, res.frames[i].detections);
    }
    write_text(dets_path, os.str());
  }
  std::printf("mAP %.6f\n", res.map);
  for (std::size_t c = 0; c < res.class_ap.size(); ++c) std::printf("class %zu AP %.6f\n", c + 1, res.class_ap[c]);
  return 0;
}

int cmd_ablate(const CommonArgs& args, const std::string& suite_name, const std::string& out, bool assert_mode) {
  const ExperimentConfig cfg = resolve(args);
  const Suite suite = parse_suite(suite_name);
  RunCache cache;
  const AblationTable table =
      run_ablation(suite, cfg, cache, [](const std::string& line) { std::fprintf(stderr, "%s\n", line.c_str()); });
  std::ostringstream os;
  write_table(os, table);
  if (!out.empty()) write_text(out, os.str());
  std::cout << os.str();
  bool ok = true;
  for (const auto& check : check_table(suite, table)) {
    std::printf("%s: %s (%s)\n", check.passed ? "PASS" : "FAIL", check.name.c_str(), check.detail.c_str());
    ok = ok && check.passed;
  }
  return assert_mode && !ok ? kExitAssert : 0;
}

int cmd_gradcheck(const std::string& report_path, double tol) {
  const GradCheckReport report = gradcheck_all();
  std::ostringstream os;
  char buf[256];
  for (const auto& e : report.entries) {
    std::snprintf(buf, sizeof(buf), "%-40s coords %4zu max_rel_err %.3e %s\n", e.name.c_str(), e.coordinates_checked,
                  e.max_rel_error, e.finite && e.max_rel_error <= tol ? "ok" : "FAIL");
    os << buf;
  }
  std::snprintf(buf, sizeof(buf), "worst %.3e over %zu tensors, tolerance %.1e\n", report.worst(),
                report.entries.size(), tol);
  os << buf;
  if (!report_path.empty()) write_text(report_path, os.str());
  std::cout << os.str();
  return report.passed(tol) ? 0 : kExitAssert;
}

int cmd_export_attention(const CommonArgs& args, const std::string& ckpt, int scene_index, const std::string& out) {
  const ExperimentConfig cfg = resolve_for_checkpoint(args, ckpt);
  if (cfg.fusion_mode != FusionMode::ST || !cfg.use_tm || cfg.k < 2) {
    throw ConfigError("export-attention needs fusion_mode=st with use_tm=true and k >= 2");
  }
  const ParameterStore params = ParameterStore::load(ckpt);
  const Dataset data = make_dataset(cfg);
  if (scene_index < 0 || static_cast<std::size_t>(scene_index) >= data.eval.size()) {
    throw ConfigError("--scene must lie in [0, " + std::to_string(data.eval.size()) + ")");
  }
  Tape tape;
  const StudentOutput res = student_forward(tape, params, cfg, data.eval[static_cast<std::size_t>(scene_index)]);
  write_tensor_text(out, res.attention);
  std::printf("attention (%s, preceding frames oldest first) written to %s, mean entropy %.6f nats\n",
              shape_to_string(res.attention.shape()).c_str(), out.c_str(), attention_entropy(res.attention));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Spatial-temporal LiDAR feature fusion with semantic supervision"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string out, teacher_path, metrics_path, ckpt, suite, report_path;
  bool assert_mode = false;
  double tol = 1e-4;
  int scene_index = 0;

  auto* gen = app.add_subcommand("gen-data", "write synthetic train/eval scenes with semantic labels");
  add_common(gen, common);
  gen->add_option("-o,--out", out, "output directory")->required();

  auto* teacher = app.add_subcommand("train-teacher", "train and freeze the semantic teacher");
  add_common(teacher, common);
  teacher->add_option("-o,--out", out, "teacher checkpoint")->required();
  teacher->add_option("--metrics", metrics_path, "per-epoch JSON lines");

  auto* student = app.add_subcommand("train-student", "train a student under the configured fusion mode");
  add_common(student, common);
  student->add_option("--teacher", teacher_path, "frozen teacher checkpoint (needed with use_sup)");
  student->add_option("-o,--out", out, "student checkpoint")->required();
  student->add_option("--metrics", metrics_path, "per-epoch JSON lines");

  auto* eval = app.add_subcommand("eval", "evaluate a student checkpoint on the eval split");
  add_common(eval, common);
  eval->add_option("--student", ckpt, "student checkpoint")->required();
  eval->add_option("--detections", out, "write decoded detections here");

  auto* ablate = app.add_subcommand("ablate", "run an ablation suite over several seeds");
  add_common(ablate, common);
  ablate->add_option("suite", suite, "fusion_table | pruning_table | k_sweep")->required();
  ablate->add_option("-o,--out", out, "results table");
  ablate->add_flag("--assert", assert_mode, "exit 4 when a directional check fails");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every parameter tensor");
  grad->add_option("--report", report_path, "write the per-tensor report here");
  grad->add_option("--tol", tol, "maximum relative error");

  auto* attn = app.add_subcommand("export-attention", "dump temporal attention maps for one eval scene");
  add_common(attn, common);
  attn->add_option("--student", ckpt, "student checkpoint")->required();
  attn->add_option("--scene", scene_index, "eval scene index");
  attn->add_option("-o,--out", out, "output tensor text file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(common, out);
    if (*teacher) return cmd_train_teacher(common, out, metrics_path);
    if (*student) return cmd_train_student(common, teacher_path, out, metrics_path);
    if (*eval) return cmd_eval(common, ckpt, out);
    if (*ablate) return cmd_ablate(common, suite, out, assert_mode);
    if (*grad) return cmd_gradcheck(report_path, tol);
    if (*attn) return cmd_export_attention(common, ckpt, scene_index, out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
