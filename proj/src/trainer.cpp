#include "stf/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>

#include <json.hpp>

#include "stf/rng.hpp"

namespace stf {

namespace {

std::vector<SceneSequence> make_split(const ExperimentConfig& cfg, const char* split, int count) {
  std::vector<SceneSequence> out;
  out.reserve(static_cast<std::size_t>(count));
  const std::uint64_t base = derive_key(cfg.seed, fnv1a(split));
  for (int i = 0; i < count; ++i) {
    out.push_back(generate_scene(cfg.scene_config(derive_key(base, static_cast<std::uint64_t>(i)))));
  }
  return out;
}

std::vector<std::size_t> epoch_order(std::uint64_t seed, int epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  CounterRng rng(derive_key(seed, fnv1a("shuffle")), static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

void check_finite(double value, const std::string& what, int epoch) {
  if (!std::isfinite(value)) {
    throw NumericalError(what + " became non-finite in epoch " + std::to_string(epoch));
  }
}

void check_grads(const ParameterStore& params, int epoch) {
  for (const auto& [name, t] : params) {
    if (!t.has_grad()) continue;
    const auto g = t.grad();
    if (!std::all_of(g.begin(), g.end(), [](double v) { return std::isfinite(v); })) {
      throw NumericalError("gradient of " + name + " became non-finite in epoch " + std::to_string(epoch));
    }
  }
}

bool wants_eval(const ExperimentConfig& cfg, int epoch, int epochs) {
  if (epoch == epochs - 1) return true;
  return cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
}

EvalResult score(std::vector<EvalFrame> frames, int num_classes, double iou) {
  EvalResult r;
  r.frames = std::move(frames);
  r.map = mean_average_precision(r.frames, static_cast<std::size_t>(num_classes), iou);
  for (int c = 1; c <= num_classes; ++c) {
    std::vector<EvalFrame> per_class;
    bool any_gt = false;
    for (const auto& f : r.frames) {
      EvalFrame pf;
      for (const auto& d : f.detections) if (d.class_id == c) pf.detections.push_back(d);
      for (const auto& g : f.gt) if (g.class_id == c) pf.gt.push_back(g);
      any_gt = any_gt || !pf.gt.empty();
      per_class.push_back(std::move(pf));
    }
    r.class_ap.push_back(any_gt ? average_precision(per_class, iou) : std::nan(""));
  }
  return r;
}

}  // namespace

Dataset make_dataset(const ExperimentConfig& cfg) {
  cfg.validate();
  return {make_split(cfg, "train", cfg.train_scenes), make_split(cfg, "eval", cfg.eval_scenes)};
}

std::string MetricsRecord::to_json() const {
  nlohmann::ordered_json j;
  j["epoch"] = epoch;
  j["lr"] = learning_rate;
  j["l_det"] = l_det;
  j["l_sup_d"] = l_sup_d ? nlohmann::ordered_json(*l_sup_d) : nlohmann::ordered_json(nullptr);
  j["l_sup_r"] = l_sup_r ? nlohmann::ordered_json(*l_sup_r) : nlohmann::ordered_json(nullptr);
  j["l_total"] = l_total;
  if (ap) j["ap"] = *ap;
  if (attention_entropy) j["attention_entropy"] = *attention_entropy;
  if (wall_time_s) j["wall_time_s"] = *wall_time_s;
  return j.dump();
}

double scheduled_lr(double base, int epoch, int epochs, double decay_at) {
  const int boundary = static_cast<int>(std::floor(decay_at * epochs));
  return epoch >= boundary && boundary < epochs ? base * 0.1 : base;
}

ParameterStore train_teacher(const ExperimentConfig& cfg, const Dataset& data, const TrainOptions& options) {
  ParameterStore teacher = build_teacher(cfg, cfg.seed);
  SgdMomentum opt(cfg.momentum, cfg.grad_clip);
  const auto det_opts = detection_options(cfg);
  const GridSpec grid = cfg.grid();
  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.teacher_epochs; ++epoch) {
    const double lr = scheduled_lr(cfg.teacher_learning_rate, epoch, cfg.teacher_epochs, cfg.lr_decay_at);
    const auto order = epoch_order(derive_key(cfg.seed, fnv1a("teacher")), epoch, data.train.size());
    double sum = 0;
    std::size_t in_batch = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const auto& scene = data.train[order[i]];
      Tape tape;
      const HeadOutput head = teacher_forward(tape, teacher, cfg, scene);
      const DetectionLoss loss = detection_loss(tape, head, scene.gt, grid, det_opts);
      check_finite(loss.total.item(), "teacher loss", epoch);
      sum += loss.total.item();
      tape.backward(loss.total);
      if (++in_batch == static_cast<std::size_t>(cfg.batch_size) || i + 1 == order.size()) {
        check_grads(teacher, epoch);
        opt.step(teacher, lr, in_batch);
        teacher.zero_grad();
        in_batch = 0;
      }
    }
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    rec.l_det = rec.l_total = sum / static_cast<double>(order.size());
    if (wants_eval(cfg, epoch, cfg.teacher_epochs)) rec.ap = evaluate_teacher(teacher, cfg, data.eval).map;
    if (cfg.log_wall_time) {
      rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    if (options.metrics) *options.metrics << rec.to_json() << '\n' << std::flush;
    if (options.progress) options.progress(rec);
  }
  teacher.freeze();
  return teacher;
}

StudentRun train_student(const ExperimentConfig& cfg, const Dataset& data, const ParameterStore* teacher,
                         const TrainOptions& options) {
  if (cfg.use_sup && (!teacher || !teacher->frozen())) {
    throw ConfigError("use_sup=true needs a frozen teacher checkpoint");
  }
  StudentRun run{build_student(cfg, cfg.seed), {}, {}};
  ParameterStore& params = run.params;
  const GridSpec grid = cfg.grid();

  // Teacher features and object weight maps are fixed for the whole run.
  std::vector<Tensor> teacher_feats(data.train.size());
  std::vector<Tensor> weight_maps(data.train.size());
  if (cfg.use_sup) {
    for (std::size_t i = 0; i < data.train.size(); ++i) {
      Tape tape;
      teacher_feats[i] = teacher_features(tape, inject_frame(data.train[i], 0, TieBreak::FirstByIndex), grid,
                                          *teacher, "encoder", cfg.semantic_encoding, cfg.num_classes());
      weight_maps[i] = gaussian_weight_map(data.train[i].gt, grid, cfg.sigma_gauss);
    }
  }

  SgdMomentum opt(cfg.momentum, cfg.grad_clip);
  const auto start = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = scheduled_lr(cfg.learning_rate, epoch, cfg.epochs, cfg.lr_decay_at);
    const auto order = epoch_order(cfg.seed, epoch, data.train.size());
    double det = 0, sup_d = 0, sup_r = 0, total = 0, entropy = 0;
    bool have_attention = false;
    std::size_t in_batch = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
      const std::size_t s = order[i];
      Tape tape;
      const StudentOutput out = student_forward(tape, params, cfg, data.train[s]);
      const ObjectiveTerms terms =
          student_objective(tape, out, cfg, data.train[s], params, teacher_feats[s], weight_maps[s]);
      check_finite(terms.total.item(), "training loss", epoch);
      det += terms.det.total.item();
      total += terms.total.item();
      if (cfg.use_sup) {
        sup_d += terms.sup.distill.item();
        sup_r += terms.sup.recon.item();
      }
      if (out.attention.defined()) {
        entropy += attention_entropy(out.attention);
        have_attention = true;
      }
      tape.backward(terms.total);
      if (++in_batch == static_cast<std::size_t>(cfg.batch_size) || i + 1 == order.size()) {
        check_grads(params, epoch);
        opt.step(params, lr, in_batch);
        params.zero_grad();
        in_batch = 0;
      }
    }
    const double n = static_cast<double>(order.size());
    MetricsRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = lr;
    rec.l_det = det / n;
    rec.l_total = total / n;
    if (cfg.use_sup) {
      rec.l_sup_d = sup_d / n;
      rec.l_sup_r = sup_r / n;
    }
    if (have_attention) rec.attention_entropy = entropy / n;
    if (wants_eval(cfg, epoch, cfg.epochs)) {
      run.eval = evaluate(params, cfg, data.eval);
      rec.ap = run.eval.map;
    }
    if (cfg.log_wall_time) {
      rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    }
    if (options.metrics) *options.metrics << rec.to_json() << '\n' << std::flush;
    if (options.progress) options.progress(rec);
    run.history.push_back(rec);
  }
  return run;
}

EvalResult evaluate(const ParameterStore& params, const ExperimentConfig& cfg,
                    const std::vector<SceneSequence>& scenes) {
  const GridSpec grid = cfg.grid();
  std::vector<EvalFrame> frames;
  for (const auto& scene : scenes) {
    Tape tape;
    const StudentOutput out = student_forward(tape, params, cfg, scene);
    frames.push_back({decode(out.head, grid, cfg.score_thresh, static_cast<std::size_t>(cfg.max_dets)), scene.gt});
  }
  return score(std::move(frames), cfg.num_classes(), cfg.iou_thresh);
}

EvalResult evaluate_teacher(const ParameterStore& teacher, const ExperimentConfig& cfg,
                            const std::vector<SceneSequence>& scenes) {
  const GridSpec grid = cfg.grid();
  std::vector<EvalFrame> frames;
  for (const auto& scene : scenes) {
    Tape tape;
    const HeadOutput head = teacher_forward(tape, teacher, cfg, scene);
    frames.push_back({decode(head, grid, cfg.score_thresh, static_cast<std::size_t>(cfg.max_dets)), scene.gt});
  }
  return score(std::move(frames), cfg.num_classes(), cfg.iou_thresh);
}

}  // namespace stf
