#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "stf/ablation.hpp"

using namespace stf;

namespace {

ExperimentConfig tiny() {
  ExperimentConfig cfg = gradcheck_config();
  cfg.train_scenes = 8;
  cfg.eval_scenes = 4;
  cfg.epochs = 3;
  cfg.teacher_epochs = 3;
  cfg.learning_rate = 0.02;
  cfg.teacher_learning_rate = 0.02;
  cfg.grad_clip = 1.0;
  cfg.seeds = 1;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

struct Trained {
  StudentRun run;
  std::string log;
};

Trained train(const ExperimentConfig& cfg, const Dataset& data, const ParameterStore* teacher) {
  std::ostringstream log;
  TrainOptions opt;
  opt.metrics = &log;
  auto run = train_student(cfg, data, teacher, opt);
  return {std::move(run), log.str()};
}

}  // namespace

TEST(Config, DefaultsCarryTheReferenceSettings) {
  const ExperimentConfig cfg;
  EXPECT_EQ(cfg.lambda, 0.1);
  EXPECT_EQ(cfg.alpha, 1.0);
  EXPECT_EQ(cfg.beta, 0.1);
  EXPECT_EQ(cfg.sigma_gauss, 7.0);
  EXPECT_EQ(cfg.k, 4);
  EXPECT_EQ(cfg.frame_interval, 0.5);
  EXPECT_EQ(cfg.train_scenes, 200);
  EXPECT_EQ(cfg.eval_scenes, 50);
  EXPECT_EQ(cfg.grid_size, 64);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Config, TextRoundTripAndErrors) {
  ExperimentConfig cfg;
  cfg.set("lambda", "0.25");
  cfg.set("fusion_mode", "feature");
  cfg.set("class_mix", "1, 2");
  cfg.set("use_tm", "off");
  const auto back = ExperimentConfig::from_text(cfg.to_text());
  EXPECT_EQ(back.to_text(), cfg.to_text());
  EXPECT_EQ(back.lambda, 0.25);
  EXPECT_EQ(back.fusion_mode, FusionMode::Feature);
  EXPECT_EQ(back.class_mix, (std::vector<double>{1, 2}));
  EXPECT_FALSE(back.use_tm);

  EXPECT_THROW(ExperimentConfig::from_text("lamda = 0.1"), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_text("k = four"), ConfigError);
  EXPECT_THROW(ExperimentConfig::from_text("k 4"), ConfigError);
  EXPECT_EQ(ExperimentConfig::from_text("# note\nk = 2  # trailing\n\n").k, 2);
}

TEST(Config, EveryKeyIsAddressable) {
  const ExperimentConfig cfg;
  const std::string text = cfg.to_text();
  for (const auto& key : ExperimentConfig::keys()) EXPECT_NE(text.find(key + " = "), std::string::npos) << key;
}

TEST(Config, ValidationRules) {
  ExperimentConfig cfg;
  cfg.fusion_mode = FusionMode::Single;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg.normalise();
  EXPECT_EQ(cfg.k, 1);
  EXPECT_NO_THROW(cfg.validate());
  ExperimentConfig neg;
  neg.lambda = -0.1;
  EXPECT_THROW(neg.validate(), ConfigError);
  ExperimentConfig geo;
  geo.injection = "geometric";
  EXPECT_THROW(geo.validate(), ConfigError);
  ExperimentConfig zero_k;
  zero_k.k = 0;
  EXPECT_THROW(zero_k.validate(), ConfigError);
}

TEST(Model, StudentRegistersTheConfiguredModules) {
  ExperimentConfig cfg;
  const auto st = build_student(cfg, 1);
  EXPECT_EQ(sa_kernel_schedule(st), (std::vector<std::size_t>{1, 3, 5, 7}));
  EXPECT_TRUE(st.contains("tm.wa"));
  EXPECT_TRUE(st.contains("sup.phi1.kernel"));
  EXPECT_TRUE(st.contains("sup.phi2.layer1.kernel"));
  EXPECT_FALSE(st.contains("sup.phi2.layer2.kernel"));
  EXPECT_EQ(st.get("sup.phi2.layer0.kernel").dim(3), 3u);
  EXPECT_EQ(st.get("encoder.point.weight").dim(1), 5u);

  cfg.use_sa = cfg.use_tm = cfg.use_sup = false;
  const auto bare = build_student(cfg, 1);
  EXPECT_TRUE(sa_kernel_schedule(bare).empty());
  EXPECT_FALSE(bare.contains("tm.wa"));

  const auto teacher = build_teacher(ExperimentConfig{}, 1);
  EXPECT_EQ(teacher.get("encoder.point.weight").dim(1), 6u);
}

TEST(Model, StudentAndTeacherFeatureShapesAgree) {
  auto cfg = gradcheck_config();
  const auto scene = generate_scene(cfg.scene_config(3));
  auto teacher = build_teacher(cfg, 2);
  teacher.freeze();
  const auto student = build_student(cfg, 1);
  Tape tape;
  Tensor feats;
  teacher_forward(tape, teacher, cfg, scene, &feats);
  const auto out = student_forward(tape, student, cfg, scene);
  EXPECT_EQ(out.fused.shape(), feats.shape());
  ASSERT_TRUE(out.attention.defined());
  EXPECT_EQ(out.attention.dim(0), 3u);
}

TEST(Trainer, ScheduledLearningRate) {
  EXPECT_EQ(scheduled_lr(0.1, 0, 10, 0.8), 0.1);
  EXPECT_EQ(scheduled_lr(0.1, 7, 10, 0.8), 0.1);
  EXPECT_DOUBLE_EQ(scheduled_lr(0.1, 8, 10, 0.8), 0.01);
}

TEST(Trainer, MetricsJsonHasFixedKeysAndNulls) {
  MetricsRecord r;
  r.epoch = 2;
  r.l_det = 1.5;
  r.l_total = 1.5;
  const auto j = r.to_json();
  EXPECT_EQ(j.find("\"epoch\":2"), 1u);
  EXPECT_NE(j.find("\"l_sup_d\":null"), std::string::npos);
  EXPECT_EQ(j.find('\n'), std::string::npos);
}

TEST(Trainer, SupervisionWithoutTeacherIsConfigError) {
  const auto cfg = tiny();
  const auto data = make_dataset(cfg);
  EXPECT_THROW(train_student(cfg, data, nullptr), ConfigError);
  ParameterStore unfrozen = build_teacher(cfg, 1);
  EXPECT_THROW(train_student(cfg, data, &unfrozen), ConfigError);
}

TEST(Trainer, DatasetCurrentFramesDoNotDependOnK) {
  auto a = tiny();
  auto b = tiny();
  b.k = 2;
  const auto da = make_dataset(a), db = make_dataset(b);
  for (std::size_t i = 0; i < da.train.size(); ++i) {
    EXPECT_EQ(da.train[i].current(), db.train[i].current());
    EXPECT_EQ(da.train[i].gt, db.train[i].gt);
    EXPECT_EQ(da.train[i].frames.size(), 4u);
    EXPECT_EQ(db.train[i].frames.size(), 2u);
  }
}

class TrainedTiny : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    cfg_ = new ExperimentConfig(tiny());
    data_ = new Dataset(make_dataset(*cfg_));
    std::ostringstream log;
    TrainOptions opt;
    opt.metrics = &log;
    teacher_ = new ParameterStore(train_teacher(*cfg_, *data_, opt));
    teacher_log_ = new std::string(log.str());
  }
  static void TearDownTestSuite() {
    delete cfg_;
    delete data_;
    delete teacher_;
    delete teacher_log_;
  }
  static ExperimentConfig* cfg_;
  static Dataset* data_;
  static ParameterStore* teacher_;
  static std::string* teacher_log_;
};

ExperimentConfig* TrainedTiny::cfg_ = nullptr;
Dataset* TrainedTiny::data_ = nullptr;
ParameterStore* TrainedTiny::teacher_ = nullptr;
std::string* TrainedTiny::teacher_log_ = nullptr;

TEST_F(TrainedTiny, TeacherIsFrozenAndReproducible) {
  EXPECT_TRUE(teacher_->frozen());
  std::ostringstream log;
  TrainOptions opt;
  opt.metrics = &log;
  const auto again = train_teacher(*cfg_, *data_, opt);
  EXPECT_TRUE(again.identical_to(*teacher_));
  EXPECT_EQ(log.str(), *teacher_log_);
  const auto dir = std::filesystem::temp_directory_path();
  teacher_->save(dir / "stf_teacher_a.bin");
  again.save(dir / "stf_teacher_b.bin");
  EXPECT_EQ(slurp(dir / "stf_teacher_a.bin"), slurp(dir / "stf_teacher_b.bin"));
}

TEST_F(TrainedTiny, DecompositionHoldsEveryEpoch) {
  const auto t = train(*cfg_, *data_, teacher_);
  ASSERT_EQ(t.run.history.size(), 3u);
  for (const auto& r : t.run.history) {
    ASSERT_TRUE(r.l_sup_d && r.l_sup_r);
    EXPECT_NEAR(r.l_total, r.l_det + cfg_->lambda * (cfg_->alpha * *r.l_sup_d + cfg_->beta * *r.l_sup_r), 1e-9);
    EXPECT_TRUE(r.attention_entropy.has_value());
  }
  EXPECT_TRUE(t.run.history.back().ap.has_value());
  EXPECT_EQ(std::count(t.log.begin(), t.log.end(), '\n'), 3);
}

TEST_F(TrainedTiny, StudentRunIsByteReproducible) {
  const auto a = train(*cfg_, *data_, teacher_);
  const auto b = train(*cfg_, *data_, teacher_);
  EXPECT_EQ(a.log, b.log);
  EXPECT_TRUE(a.run.params.identical_to(b.run.params));
}

TEST_F(TrainedTiny, ZeroLambdaMatchesPrunedSupervision) {
  auto zero = *cfg_;
  zero.lambda = 0.0;
  auto off = *cfg_;
  off.use_sup = false;
  const auto a = train(zero, *data_, teacher_);
  const auto b = train(off, *data_, nullptr);
  ASSERT_EQ(a.run.history.size(), b.run.history.size());
  for (std::size_t e = 0; e < a.run.history.size(); ++e) {
    EXPECT_EQ(a.run.history[e].l_det, b.run.history[e].l_det);
    EXPECT_EQ(a.run.history[e].l_total, b.run.history[e].l_det);
    EXPECT_EQ(b.run.history[e].l_total, b.run.history[e].l_det);
    EXPECT_FALSE(b.run.history[e].l_sup_d.has_value());
  }
  EXPECT_EQ(a.run.eval.map, b.run.eval.map);
  for (const auto& name : b.run.params.names()) {
    ASSERT_TRUE(a.run.params.contains(name));
    const auto x = a.run.params.get(name).data(), y = b.run.params.get(name).data();
    ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << name;
  }
}

TEST_F(TrainedTiny, AllFlagsOffMatchesSingleFrame) {
  const auto rows = suite_rows(Suite::PruningTable, *cfg_);
  ASSERT_EQ(rows.size(), 8u);
  ASSERT_EQ(rows[0].label, "baseline");
  auto single = *cfg_;
  single.fusion_mode = FusionMode::Single;
  single.use_sup = false;
  single.normalise();
  const auto a = train(rows[0].cfg, *data_, nullptr);
  const auto b = train(single, make_dataset(single), nullptr);
  EXPECT_EQ(a.log, b.log);
  EXPECT_TRUE(a.run.params.identical_to(b.run.params));
}

TEST(Trainer, TeacherDetectionLossHalves) {
  auto cfg = tiny();
  cfg.train_scenes = 24;
  cfg.teacher_epochs = 12;
  std::vector<MetricsRecord> hist;
  TrainOptions opt;
  opt.progress = [&](const MetricsRecord& r) { hist.push_back(r); };
  train_teacher(cfg, make_dataset(cfg), opt);
  ASSERT_EQ(hist.size(), 12u);
  EXPECT_LT(hist.back().l_det, 0.5 * hist.front().l_det);
}

TEST(Ablation, SuiteGrids) {
  const ExperimentConfig base;
  const auto f = suite_rows(Suite::FusionTable, base);
  ASSERT_EQ(f.size(), 4u);
  EXPECT_EQ(f[0].cfg.k, 1);
  EXPECT_EQ(f[1].cfg.fusion_mode, FusionMode::Data);
  EXPECT_EQ(f[2].cfg.fusion_mode, FusionMode::Feature);
  EXPECT_TRUE(f[3].cfg.use_sa && f[3].cfg.use_tm && f[3].cfg.use_sup);
  const auto p = suite_rows(Suite::PruningTable, base);
  EXPECT_EQ(p.back().label, "SA+TM+SUP");
  EXPECT_FALSE(p[0].cfg.use_sa || p[0].cfg.use_tm || p[0].cfg.use_sup);
  const auto k = suite_rows(Suite::KSweep, base);
  ASSERT_EQ(k.size(), 4u);
  EXPECT_EQ(k[0].cfg.k, 1);
  EXPECT_EQ(k[3].cfg.k, 8);
  EXPECT_EQ(parse_suite("k_sweep"), Suite::KSweep);
  EXPECT_THROW(parse_suite("nope"), std::exception);
}

TEST(Ablation, ChecksReadTheTable) {
  AblationTable t;
  t.suite = "fusion_table";
  for (auto [label, mean] : std::vector<std::pair<std::string, double>>{
           {"single", 10}, {"data", 20}, {"feature", 21}, {"st+SUP", 13.5}}) {
    RowResult r;
    r.label = label;
    r.mean = mean;
    t.rows.push_back(r);
  }
  const auto checks = check_table(Suite::FusionTable, t);
  ASSERT_EQ(checks.size(), 3u);
  EXPECT_TRUE(checks[0].passed);
  EXPECT_FALSE(checks[1].passed);
  EXPECT_TRUE(checks[2].passed);
}

TEST(GradCheck, FaultInjectionNamesTheTensor) {
  const auto cfg = gradcheck_config();
  auto params = build_student(cfg, 1);
  const auto scene = generate_scene(cfg.scene_config(5));
  auto teacher = build_teacher(cfg, 2);
  teacher.freeze();
  Tape tape;
  Tensor feats;
  teacher_forward(tape, teacher, cfg, scene, &feats);
  params.get("sa.frame2.kernel")[3] = std::nan("");
  GradCheckOptions opt;
  opt.samples_per_tensor = 2;
  const auto report = gradcheck_student(cfg, params, scene, feats, opt);
  const auto failed = report.failures(1e-4);
  ASSERT_FALSE(failed.empty());
  EXPECT_NE(std::find(failed.begin(), failed.end(), "sa.frame2.kernel"), failed.end());
}

TEST(GradCheck, EmptyStoreIsAnEmptyPass) {
  ParameterStore empty;
  const auto report = finite_diff_check([](Tape&) { return Tensor::scalar(1.0); }, empty);
  EXPECT_TRUE(report.entries.empty());
  EXPECT_TRUE(report.passed(1e-4));
}
