#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "stf/detect.hpp"
#include "stf/gradcheck.hpp"
#include "stf/ops.hpp"
#include "stf/rng.hpp"
#include "stf/supervision.hpp"

using namespace stf;

namespace {

Tensor random_tensor(Shape shape, std::uint64_t stream, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  CounterRng rng(77, stream);
  for (double& v : t.mutable_data()) v = rng.uniform(lo, hi);
  return t;
}

ObjectTrack box_at(double x, double y, int cls = 1, double yaw = 0) {
  ObjectTrack t;
  t.class_id = cls;
  t.size = {4.0, 1.8, 1.6};
  t.pose = {x, y, 0.8, yaw};
  return t;
}

const GridSpec kGrid64 = square_grid(32.0, 64);

// Scalar conv on C x H x W vectors, zero padded.
std::vector<double> conv_ref(const std::vector<double>& x, std::size_t ci, std::size_t h, std::size_t w,
                             const Tensor& k, const Tensor& b) {
  const std::size_t co = k.dim(0), m = k.dim(2);
  const long r = static_cast<long>(m / 2);
  std::vector<double> out(co * h * w);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx) {
        double acc = b[o];
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t ky = 0; ky < m; ++ky)
            for (std::size_t kx = 0; kx < m; ++kx) {
              const long sy = long(y) + long(ky) - r, sx = long(xx) + long(kx) - r;
              if (sy < 0 || sx < 0 || sy >= long(h) || sx >= long(w)) continue;
              acc += k[((o * ci + c) * m + ky) * m + kx] * x[(c * h + sy) * w + sx];
            }
        out[(o * h + y) * w + xx] = acc;
      }
  return out;
}

}  // namespace

TEST(WeightMap, CentreIsOneAndSigmaIsExpMinusHalf) {
  const auto [r, c] = kGrid64.to_cell_coords(0.25, 0.25);
  ASSERT_EQ(std::floor(r), 32.0);
  ASSERT_EQ(std::floor(c), 32.0);
  const Tensor w = gaussian_weight_map({box_at(0.25, 0.25)}, kGrid64);
  EXPECT_EQ(w[32 * 64 + 32], 1.0);
  EXPECT_NEAR(w[32 * 64 + 39], std::exp(-0.5), 1e-12);
  EXPECT_NEAR(w[25 * 64 + 32], std::exp(-0.5), 1e-12);
  for (double v : w.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  // Decreasing away from the centre along a row.
  for (std::size_t j = 33; j < 64; ++j) EXPECT_LE(w[32 * 64 + j], w[32 * 64 + j - 1]);
}

TEST(WeightMap, TwoBoxesArePointwiseMax) {
  const auto a = box_at(-5.3, 4.1), b = box_at(6.2, -2.9, 2);
  const Tensor ma = gaussian_weight_map({a}, kGrid64);
  const Tensor mb = gaussian_weight_map({b}, kGrid64);
  const Tensor both = gaussian_weight_map({a, b}, kGrid64);
  const Tensor swapped = gaussian_weight_map({b, a, b}, kGrid64);
  for (std::size_t i = 0; i < kGrid64.cells(); ++i) {
    ASSERT_EQ(both[i], std::max(ma[i], mb[i]));
    ASSERT_EQ(swapped[i], both[i]);
  }
}

TEST(WeightMap, EmptyGroundTruthIsFloor) {
  const Tensor w = gaussian_weight_map({}, kGrid64);
  for (double v : w.data()) EXPECT_EQ(v, kWeightMapFloor);
  EXPECT_THROW(gaussian_weight_map({}, kGrid64, 0.0), std::invalid_argument);
}

TEST(Supervision, DistillClosedForms) {
  ParameterStore p(1);
  init_supervision(p, 3);
  Tape tape;
  Tensor f = random_tensor({3, 8, 8}, 1);
  EXPECT_EQ(scene_distill_loss(tape, f, f, p).item(), 0.0);
  Tensor shifted = f.clone();
  for (double& v : shifted.mutable_data()) v -= 1.0;
  EXPECT_NEAR(scene_distill_loss(tape, f, shifted, p).item(), 3.0, 1e-12);
}

TEST(Supervision, ReconMatchesScalarReference) {
  const std::size_t c = 3, h = 7, w = 6;
  ParameterStore p(2);
  init_supervision(p, c);
  p.get("sup.phi1.kernel") = random_tensor({c, c, 1, 1}, 2);
  p.get("sup.phi1.bias") = random_tensor({c}, 3);
  p.get("sup.phi2.layer0.bias") = random_tensor({c}, 4);
  p.get("sup.phi2.layer1.bias") = random_tensor({c}, 5);
  Tensor f = random_tensor({c, h, w}, 6), t = random_tensor({c, h, w}, 7);
  Tensor wm = random_tensor({h, w}, 8, 0, 1);
  Tape tape;
  const double got = object_recon_loss(tape, f, t, wm, p).item();

  std::vector<double> x(f.data().begin(), f.data().end());
  auto y = conv_ref(x, c, h, w, p.get("sup.phi1.kernel"), p.get("sup.phi1.bias"));
  y = conv_ref(y, c, h, w, p.get("sup.phi2.layer0.kernel"), p.get("sup.phi2.layer0.bias"));
  for (double& v : y) v = std::max(0.0, v);
  y = conv_ref(y, c, h, w, p.get("sup.phi2.layer1.kernel"), p.get("sup.phi2.layer1.bias"));
  double ref = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < h * w; ++i) ref += std::pow(y[ch * h * w + i] - t[ch * h * w + i], 2) * wm[i];
  ref /= double(h * w);
  EXPECT_NEAR(got, ref, 1e-10);

  // Uniform weights reduce to plain L2 through the decoder.
  const double uniform = object_recon_loss(tape, f, t, Tensor::full({h, w}, 1.0), p).item();
  const Tensor dec = decode_phi2(tape, project_phi1(tape, f, p), p);
  EXPECT_NEAR(uniform, ops::weighted_squared_error(tape, dec, t).item(), 1e-12);
}

TEST(Supervision, CombinationWeights) {
  ParameterStore p(3);
  init_supervision(p, 2);
  Tensor f = random_tensor({2, 8, 8}, 9), t = random_tensor({2, 8, 8}, 10);
  const Tensor wm = gaussian_weight_map({box_at(0, 0)}, square_grid(8.0, 8), 2.0);
  Tape tape;
  const auto d = scene_distill_loss(tape, f, t, p).item();
  const auto r = object_recon_loss(tape, f, t, wm, p).item();
  const auto s = semantic_supervision_loss(tape, f, t, wm, p);
  EXPECT_NEAR(s.total.item(), 1.0 * d + 0.1 * r, 1e-12);
  EXPECT_EQ(s.distill.item(), d);
  EXPECT_EQ(s.recon.item(), r);
  EXPECT_NEAR(semantic_supervision_loss(tape, f, t, wm, p, 0.0, 1.0).total.item(), r, 1e-15);
  EXPECT_EQ(semantic_supervision_loss(tape, f, f, wm, p, 1.0, 0.0).total.item(), 0.0);
}

TEST(Supervision, GradientsAndFrozenTeacherTarget) {
  ParameterStore p(4);
  init_supervision(p, 2);
  p.add("f", random_tensor({2, 8, 8}, 11));
  Tensor teacher = random_tensor({2, 8, 8}, 12);
  const Tensor wm = gaussian_weight_map({box_at(0.5, -0.5)}, square_grid(8.0, 8), 2.0);
  auto fn = [&](Tape& tape) { return semantic_supervision_loss(tape, p.get("f"), teacher, wm, p).total; };
  const auto report = finite_diff_check(fn, p);
  EXPECT_EQ(report.entries.size(), p.size());
  EXPECT_TRUE(report.passed(1e-4)) << report.worst();
  EXPECT_FALSE(teacher.has_grad());
}

TEST(Head, ZeroWeightsGiveHalfHeatmap) {
  ParameterStore p(1);
  init_head(p, "head", 3, 2);
  for (const auto& n : p.names()) std::fill(p.get(n).mutable_data().begin(), p.get(n).mutable_data().end(), 0.0);
  Tape tape;
  const auto out = head_forward(tape, random_tensor({3, 8, 9}, 13), p);
  EXPECT_EQ(out.heatmap.shape(), (Shape{2, 8, 9}));
  EXPECT_EQ(out.regression.shape(), (Shape{4, 8, 9}));
  for (double v : out.heatmap.data()) EXPECT_EQ(v, 0.5);
}

TEST(DetLoss, EmptyGroundTruthHalfHeatmapClosedForm) {
  const GridSpec g = square_grid(8.0, 8);
  HeadOutput h;
  h.heat_logits = Tensor::zeros({2, 8, 8}, true);
  h.regression = Tensor::zeros({4, 8, 8}, true);
  Tape tape;
  const auto loss = detection_loss(tape, h, {}, g);
  // Every cell is a negative: -(1-0)^4 * 0.5^2 * log(0.5), normalised by max(1, 0).
  EXPECT_NEAR(loss.total.item(), 2 * 64 * 0.25 * std::log(2.0), 1e-12);
  EXPECT_EQ(loss.regression.item(), 0.0);
}

TEST(DetLoss, NearPerfectPredictionIsSmall) {
  const GridSpec g = square_grid(16.0, 16);
  const auto box = box_at(2.5, -3.5, 2, 0.3);
  HeadOutput h;
  const Tensor targets = detection_targets({box}, g, 2, 2.0);
  h.heat_logits = Tensor({2, 16, 16});
  for (std::size_t i = 0; i < targets.numel(); ++i) h.heat_logits[i] = targets[i] == 1.0 ? 30.0 : -30.0;
  h.regression = Tensor::zeros({4, 16, 16});
  const auto cell = *g.cell_of(2.5, -3.5);
  h.regression[0 * 256 + cell] = std::log(4.0);
  h.regression[1 * 256 + cell] = std::log(1.8);
  h.regression[2 * 256 + cell] = std::sin(0.3);
  h.regression[3 * 256 + cell] = std::cos(0.3);
  Tape tape;
  EXPECT_LT(detection_loss(tape, h, {box}, g).total.item(), 1e-3);
  // A half turn has the same target.
  const auto flipped = box_at(2.5, -3.5, 2, 0.3 + std::numbers::pi);
  EXPECT_LT(detection_loss(tape, h, {flipped}, g).total.item(), 1e-3);
}

TEST(DetLoss, OutsideOrUnknownClassIsValidationError) {
  const GridSpec g = square_grid(8.0, 8);
  HeadOutput h{Tensor::zeros({1, 8, 8}), Tensor::zeros({1, 8, 8}), Tensor::zeros({4, 8, 8})};
  Tape tape;
  EXPECT_THROW(detection_loss(tape, h, {box_at(9, 0)}, g), ValidationError);
  EXPECT_THROW(detection_loss(tape, h, {box_at(0, 0, 2)}, g), ValidationError);
}

TEST(DetLoss, GradientsMatchFiniteDifferences) {
  const GridSpec g = square_grid(8.0, 8);
  ParameterStore p(5);
  p.add("logits", random_tensor({2, 8, 8}, 14, -3, 3));
  p.add("reg", random_tensor({4, 8, 8}, 15, -2, 2));
  const std::vector<ObjectTrack> gt{box_at(0.3, 0.6, 1, 2.0), box_at(-2.5, -1.5, 2, -0.4)};
  auto fn = [&](Tape& tape) {
    HeadOutput h{p.get("logits"), Tensor(), p.get("reg")};
    return detection_loss(tape, h, gt, g).total;
  };
  GradCheckOptions opt;
  opt.samples_per_tensor = 1000;
  EXPECT_TRUE(finite_diff_check(fn, p, opt).passed(1e-6));
}

TEST(DetLoss, DecreasesOverFiftySteps) {
  const GridSpec g = square_grid(8.0, 8);
  ParameterStore p(6);
  p.add("x", random_tensor({3, 8, 8}, 16));
  init_head(p, "head", 3, 2);
  const std::vector<ObjectTrack> gt{box_at(0.3, 0.6, 1, 2.0), box_at(-2.5, -1.5, 2, -0.4)};
  SgdMomentum opt(0.0);
  double prev = 1e300;
  for (int step = 0; step < 50; ++step) {
    Tape tape;
    p.zero_grad();
    const Tensor loss = detection_loss(tape, head_forward(tape, p.get("x"), p), gt, g).total;
    EXPECT_LT(loss.item(), prev) << "step " << step;
    prev = loss.item();
    tape.backward(loss);
    opt.step(p, 0.003, 1);
  }
}

TEST(Decode, PeaksThresholdAndTieRule) {
  const GridSpec g = square_grid(32.0, 32);
  HeadOutput h{Tensor(), Tensor::full({1, 32, 32}, 0.05), Tensor::zeros({4, 32, 32})};
  EXPECT_TRUE(decode(h, g, 0.1, 10).empty());
  h.heatmap[10 * 32 + 20] = 0.9;
  h.regression[3 * 1024 + 10 * 32 + 20] = 1.0;
  auto d = decode(h, g, 0.1, 10);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].x, g.cell_center_x(20));
  EXPECT_EQ(d[0].y, g.cell_center_y(10));
  EXPECT_EQ(d[0].length, 1.0);
  EXPECT_EQ(d[0].yaw, 0.0);
  EXPECT_EQ(d[0].score, 0.9);
  h.heatmap[10 * 32 + 21] = 0.9;
  d = decode(h, g, 0.1, 10);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].x, g.cell_center_x(20));
}

TEST(Ap, HandComputedCurve) {
  std::vector<ObjectTrack> gt{box_at(0, 0), box_at(10, 10)};
  auto det = [](double x, double y, double s) {
    Detection d;
    d.x = x;
    d.y = y;
    d.length = 4.0;
    d.width = 1.8;
    d.score = s;
    return d;
  };
  const std::vector<Detection> dets{det(0, 0, 0.9), det(-10, 5, 0.8), det(10, 10, 0.7)};
  // Precision is 1 up to recall 0.5 (51 points), then 2/3 (50 points).
  EXPECT_NEAR(average_precision(dets, gt), 253.0 / 303.0, 1e-12);
  auto scaled = dets;
  for (auto& d : scaled) d.score *= 0.25;
  EXPECT_EQ(average_precision(scaled, gt), average_precision(dets, gt));
  EXPECT_EQ(average_precision({det(0, 0, 1), det(10, 10, 1)}, gt), 1.0);
  EXPECT_EQ(average_precision({}, gt), 0.0);
}

TEST(Ap, ClassesDoNotCrossMatch) {
  Detection d;
  d.class_id = 2;
  d.length = 4.0;
  d.width = 1.8;
  d.score = 0.9;
  EXPECT_EQ(average_precision({d}, {box_at(0, 0, 1)}), 0.0);
  EXPECT_NEAR(bev_iou(d, box_at(0, 0, 1)), 1.0, 1e-12);
}
