#include <cmath>
#include <random>

#include "doctest.h"
#include "support/oracles.h"
#include "vlm6d/error.h"
#include "vlm6d/fusion_heads.h"
#include "vlm6d/nn/optimizer.h"

using namespace vlm6d;
using oracle::ThrownCode;

namespace {

nn::Vec RandomVec(std::mt19937_64 &rng, int n, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  nn::Vec v(n);
  for (int i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

ObjectModel RandomModel(std::mt19937_64 &rng, bool symmetric, int m = 50) {
  ObjectModel model;
  model.points = oracle::RandomPoints(rng, m, 0.05);
  model.diameter = oracle::Diameter(model.points);
  model.symmetric = symmetric;
  return model;
}

PosePrediction RandomPrediction(std::mt19937_64 &rng, int classes) {
  PosePrediction p;
  p.rotation_6d = RandomVec(rng, 6);
  p.translation_offset = RandomVec(rng, 3, 0.02);
  p.confidence_logit = RandomVec(rng, 1)(0);
  p.confidence = 1.0 / (1.0 + std::exp(-p.confidence_logit));
  p.class_logits = RandomVec(rng, classes);
  return p;
}

Pose RandomGt(std::mt19937_64 &rng) {
  Pose gt = oracle::RandomPose(rng, 0.05);
  gt.translation.z() += 0.8;
  return gt;
}

void ZeroAll(const nn::ParameterList &ps) {
  for (nn::Parameter *p : ps) p->value.setZero();
}

}  // namespace

TEST_CASE("fusion dimensions follow the concat, 1024, 512 chain") {
  nn::Rng rng(1);
  FusionNetwork fusion(FusionConfig{}, rng);
  std::mt19937_64 g(1);
  FeatureBundle b = fusion.Fuse(RandomVec(g, 768), RandomVec(g, 1024), false, 0);
  CHECK(b.f_concat.size() == 1792);
  CHECK(b.h1.size() == 1024);
  CHECK(b.f_fused.size() == 512);
  CHECK(b.f_concat.head(768) == b.f_rgb);
  CHECK(b.f_concat.tail(1024) == b.f_depth);
  CHECK(fusion.fc1.in_features() == 1792);
  CHECK(fusion.fc1.out_features() == 1024);
  CHECK(fusion.fc2.out_features() == 512);
  CHECK((b.f_fused.array() >= 0.0).all());
}

TEST_CASE("fusion rejects mis-sized features") {
  nn::Rng rng(2);
  FusionNetwork fusion(FusionConfig{}, rng);
  CHECK(ThrownCode([&] { fusion.Fuse(nn::Vec::Zero(767), nn::Vec::Zero(1024), false, 0); }) ==
        ErrorCode::kContract);
  CHECK(ThrownCode([&] { fusion.Fuse(nn::Vec::Zero(768), nn::Vec::Zero(1000), false, 0); }) ==
        ErrorCode::kContract);
}

TEST_CASE("zero weights give a zero fused feature in both modes") {
  nn::Rng rng(3);
  FusionNetwork fusion(FusionConfig{}, rng);
  nn::ParameterList ps;
  fusion.Collect(ps);
  ZeroAll(ps);
  std::mt19937_64 g(3);
  CHECK(fusion.Fuse(RandomVec(g, 768), RandomVec(g, 1024), false, 0).f_fused.isZero(0.0));
  CHECK(fusion.Fuse(RandomVec(g, 768), RandomVec(g, 1024), true, 17).f_fused.isZero(0.0));
}

TEST_CASE("eval fusion is deterministic; training fusion is reproducible per seed") {
  nn::Rng rng(4);
  FusionNetwork fusion(FusionConfig{}, rng);
  std::mt19937_64 g(4);
  nn::Vec a = RandomVec(g, 768), b = RandomVec(g, 1024);
  CHECK(fusion.Fuse(a, b, false, 1).f_fused == fusion.Fuse(a, b, false, 2).f_fused);
  CHECK(fusion.Fuse(a, b, true, 5).f_fused == fusion.Fuse(a, b, true, 5).f_fused);
  CHECK(fusion.Fuse(a, b, true, 5).f_fused != fusion.Fuse(a, b, true, 6).f_fused);
  CHECK(fusion.Fuse(a, b, true, 5).f_fused != fusion.Fuse(a, b, false, 5).f_fused);
}

TEST_CASE("dropout expectation over seeded masks matches the eval value") {
  nn::Rng rng(5);
  FusionNetwork fusion(FusionConfig{}, rng);
  std::mt19937_64 g(5);
  nn::Vec a = RandomVec(g, 768), b = RandomVec(g, 1024);
  const nn::Vec eval = fusion.Fuse(a, b, false, 0).h1;
  nn::Vec sum = nn::Vec::Zero(eval.size());
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) sum += fusion.Fuse(a, b, true, static_cast<std::uint64_t>(s)).h1;
  const nn::Vec mean = sum / draws;
  // Dropped-out units stay exactly zero where the undropped unit is zero.
  for (Eigen::Index i = 0; i < eval.size(); ++i)
    if (eval(i) == 0.0) CHECK(mean(i) == 0.0);
  CHECK((mean - eval).norm() <= 0.02 * eval.norm());
}

TEST_CASE("prediction heads output 6, 3, 1 and C values") {
  nn::Rng rng(6);
  PredictionHeads heads(512, 5, rng);
  std::mt19937_64 g(6);
  PosePrediction p = heads.Predict(RandomVec(g, 512).cwiseAbs());
  CHECK(p.rotation_6d.size() == 6);
  CHECK(p.translation_offset.size() == 3);
  CHECK(p.class_logits.size() == 5);
  CHECK(p.confidence > 0.0);
  CHECK(p.confidence < 1.0);
  CHECK(heads.num_classes() == 5);
  Pose decoded = p.Decode(Vec3(0.1, 0.2, 0.9));
  CHECK(decoded.IsValid());
  CHECK((decoded.translation - (Vec3(0.1, 0.2, 0.9) + p.translation_offset)).norm() == 0.0);
  CHECK(ThrownCode([&] { heads.Predict(nn::Vec::Zero(511)); }) == ErrorCode::kContract);
  CHECK(ThrownCode([&] { PredictionHeads(512, 0, rng); }) == ErrorCode::kConfig);
}

TEST_CASE("zero features and zero weights give confidence sigmoid(bias)") {
  nn::Rng rng(7);
  PredictionHeads heads(512, 3, rng);
  nn::ParameterList ps;
  heads.Collect(ps);
  ZeroAll(ps);
  heads.rotation.bias.value << 1, 0, 0, 0, 1, 0;
  PosePrediction p = heads.Predict(nn::Vec::Zero(512));
  CHECK(p.confidence == 0.5);
  heads.confidence.bias.value(0, 0) = 1.5;
  p = heads.Predict(nn::Vec::Zero(512));
  CHECK(p.confidence == doctest::Approx(1.0 / (1.0 + std::exp(-1.5))));
}

TEST_CASE("no dead heads: perturbing the fused feature moves every output") {
  nn::Rng rng(8);
  PredictionHeads heads(512, 4, rng);
  std::mt19937_64 g(8);
  for (int trial = 0; trial < 10; ++trial) {
    nn::Vec f = RandomVec(g, 512).cwiseAbs();
    nn::Vec df = RandomVec(g, 512, 1e-3);
    PosePrediction a = heads.Predict(f), b = heads.Predict(f + df);
    CHECK(a.rotation_6d != b.rotation_6d);
    CHECK(a.translation_offset != b.translation_offset);
    CHECK(a.confidence_logit != b.confidence_logit);
    CHECK(a.class_logits != b.class_logits);
  }
}

TEST_CASE("exact prediction has zero pose loss and unit confidence target") {
  std::mt19937_64 g(9);
  ObjectModel model = RandomModel(g, false);
  Pose gt = RandomGt(g);
  const Vec3 centroid(0.01, -0.01, 0.79);
  PosePrediction p = RandomPrediction(g, 3);
  p.rotation_6d = RotationTo6d(gt.rotation);
  p.translation_offset = gt.translation - centroid;
  LossResult r = PoseLoss(p, gt, model, centroid, 1, {});
  CHECK(r.components.at("pose") < 1e-15);
  CHECK(r.confidence_target == doctest::Approx(1.0));
}

TEST_CASE("pure translation error on an asymmetric object costs its norm") {
  std::mt19937_64 g(10);
  ObjectModel model = RandomModel(g, false);
  Pose gt = RandomGt(g);
  const Vec3 centroid = gt.translation - Vec3(0.003, 0.0, 0.01);
  PosePrediction p = RandomPrediction(g, 2);
  p.rotation_6d = RotationTo6d(gt.rotation);
  const Vec3 delta(0.02, -0.01, 0.005);
  p.translation_offset = gt.translation - centroid + delta;
  LossResult r = PoseLoss(p, gt, model, centroid, 0, {});
  CHECK(r.components.at("pose") == doctest::Approx(delta.norm()).epsilon(1e-12));
  CHECK(r.confidence_target == doctest::Approx(std::exp(-delta.norm() / 0.05)));
}

TEST_CASE("loss components are nonnegative and weighted exactly") {
  std::mt19937_64 g(11);
  LossWeights w{0.3, 0.7, 0.04};
  for (int trial = 0; trial < 20; ++trial) {
    ObjectModel model = RandomModel(g, trial % 2 == 0);
    PosePrediction p = RandomPrediction(g, 4);
    LossResult r = PoseLoss(p, RandomGt(g), model, Vec3(0, 0, 0.8), trial % 4, w);
    for (const auto &[name, v] : r.components) CHECK(v >= 0.0);
    CHECK(r.total == r.components.at("pose") + w.classification * r.components.at("cls") +
                         w.confidence * r.components.at("conf"));
    const double ref_cls = std::log(p.class_logits.array().exp().sum()) - p.class_logits(trial % 4);
    CHECK(r.components.at("cls") == doctest::Approx(ref_cls).epsilon(1e-12));
    const double target = std::exp(-r.components.at("pose") / 0.04);
    CHECK(r.components.at("conf") == doctest::Approx((p.confidence - target) * (p.confidence - target)));
  }
}

TEST_CASE("symmetric pose loss never exceeds the matched-point loss and equals ADD(-S)") {
  std::mt19937_64 g(12);
  for (int trial = 0; trial < 30; ++trial) {
    ObjectModel sym = RandomModel(g, true);
    ObjectModel asym = sym;
    asym.symmetric = false;
    PosePrediction p = RandomPrediction(g, 2);
    Pose gt = RandomGt(g);
    const Vec3 c(0.0, 0.0, 0.8);
    const double ls = PoseLoss(p, gt, sym, c, 0, {}).components.at("pose");
    const double la = PoseLoss(p, gt, asym, c, 0, {}).components.at("pose");
    CHECK(ls <= la + 1e-15);
    const Pose decoded = p.Decode(c);
    CHECK(std::abs(ls - oracle::Adds(decoded, gt, sym.points)) < 1e-12);
    CHECK(std::abs(la - oracle::Add(decoded, gt, asym.points)) < 1e-12);
  }
}

TEST_CASE("pose loss is invariant under a common camera-frame rigid motion") {
  std::mt19937_64 g(13);
  for (int trial = 0; trial < 20; ++trial) {
    ObjectModel model = RandomModel(g, trial % 2 == 1);
    Pose gt = RandomGt(g);
    PosePrediction p = RandomPrediction(g, 2);
    const Vec3 c(0.01, 0.02, 0.75);
    Pose pred = p.Decode(c);
    Pose t = oracle::RandomPose(g);
    Pose moved_pred = t * pred;
    PosePrediction q = p;
    q.rotation_6d = RotationTo6d(moved_pred.rotation);
    const Vec3 moved_c = t.rotation * c + t.translation;
    q.translation_offset = moved_pred.translation - moved_c;
    const double before = PoseLoss(p, gt, model, c, 0, {}).components.at("pose");
    const double after = PoseLoss(q, t * gt, model, moved_c, 0, {}).components.at("pose");
    CHECK(std::abs(before - after) < 1e-9);
  }
}

TEST_CASE("class index out of range is a contract error") {
  std::mt19937_64 g(14);
  ObjectModel model = RandomModel(g, false);
  PosePrediction p = RandomPrediction(g, 3);
  CHECK(ThrownCode([&] { PoseLoss(p, RandomGt(g), model, Vec3::Zero(), 3, {}); }) ==
        ErrorCode::kContract);
  CHECK(ThrownCode([&] { PoseLoss(p, RandomGt(g), model, Vec3::Zero(), -1, {}); }) ==
        ErrorCode::kContract);
}

TEST_CASE("loss gradients with respect to every head output match finite differences") {
  std::mt19937_64 g(15);
  for (int trial = 0; trial < 10; ++trial) {
    ObjectModel model = RandomModel(g, trial % 2 == 1);
    Pose gt = RandomGt(g);
    PosePrediction p = RandomPrediction(g, 3);
    const Vec3 c(0.0, 0.01, 0.8);
    LossResult r = PoseLoss(p, gt, model, c, 2, {});
    auto total_at = [&](auto set) {
      return [&, set](const Eigen::VectorXd &x) {
        PosePrediction q = p;
        set(q, x);
        return PoseLoss(q, gt, model, c, 2, {}).total;
      };
    };
    auto f_rot = total_at([](PosePrediction &q, const Eigen::VectorXd &x) { q.rotation_6d = x; });
    auto f_trans = total_at([](PosePrediction &q, const Eigen::VectorXd &x) { q.translation_offset = x; });
    auto f_cls = total_at([](PosePrediction &q, const Eigen::VectorXd &x) { q.class_logits = x; });
    auto f_conf = total_at([](PosePrediction &q, const Eigen::VectorXd &x) {
      q.confidence_logit = x(0);
      q.confidence = 1.0 / (1.0 + std::exp(-x(0)));
    });
    CHECK(oracle::MaxRelativeError(r.grad.rotation_6d, oracle::NumericGradient(f_rot, p.rotation_6d, 1e-4)) < 1e-2);
    CHECK(oracle::MaxRelativeError(r.grad.translation_offset,
                                   oracle::NumericGradient(f_trans, p.translation_offset, 1e-6)) < 1e-4);
    CHECK(oracle::MaxRelativeError(r.grad.class_logits, oracle::NumericGradient(f_cls, p.class_logits, 1e-6)) <
          1e-5);
    Eigen::VectorXd logit(1);
    logit(0) = p.confidence_logit;
    CHECK(oracle::RelativeError(r.grad.confidence_logit, oracle::NumericGradient(f_conf, logit, 1e-6)(0)) < 1e-5);
  }
}

TEST_CASE("fusion and head backward match finite differences on parameters and inputs") {
  nn::Rng rng(16);
  FusionConfig cfg{8, 6, 10, 7, 0.3};
  FusionNetwork fusion(cfg, rng);
  PredictionHeads heads(7, 3, rng);
  std::mt19937_64 g(16);
  ObjectModel model = RandomModel(g, false, 20);
  Pose gt = RandomGt(g);
  const Vec3 c(0.0, 0.0, 0.8);
  nn::Mat f_rgb = RandomVec(g, 8).transpose(), f_depth = RandomVec(g, 6).transpose();

  auto loss = [&](FusionNetwork &fu, PredictionHeads &hd, const nn::Mat &a, const nn::Mat &b) {
    nn::Mat fused = fu.Forward(a, b, true, 3, nullptr);
    return PoseLoss(hd.PredictBatch(fused)[0], gt, model, c, 1, {}).total;
  };
  nn::ParameterList ps;
  fusion.Collect(ps);
  heads.Collect(ps);
  for (nn::Parameter *p : ps) p->ZeroGrad();
  FusionNetwork::Cache cache;
  nn::Mat fused = fusion.Forward(f_rgb, f_depth, true, 3, &cache);
  LossResult r = PoseLoss(heads.PredictBatch(fused)[0], gt, model, c, 1, {});
  nn::Mat gf = heads.Backward(fused, {r.grad});
  auto [g_rgb, g_depth] = fusion.Backward(cache, gf);

  const double eps = 1e-6;
  double worst = 0.0;
  for (nn::Parameter *p : ps) {
    const double floor = 1e-4 * std::max(1e-3, p->grad.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < p->value.size(); ++i) {
      const double keep = p->value.data()[i];
      p->value.data()[i] = keep + eps;
      const double up = loss(fusion, heads, f_rgb, f_depth);
      p->value.data()[i] = keep - eps;
      const double down = loss(fusion, heads, f_rgb, f_depth);
      p->value.data()[i] = keep;
      worst = std::max(worst, oracle::RelativeError(p->grad.data()[i], (up - down) / (2 * eps), floor));
    }
  }
  CHECK(worst < 1e-2);
  for (int i = 0; i < 8; ++i) {
    nn::Mat up = f_rgb, down = f_rgb;
    up(0, i) += eps;
    down(0, i) -= eps;
    const double numeric = (loss(fusion, heads, up, f_depth) - loss(fusion, heads, down, f_depth)) / (2 * eps);
    CHECK(oracle::RelativeError(g_rgb(0, i), numeric, 1e-6) < 1e-2);
  }
  for (int i = 0; i < 6; ++i) {
    nn::Mat up = f_depth, down = f_depth;
    up(0, i) += eps;
    down(0, i) -= eps;
    const double numeric = (loss(fusion, heads, f_rgb, up) - loss(fusion, heads, f_rgb, down)) / (2 * eps);
    CHECK(oracle::RelativeError(g_depth(0, i), numeric, 1e-6) < 1e-2);
  }
}

TEST_CASE("a small gradient step on one example lowers the loss") {
  std::mt19937_64 g(17);
  int failures = 0;
  for (int trial = 0; trial < 20; ++trial) {
    nn::Rng rng(100 + trial);
    FusionNetwork fusion(FusionConfig{16, 16, 32, 16, 0.0}, rng);
    PredictionHeads heads(16, 3, rng);
    ObjectModel model = RandomModel(g, trial % 2 == 0, 30);
    Pose gt = RandomGt(g);
    const Vec3 c(0.0, 0.0, 0.8);
    nn::Mat a = RandomVec(g, 16).transpose(), b = RandomVec(g, 16).transpose();
    auto total = [&] {
      return PoseLoss(heads.PredictBatch(fusion.Forward(a, b, false, 0, nullptr))[0], gt, model, c,
                      trial % 3, {})
          .total;
    };
    nn::ParameterList ps;
    fusion.Collect(ps);
    heads.Collect(ps);
    for (nn::Parameter *p : ps) p->ZeroGrad();
    const double before = total();
    FusionNetwork::Cache cache;
    nn::Mat fused = fusion.Forward(a, b, false, 0, &cache);
    LossResult r = PoseLoss(heads.PredictBatch(fused)[0], gt, model, c, trial % 3, {});
    fusion.Backward(cache, heads.Backward(fused, {r.grad}));
    for (nn::Parameter *p : ps) p->value -= 1e-4 * p->grad;
    if (!(total() < before)) ++failures;
  }
  CHECK(failures <= 2);
}
