#include "ijepa/gradcheck.hpp"
#include "ijepa/train.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <fstream>

using namespace ijepa;
using ijepa::testing::tiny_config;

namespace {

OptimConfig paper_optim() {
  OptimConfig o;
  o.batch_size = 2048;
  o.epochs = 300;
  o.warmup_epochs = 15;
  o.lr_start = 1e-4;
  o.lr_peak = 1e-3;
  o.lr_final = 1e-6;
  o.wd_start = 0.04;
  o.wd_end = 0.4;
  return o;
}

struct Tiny {
  Config cfg = tiny_config();
  Dataset ds = load_training_data(cfg);
  TrainData<float> data = TrainData<float>::from(ds, cfg.model);
  Schedule sched = Schedule::from(cfg.optim, data.size());
  PositionTables<float> pos = PositionTables<float>::make(data.grid, cfg.model.width, cfg.predictor.width);

  std::vector<double> run(TrainState<float>& s, int steps) {
    std::vector<double> losses;
    for (int i = 0; i < steps; ++i) losses.push_back(train_step(s, data, sched, pos).loss.total);
    return losses;
  }
};

template <class P>
bool bitwise_equal(const P& a, const P& b) {
  bool same = true;
  zip_tensors(a, b, [&](const std::string&, const auto& x, const auto& y) { same = same && x == y; });
  return same;
}

}  // namespace

TEST(Schedule, PaperEndpointsAreExact) {
  const Schedule s = Schedule::from(paper_optim(), 2048 * 10);
  EXPECT_EQ(s.steps_per_epoch, 10);
  EXPECT_EQ(lr_at(s, 0), 1e-4);
  EXPECT_EQ(lr_at(s, s.warmup_steps), 1e-3);
  EXPECT_EQ(lr_at(s, s.total_steps), 1e-6);
  EXPECT_EQ(wd_at(s, 0), 0.04);
  EXPECT_EQ(wd_at(s, s.total_steps), 0.4);
}

TEST(Schedule, WarmupRisesAndCosineFalls) {
  const Schedule s = Schedule::from(paper_optim(), 2048 * 10);
  for (long t = 1; t <= s.warmup_steps; ++t) ASSERT_GT(lr_at(s, t), lr_at(s, t - 1));
  for (long t = s.warmup_steps + 1; t <= s.total_steps; ++t) ASSERT_LE(lr_at(s, t), lr_at(s, t - 1));
  for (long t = 1; t <= s.total_steps; ++t) ASSERT_GE(wd_at(s, t), wd_at(s, t - 1));
}

TEST(Schedule, CosineMidpointIsHalfway) {
  const Schedule s = Schedule::from(paper_optim(), 2048 * 10);
  const long mid = s.warmup_steps + (s.total_steps - s.warmup_steps) / 2;
  EXPECT_NEAR(lr_at(s, mid), 1e-6 + 0.5 * (1e-3 - 1e-6), 1e-15);
}

TEST(Schedule, StepsPerEpochUsesFullBatchesOnly) {
  OptimConfig o = paper_optim();
  o.batch_size = 64;
  EXPECT_EQ(Schedule::from(o, 1600).steps_per_epoch, 25);
  EXPECT_EQ(Schedule::from(o, 1663).steps_per_epoch, 25);
}

struct Scalar1 {
  using Scalar = double;
  Mat<double> w = Mat<double>::Constant(2, 1, 1.0);
  Mat<double> b = Mat<double>::Constant(1, 1, 1.0);

  template <class Self, class F>
  static void visit(Self& s, const std::string& p, F&& f) {
    f(p + "w", s.w);
    f(p + "b", s.b);
  }
};

TEST(AdamW, FirstStepMovesByLearningRate) {
  Scalar1 p, g;
  g.w.setConstant(1.0);
  g.b.setConstant(-2.0);
  auto st = AdamWState<Scalar1>::for_params(p);
  adamw_step(p, g, st, 0.1, 0.0, AdamWConfig{});
  // bias-corrected m / sqrt(v) is sign(g) after one step
  EXPECT_NEAR(p.w(0, 0), 1.0 - 0.1 / (1.0 + 1e-8), 1e-15);
  EXPECT_NEAR(p.b(0, 0), 1.0 + 0.1 * 2.0 / (2.0 + 1e-8), 1e-15);
}

TEST(AdamW, DecayIsDecoupledAndSkipsBiases) {
  Scalar1 p, g;
  g.w.setZero();
  g.b.setZero();
  auto st = AdamWState<Scalar1>::for_params(p);
  adamw_step(p, g, st, 0.1, 0.5, AdamWConfig{});
  EXPECT_DOUBLE_EQ(p.w(0, 0), 1.0 - 0.1 * 0.5);
  EXPECT_EQ(p.b(0, 0), 1.0);
  AdamWConfig all;
  all.decay_norm_and_bias = true;
  adamw_step(p, g, st, 0.1, 0.5, all);
  EXPECT_DOUBLE_EQ(p.b(0, 0), 1.0 - 0.1 * 0.5);
}

TEST(AdamW, NonFiniteGradientIsNumericalFailure) {
  Scalar1 p, g;
  g.w(1, 0) = std::numeric_limits<double>::infinity();
  auto st = AdamWState<Scalar1>::for_params(p);
  EXPECT_THROW(adamw_step(p, g, st, 0.1, 0.0, AdamWConfig{}), NumericalFailure);
}

TEST(Training, TargetStartsAsBitwiseCopyOfContext) {
  const auto s = init_state<float>(tiny_config());
  EXPECT_TRUE(bitwise_equal(s.target, s.params.encoder));
}

TEST(Training, SameSeedGivesIdenticalLosses) {
  Tiny t;
  auto a = init_state<float>(t.cfg);
  auto b = init_state<float>(t.cfg);
  EXPECT_EQ(t.run(a, 5), t.run(b, 5));
  EXPECT_TRUE(bitwise_equal(a.params, b.params));
}

TEST(Training, WorkerCountDoesNotChangeResults) {
  Tiny t;
  auto a = init_state<float>(t.cfg);
  t.cfg.run.workers = 3;
  auto b = init_state<float>(t.cfg);
  EXPECT_EQ(t.run(a, 3), t.run(b, 3));
  EXPECT_TRUE(bitwise_equal(a.target, b.target));
}

TEST(Training, TargetGradientsStayZero) {
  Tiny t;
  auto s = init_state<float>(t.cfg);
  t.run(s, 2);
  for (const auto& nt : named_tensors(s.target_grads)) EXPECT_TRUE(nt.tensor->isZero(0.0)) << nt.name;
}

TEST(Training, FrozenMomentumLeavesTargetUntouched) {
  Tiny t;
  t.cfg.optim.ema_start = t.cfg.optim.ema_end = 1.0;
  t.sched = Schedule::from(t.cfg.optim, t.data.size());
  auto s = init_state<float>(t.cfg);
  const auto before = s.target;
  t.run(s, 3);
  EXPECT_TRUE(bitwise_equal(s.target, before));
  EXPECT_FALSE(bitwise_equal(s.params.encoder, before));
}

TEST(Training, LossDecreasesOnTinyCorpus) {
  Tiny t;
  t.cfg.optim.epochs = 20;
  t.sched = Schedule::from(t.cfg.optim, t.data.size());
  auto s = init_state<float>(t.cfg);
  const auto losses = t.run(s, static_cast<int>(t.sched.total_steps));
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 5; ++i) {
    first += losses[static_cast<std::size_t>(i)];
    last += losses[losses.size() - 1 - static_cast<std::size_t>(i)];
  }
  EXPECT_LT(last, first);
}

TEST(Training, PixelTargetsTrainAPixelHead) {
  Tiny t;
  t.cfg.objective.target_type = TargetType::kPixels;
  auto s = init_state<float>(t.cfg);
  ASSERT_TRUE(s.params.pixel_head.has_value());
  const auto head = *s.params.pixel_head;
  t.run(s, 2);
  EXPECT_FALSE(head.w == s.params.pixel_head->w);
}

TEST(Checkpoint, RoundTripRestoresEverything) {
  Tiny t;
  auto s = init_state<float>(t.cfg);
  t.run(s, 3);
  const auto dir = ijepa::testing::temp_dir("ckpt");
  const std::string path = (dir / "c.ckpt").string();
  save_checkpoint(to_checkpoint(s), path);
  const auto back = from_checkpoint<float>(load_checkpoint(path), t.cfg);
  EXPECT_EQ(back.step, 3);
  EXPECT_EQ(back.adam.step, 3);
  EXPECT_TRUE(bitwise_equal(back.params, s.params));
  EXPECT_TRUE(bitwise_equal(back.target, s.target));
  EXPECT_TRUE(bitwise_equal(back.adam.m, s.adam.m));
  EXPECT_TRUE(bitwise_equal(back.adam.v, s.adam.v));
  EXPECT_EQ(parse_config_text(load_checkpoint(path).config_text).serialize(), t.cfg.serialize());
}

TEST(Checkpoint, ResumeReproducesTheUninterruptedRun) {
  Tiny t;
  auto straight = init_state<float>(t.cfg);
  const auto expected = t.run(straight, 8);

  auto first = init_state<float>(t.cfg);
  auto losses = t.run(first, 4);
  const auto dir = ijepa::testing::temp_dir("resume");
  save_checkpoint(to_checkpoint(first), (dir / "c").string());
  auto resumed = from_checkpoint<float>(load_checkpoint((dir / "c").string()), t.cfg);
  for (double l : t.run(resumed, 4)) losses.push_back(l);
  EXPECT_EQ(losses, expected);
}

class CheckpointErrors : public ::testing::Test {
 protected:
  std::filesystem::path dir = ijepa::testing::temp_dir("ckerr");
  Config cfg = tiny_config();
  TrainState<float> s = init_state<float>(cfg);
  std::string path = (dir / "c").string();

  void SetUp() override { save_checkpoint(to_checkpoint(s), path); }

  CheckpointErrorKind kind_of(const std::function<void()>& f) {
    try {
      f();
    } catch (const CheckpointError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "no CheckpointError";
    return CheckpointErrorKind::kFormat;
  }
};

TEST_F(CheckpointErrors, TruncatedFile) {
  std::filesystem::resize_file(path, std::filesystem::file_size(path) / 2);
  EXPECT_EQ(kind_of([&] { load_checkpoint(path); }), CheckpointErrorKind::kTruncated);
}

TEST_F(CheckpointErrors, WrongVersion) {
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(4);
  const std::uint32_t v = 99;
  f.write(reinterpret_cast<const char*>(&v), 4);
  f.close();
  EXPECT_EQ(kind_of([&] { load_checkpoint(path); }), CheckpointErrorKind::kVersion);
}

TEST_F(CheckpointErrors, BadMagic) {
  std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
  f.write("NOPE", 4);
  f.close();
  EXPECT_EQ(kind_of([&] { load_checkpoint(path); }), CheckpointErrorKind::kFormat);
}

TEST_F(CheckpointErrors, ShapeMismatch) {
  Config wider = cfg;
  wider.model.width = 24;
  wider.model.heads = 2;
  EXPECT_EQ(kind_of([&] { from_checkpoint<float>(load_checkpoint(path), wider); }), CheckpointErrorKind::kShape);
}

TEST_F(CheckpointErrors, BackboneOnlyCheckpointCannotResume) {
  save_checkpoint(encoder_checkpoint(cfg, s.target), path);
  EXPECT_EQ(kind_of([&] { from_checkpoint<float>(load_checkpoint(path), cfg); }), CheckpointErrorKind::kMissing);
}

TEST(Checkpoint, MissingFileIsIoError) { EXPECT_THROW(load_checkpoint("/nonexistent/ckpt"), IoError); }

TEST(GradCheck, CompositeMatchesFiniteDifferences) {
  const GradCheckReport r = gradcheck(tiny_config(), GradCheckOptions{4, 1e-5, 1e-3, 1});
  EXPECT_GE(r.probes.size(), 100u);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(GradCheck, PixelAndInputMaskingVariantsAlsoMatch) {
  Config c = tiny_config();
  c.objective.target_type = TargetType::kPixels;
  EXPECT_LT(gradcheck(c, GradCheckOptions{3, 1e-5, 1e-3, 2}).max_rel_error, 1e-4);
  c = tiny_config();
  c.objective.target_mask_mode = TargetMaskMode::kInput;
  EXPECT_LT(gradcheck(c, GradCheckOptions{3, 1e-5, 1e-3, 3}).max_rel_error, 1e-4);
}
