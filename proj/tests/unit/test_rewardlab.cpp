#include <gtest/gtest.h>

#include <cmath>

#include "clinalign/rewardlab.hpp"

using namespace clinalign;

namespace {

struct Setup {
  ToyTask toy;
  RewardLabState state;
  std::vector<RewardExample> batch;
};

Setup setup(RewardWeights w = {}, std::uint64_t seed = 11, std::size_t batch = 3) {
  ToyConfig cfg;
  cfg.seed = seed;
  cfg.per_class = 10;
  Setup s{make_toy_task(cfg), make_state(cfg, w), {}};
  randomize_adapters(s.state, seed + 1);
  for (std::size_t i = 0; i < batch; ++i) s.batch.push_back(s.toy.examples[i * 7 % s.toy.examples.size()]);
  return s;
}

// Central differences of the truncated surrogate (prefix latents frozen).
std::vector<double> numeric_grad(RewardLabState s, const Setup& su, std::uint64_t seed,
                                 const std::vector<VectorXd>& frozen, double h) {
  auto theta = s.lora.flatten();
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + h;
    s.lora.assign(theta);
    const double up = evaluate(s, su.toy.task, su.batch, seed, false, &frozen).loss.total;
    theta[i] = keep - h;
    s.lora.assign(theta);
    const double down = evaluate(s, su.toy.task, su.batch, seed, false, &frozen).loss.total;
    theta[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num) / std::max(std::sqrt(den), 1e-300);
}

}  // namespace

TEST(Schedule, LinearHitsFinalAlphaBar) {
  for (std::size_t T : {1u, 5u, 20u, 50u}) {
    const auto s = Schedule::linear(T);
    EXPECT_EQ(s.steps(), T);
    EXPECT_EQ(s.alpha_bar[0], 1.0);
    EXPECT_NEAR(s.alpha_bar[T], 1e-3, 1e-12);
    for (std::size_t t = 1; t <= T; ++t) EXPECT_LT(s.alpha_bar[t], s.alpha_bar[t - 1]);
  }
}

TEST(Schedule, RejectsMalformedInput) {
  EXPECT_THROW(Schedule::from_alpha_bar(std::vector<double>{0.9, 0.95}), Error);
  EXPECT_THROW(Schedule::from_alpha_bar(std::vector<double>{1.2}), Error);
  EXPECT_THROW(Schedule::from_alpha_bar(std::vector<double>{}), Error);
}

TEST(ForwardNoise, StepRangeAndFormula) {
  const auto s = Schedule::linear(10);
  const VectorXd z = VectorXd::Constant(3, 2.0), e = VectorXd::Constant(3, -1.0);
  const VectorXd zt = forward_noise(z, 4, e, s);
  EXPECT_NEAR(zt(0), std::sqrt(s.alpha_bar[4]) * 2 - std::sqrt(1 - s.alpha_bar[4]), 1e-15);
  EXPECT_THROW(forward_noise(z, 0, e, s), Error);
  EXPECT_THROW(forward_noise(z, 11, e, s), Error);
}

TEST(ReverseStep, DeterministicStepRecoversCleanLatentFromTrueNoise) {
  const auto s = Schedule::linear(10);
  const VectorXd z0 = VectorXd::LinSpaced(4, -1, 1), eps = VectorXd::LinSpaced(4, 0.5, -0.3);
  VectorXd z = forward_noise(z0, 10, eps, s);
  for (std::size_t t = 10; t >= 1; --t) {
    const auto k = reverse_coefficients(s, t, 0.0);
    EXPECT_EQ(k.c_noise, 0.0);
    z = k.c_z * z + k.c_eps * eps;
  }
  EXPECT_LT((z - z0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Lora, ZeroBLeavesBaseOutputUnchanged) {
  ToyConfig cfg;
  const auto s = make_state(cfg, {});
  EXPECT_TRUE(s.lora.in.b.isZero(0));
  const auto w = effective(s);
  EXPECT_EQ(w.w_in, s.base.w_in);
  EXPECT_EQ(w.w_out, s.base.w_out);
  EXPECT_EQ(s.lora.in.a.rows(), 2);
}

TEST(Weights, ValidateRanges) {
  RewardWeights w;
  EXPECT_NO_THROW(w.validate());
  w.K = 0;
  EXPECT_THROW(w.validate(), Error);
  w.K = 21;
  EXPECT_THROW(w.validate(), Error);
  w = {};
  w.M = 0;
  EXPECT_THROW(w.validate(), Error);
}

TEST(Gradients, MatchFiniteDifferencesOnTruncatedSurrogate) {
  for (std::size_t K : {1u, 3u}) {
    RewardWeights w;
    w.K = K;
    w.T_train = 6;
    w.M = 2;
    auto su = setup(w, 30 + K);
    const std::uint64_t seed = 99;
    const auto ev = evaluate(su.state, su.toy.task, su.batch, seed, true);
    const auto frozen = ev.prefixes;
    const auto ev2 = evaluate(su.state, su.toy.task, su.batch, seed, true, &frozen);
    EXPECT_EQ(ev.grad.flatten(), ev2.grad.flatten());
    const auto fd = numeric_grad(su.state, su, seed, frozen, 1e-6);
    EXPECT_LT(rel_error(ev.grad.flatten(), fd), 1e-6) << "K=" << K;
  }
}

TEST(Gradients, RewardPathAloneMatchesFiniteDifferences) {
  RewardWeights w;
  w.lambda_diff = 0.0;
  w.lambda_cam = 1.0;
  w.K = 2;
  w.T_train = 5;
  auto su = setup(w, 7);
  const auto ev = evaluate(su.state, su.toy.task, su.batch, 5, true);
  const auto fd = numeric_grad(su.state, su, 5, ev.prefixes, 1e-6);
  EXPECT_LT(rel_error(ev.grad_reward.flatten(), fd), 1e-6);
}

TEST(Gradients, FullChainWhenKEqualsTrainSteps) {
  RewardWeights w;
  w.K = 4;
  w.T_train = 4;
  auto su = setup(w, 12, 2);
  const auto ev = evaluate(su.state, su.toy.task, su.batch, 3, true);
  // Frozen prefix is the initial noise, independent of the adapters.
  const auto fd = numeric_grad(su.state, su, 3, ev.prefixes, 1e-6);
  EXPECT_LT(rel_error(ev.grad.flatten(), fd), 1e-6);
}

TEST(Gradients, DoublingLambdaCamDoublesRewardGradient) {
  auto su = setup();
  auto a = evaluate(su.state, su.toy.task, su.batch, 1, true);
  su.state.weights.lambda_cam *= 2;
  auto b = evaluate(su.state, su.toy.task, su.batch, 1, true);
  const auto ga = a.grad_reward.flatten(), gb = b.grad_reward.flatten();
  for (std::size_t i = 0; i < ga.size(); ++i) EXPECT_EQ(gb[i], 2 * ga[i]);
  EXPECT_EQ(a.grad_diff.flatten(), b.grad_diff.flatten());
}

TEST(Gradients, ZeroLambdaCamRemovesRewardPath) {
  RewardWeights w;
  w.lambda_cam = 0.0;
  auto su = setup(w);
  const auto ev = evaluate(su.state, su.toy.task, su.batch, 4, true);
  for (double v : ev.grad_reward.flatten()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(ev.grad.flatten(), ev.grad_diff.flatten());
}

TEST(Gradients, FreshAdaptersOnlyMoveB) {
  ToyConfig cfg;
  cfg.per_class = 5;
  const auto toy = make_toy_task(cfg);
  auto s = make_state(cfg, {});
  std::vector<RewardExample> batch(toy.examples.begin(), toy.examples.begin() + 2);
  const auto ev = evaluate(s, toy.task, batch, 0, true);
  EXPECT_TRUE(ev.grad.in.a.isZero(0));
  EXPECT_TRUE(ev.grad.out.a.isZero(0));
  EXPECT_GT(ev.grad.in.b.norm() + ev.grad.out.b.norm(), 0.0);
}

TEST(Objective, MatchesComponentsAndWeights) {
  auto su = setup();
  const auto ev = evaluate(su.state, su.toy.task, su.batch, 8, false);
  const auto& w = su.state.weights;
  EXPECT_NEAR(ev.loss.reward, combine(ev.loss.components, w), 1e-12);
  EXPECT_NEAR(ev.loss.total, w.lambda_diff * ev.loss.diff - w.lambda_cam * ev.loss.reward, 1e-15);
  EXPECT_GE(ev.loss.diff, 0.0);
  EXPECT_LE(ev.loss.components.dd, 0.0);
}

TEST(Objective, RewardAveragesMTrajectories) {
  RewardWeights w;
  w.M = 3;
  auto su = setup(w, 3, 1);
  double manual = 0;
  for (std::size_t m = 0; m < 3; ++m) {
    const auto tr = sample_lastK(su.state, su.batch[0].cond, trajectory_seed(17, 0, m, 3));
    manual += combine(reward_components(su.toy.task, su.batch[0].target, tr.z0, w), w) / 3;
  }
  EXPECT_NEAR(reward_cam(su.state, su.toy.task, su.batch[0], 17), manual, 1e-15);
  EXPECT_NEAR(evaluate(su.state, su.toy.task, su.batch, 17, false).loss.reward, manual, 1e-12);
}

TEST(TrainStep, BaseWeightsNeverChange) {
  auto su = setup();
  const auto before = su.state.base.hash();
  const auto lora_before = su.state.lora.flatten();
  for (int i = 0; i < 5; ++i) train_step(su.state, su.toy.task, su.batch, i, 0.05);
  EXPECT_EQ(su.state.base.hash(), before);
  EXPECT_NE(su.state.lora.flatten(), lora_before);
}

TEST(TrainStep, NonFiniteComponentIsNamed) {
  auto su = setup();
  su.batch[0].target.tep(0) = std::nan("");
  try {
    train_step(su.state, su.toy.task, su.batch, 0, 0.05);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("vdc"), std::string::npos) << e.what();
  }
}

TEST(TrainStep, InfiniteEncoderIsRejected) {
  auto su = setup();
  su.toy.task.encoder(0, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(train_step(su.state, su.toy.task, su.batch, 0, 0.05), Error);
}

TEST(TrainStep, GradientCheckNamesBlockAndPath) {
  auto su = setup();
  auto g = Adapters::zeros_like(su.state.lora);
  g.in.b(0, 0) = std::nan("");
  try {
    detail::require_finite(g, "reward");
    FAIL();
  } catch (const Error& e) {
    EXPECT_STREQ(e.what(), "non-finite gradient in lora.in.B via the reward path");
  }
}

TEST(TrainStep, ZeroVectorTargetIsUndefined) {
  auto su = setup();
  su.batch[0].target.tc.setZero();
  EXPECT_THROW(evaluate(su.state, su.toy.task, su.batch, 0, true), UndefinedError);
}

TEST(Sweep, DeterministicAndBaseFrozen) {
  SweepConfig cfg;
  cfg.K = {1, 2};
  cfg.T_train = {5};
  cfg.steps = 4;
  cfg.batch = 4;
  cfg.toy.per_class = 6;
  cfg.seed = 21;
  const auto a = sweep(cfg), b = sweep(cfg);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].final_reward, b[i].final_reward);
    EXPECT_EQ(a[i].base_hash_before, a[i].base_hash_after);
    EXPECT_GE(a[i].dd_accuracy, 0.0);
    EXPECT_LE(a[i].dd_accuracy, 1.0);
  }
  const auto csv = write_sweep_csv(a);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "K,T_train,M,w_dd,initial_reward,final_reward,final_loss,vdc,ccs,dd_loglik,sfs,dd_accuracy,cas");
}

TEST(Sweep, TrainingRaisesHeldOutReward) {
  SweepConfig cfg;
  cfg.K = {2};
  cfg.T_train = {8};
  cfg.steps = 60;
  cfg.batch = 8;
  cfg.learning_rate = 0.2;
  cfg.base.lambda_cam = 1.0;
  cfg.base.lambda_diff = 0.05;
  cfg.seed = 5;
  const auto rows = sweep(cfg);
  EXPECT_GT(rows[0].final_reward, rows[0].initial_reward);
}
