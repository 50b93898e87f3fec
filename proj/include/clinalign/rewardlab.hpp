#pragma once

// Desk-scale reward finetuning lab. A one-hidden-layer conditional noise
// predictor with rank-r adapters on both weight matrices is sampled with a
// deterministic reverse update; gradients of the combined denoising/reward
// objective flow through only the final K reverse steps. Every derivative is
// hand-written and checked against finite differences in the test suite.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "clinalign/common.hpp"
#include "clinalign/parallel.hpp"
#include "clinalign/probe.hpp"
#include "clinalign/rng.hpp"

namespace clinalign {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Noise schedule

struct Schedule {
  // alpha_bar[0] = 1 (clean); alpha_bar[t] for t = 1..T.
  std::vector<double> alpha_bar{1.0};

  std::size_t steps() const { return alpha_bar.size() - 1; }
  double alpha(std::size_t t) const { return std::sqrt(alpha_bar.at(t)); }
  double sigma(std::size_t t) const { return std::sqrt(1.0 - alpha_bar.at(t)); }

  // Takes alpha_bar for t = 1..T; must lie in [0, 1] and strictly decrease.
  static Schedule from_alpha_bar(std::span<const double> ab) {
    if (ab.empty()) throw Error("schedule: no steps");
    Schedule s;
    for (std::size_t i = 0; i < ab.size(); ++i) {
      if (!(ab[i] >= 0.0 && ab[i] <= 1.0)) throw Error("schedule: alpha_bar outside [0, 1]");
      if (i > 0 && !(ab[i] < ab[i - 1])) throw Error("schedule: alpha_bar must strictly decrease");
      s.alpha_bar.push_back(ab[i]);
    }
    return s;
  }

  // beta_t = scale * t / T, with scale chosen by bisection so that
  // alpha_bar_T hits `final_alpha_bar`.
  static Schedule linear(std::size_t T, double final_alpha_bar = 1e-3) {
    if (T == 0) throw Error("schedule: T must be positive");
    auto build = [T](double scale) {
      std::vector<double> ab(T);
      double prod = 1.0;
      for (std::size_t t = 1; t <= T; ++t) {
        prod *= 1.0 - scale * static_cast<double>(t) / static_cast<double>(T);
        ab[t - 1] = prod;
      }
      return ab;
    };
    double lo = 0.0, hi = 1.0;
    for (int i = 0; i < 200; ++i) {
      const double mid = 0.5 * (lo + hi);
      (build(mid).back() > final_alpha_bar ? lo : hi) = mid;
    }
    const auto ab = build(0.5 * (lo + hi));
    return from_alpha_bar(ab);
  }
};

inline VectorXd forward_noise(const VectorXd& z_r, std::size_t t, const VectorXd& eps, const Schedule& s) {
  if (t < 1 || t > s.steps())
    throw Error("forward_noise: step " + std::to_string(t) + " outside [1, " + std::to_string(s.steps()) + "]");
  if (z_r.size() != eps.size()) throw Error("forward_noise: latent and noise sizes differ");
  return s.alpha(t) * z_r + s.sigma(t) * eps;
}

// ---------------------------------------------------------------------------
// Denoiser and adapters

struct ToyDenoiser {
  MatrixXd w_in;      // hidden x dim
  VectorXd b_in;      // hidden
  MatrixXd w_out;     // dim x hidden
  VectorXd b_out;     // dim
  MatrixXd time_emb;  // hidden x T (column t-1 for step t)
  MatrixXd cond_emb;  // hidden x conditions

  Eigen::Index dim() const { return w_in.cols(); }
  Eigen::Index hidden() const { return w_in.rows(); }

  std::uint64_t hash() const {
    std::uint64_t h = fnv1a("toy-denoiser");
    for (const MatrixXd* m : {&w_in, &w_out, &time_emb, &cond_emb})
      h = fnv1a(m->data(), static_cast<std::size_t>(m->size()) * sizeof(double), h);
    for (const VectorXd* v : {&b_in, &b_out})
      h = fnv1a(v->data(), static_cast<std::size_t>(v->size()) * sizeof(double), h);
    return h;
  }
};

struct LoraFactor {
  MatrixXd a;  // rank x in
  MatrixXd b;  // out x rank
  MatrixXd delta() const { return b * a; }
};

struct Adapters {
  LoraFactor in;   // on w_in
  LoraFactor out;  // on w_out

  std::size_t size() const {
    return static_cast<std::size_t>(in.a.size() + in.b.size() + out.a.size() + out.b.size());
  }

  template <typename Fn>
  void for_each_block(Fn&& fn) {
    fn("lora.in.A", in.a);
    fn("lora.in.B", in.b);
    fn("lora.out.A", out.a);
    fn("lora.out.B", out.b);
  }
  template <typename Fn>
  void for_each_block(Fn&& fn) const {
    fn("lora.in.A", in.a);
    fn("lora.in.B", in.b);
    fn("lora.out.A", out.a);
    fn("lora.out.B", out.b);
  }

  std::vector<double> flatten() const {
    std::vector<double> v;
    v.reserve(size());
    for_each_block([&](const char*, const MatrixXd& m) { v.insert(v.end(), m.data(), m.data() + m.size()); });
    return v;
  }

  void assign(std::span<const double> v) {
    if (v.size() != size()) throw Error("adapters: parameter vector has the wrong length");
    std::size_t off = 0;
    for_each_block([&](const char*, MatrixXd& m) {
      std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(off), m.size(), m.data());
      off += static_cast<std::size_t>(m.size());
    });
  }

  static Adapters zeros_like(const Adapters& o) {
    Adapters z;
    z.in = {MatrixXd::Zero(o.in.a.rows(), o.in.a.cols()), MatrixXd::Zero(o.in.b.rows(), o.in.b.cols())};
    z.out = {MatrixXd::Zero(o.out.a.rows(), o.out.a.cols()), MatrixXd::Zero(o.out.b.rows(), o.out.b.cols())};
    return z;
  }
};

// ---------------------------------------------------------------------------
// Weights and state

struct RewardWeights {
  double lambda_diff = 0.2;
  double lambda_cam = 0.8;
  double w_vdc = 0.25;
  double w_ccs = 0.25;
  double w_dd = 0.25;
  double w_sfs = 0.25;
  std::size_t K = 1;
  std::size_t M = 2;
  std::size_t T_train = 20;
  double eta = 0.0;  // 0 = deterministic reverse update

  void validate() const {
    if (T_train == 0) throw Error("reward weights: T_train must be positive");
    if (K < 1 || K > T_train) throw Error("reward weights: K must lie in [1, T_train]");
    if (M < 1) throw Error("reward weights: M must be at least 1");
    if (eta < 0.0 || eta > 1.0) throw Error("reward weights: eta must lie in [0, 1]");
  }
};

inline nlohmann::json to_json(const RewardWeights& w) {
  return {{"lambda_diff", w.lambda_diff}, {"lambda_cam", w.lambda_cam}, {"w_vdc", w.w_vdc}, {"w_ccs", w.w_ccs},
          {"w_dd", w.w_dd}, {"w_sfs", w.w_sfs}, {"K", w.K}, {"M", w.M}, {"T_train", w.T_train}, {"eta", w.eta}};
}

struct RewardLabState {
  Schedule schedule;
  ToyDenoiser base;
  Adapters lora;
  RewardWeights weights;
};

struct EffectiveWeights {
  MatrixXd w_in;
  MatrixXd w_out;
};

inline EffectiveWeights effective(const RewardLabState& s) {
  return {s.base.w_in + s.lora.in.delta(), s.base.w_out + s.lora.out.delta()};
}

// ---------------------------------------------------------------------------
// Denoiser forward/backward

struct DenoiseCache {
  VectorXd z;    // input latent
  VectorXd h;    // tanh activations
  VectorXd eps;  // predicted noise
};

inline DenoiseCache denoise(const ToyDenoiser& base, const EffectiveWeights& w, const VectorXd& z, std::size_t t,
                            std::size_t cond) {
  if (t < 1 || t > static_cast<std::size_t>(base.time_emb.cols())) throw Error("denoise: step out of range");
  if (cond >= static_cast<std::size_t>(base.cond_emb.cols())) throw Error("denoise: condition index out of range");
  DenoiseCache c;
  c.z = z;
  const VectorXd pre = w.w_in * z + base.time_emb.col(static_cast<Eigen::Index>(t - 1)) +
                       base.cond_emb.col(static_cast<Eigen::Index>(cond)) + base.b_in;
  c.h = pre.array().tanh();
  c.eps = w.w_out * c.h + base.b_out;
  return c;
}

// Gradients with respect to the effective (base + adapter) weight matrices.
struct DenseGrads {
  MatrixXd w_in;
  MatrixXd w_out;

  static DenseGrads zeros(const ToyDenoiser& b) {
    return {MatrixXd::Zero(b.w_in.rows(), b.w_in.cols()), MatrixXd::Zero(b.w_out.rows(), b.w_out.cols())};
  }
};

// Accumulates d(loss)/d(W_eff) given g_eps = d(loss)/d(eps); returns
// d(loss)/d(z).
inline VectorXd denoise_backward(const EffectiveWeights& w, const DenoiseCache& c, const VectorXd& g_eps,
                                 DenseGrads& g) {
  g.w_out.noalias() += g_eps * c.h.transpose();
  const VectorXd g_pre = (w.w_out.transpose() * g_eps).array() * (1.0 - c.h.array().square());
  g.w_in.noalias() += g_pre * c.z.transpose();
  return w.w_in.transpose() * g_pre;
}

// Chain rule through W_eff = W + B*A.
inline Adapters project_to_adapters(const Adapters& lora, const DenseGrads& g) {
  Adapters out;
  out.in = {lora.in.b.transpose() * g.w_in, g.w_in * lora.in.a.transpose()};
  out.out = {lora.out.b.transpose() * g.w_out, g.w_out * lora.out.a.transpose()};
  return out;
}

// ---------------------------------------------------------------------------
// Truncated sampling

struct TapeStep {
  std::size_t t = 0;
  DenoiseCache cache;
  double c_z = 0;    // coefficient on z_t
  double c_eps = 0;  // coefficient on predicted noise
};

struct Trajectory {
  VectorXd z0;
  VectorXd z_trunc;  // latent entering the first recorded step
  std::vector<TapeStep> tape;  // in execution order (t = K .. 1)
};

struct StepCoefficients {
  double c_z, c_eps, c_noise;
};

// z_{t-1} = c_z z_t + c_eps eps_hat + c_noise xi. With eta = 0 this is the
// deterministic implicit update; eta > 0 blends in pre-drawn noise.
inline StepCoefficients reverse_coefficients(const Schedule& s, std::size_t t, double eta) {
  const double ab = s.alpha_bar.at(t), ab_prev = s.alpha_bar.at(t - 1);
  double noise = 0.0;
  if (eta > 0.0 && ab < 1.0) noise = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - noise * noise));
  const double a = std::sqrt(ab), a_prev = std::sqrt(ab_prev);
  return {a_prev / a, dir - a_prev * std::sqrt(1.0 - ab) / a, noise};
}

// Runs the T_train-step reverse chain from seeded Gaussian noise. The first
// T_train-K steps carry no tape; the last K are recorded. When `frozen` is
// given it replaces the prefix output, which makes the result a function of
// the adapters through the recorded steps only.
inline Trajectory sample_lastK(const RewardLabState& s, std::size_t cond, std::uint64_t seed,
                               const VectorXd* frozen = nullptr) {
  const auto& w8 = s.weights;
  w8.validate();
  if (s.schedule.steps() != w8.T_train) throw Error("sample_lastK: schedule length differs from T_train");
  const EffectiveWeights w = effective(s);
  const Eigen::Index d = s.base.dim();
  Rng rng(seed);
  VectorXd z(d);
  for (Eigen::Index i = 0; i < d; ++i) z(i) = rng.normal();
  std::vector<VectorXd> xi;
  if (w8.eta > 0.0) {
    xi.assign(w8.T_train + 1, VectorXd(d));
    for (std::size_t t = w8.T_train; t >= 1; --t)
      for (Eigen::Index i = 0; i < d; ++i) xi[t](i) = rng.normal();
  }
  auto step = [&](std::size_t t, const VectorXd& zt, TapeStep* rec) {
    const auto k = reverse_coefficients(s.schedule, t, w8.eta);
    DenoiseCache c = denoise(s.base, w, zt, t, cond);
    VectorXd next = k.c_z * zt + k.c_eps * c.eps;
    if (k.c_noise != 0.0) next += k.c_noise * xi[t];
    if (rec) *rec = {t, std::move(c), k.c_z, k.c_eps};
    return next;
  };
  Trajectory tr;
  if (frozen) {
    if (frozen->size() != d) throw Error("sample_lastK: frozen prefix has the wrong size");
    z = *frozen;
  } else {
    for (std::size_t t = w8.T_train; t > w8.K; --t) z = step(t, z, nullptr);
  }
  tr.z_trunc = z;
  tr.tape.resize(w8.K);
  for (std::size_t t = w8.K, i = 0; t >= 1; --t, ++i) z = step(t, z, &tr.tape[i]);
  tr.z0 = z;
  return tr;
}

// Backpropagates d(loss)/d(z0) through the recorded steps.
inline void backprop_trajectory(const EffectiveWeights& w, const Trajectory& tr, VectorXd g_z, DenseGrads& g) {
  for (auto it = tr.tape.rbegin(); it != tr.tape.rend(); ++it) {
    const VectorXd g_eps = it->c_eps * g_z;
    const VectorXd via_eps = denoise_backward(w, it->cache, g_eps, g);
    g_z = it->c_z * g_z + via_eps;
  }
}

// ---------------------------------------------------------------------------
// Reward

// Fixed environment: a linear stand-in encoder mapping latents to feature
// space and a probe trained in that space.
struct RewardTask {
  MatrixXd encoder;  // features x dim
  ProbeModel probe;
};

// Per-sample reward targets, all in feature space.
struct RewardTarget {
  VectorXd tep;        // enriched prompt embedding
  VectorXd tc;         // class checklist embedding
  VectorXd reference;  // encoder applied to the paired real latent
  std::size_t label = 0;
};

struct ComponentValues {
  double vdc = 0, ccs = 0, dd = 0, sfs = 0;

  ComponentValues& operator+=(const ComponentValues& o) {
    vdc += o.vdc;
    ccs += o.ccs;
    dd += o.dd;
    sfs += o.sfs;
    return *this;
  }
  ComponentValues& operator/=(double n) {
    vdc /= n;
    ccs /= n;
    dd /= n;
    sfs /= n;
    return *this;
  }
};

inline double combine(const ComponentValues& c, const RewardWeights& w) {
  return w.w_vdc * c.vdc + w.w_ccs * c.ccs + w.w_dd * c.dd + w.w_sfs * c.sfs;
}

namespace detail {

// cos(u, v) and its gradient with respect to u.
inline double cosine_grad(const VectorXd& u, const VectorXd& v, VectorXd* g) {
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) throw UndefinedError("reward: cosine of a zero vector");
  const double c = u.dot(v) / (nu * nv);
  if (g) *g = v / (nu * nv) - c * u / (nu * nu);
  return c;
}

}  // namespace detail

// Components at one sample; training-side dd is the probe log-likelihood.
// When `g_z0` is non-null it receives d(weighted sum)/d(z0).
inline ComponentValues reward_components(const RewardTask& task, const RewardTarget& tgt, const VectorXd& z0,
                                         const RewardWeights& w, VectorXd* g_z0 = nullptr) {
  const VectorXd u = task.encoder * z0;
  const bool grad = g_z0 != nullptr;
  VectorXd g1, g2, g4;
  ComponentValues c;
  c.vdc = detail::cosine_grad(u, tgt.tep, grad ? &g1 : nullptr);
  c.ccs = detail::cosine_grad(u, tgt.tc, grad ? &g2 : nullptr);
  c.sfs = detail::cosine_grad(u, tgt.reference, grad ? &g4 : nullptr);
  const VectorXd logits = task.probe.weights * u + task.probe.bias;
  const VectorXd lsm = log_softmax(logits);
  const auto y = static_cast<Eigen::Index>(tgt.label);
  c.dd = lsm(y);
  if (grad) {
    VectorXd g_logits = -lsm.array().exp().matrix();
    g_logits(y) += 1.0;
    const VectorXd g3 = task.probe.weights.transpose() * g_logits;
    const VectorXd gu = w.w_vdc * g1 + w.w_ccs * g2 + w.w_dd * g3 + w.w_sfs * g4;
    *g_z0 = task.encoder.transpose() * gu;
  }
  return c;
}

// One conditioning prompt plus its targets and paired real latent.
struct RewardExample {
  VectorXd z_r;
  std::size_t cond = 0;
  RewardTarget target;
};

inline std::uint64_t trajectory_seed(std::uint64_t seed, std::size_t example, std::size_t m, std::size_t M) {
  return substream_seed(substream_seed(seed, "traj"), static_cast<std::uint64_t>(example * M + m));
}

// Mean weighted reward over M trajectories (M from the state's weights).
inline double reward_cam(const RewardLabState& s, const RewardTask& task, const RewardExample& ex,
                         std::uint64_t seed, std::size_t example_index = 0, ComponentValues* mean_components = nullptr) {
  const std::size_t M = s.weights.M;
  ComponentValues acc;
  double r = 0.0;
  for (std::size_t m = 0; m < M; ++m) {
    const auto tr = sample_lastK(s, ex.cond, trajectory_seed(seed, example_index, m, M));
    const auto c = reward_components(task, ex.target, tr.z0, s.weights);
    acc += c;
    r += combine(c, s.weights);
  }
  acc /= static_cast<double>(M);
  if (mean_components) *mean_components = acc;
  return r / static_cast<double>(M);
}

// ---------------------------------------------------------------------------
// Combined objective

struct LossBreakdown {
  double diff = 0;    // mean denoising MSE
  double reward = 0;  // mean r_cam
  double total = 0;   // lambda_diff * diff - lambda_cam * reward
  ComponentValues components;
};

struct Evaluation {
  LossBreakdown loss;
  Adapters grad;         // d(total)/d(adapters)
  Adapters grad_diff;    // lambda_diff * d(diff)
  Adapters grad_reward;  // -lambda_cam * d(reward)
  std::vector<VectorXd> prefixes;  // truncation-point latents, [example * M + m]
};

// Loss (and optionally gradients) over a batch. Each example contributes one
// (t, eps) draw for the denoising term and M trajectories for the reward
// term. Passing `frozen` reuses recorded truncation-point latents, turning
// the objective into the truncated surrogate whose exact gradient this
// returns.
inline Evaluation evaluate(const RewardLabState& s, const RewardTask& task, std::span<const RewardExample> batch,
                           std::uint64_t seed, bool with_grad = true,
                           const std::vector<VectorXd>* frozen = nullptr) {
  const auto& rw = s.weights;
  rw.validate();
  if (batch.empty()) throw Error("evaluate: empty batch");
  const std::size_t M = rw.M;
  if (frozen && frozen->size() != batch.size() * M) throw Error("evaluate: frozen prefix count mismatch");
  const EffectiveWeights w = effective(s);
  const Eigen::Index d = s.base.dim();
  DenseGrads g_mse = DenseGrads::zeros(s.base), g_rew = DenseGrads::zeros(s.base);
  Evaluation ev;
  ev.prefixes.resize(batch.size() * M);
  const double n = static_cast<double>(batch.size());

  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& ex = batch[i];
    if (ex.z_r.size() != d) throw Error("evaluate: latent size mismatch");
    Rng rng(substream_seed(substream_seed(seed, "mse"), static_cast<std::uint64_t>(i)));
    const std::size_t t = 1 + static_cast<std::size_t>(rng.below(rw.T_train));
    VectorXd eps(d);
    for (Eigen::Index k = 0; k < d; ++k) eps(k) = rng.normal();
    const auto c = denoise(s.base, w, forward_noise(ex.z_r, t, eps, s.schedule), t, ex.cond);
    const VectorXd resid = c.eps - eps;
    ev.loss.diff += resid.squaredNorm() / static_cast<double>(d) / n;
    if (with_grad) denoise_backward(w, c, (2.0 / (static_cast<double>(d) * n)) * resid, g_mse);

    for (std::size_t m = 0; m < M; ++m) {
      const std::size_t slot = i * M + m;
      const auto tr = sample_lastK(s, ex.cond, trajectory_seed(seed, i, m, M), frozen ? &(*frozen)[slot] : nullptr);
      ev.prefixes[slot] = tr.z_trunc;
      VectorXd g_z0;
      auto comp = reward_components(task, ex.target, tr.z0, rw, with_grad ? &g_z0 : nullptr);
      ev.loss.reward += combine(comp, rw) / (n * static_cast<double>(M));
      comp /= n * static_cast<double>(M);
      ev.loss.components += comp;
      if (with_grad) backprop_trajectory(w, tr, g_z0 / (n * static_cast<double>(M)), g_rew);
    }
  }
  ev.loss.total = rw.lambda_diff * ev.loss.diff - rw.lambda_cam * ev.loss.reward;
  if (with_grad) {
    ev.grad_diff = project_to_adapters(s.lora, g_mse);
    ev.grad_reward = project_to_adapters(s.lora, g_rew);
    auto scale = [](Adapters& a, double k) { a.for_each_block([k](const char*, MatrixXd& m) { m *= k; }); };
    scale(ev.grad_diff, rw.lambda_diff);
    scale(ev.grad_reward, -rw.lambda_cam);
    ev.grad = ev.grad_diff;
    ev.grad.in.a += ev.grad_reward.in.a;
    ev.grad.in.b += ev.grad_reward.in.b;
    ev.grad.out.a += ev.grad_reward.out.a;
    ev.grad.out.b += ev.grad_reward.out.b;
  }
  return ev;
}

namespace detail {

inline void require_finite(const Adapters& g, const char* path) {
  g.for_each_block([path](const char* name, const MatrixXd& m) {
    if (!m.allFinite()) throw Error(std::string("non-finite gradient in ") + name + " via the " + path + " path");
  });
}

}  // namespace detail

// One SGD step on the adapters. Base weights are never written.
inline LossBreakdown train_step(RewardLabState& s, const RewardTask& task, std::span<const RewardExample> batch,
                                std::uint64_t seed, double learning_rate) {
  const auto ev = evaluate(s, task, batch, seed, true);
  const auto& c = ev.loss.components;
  const std::pair<const char*, double> checks[] = {{"diffusion MSE", ev.loss.diff}, {"vdc", c.vdc},
                                                    {"ccs", c.ccs}, {"dd", c.dd}, {"sfs", c.sfs}};
  for (const auto& [name, v] : checks)
    if (!std::isfinite(v)) throw Error(std::string("non-finite loss term: ") + name);
  detail::require_finite(ev.grad_diff, "diffusion");
  detail::require_finite(ev.grad_reward, "reward");
  s.lora.in.a -= learning_rate * ev.grad.in.a;
  s.lora.in.b -= learning_rate * ev.grad.in.b;
  s.lora.out.a -= learning_rate * ev.grad.out.a;
  s.lora.out.b -= learning_rate * ev.grad.out.b;
  return ev.loss;
}

// ---------------------------------------------------------------------------
// Toy task

struct ToyConfig {
  std::size_t dim = 4;
  std::size_t hidden = 16;
  std::size_t features = 6;
  std::size_t classes = 3;
  std::size_t per_class = 40;
  std::size_t rank = 2;
  double adapter_init_std = 0.01;
  std::uint64_t seed = 0;
};

inline nlohmann::json to_json(const ToyConfig& c) {
  return {{"dim", c.dim}, {"hidden", c.hidden}, {"features", c.features}, {"classes", c.classes},
          {"per_class", c.per_class}, {"rank", c.rank}, {"adapter_init_std", c.adapter_init_std},
          {"seed", c.seed}};
}

struct ToyTask {
  RewardTask task;
  std::vector<RewardExample> examples;
};

namespace detail {

inline MatrixXd gaussian(Rng& rng, Eigen::Index r, Eigen::Index c, double std) {
  MatrixXd m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i) m(i, j) = std * rng.normal();
  return m;
}

}  // namespace detail

// Class-clustered latents, a random linear encoder, per-sample prompt
// embeddings near the encoded latent, class-centre checklist embeddings, and
// a probe trained on the encoded latents.
inline ToyTask make_toy_task(const ToyConfig& cfg) {
  if (cfg.classes < 2) throw Error("toy task: need at least two classes");
  Rng rng(substream_seed(cfg.seed, "toy/task"));
  const auto d = static_cast<Eigen::Index>(cfg.dim), e = static_cast<Eigen::Index>(cfg.features);
  ToyTask out;
  out.task.encoder = detail::gaussian(rng, e, d, 1.0 / std::sqrt(static_cast<double>(cfg.dim)));
  const MatrixXd centers = detail::gaussian(rng, d, static_cast<Eigen::Index>(cfg.classes), 1.5);

  LabeledData train;
  train.x.resize(static_cast<Eigen::Index>(cfg.classes * cfg.per_class), e);
  std::vector<std::string> names;
  for (std::size_t k = 0; k < cfg.classes; ++k) names.push_back("class" + std::to_string(k));
  for (std::size_t k = 0; k < cfg.classes; ++k) {
    const VectorXd tc = out.task.encoder * centers.col(static_cast<Eigen::Index>(k));
    for (std::size_t j = 0; j < cfg.per_class; ++j) {
      RewardExample ex;
      ex.z_r = centers.col(static_cast<Eigen::Index>(k)) + detail::gaussian(rng, d, 1, 0.5);
      ex.cond = k;
      ex.target.reference = out.task.encoder * ex.z_r;
      ex.target.tep = ex.target.reference + detail::gaussian(rng, e, 1, 0.3);
      ex.target.tc = tc;
      ex.target.label = k;
      train.x.row(static_cast<Eigen::Index>(out.examples.size())) = ex.target.reference.transpose();
      train.y.push_back(k);
      out.examples.push_back(std::move(ex));
    }
  }
  ProbeConfig pc;
  pc.seed = substream_seed(cfg.seed, "toy/probe");
  out.task.probe = train_probe(train, "toy-feature", names, pc);
  return out;
}

inline RewardLabState make_state(const ToyConfig& cfg, const RewardWeights& w) {
  w.validate();
  Rng rng(substream_seed(cfg.seed, "toy/denoiser"));
  const auto d = static_cast<Eigen::Index>(cfg.dim), h = static_cast<Eigen::Index>(cfg.hidden);
  const auto r = static_cast<Eigen::Index>(cfg.rank);
  RewardLabState s;
  s.weights = w;
  s.schedule = Schedule::linear(w.T_train);
  s.base.w_in = detail::gaussian(rng, h, d, 1.0 / std::sqrt(static_cast<double>(cfg.dim)));
  s.base.b_in = detail::gaussian(rng, h, 1, 0.1);
  s.base.w_out = detail::gaussian(rng, d, h, 1.0 / std::sqrt(static_cast<double>(cfg.hidden)));
  s.base.b_out = VectorXd::Zero(d);
  s.base.time_emb = detail::gaussian(rng, h, static_cast<Eigen::Index>(w.T_train), 0.3);
  s.base.cond_emb = detail::gaussian(rng, h, static_cast<Eigen::Index>(cfg.classes), 0.5);
  Rng arng(substream_seed(cfg.seed, "toy/adapters"));
  s.lora.in = {detail::gaussian(arng, r, d, cfg.adapter_init_std), MatrixXd::Zero(h, r)};
  s.lora.out = {detail::gaussian(arng, r, h, cfg.adapter_init_std), MatrixXd::Zero(d, r)};
  return s;
}

// Fills every adapter factor (including B) with Gaussian entries so that all
// gradient paths are exercised.
inline void randomize_adapters(RewardLabState& s, std::uint64_t seed, double std = 0.1) {
  Rng rng(seed);
  s.lora.for_each_block([&](const char*, MatrixXd& m) { m = detail::gaussian(rng, m.rows(), m.cols(), std); });
}

// ---------------------------------------------------------------------------
// Sweep

struct SweepCell {
  std::size_t K = 1;
  std::size_t T_train = 20;
  std::size_t M = 2;
  double w_dd = 0.25;
};

struct SweepConfig {
  std::vector<std::size_t> K{1};
  std::vector<std::size_t> T_train{20};
  std::vector<std::size_t> M{2};
  std::vector<double> w_dd{0.25};
  RewardWeights base;
  ToyConfig toy;
  std::size_t steps = 40;
  std::size_t batch = 8;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;

  std::vector<SweepCell> cells() const {
    std::vector<SweepCell> out;
    for (auto k : K)
      for (auto t : T_train)
        for (auto m : M)
          for (auto w : w_dd) out.push_back({k, t, m, w});
    return out;
  }
};

inline nlohmann::json to_json(const SweepConfig& c) {
  return {{"K", c.K}, {"T_train", c.T_train}, {"M", c.M}, {"w_dd", c.w_dd}, {"base_weights", to_json(c.base)},
          {"toy", to_json(c.toy)}, {"steps", c.steps}, {"batch", c.batch}, {"learning_rate", c.learning_rate},
          {"seed", c.seed}};
}

struct SweepRow {
  SweepCell cell;
  double initial_reward = 0;
  double final_reward = 0;
  double final_loss = 0;
  ComponentValues components;  // mean over held-out prompts, dd as log-likelihood
  double dd_accuracy = 0;
  double cas = 0;  // (vdc + ccs + dd indicator + sfs) / 4
  std::uint64_t base_hash_before = 0;
  std::uint64_t base_hash_after = 0;
};

struct HeldOutMetrics {
  double reward = 0;
  ComponentValues components;
  double dd_accuracy = 0;
  double cas = 0;
};

inline HeldOutMetrics held_out_metrics(const RewardLabState& s, const RewardTask& task,
                                       std::span<const RewardExample> examples, std::uint64_t seed) {
  HeldOutMetrics h;
  const double n = static_cast<double>(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    ComponentValues c;
    h.reward += reward_cam(s, task, examples[i], seed, i, &c) / n;
    // evaluation-side dd: argmax indicator on a single trajectory
    const auto tr = sample_lastK(s, examples[i].cond, trajectory_seed(seed, i, 0, s.weights.M));
    const VectorXd u = task.encoder * tr.z0;
    Eigen::Index best;
    (task.probe.weights * u + task.probe.bias).maxCoeff(&best);
    const double hit = static_cast<std::size_t>(best) == examples[i].target.label ? 1.0 : 0.0;
    h.dd_accuracy += hit / n;
    h.cas += (c.vdc + c.ccs + hit + c.sfs) / 4.0 / n;
    c /= n;
    h.components += c;
  }
  return h;
}

inline SweepRow run_cell(const SweepConfig& cfg, const SweepCell& cell, const ToyTask& toy) {
  RewardWeights w = cfg.base;
  w.K = cell.K;
  w.T_train = cell.T_train;
  w.M = cell.M;
  w.w_dd = cell.w_dd;
  RewardLabState s = make_state(cfg.toy, w);
  // Even-indexed examples train, odd-indexed are held out.
  std::vector<RewardExample> train, held;
  for (std::size_t i = 0; i < toy.examples.size(); ++i) (i % 2 ? held : train).push_back(toy.examples[i]);
  const std::uint64_t eval_seed = substream_seed(cfg.seed, "sweep/eval");
  SweepRow row;
  row.cell = cell;
  row.base_hash_before = s.base.hash();
  row.initial_reward = held_out_metrics(s, toy.task, held, eval_seed).reward;
  Rng pick(substream_seed(cfg.seed, "sweep/batches"));
  std::vector<RewardExample> batch(cfg.batch);
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    for (auto& b : batch) b = train[pick.below(train.size())];
    row.final_loss = train_step(s, toy.task, batch, substream_seed(cfg.seed, step), cfg.learning_rate).total;
  }
  const auto h = held_out_metrics(s, toy.task, held, eval_seed);
  row.final_reward = h.reward;
  row.components = h.components;
  row.dd_accuracy = h.dd_accuracy;
  row.cas = h.cas;
  row.base_hash_after = s.base.hash();
  return row;
}

// One run per grid cell, all from the same seed; cells run in parallel.
inline std::vector<SweepRow> sweep(const SweepConfig& cfg) {
  const auto cells = cfg.cells();
  if (cells.empty()) throw Error("sweep: empty grid");
  if (cfg.batch == 0) throw Error("sweep: batch must be positive");
  ToyConfig tc = cfg.toy;
  if (tc.seed == 0) tc.seed = cfg.seed;
  const ToyTask toy = make_toy_task(tc);
  SweepConfig local = cfg;
  local.toy = tc;
  std::vector<SweepRow> rows(cells.size());
  parallel_for(cells.size(), [&](std::size_t i) { rows[i] = run_cell(local, cells[i], toy); });
  return rows;
}

inline std::string write_sweep_csv(std::span<const SweepRow> rows) {
  std::string out =
      "K,T_train,M,w_dd,initial_reward,final_reward,final_loss,vdc,ccs,dd_loglik,sfs,dd_accuracy,cas\n";
  for (const auto& r : rows) {
    const auto& c = r.components;
    out += std::to_string(r.cell.K) + ',' + std::to_string(r.cell.T_train) + ',' + std::to_string(r.cell.M) + ',' +
           format_real(r.cell.w_dd) + ',' + format_real(r.initial_reward) + ',' + format_real(r.final_reward) + ',' +
           format_real(r.final_loss) + ',' + format_real(c.vdc) + ',' + format_real(c.ccs) + ',' +
           format_real(c.dd) + ',' + format_real(c.sfs) + ',' + format_real(r.dd_accuracy) + ',' +
           format_real(r.cas) + '\n';
  }
  return out;
}

}  // namespace clinalign
