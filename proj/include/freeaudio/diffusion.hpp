#pragma once

// DDPM noise schedule, epsilon-prediction trainer (AdamW, EMA, InverseLR)
// and a deterministic DDIM sampler with classifier-free guidance.
//
// The sampler's step callback sees the whole batch after each denoiser call
// and may rewrite both the clean estimate and the noise estimate before the
// next latent is formed. Attention control and long-form composition plug in
// there and through the model's attention hooks.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "freeaudio/codec.hpp"
#include "freeaudio/dit.hpp"
#include "freeaudio/errors.hpp"
#include "freeaudio/numerics.hpp"

namespace freeaudio {

class NoiseSchedule {
 public:
  explicit NoiseSchedule(std::size_t steps = 1000, double beta_start = 1e-4, double beta_end = 0.02) {
    if (steps == 0) throw RangeError("noise schedule needs at least one step");
    if (!(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end) {
      throw RangeError("noise schedule betas must satisfy 0 < start <= end < 1");
    }
    betas_.resize(steps);
    alphas_.resize(steps);
    alpha_bars_.resize(steps);
    double prod = 1.0;
    for (std::size_t t = 0; t < steps; ++t) {
      const double b = steps == 1 ? beta_start
                                  : beta_start + (beta_end - beta_start) * double(t) / double(steps - 1);
      betas_[t] = b;
      alphas_[t] = 1.0 - b;
      prod *= 1.0 - b;
      alpha_bars_[t] = prod;
    }
  }

  std::size_t steps() const { return betas_.size(); }
  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  double alpha_bar(std::size_t t) const { return alpha_bars_.at(t); }

  // x_t = sqrt(abar) x0 + sqrt(1 - abar) eps
  template <Real T>
  Tensor2D<T> add_noise(const Tensor2D<T>& x0, const Tensor2D<T>& eps, std::size_t t) const {
    const double ab = alpha_bar(t);
    Tensor2D<T> out(x0.rows(), x0.cols());
    const T a = T(std::sqrt(ab)), s = T(std::sqrt(1.0 - ab));
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = a * x0.data()[i] + s * eps.data()[i];
    return out;
  }

  template <Real T>
  Tensor2D<T> predict_x0(const Tensor2D<T>& xt, const Tensor2D<T>& eps, std::size_t t) const {
    const double ab = alpha_bar(t);
    Tensor2D<T> out(xt.rows(), xt.cols());
    const T inv = T(1.0 / std::sqrt(ab)), s = T(std::sqrt(1.0 - ab));
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] = (xt.data()[i] - s * eps.data()[i]) * inv;
    return out;
  }

  // Evenly spaced training timesteps visited by an S-step sampler, descending.
  std::vector<std::size_t> sampling_timesteps(std::size_t sampler_steps) const {
    if (sampler_steps == 0 || sampler_steps > steps()) {
      throw RangeError("sampler steps must be in [1, " + std::to_string(steps()) + "]");
    }
    std::vector<std::size_t> ts(sampler_steps);
    for (std::size_t i = 0; i < sampler_steps; ++i) {
      ts[sampler_steps - 1 - i] = (i * steps()) / sampler_steps + (steps() / sampler_steps) - 1;
    }
    return ts;
  }

 private:
  std::vector<double> betas_, alphas_, alpha_bars_;
};

// ---- sampler -----------------------------------------------------------------

template <Real T>
struct SamplerStep {
  std::size_t index = 0;  // 0 .. S-1
  std::size_t timestep = 0;
  std::vector<Tensor2D<T>>& x0;
  std::vector<Tensor2D<T>>& eps;
};

template <Real T>
using StepCallback = std::function<void(SamplerStep<T>&)>;

template <Real T>
using Denoiser = std::function<std::vector<Tensor2D<T>>(const std::vector<Tensor2D<T>>&, std::size_t)>;

template <Real T>
struct SamplerConfig {
  std::size_t steps = 50;
  std::uint64_t seed = 0;
  double guidance_scale = 3.0;
  double eta = 0.0;  // 0 is deterministic DDIM; 1 matches ancestral DDPM variance
  StepCallback<T> callback;
  // Per-element RNG stream ids for the initial noise; defaults to the element index.
  std::vector<std::uint64_t> noise_streams;
};

template <Real T>
std::vector<Tensor2D<T>> initial_noise(std::size_t batch, std::size_t rows, std::size_t cols,
                                       const SamplerConfig<T>& cfg) {
  if (!cfg.noise_streams.empty() && cfg.noise_streams.size() != batch) {
    throw DimensionError("noise_streams must match the batch size");
  }
  const SeededRng root(cfg.seed);
  std::vector<Tensor2D<T>> x(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    SeededRng rng = root.derive(cfg.noise_streams.empty() ? b : cfg.noise_streams[b]);
    x[b] = random_normal<T>(rows, cols, rng);
  }
  return x;
}

// Generic DDIM loop over any noise predictor.
template <Real T>
std::vector<Tensor2D<T>> ddim_sample(const NoiseSchedule& schedule, const Denoiser<T>& denoise,
                                     std::vector<Tensor2D<T>> x, const SamplerConfig<T>& cfg) {
  const auto ts = schedule.sampling_timesteps(cfg.steps);
  SeededRng noise_rng = SeededRng(cfg.seed).derive(0xD0D0D0D0ULL);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::size_t t = ts[i];
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = i + 1 < ts.size() ? schedule.alpha_bar(ts[i + 1]) : 1.0;
    std::vector<Tensor2D<T>> eps = denoise(x, t);
    if (eps.size() != x.size()) throw DimensionError("denoiser changed the batch size");
    std::vector<Tensor2D<T>> x0(x.size());
    for (std::size_t b = 0; b < x.size(); ++b) x0[b] = schedule.predict_x0(x[b], eps[b], t);
    if (cfg.callback) {
      SamplerStep<T> step{i, t, x0, eps};
      cfg.callback(step);
    }
    const double sigma =
        cfg.eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev));
    const T a = T(std::sqrt(ab_prev));
    const T s = T(std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma)));
    for (std::size_t b = 0; b < x.size(); ++b) {
      Tensor2D<T> next(x[b].rows(), x[b].cols());
      for (std::size_t e = 0; e < next.size(); ++e) {
        next.data()[e] = a * x0[b].data()[e] + s * eps[b].data()[e];
      }
      if (sigma > 0.0) {
        for (auto& v : next.values()) v += T(sigma * noise_rng.normal());
      }
      x[b] = std::move(next);
    }
  }
  return x;
}

// Optimal linear noise predictor for x0 ~ N(0, sigma^2): E[eps | x_t] = g x_t.
inline double prior_eps_gain(const NoiseSchedule& schedule, std::size_t t, double sigma) {
  const double ab = schedule.alpha_bars().at(t);
  return std::sqrt(1.0 - ab) / (ab * sigma * sigma + 1.0 - ab);
}

// Per-channel gains of the prior skip; empty when the skip is disabled.
inline std::vector<double> prior_eps_gains(const NoiseSchedule& schedule, std::size_t t, const DitConfig& c) {
  if (c.prior_sigma <= 0.0) return {};
  std::vector<double> g(c.channels);
  for (std::size_t k = 0; k < c.channels; ++k) g[k] = prior_eps_gain(schedule, t, c.channel_prior_sigma(k));
  return g;
}

template <Real T>
void add_prior_skip(const NoiseSchedule& schedule, std::size_t t, const DitConfig& config,
                    const std::vector<Tensor2D<T>>& x, std::vector<Tensor2D<T>>& out) {
  const auto g = prior_eps_gains(schedule, t, config);
  if (g.empty()) return;
  for (std::size_t b = 0; b < out.size(); ++b) {
    const std::size_t cols = out[b].cols();
    if (cols != g.size()) throw DimensionError("prior skip: channel count mismatch");
    for (std::size_t e = 0; e < out[b].size(); ++e) out[b].data()[e] += T(g[e % cols]) * x[b].data()[e];
  }
}

// Classifier-free guided noise prediction. Scale 1 skips the unconditional pass.
// The conditional pass is tagged pass 0 and the unconditional pass 1.
template <Real T>
std::vector<Tensor2D<T>> guided_forward(const DitModel<T>& model, const NoiseSchedule& schedule,
                                        const std::vector<Tensor2D<T>>& x, std::size_t t,
                                        const std::vector<TextCondition<T>>& text,
                                        const std::vector<DurationCondition>& durations,
                                        double guidance_scale, const HookSet<T>* hooks) {
  auto cond = model.forward(x, t, text, durations, hooks, 0);
  if (guidance_scale == 1.0) {
    add_prior_skip(schedule, t, model.config(), x, cond);
    return cond;
  }
  const std::vector<TextCondition<T>> null(x.size(), model.null_condition());
  auto uncond = model.forward(x, t, null, durations, hooks, 1);
  const T s = T(guidance_scale);
  for (std::size_t b = 0; b < x.size(); ++b) {
    for (std::size_t e = 0; e < cond[b].size(); ++e) {
      T& c = cond[b].data()[e];
      const T u = uncond[b].data()[e];
      c = u + s * (c - u);
    }
  }
  add_prior_skip(schedule, t, model.config(), x, cond);
  return cond;
}

// Samples a batch of frames x channels latents (padded to max_frames).
template <Real T>
std::vector<Tensor2D<T>> sample(const DitModel<T>& model, const NoiseSchedule& schedule,
                                const std::vector<TextCondition<T>>& text,
                                const std::vector<DurationCondition>& durations,
                                const SamplerConfig<T>& cfg, const HookSet<T>* hooks = nullptr) {
  if (text.size() != durations.size()) throw DimensionError("sample: conditions mismatch");
  const auto& mc = model.config();
  auto x = initial_noise<T>(text.size(), mc.max_frames, mc.channels, cfg);
  Denoiser<T> denoise = [&](const std::vector<Tensor2D<T>>& xt, std::size_t t) {
    return guided_forward(model, schedule, xt, t, text, durations, cfg.guidance_scale, hooks);
  };
  return ddim_sample(schedule, denoise, std::move(x), cfg);
}

// ---- training ----------------------------------------------------------------

struct TrainerConfig {
  double lr = 1e-3;  // eta_0
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 1e-3;
  double ema_decay = 0.999;
  double inverse_gamma = 1e6;
  double power = 0.5;
  double warmup = 0.99;
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double cond_dropout = 0.1;
  double grad_clip = 1.0;  // 0 disables
  std::uint64_t seed = 0;
  std::size_t log_every = 0;
  // Draw (t, noise, dropout) once per example and reuse it every step.
  bool fixed_draws = false;
  double time_budget_s = 0.0;  // wall-clock seconds, 0 means unlimited
  // Example weight max(1, 1/SNR(t)) clipped to this cap, so noisy steps are
  // scored closer to their x0 error. 1 gives the plain noise-prediction loss.
  double loss_weight_cap = 1.0;

  void validate() const {
    if (!(lr > 0.0) || !(inverse_gamma > 0.0) || !(power > 0.0)) {
      throw RangeError("trainer: lr, gamma and power must be positive");
    }
    if (!(warmup > 0.0 && warmup < 1.0)) throw RangeError("trainer: warmup must be in (0, 1)");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw RangeError("trainer: adam betas must be in [0, 1)");
    }
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw RangeError("trainer: ema_decay must be in [0, 1)");
    if (weight_decay < 0.0 || batch_size == 0) throw RangeError("trainer: bad weight decay or batch size");
    if (!(cond_dropout >= 0.0 && cond_dropout <= 1.0)) throw RangeError("trainer: bad dropout");
    if (!(loss_weight_cap >= 1.0)) throw RangeError("trainer: loss_weight_cap must be at least 1");
  }
};

inline nlohmann::ordered_json to_json(const TrainerConfig& c) {
  nlohmann::ordered_json j;
  j["lr"] = c.lr;
  j["betas"] = {c.beta1, c.beta2};
  j["adam_eps"] = c.adam_eps;
  j["weight_decay"] = c.weight_decay;
  j["ema_decay"] = c.ema_decay;
  j["inverse_gamma"] = c.inverse_gamma;
  j["power"] = c.power;
  j["warmup"] = c.warmup;
  j["steps"] = c.steps;
  j["batch_size"] = c.batch_size;
  j["cond_dropout"] = c.cond_dropout;
  j["grad_clip"] = c.grad_clip;
  j["seed"] = c.seed;
  j["fixed_draws"] = c.fixed_draws;
  j["loss_weight_cap"] = c.loss_weight_cap;
  return j;
}

// eta_0 * (1 + t / gamma)^-power
inline double inverse_lr_decay(const TrainerConfig& c, std::size_t t) {
  return c.lr * std::pow(1.0 + double(t) / c.inverse_gamma, -c.power);
}

// Decay multiplied by the exponential warmup factor 1 - warmup^(t + 1).
inline double learning_rate(const TrainerConfig& c, std::size_t t) {
  return inverse_lr_decay(c, t) * (1.0 - std::pow(c.warmup, double(t) + 1.0));
}

template <Real T>
class AdamW {
 public:
  AdamW(const DitParams<T>& like, const TrainerConfig& c)
      : c_(c), m_(like.zeros_like()), v_(like.zeros_like()) {}

  void step(DitParams<T>& params, const DitParams<T>& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(c_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(c_.beta2, double(t_));
    std::vector<Tensor2D<T>*> p, g, m, v;
    params.visit([&](const std::string&, Tensor2D<T>& x) { p.push_back(&x); });
    const_cast<DitParams<T>&>(grads).visit([&](const std::string&, Tensor2D<T>& x) { g.push_back(&x); });
    m_.visit([&](const std::string&, Tensor2D<T>& x) { m.push_back(&x); });
    v_.visit([&](const std::string&, Tensor2D<T>& x) { v.push_back(&x); });
    const T b1 = T(c_.beta1), b2 = T(c_.beta2);
    const T decay = T(1.0 - lr * c_.weight_decay);
    const T step_size = T(lr / bc1);
    const T inv_bc2 = T(1.0 / bc2);
    const T eps = T(c_.adam_eps);
    for (std::size_t i = 0; i < p.size(); ++i) {
      T* pp = p[i]->data();
      const T* gg = g[i]->data();
      T* mm = m[i]->data();
      T* vv = v[i]->data();
      for (std::size_t e = 0; e < p[i]->size(); ++e) {
        mm[e] = b1 * mm[e] + (T{1} - b1) * gg[e];
        vv[e] = b2 * vv[e] + (T{1} - b2) * gg[e] * gg[e];
        pp[e] = pp[e] * decay - step_size * mm[e] / (std::sqrt(vv[e] * inv_bc2) + eps);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  TrainerConfig c_;
  DitParams<T> m_, v_;
  std::size_t t_ = 0;
};

// ema <- decay * ema + (1 - decay) * raw
template <Real T>
void ema_update(DitParams<T>& ema, const DitParams<T>& raw, double decay) {
  std::vector<const Tensor2D<T>*> r;
  raw.visit([&](const std::string&, const Tensor2D<T>& x) { r.push_back(&x); });
  std::size_t i = 0;
  const T d = T(decay), w = T(1.0 - decay);
  ema.visit([&](const std::string&, Tensor2D<T>& e) {
    const Tensor2D<T>& src = *r[i++];
    for (std::size_t k = 0; k < e.size(); ++k) e.data()[k] = d * e.data()[k] + w * src.data()[k];
  });
}

template <Real T>
struct TrainingExample {
  Tensor2D<T> latent;  // max_frames x channels, zero past the active prefix
  std::string caption;
  double seconds = 0.0;
};

// Per-channel RMS over the active frames of a dataset, floored at
// `floor` times the largest channel so every entry stays positive.
template <Real T>
std::vector<double> latent_channel_rms(const std::vector<TrainingExample<T>>& data, double frame_rate,
                                       double floor = 1e-3) {
  if (data.empty()) throw RangeError("latent_channel_rms: empty dataset");
  const std::size_t cols = data.front().latent.cols();
  std::vector<double> sum(cols, 0.0);
  std::size_t rows = 0;
  for (const auto& ex : data) {
    if (ex.latent.cols() != cols) throw DimensionError("latent_channel_rms: ragged channel count");
    const std::size_t active = std::min(ex.latent.rows(), seconds_to_frames(ex.seconds, frame_rate));
    for (std::size_t r = 0; r < active; ++r) {
      for (std::size_t c = 0; c < cols; ++c) sum[c] += double(ex.latent(r, c)) * double(ex.latent(r, c));
    }
    rows += active;
  }
  if (rows == 0) throw RangeError("latent_channel_rms: no active frames");
  double top = 0.0;
  for (auto& v : sum) top = std::max(top, v = std::sqrt(v / double(rows)));
  if (!(top > 0.0)) throw RangeError("latent_channel_rms: all-zero dataset");
  for (auto& v : sum) v = std::max(v, floor * top);
  return sum;
}

struct TrainingLog {
  std::vector<double> losses;
  std::size_t steps_run = 0;
  double seconds = 0.0;
  bool stopped_by_budget = false;
};

namespace detail {

template <Real T>
double grad_norm(const DitParams<T>& g) {
  double s = 0.0;
  g.visit([&](const std::string&, const Tensor2D<T>& t) {
    for (T v : t.values()) s += double(v) * double(v);
  });
  return std::sqrt(s);
}

template <Real T>
void scale_params(DitParams<T>& g, T f) {
  g.visit([&](const std::string&, Tensor2D<T>& t) {
    for (T& v : t.values()) v *= f;
  });
}

}  // namespace detail

// Masked epsilon MSE over active frames. Computes the loss of one batch and,
// when grads is given, accumulates its gradient.
template <Real T>
double diffusion_loss(const DitModel<T>& model, const NoiseSchedule& schedule, const std::vector<Tensor2D<T>>& xt,
                      const std::vector<std::size_t>& ts, const std::vector<Tensor2D<T>>& eps,
                      const std::vector<TextCondition<T>>& text,
                      const std::vector<DurationCondition>& durations, DitParams<T>* grads,
                      double weight_cap = 1.0) {
  double total = 0.0;
  std::size_t count = 0;
  std::vector<std::size_t> active(xt.size());
  for (std::size_t b = 0; b < xt.size(); ++b) {
    active[b] = model.active_frames(durations[b].seconds_total, xt[b].rows());
    count += active[b] * xt[b].cols();
  }
  for (std::size_t b = 0; b < xt.size(); ++b) {
    std::vector<ElementCache<T>> caches;
    auto out = model.forward({xt[b]}, ts[b], {text[b]}, {durations[b]}, nullptr, 0,
                             grads ? &caches : nullptr);
    const auto g = prior_eps_gains(schedule, ts[b], model.config());
    const double ab = schedule.alpha_bars().at(ts[b]);
    const double w = std::min(weight_cap, std::max(1.0, (1.0 - ab) / ab));
    Tensor2D<T> d(out[0].rows(), out[0].cols());
    const std::size_t cols = out[0].cols();
    for (std::size_t r = 0; r < active[b]; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double skip = g.empty() ? 0.0 : g[c] * double(xt[b](r, c));
        const double diff = double(out[0](r, c)) + skip - double(eps[b](r, c));
        total += w * diff * diff;
        d(r, c) = T(2.0 * w * diff / double(count));
      }
    }
    if (grads) model.backward(caches[0], d, *grads);
  }
  return total / double(count);
}

template <Real T>
struct TrainResult {
  DitParams<T> raw;
  DitParams<T> ema;
  TrainingLog log;
};

template <Real T>
TrainResult<T> train(DitModel<T>& model, const NoiseSchedule& schedule,
                     const std::vector<TrainingExample<T>>& data, const TrainerConfig& cfg,
                     const std::function<void(std::size_t, double)>& on_log = {}) {
  cfg.validate();
  if (data.empty()) throw RangeError("train: empty dataset");
  const auto& mc = model.config();
  std::vector<TextCondition<T>> conds;
  for (const auto& ex : data) {
    if (ex.latent.rows() != mc.max_frames || ex.latent.cols() != mc.channels) {
      throw DimensionError("train: example latent must be max_frames x channels");
    }
    conds.push_back(model.embed_text(ex.caption));
  }
  const TextCondition<T> null = model.null_condition();
  SeededRng rng = SeededRng(cfg.seed).derive(0x7EA1ULL);

  struct Draw {
    std::size_t t;
    Tensor2D<T> eps;
    bool drop;
  };
  std::vector<Draw> fixed;
  if (cfg.fixed_draws) {
    for (const auto& ex : data) {
      Draw d{rng.index(schedule.steps()), random_normal<T>(ex.latent.rows(), ex.latent.cols(), rng),
             false};
      fixed.push_back(std::move(d));
    }
  }

  AdamW<T> opt(model.params(), cfg);
  DitParams<T> ema = model.params();
  TrainingLog log;
  const auto t0 = std::chrono::steady_clock::now();
  const std::size_t bs = cfg.fixed_draws ? data.size() : cfg.batch_size;

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    // Token embeddings are parameters, so conditions are re-gathered each step.
    std::vector<Tensor2D<T>> xt, eps;
    std::vector<std::size_t> ts;
    std::vector<TextCondition<T>> text;
    std::vector<DurationCondition> durs;
    for (std::size_t b = 0; b < bs; ++b) {
      const std::size_t idx = cfg.fixed_draws ? b : rng.index(data.size());
      const auto& ex = data[idx];
      std::size_t t;
      Tensor2D<T> e;
      bool drop;
      if (cfg.fixed_draws) {
        t = fixed[idx].t;
        e = fixed[idx].eps;
        drop = fixed[idx].drop;
      } else {
        t = rng.index(schedule.steps());
        e = random_normal<T>(ex.latent.rows(), ex.latent.cols(), rng);
        drop = rng.uniform() < cfg.cond_dropout;
      }
      xt.push_back(schedule.add_noise(ex.latent, e, t));
      eps.push_back(std::move(e));
      ts.push_back(t);
      text.push_back(drop ? model.condition_from_tokens(null.tokens)
                           : model.condition_from_tokens(conds[idx].tokens));
      durs.push_back({ex.seconds});
    }
    DitParams<T> grads = model.params().zeros_like();
    const double loss = diffusion_loss(model, schedule, xt, ts, eps, text, durs, &grads, cfg.loss_weight_cap);
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "training diverged at step " << step << " (loss " << loss << ", lr "
          << learning_rate(cfg, step) << ", last finite loss "
          << (log.losses.empty() ? 0.0 : log.losses.back()) << ")";
      throw NumericError(msg.str());
    }
    if (cfg.grad_clip > 0.0) {
      const double n = detail::grad_norm(grads);
      if (!std::isfinite(n)) throw NumericError("training diverged: non-finite gradient at step " + std::to_string(step));
      if (n > cfg.grad_clip) detail::scale_params(grads, T(cfg.grad_clip / n));
    }
    opt.step(model.params(), grads, learning_rate(cfg, step));
    ema_update(ema, model.params(), cfg.ema_decay);
    log.losses.push_back(loss);
    log.steps_run = step + 1;
    if (on_log && cfg.log_every > 0 && (step + 1) % cfg.log_every == 0) on_log(step + 1, loss);
    if (cfg.time_budget_s > 0.0) {
      // Stop when one more step at the mean pace would overrun the budget.
      const double el = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (el + el / double(step + 1) > cfg.time_budget_s) {
        log.stopped_by_budget = true;
        break;
      }
    }
  }
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {model.params(), std::move(ema), std::move(log)};
}

}  // namespace freeaudio
