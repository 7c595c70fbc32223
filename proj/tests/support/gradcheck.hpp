#pragma once

// Central-difference check of DitModel::backward on a small f64 instance.

#include <cmath>
#include <string>
#include <vector>

#include "freeaudio/dit.hpp"

namespace freeaudio::testing {

struct BlockCheck {
  std::string name;
  double rel_error = 0.0;
  std::size_t probed = 0;
};

inline DitConfig gradcheck_config() {
  DitConfig c;
  c.channels = 4;
  c.dim = 16;
  c.layers = 2;
  c.heads = 2;
  c.text_dim = 8;
  c.mlp_hidden = 24;
  c.max_frames = 12;
  c.frame_rate = 25.0;
  c.max_seconds = 12.0 / 25.0;
  return c;
}

struct GradProblem {
  DitModel<double> model;
  std::vector<Tensor2D<double>> x, target;
  std::vector<TextCondition<double>> text;
  std::vector<DurationCondition> durs;
  std::size_t step = 0;

  double loss() const {
    auto out = model.forward(x, step, text, durs);
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < x.size(); ++b) {
      const std::size_t a = model.active_frames(durs[b].seconds_total, x[b].rows());
      for (std::size_t r = 0; r < a; ++r) {
        for (std::size_t c = 0; c < x[b].cols(); ++c) {
          const double d = out[b](r, c) - target[b](r, c);
          s += d * d;
        }
      }
      n += a * x[b].cols();
    }
    return s / double(n);
  }

  DitParams<double> gradient() const {
    DitParams<double> g = model.params().zeros_like();
    std::vector<ElementCache<double>> caches;
    auto out = model.forward(x, step, text, durs, nullptr, 0, &caches);
    std::size_t n = 0;
    for (std::size_t b = 0; b < x.size(); ++b) n += caches[b].active * x[b].cols();
    for (std::size_t b = 0; b < x.size(); ++b) {
      Tensor2D<double> d(out[b].rows(), out[b].cols());
      for (std::size_t r = 0; r < caches[b].active; ++r) {
        for (std::size_t c = 0; c < d.cols(); ++c) d(r, c) = 2.0 * (out[b](r, c) - target[b](r, c)) / double(n);
      }
      model.backward(caches[b], d, g);
    }
    return g;
  }
};

inline GradProblem make_grad_problem(std::uint64_t seed) {
  GradProblem p{DitModel<double>(gradcheck_config()), {}, {}, {}, {}, 37};
  SeededRng rng(seed);
  p.model.params().visit([&](const std::string&, Tensor2D<double>& t) { rng.fill_normal<double>(t.values(), 0.4); });
  const auto& c = p.model.config();
  const double secs[] = {0.4, 0.48};
  const char* caps[] = {"dog while frying", "water and unknownword"};
  for (int b = 0; b < 2; ++b) {
    p.x.push_back(random_normal<double>(c.max_frames, c.channels, rng));
    p.target.push_back(random_normal<double>(c.max_frames, c.channels, rng));
    p.text.push_back(p.model.embed_text(caps[b]));
    p.durs.push_back({secs[b]});
  }
  return p;
}

// Probes up to `per_block` entries of every parameter block.
inline std::vector<BlockCheck> check_gradients(std::uint64_t seed = 7, std::size_t per_block = 8,
                                               double h = 1e-5) {
  GradProblem p = make_grad_problem(seed);
  const DitParams<double> analytic = p.gradient();
  std::vector<const Tensor2D<double>*> ga;
  analytic.visit([&](const std::string&, const Tensor2D<double>& t) { ga.push_back(&t); });
  std::vector<BlockCheck> out;
  SeededRng pick(seed + 1);
  std::size_t bi = 0;
  std::vector<std::pair<std::string, Tensor2D<double>*>> blocks;
  p.model.params().visit([&](const std::string& n, Tensor2D<double>& t) { blocks.emplace_back(n, &t); });
  for (auto& [name, t] : blocks) {
    const Tensor2D<double>& g = *ga[bi++];
    std::vector<std::size_t> idx;
    // Prefer entries with a nonzero analytic gradient so sparse blocks
    // (embedding rows of unused tokens) still get probed.
    std::vector<std::size_t> nonzero;
    for (std::size_t e = 0; e < g.size(); ++e) {
      if (g.data()[e] != 0.0) nonzero.push_back(e);
    }
    for (std::size_t i = 0; i < per_block && i < g.size(); ++i) {
      idx.push_back(nonzero.empty() ? pick.index(g.size()) : nonzero[pick.index(nonzero.size())]);
    }
    double num2 = 0.0, den2 = 0.0;
    for (std::size_t e : idx) {
      double& w = t->data()[e];
      const double saved = w;
      w = saved + h;
      const double lp = p.loss();
      w = saved - h;
      const double lm = p.loss();
      w = saved;
      const double fd = (lp - lm) / (2.0 * h);
      const double an = g.data()[e];
      num2 += (fd - an) * (fd - an);
      den2 += std::max(fd * fd, an * an);
    }
    BlockCheck bc{name, den2 > 0.0 ? std::sqrt(num2 / den2) : std::sqrt(num2), idx.size()};
    out.push_back(bc);
  }
  return out;
}

}  // namespace freeaudio::testing
