#pragma once

// Synthetic event clips, a band-energy event detector, timing metrics
// (event-based and clip-level F1), a Gaussian Frechet distance over
// band-energy features, and sliding-window intra-clip cosine similarity.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "freeaudio/codec.hpp"
#include "freeaudio/errors.hpp"
#include "freeaudio/events.hpp"
#include "freeaudio/numerics.hpp"
#include "freeaudio/timing_plan.hpp"

namespace freeaudio {

struct EventAnnotation {
  std::size_t class_index = 0;
  double onset_s = 0.0;
  double offset_s = 0.0;

  double duration() const { return offset_s - onset_s; }
  bool operator==(const EventAnnotation&) const = default;
};

struct SynthEvent {
  EventAnnotation annotation;
  double amplitude = 0.5;
};

struct SynthClip {
  std::vector<double> waveform;
  std::string caption;      // global caption
  std::string timing_text;  // one "<name>. <a,b>" entry per event
  std::vector<EventAnnotation> annotations;
  std::vector<double> amplitudes;
  double duration_s = 0.0;
};

struct SynthOptions {
  std::size_t min_events = 1;
  std::size_t max_events = 3;
  double min_seconds = 1.0;
  double max_seconds = 10.0;
  double duration_step = 0.2;
  double full_span_prob = 0.5;  // chance that an event covers the whole clip
  double min_event_s = 0.5;
  double min_amplitude = 0.3;
  double max_amplitude = 0.6;
  double noise_floor = 0.005;
  double time_snap = 0.1;
};

inline double burst_envelope(double t_since_onset) {
  return 0.65 + 0.35 * std::cos(2.0 * std::numbers::pi * 4.0 * t_since_onset);
}

// Tone on the class's DCT basis frequency, phase-locked to the codec frame grid.
inline void render_event(std::vector<double>& out, const EventClass& c, const SynthEvent& e,
                         const ToyGeometry& g) {
  const std::size_t n0 = seconds_to_samples(e.annotation.onset_s, g.sample_rate);
  const std::size_t n1 = std::min(out.size(), seconds_to_samples(e.annotation.offset_s, g.sample_rate));
  const double w = std::numbers::pi * double(c.dct_index) / double(g.frame_size);
  for (std::size_t n = n0; n < n1; ++n) {
    double env = 1.0;
    if (c.envelope == Envelope::burst) env = burst_envelope(double(n - n0) / g.sample_rate);
    out[n] += e.amplitude * env * std::cos(w * (double(n) + 0.5));
  }
}

inline std::vector<double> render_clip(const std::vector<EventClass>& classes,
                                       const std::vector<SynthEvent>& events, double duration_s,
                                       const ToyGeometry& g, double noise_floor, SeededRng& rng) {
  std::vector<double> wave(seconds_to_samples(duration_s, g.sample_rate), 0.0);
  for (const auto& e : events) render_event(wave, classes.at(e.annotation.class_index), e, g);
  if (noise_floor > 0.0) {
    for (double& v : wave) v += noise_floor * rng.normal();
  }
  return wave;
}

inline std::string format_seconds(double s) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(1);
  os << s;
  return os.str();
}

inline std::string timing_text_for(const std::vector<EventClass>& classes,
                                   const std::vector<EventAnnotation>& anns) {
  std::string out;
  for (const auto& a : anns) {
    if (!out.empty()) out += "\n";
    out += classes.at(a.class_index).name + ". <" + format_seconds(a.onset_s) + "," +
           format_seconds(a.offset_s) + ">";
  }
  return out;
}

inline double snap(double v, double step) { return std::round(v / step) * step; }

inline std::vector<SynthClip> synth_dataset(const std::vector<EventClass>& classes, std::size_t n,
                                            std::uint64_t seed, const SynthOptions& opt = {},
                                            const ToyGeometry& g = {}) {
  if (classes.size() < 2) throw RangeError("synth_dataset needs at least two classes");
  if (opt.min_events == 0 || opt.min_events > opt.max_events || opt.max_events > classes.size()) {
    throw RangeError("synth_dataset: bad event count range");
  }
  SeededRng root(seed);
  std::vector<SynthClip> out;
  out.reserve(n);
  const auto steps = std::size_t(std::llround((opt.max_seconds - opt.min_seconds) / opt.duration_step));
  for (std::size_t i = 0; i < n; ++i) {
    SeededRng rng = root.derive(i);
    SynthClip clip;
    clip.duration_s = snap(opt.min_seconds + opt.duration_step * double(rng.index(steps + 1)), 1e-9);
    const std::size_t count = opt.min_events + rng.index(opt.max_events - opt.min_events + 1);
    std::vector<std::size_t> pool(classes.size());
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<SynthEvent> events;
    for (std::size_t e = 0; e < count; ++e) {
      const std::size_t pick = rng.index(pool.size());
      const std::size_t cls = pool[pick];
      pool.erase(pool.begin() + std::ptrdiff_t(pick));
      SynthEvent ev;
      ev.annotation.class_index = cls;
      const double min_len = std::min(opt.min_event_s, clip.duration_s);
      if (rng.uniform() < opt.full_span_prob || clip.duration_s - min_len < opt.time_snap) {
        ev.annotation.onset_s = 0.0;
        ev.annotation.offset_s = clip.duration_s;
      } else {
        double a = snap(rng.uniform(0.0, clip.duration_s - min_len), opt.time_snap);
        double b = snap(rng.uniform(a + min_len, clip.duration_s), opt.time_snap);
        b = std::min(b, clip.duration_s);
        if (b - a < min_len - 1e-9) b = std::min(clip.duration_s, snap(a + min_len, opt.time_snap));
        if (b - a < min_len - 1e-9) a = std::max(0.0, snap(b - min_len, opt.time_snap));
        ev.annotation.onset_s = a;
        ev.annotation.offset_s = b;
      }
      ev.amplitude = rng.uniform(opt.min_amplitude, opt.max_amplitude);
      events.push_back(ev);
    }
    std::stable_sort(events.begin(), events.end(), [](const SynthEvent& x, const SynthEvent& y) {
      return x.annotation.onset_s < y.annotation.onset_s;
    });
    std::vector<std::string> names;
    for (const auto& ev : events) {
      clip.annotations.push_back(ev.annotation);
      clip.amplitudes.push_back(ev.amplitude);
      names.push_back(classes[ev.annotation.class_index].name);
    }
    clip.caption = template_recaption(names);
    clip.timing_text = timing_text_for(classes, clip.annotations);
    clip.waveform = render_clip(classes, events, clip.duration_s, g, opt.noise_floor, rng);
    out.push_back(std::move(clip));
  }
  return out;
}

// ---- detector ---------------------------------------------------------------

struct DetectorConfig {
  std::size_t window = 400;  // Hann window, samples
  std::size_t hop = 200;     // 50 ms at 4 kHz
  double on_threshold = 0.1;   // band amplitude
  double off_threshold = 0.05;
  double min_length_s = 0.2;
};

// Per-hop band amplitude estimates: rows = hops, cols = classes.
inline Tensor2D<double> band_amplitudes(std::span<const double> wave, const std::vector<EventClass>& classes,
                                        double sample_rate, const DetectorConfig& dc = {}) {
  const std::size_t n = dc.window;
  const std::size_t hops = wave.empty() ? 0 : (wave.size() + dc.hop - 1) / dc.hop;
  std::vector<double> win(n);
  double wsum2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    win[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
    wsum2 += win[i] * win[i];
  }
  const double bin_hz = sample_rate / double(n);
  struct Bins {
    std::size_t lo, hi;
  };
  std::vector<Bins> bins;
  for (const auto& c : classes) {
    const auto lo = std::size_t(std::max(1.0, std::ceil(c.low_hz / bin_hz)));
    const auto hi = std::size_t(std::min(double(n / 2 - 1), std::floor(c.high_hz / bin_hz)));
    bins.push_back({lo, hi});
  }
  // Bin tables: row k of `re`/`im` holds cos/sin of bin k over the window.
  std::vector<std::size_t> first_row;
  std::size_t rows = 0;
  for (const auto& b : bins) {
    first_row.push_back(rows);
    rows += b.hi >= b.lo ? b.hi - b.lo + 1 : 0;
  }
  Eigen::MatrixXd dft(Eigen::Index(2 * rows), Eigen::Index(n));
  for (std::size_t c = 0; c < bins.size(); ++c) {
    for (std::size_t k = bins[c].lo; k <= bins[c].hi; ++k) {
      const auto r = Eigen::Index(2 * (first_row[c] + k - bins[c].lo));
      const double w = 2.0 * std::numbers::pi * double(k) / double(n);
      for (std::size_t i = 0; i < n; ++i) {
        dft(r, Eigen::Index(i)) = std::cos(w * double(i));
        dft(r + 1, Eigen::Index(i)) = std::sin(w * double(i));
      }
    }
  }
  // Hop h's window is centred on the middle of [h * hop, (h + 1) * hop).
  Eigen::MatrixXd segs(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(hops));
  for (std::size_t h = 0; h < hops; ++h) {
    const long start = long(h * dc.hop + dc.hop / 2) - long(n / 2);
    for (std::size_t i = 0; i < n; ++i) {
      const long idx = start + long(i);
      segs(Eigen::Index(i), Eigen::Index(h)) =
          (idx >= 0 && std::size_t(idx) < wave.size()) ? wave[std::size_t(idx)] * win[i] : 0.0;
    }
  }
  const Eigen::MatrixXd spec = dft * segs;
  Tensor2D<double> out(hops, classes.size());
  for (std::size_t h = 0; h < hops; ++h) {
    for (std::size_t c = 0; c < classes.size(); ++c) {
      double e = 0.0;
      for (std::size_t k = bins[c].lo; k <= bins[c].hi; ++k) {
        const auto r = Eigen::Index(2 * (first_row[c] + k - bins[c].lo));
        const double re = spec(r, Eigen::Index(h)), im = spec(r + 1, Eigen::Index(h));
        e += re * re + im * im;
      }
      out(h, c) = std::sqrt(4.0 * e / (double(n) * wsum2));
    }
  }
  return out;
}

inline std::vector<EventAnnotation> detect_events(std::span<const double> wave,
                                                  const std::vector<EventClass>& classes,
                                                  double sample_rate, const DetectorConfig& dc = {}) {
  std::vector<EventAnnotation> out;
  if (wave.empty()) return out;
  const Tensor2D<double> amp = band_amplitudes(wave, classes, sample_rate, dc);
  const double hop_s = double(dc.hop) / sample_rate;
  const double duration = double(wave.size()) / sample_rate;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    bool on = false;
    std::size_t begin = 0;
    auto close = [&](std::size_t end_hop) {
      const double onset = double(begin) * hop_s;
      const double offset = std::min(duration, double(end_hop) * hop_s);
      if (offset - onset >= dc.min_length_s - 1e-9) out.push_back({c, onset, offset});
    };
    for (std::size_t h = 0; h < amp.rows(); ++h) {
      const double a = amp(h, c);
      if (!on && a > dc.on_threshold) {
        on = true;
        begin = h;
      } else if (on && a < dc.off_threshold) {
        on = false;
        close(h);
      }
    }
    if (on) close(amp.rows());
  }
  std::stable_sort(out.begin(), out.end(), [](const EventAnnotation& a, const EventAnnotation& b) {
    return a.onset_s < b.onset_s || (a.onset_s == b.onset_s && a.class_index < b.class_index);
  });
  return out;
}

// ---- timing metrics -----------------------------------------------------------

struct MatchCounts {
  std::size_t tp = 0, fp = 0, fn = 0;
  MatchCounts& operator+=(const MatchCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
};

inline double f1_from(const MatchCounts& m) {
  const std::size_t denom = 2 * m.tp + m.fp + m.fn;
  return denom == 0 ? 1.0 : 2.0 * double(m.tp) / double(denom);
}

// Greedy one-to-one matching in reference onset order; each reference takes
// the admissible hypothesis with the closest onset.
inline MatchCounts match_events(const std::vector<EventAnnotation>& ref,
                                const std::vector<EventAnnotation>& hyp, double collar_s = 0.2) {
  std::vector<std::size_t> order(ref.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return ref[a].onset_s < ref[b].onset_s; });
  std::vector<bool> used(hyp.size(), false);
  MatchCounts m;
  for (std::size_t ri : order) {
    const auto& r = ref[ri];
    const double off_tol = std::max(collar_s, 0.2 * r.duration());
    std::optional<std::size_t> best;
    double best_err = 0.0;
    for (std::size_t hi = 0; hi < hyp.size(); ++hi) {
      if (used[hi] || hyp[hi].class_index != r.class_index) continue;
      const double on_err = std::abs(hyp[hi].onset_s - r.onset_s);
      const double off_err = std::abs(hyp[hi].offset_s - r.offset_s);
      if (on_err > collar_s + 1e-9 || off_err > off_tol + 1e-9) continue;
      if (!best || on_err < best_err) {
        best = hi;
        best_err = on_err;
      }
    }
    if (best) {
      used[*best] = true;
      ++m.tp;
    }
  }
  m.fn = ref.size() - m.tp;
  m.fp = hyp.size() - m.tp;
  return m;
}

inline double eb_score(const std::vector<EventAnnotation>& ref, const std::vector<EventAnnotation>& hyp,
                       double collar_s = 0.2) {
  return f1_from(match_events(ref, hyp, collar_s));
}

// Micro F1 pooled over clips.
inline double eb_score(const std::vector<std::vector<EventAnnotation>>& ref,
                       const std::vector<std::vector<EventAnnotation>>& hyp, double collar_s = 0.2) {
  if (ref.size() != hyp.size()) throw DimensionError("eb_score: clip count mismatch");
  MatchCounts total;
  for (std::size_t i = 0; i < ref.size(); ++i) total += match_events(ref[i], hyp[i], collar_s);
  return f1_from(total);
}

// Clip-level presence F1 per class, macro-averaged over classes present in ref.
inline double at_score(const std::vector<std::vector<EventAnnotation>>& ref,
                       const std::vector<std::vector<EventAnnotation>>& hyp) {
  if (ref.size() != hyp.size()) throw DimensionError("at_score: clip count mismatch");
  std::map<std::size_t, MatchCounts> per_class;
  std::set<std::size_t> present;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    std::set<std::size_t> r, h;
    for (const auto& a : ref[i]) r.insert(a.class_index);
    for (const auto& a : hyp[i]) h.insert(a.class_index);
    present.insert(r.begin(), r.end());
    std::set<std::size_t> all = r;
    all.insert(h.begin(), h.end());
    for (std::size_t c : all) {
      auto& m = per_class[c];
      const bool in_r = r.count(c) != 0, in_h = h.count(c) != 0;
      if (in_r && in_h) ++m.tp;
      else if (in_h) ++m.fp;
      else ++m.fn;
    }
  }
  if (present.empty()) return 1.0;
  double sum = 0.0;
  for (std::size_t c : present) sum += f1_from(per_class[c]);
  return sum / double(present.size());
}

inline double at_score(const std::vector<EventAnnotation>& ref, const std::vector<EventAnnotation>& hyp) {
  return at_score(std::vector<std::vector<EventAnnotation>>{ref}, std::vector<std::vector<EventAnnotation>>{hyp});
}

// ---- features -------------------------------------------------------------------

struct FeatureConfig {
  std::size_t bands = 8;      // equal-width bands over [0, Nyquist)
  std::size_t window = 400;
  std::size_t hop = 200;
};

using FeatureVector = std::vector<double>;

// Mean and standard deviation over hops of log(1 + band energy), per band.
inline FeatureVector clip_features(std::span<const double> wave, double sample_rate, const FeatureConfig& fc = {}) {
  if (!(sample_rate > 0.0)) throw RangeError("clip_features: sample rate must be positive");
  const std::size_t n = fc.window;
  if (wave.size() < n) throw RangeError("clip_features: clip shorter than one analysis window");
  std::vector<double> win(n);
  for (std::size_t i = 0; i < n; ++i) win[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(i) / double(n));
  const std::size_t hops = (wave.size() - n) / fc.hop + 1;
  const std::size_t half = n / 2;
  const std::size_t per_band = half / fc.bands;
  std::vector<std::vector<double>> logs(fc.bands, std::vector<double>(hops));
  // One real DFT per hop through Eigen's matrix product against a fixed basis.
  Eigen::MatrixXd basis(2 * half, n);
  for (std::size_t k = 0; k < half; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const double w = 2.0 * std::numbers::pi * double(k) * double(i) / double(n);
      basis(Eigen::Index(2 * k), Eigen::Index(i)) = std::cos(w);
      basis(Eigen::Index(2 * k + 1), Eigen::Index(i)) = std::sin(w);
    }
  }
  Eigen::MatrixXd frames(n, hops);
  for (std::size_t h = 0; h < hops; ++h) {
    for (std::size_t i = 0; i < n; ++i) frames(Eigen::Index(i), Eigen::Index(h)) = wave[h * fc.hop + i] * win[i];
  }
  const Eigen::MatrixXd spec = basis * frames;
  for (std::size_t h = 0; h < hops; ++h) {
    for (std::size_t b = 0; b < fc.bands; ++b) {
      double e = 0.0;
      for (std::size_t k = b * per_band; k < (b + 1) * per_band; ++k) {
        const double re = spec(Eigen::Index(2 * k), Eigen::Index(h));
        const double im = spec(Eigen::Index(2 * k + 1), Eigen::Index(h));
        e += re * re + im * im;
      }
      logs[b][h] = std::log1p(e / double(n));
    }
  }
  FeatureVector f(2 * fc.bands);
  for (std::size_t b = 0; b < fc.bands; ++b) {
    double mean = 0.0;
    for (double v : logs[b]) mean += v;
    mean /= double(hops);
    double var = 0.0;
    for (double v : logs[b]) var += (v - mean) * (v - mean);
    var /= double(hops);
    f[b] = mean;
    f[fc.bands + b] = std::sqrt(var);
  }
  return f;
}

struct FrechetResult {
  double distance = 0.0;
  bool ridge_applied = false;
};

namespace detail {

inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

inline void moments(const std::vector<FeatureVector>& xs, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  const auto d = Eigen::Index(xs.front().size());
  Eigen::MatrixXd x(Eigen::Index(xs.size()), d);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (Eigen::Index(xs[i].size()) != d) throw DimensionError("frechet: ragged feature set");
    for (Eigen::Index j = 0; j < d; ++j) x(Eigen::Index(i), j) = xs[i][std::size_t(j)];
  }
  mu = x.colwise().mean().transpose();
  const Eigen::MatrixXd c = x.rowwise() - mu.transpose();
  cov = (c.transpose() * c) / double(xs.size() - 1);
}

}  // namespace detail

// |mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)
inline FrechetResult frechet_from_moments(const Eigen::VectorXd& mu_a, Eigen::MatrixXd sa,
                                          const Eigen::VectorXd& mu_b, Eigen::MatrixXd sb) {
  FrechetResult r;
  const auto d = sa.rows();
  auto singular = [](const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff() <= 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff());
  };
  if (singular(sa) || singular(sb)) {
    sa += 1e-6 * Eigen::MatrixXd::Identity(d, d);
    sb += 1e-6 * Eigen::MatrixXd::Identity(d, d);
    r.ridge_applied = true;
  }
  const Eigen::MatrixXd ra = detail::psd_sqrt(sa);
  const Eigen::MatrixXd inner = ra * sb * ra;
  const Eigen::MatrixXd cross = detail::psd_sqrt(0.5 * (inner + inner.transpose()));
  const double dist = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() - 2.0 * cross.trace();
  r.distance = std::max(0.0, dist);
  return r;
}

inline FrechetResult frechet_distance(const std::vector<FeatureVector>& a, const std::vector<FeatureVector>& b) {
  if (a.empty() || b.empty()) throw RangeError("frechet: empty feature set");
  const std::size_t d = a.front().size();
  if (a.size() < d + 1 || b.size() < d + 1) {
    throw RangeError("frechet: need at least " + std::to_string(d + 1) + " samples per set");
  }
  if (b.front().size() != d) throw DimensionError("frechet: feature dimensions differ");
  Eigen::VectorXd ma, mb;
  Eigen::MatrixXd ca, cb;
  detail::moments(a, ma, ca);
  detail::moments(b, mb, cb);
  return frechet_from_moments(ma, ca, mb, cb);
}

inline double cosine(const FeatureVector& a, const FeatureVector& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return na == nb ? 1.0 : 0.0;
  return dot / std::sqrt(na * nb);
}

// Mean pairwise cosine between features of sliding windows. The clip is
// first scaled to unit RMS, so the value does not depend on overall gain.
inline double intra_cosine(std::span<const double> wave, double sample_rate, double window_s = 10.0,
                           double hop_s = 5.0, const FeatureConfig& fc = {}) {
  const std::size_t win = seconds_to_samples(window_s, sample_rate);
  const std::size_t hop = seconds_to_samples(hop_s, sample_rate);
  if (win == 0 || hop == 0) throw RangeError("intra_cosine: window and hop must be positive");
  if (wave.size() < win + hop) throw RangeError("intra_cosine: clip shorter than two windows");
  double energy = 0.0;
  for (double v : wave) energy += v * v;
  std::vector<double> unit(wave.begin(), wave.end());
  if (energy > 0.0) {
    const double g = 1.0 / std::sqrt(energy / double(wave.size()));
    for (double& v : unit) v *= g;
  }
  std::vector<FeatureVector> feats;
  for (std::size_t s = 0; s + win <= unit.size(); s += hop) {
    feats.push_back(clip_features(std::span<const double>(unit).subspan(s, win), sample_rate, fc));
  }
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < feats.size(); ++i) {
    for (std::size_t j = i + 1; j < feats.size(); ++j) {
      sum += cosine(feats[i], feats[j]);
      ++pairs;
    }
  }
  return sum / double(pairs);
}

// ---- metrics report -------------------------------------------------------------

struct MetricRow {
  std::string metric;
  double value = 0.0;
  std::string config;
};

// Tab-separated "metric  value  config" with a header line.
inline std::string format_metrics(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << "metric\tvalue\tconfig\n";
  os.precision(6);
  os.setf(std::ios::fixed);
  for (const auto& r : rows) os << r.metric << '\t' << r.value << '\t' << r.config << '\n';
  return os.str();
}

}  // namespace freeaudio
