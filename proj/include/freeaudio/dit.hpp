#pragma once

// Toy diffusion transformer over latent frames.
//
// Each layer: pre-LN self-attention, pre-LN text cross-attention, pre-LN MLP,
// all residual. Diffusion step and seconds_total enter as sinusoidal
// embeddings added to every token. Tokens past the active prefix carry a
// learned pad embedding instead of the projected latent.
//
// Attention sites expose two hook phases to the control code: pre_query
// (queries may be rewritten before attention) and post_output (the
// concatenated head outputs may be rewritten before the output projection).
// Gradients are derived by hand per block.

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "freeaudio/errors.hpp"
#include "freeaudio/events.hpp"
#include "freeaudio/numerics.hpp"

namespace freeaudio {

struct DitConfig {
  std::size_t channels = 16;
  std::size_t dim = 64;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t text_dim = 32;
  std::size_t mlp_hidden = 128;
  std::size_t max_frames = 250;
  double frame_rate = 25.0;
  double max_seconds = 10.0;
  // Data scale of the Gaussian prior whose optimal noise predictor is added
  // to the network output by the diffusion wrapper; 0 disables the skip.
  double prior_sigma = 0.0;
  // Optional per-channel prior scales; when set, they replace prior_sigma
  // channel by channel. Ignored while prior_sigma is 0.
  std::vector<double> prior_channel_sigma;
  std::vector<std::string> vocab = default_vocabulary();

  void validate() const {
    if (dim == 0 || heads == 0 || dim % heads != 0) {
      throw RangeError("dit: dim must be a positive multiple of heads");
    }
    if (channels == 0 || layers == 0 || text_dim == 0 || mlp_hidden == 0 || max_frames == 0) {
      throw RangeError("dit: sizes must be positive");
    }
    if (!(frame_rate > 0.0) || !(max_seconds > 0.0)) throw RangeError("dit: bad time geometry");
    if (!(prior_sigma >= 0.0)) throw RangeError("dit: prior_sigma must be nonnegative");
    if (!prior_channel_sigma.empty() && prior_channel_sigma.size() != channels) {
      throw RangeError("dit: prior_channel_sigma needs one entry per channel");
    }
    for (double s : prior_channel_sigma) {
      if (!(s > 0.0) || !std::isfinite(s)) throw RangeError("dit: prior_channel_sigma entries must be positive");
    }
  }

  double channel_prior_sigma(std::size_t c) const {
    return prior_channel_sigma.empty() ? prior_sigma : prior_channel_sigma.at(c);
  }

  bool operator==(const DitConfig&) const = default;
};

inline nlohmann::ordered_json to_json(const DitConfig& c) {
  nlohmann::ordered_json j;
  j["channels"] = c.channels;
  j["dim"] = c.dim;
  j["layers"] = c.layers;
  j["heads"] = c.heads;
  j["text_dim"] = c.text_dim;
  j["mlp_hidden"] = c.mlp_hidden;
  j["max_frames"] = c.max_frames;
  j["frame_rate"] = c.frame_rate;
  j["max_seconds"] = c.max_seconds;
  j["prior_sigma"] = c.prior_sigma;
  if (!c.prior_channel_sigma.empty()) j["prior_channel_sigma"] = c.prior_channel_sigma;
  j["vocab"] = c.vocab;
  return j;
}

inline DitConfig dit_config_from_json(const nlohmann::ordered_json& j) {
  DitConfig c;
  c.channels = j.at("channels").get<std::size_t>();
  c.dim = j.at("dim").get<std::size_t>();
  c.layers = j.at("layers").get<std::size_t>();
  c.heads = j.at("heads").get<std::size_t>();
  c.text_dim = j.at("text_dim").get<std::size_t>();
  c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
  c.max_frames = j.at("max_frames").get<std::size_t>();
  c.frame_rate = j.at("frame_rate").get<double>();
  c.max_seconds = j.at("max_seconds").get<double>();
  c.prior_sigma = j.value("prior_sigma", 0.0);
  c.prior_channel_sigma = j.value("prior_channel_sigma", std::vector<double>{});
  c.vocab = j.at("vocab").get<std::vector<std::string>>();
  return c;
}

// Token 0 is the unconditional (null) token, token 1 is out-of-vocabulary.
class Vocabulary {
 public:
  static constexpr std::size_t kNull = 0;
  static constexpr std::size_t kOov = 1;

  explicit Vocabulary(const std::vector<std::string>& words) {
    words_ = {"<null>", "<oov>"};
    for (const auto& w : words) {
      if (index_.count(w) == 0) {
        index_[w] = words_.size();
        words_.push_back(w);
      }
    }
  }

  std::size_t size() const { return words_.size(); }
  const std::string& word(std::size_t id) const { return words_.at(id); }

  std::size_t lookup(std::string_view w) const {
    auto it = index_.find(std::string(w));
    return it == index_.end() ? kOov : it->second;
  }

  // Lowercased whitespace tokens with edge punctuation removed.
  std::vector<std::size_t> tokenize(std::string_view caption) const {
    std::vector<std::size_t> out;
    std::istringstream in{std::string(caption)};
    std::string tok;
    while (in >> tok) {
      for (char& c : tok) c = char(std::tolower(static_cast<unsigned char>(c)));
      std::size_t b = 0, e = tok.size();
      while (b < e && std::ispunct(static_cast<unsigned char>(tok[b])) && tok[b] != '_') ++b;
      while (e > b && std::ispunct(static_cast<unsigned char>(tok[e - 1])) && tok[e - 1] != '_') --e;
      if (b == e) continue;
      out.push_back(lookup(std::string_view(tok).substr(b, e - b)));
    }
    return out;
  }

 private:
  std::vector<std::string> words_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <Real T>
struct TextCondition {
  std::vector<std::size_t> tokens;
  Tensor2D<T> embeddings;  // tokens x text_dim
};

struct DurationCondition {
  double seconds_total = 0.0;
};

// ---- hooks -----------------------------------------------------------------

enum class AttentionKind { self_attn, cross_attn };
enum class HookPhase { pre_query, post_output };

struct HookSite {
  AttentionKind kind = AttentionKind::self_attn;
  std::size_t layer = 0;
  auto operator<=>(const HookSite&) const = default;
};

// Views of one attention site across the whole batch. At pre_query, `out` is
// empty and `q` may be rewritten; at post_output, `out` may be rewritten.
template <Real T>
struct AttentionBatch {
  HookSite site;
  HookPhase phase = HookPhase::pre_query;
  std::size_t heads = 1;
  std::size_t pass = 0;  // caller-defined tag, e.g. conditional vs unconditional
  std::vector<Tensor2D<T>*> q;
  std::vector<const Tensor2D<T>*> k;
  std::vector<const Tensor2D<T>*> v;
  std::vector<Tensor2D<T>*> out;

  std::size_t size() const { return q.size(); }
};

template <Real T>
using AttentionHook = std::function<void(AttentionBatch<T>&)>;

template <Real T>
class HookSet {
 public:
  void set(HookSite site, HookPhase phase, AttentionHook<T> fn) {
    auto key = std::make_pair(site, phase);
    if (hooks_.count(key)) throw StateError("hook already installed at this site and phase");
    hooks_.emplace(key, std::move(fn));
  }
  void clear(HookSite site, HookPhase phase) { hooks_.erase(std::make_pair(site, phase)); }
  void clear() { hooks_.clear(); }
  bool empty() const { return hooks_.empty(); }
  std::size_t size() const { return hooks_.size(); }
  bool contains(HookSite site, HookPhase phase) const {
    return hooks_.count(std::make_pair(site, phase)) != 0;
  }
  const AttentionHook<T>* find(HookSite site, HookPhase phase) const {
    auto it = hooks_.find(std::make_pair(site, phase));
    return it == hooks_.end() ? nullptr : &it->second;
  }

 private:
  std::map<std::pair<HookSite, HookPhase>, AttentionHook<T>> hooks_;
};

// ---- parameters ------------------------------------------------------------

template <Real T>
struct LayerParams {
  Tensor2D<T> ln1_g, ln1_b;
  Tensor2D<T> wq, bq, wk, wv, bv, wo, bo;  // keys carry no bias: softmax ignores it
  Tensor2D<T> ln2_g, ln2_b;
  Tensor2D<T> cwq, cbq, cwk, cwv, cbv, cwo, cbo;
  Tensor2D<T> ln3_g, ln3_b;
  Tensor2D<T> w1, b1, w2, b2;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "ln1_g", ln1_g); f(prefix + "ln1_b", ln1_b);
    f(prefix + "wq", wq); f(prefix + "bq", bq);
    f(prefix + "wk", wk);
    f(prefix + "wv", wv); f(prefix + "bv", bv);
    f(prefix + "wo", wo); f(prefix + "bo", bo);
    f(prefix + "ln2_g", ln2_g); f(prefix + "ln2_b", ln2_b);
    f(prefix + "cwq", cwq); f(prefix + "cbq", cbq);
    f(prefix + "cwk", cwk);
    f(prefix + "cwv", cwv); f(prefix + "cbv", cbv);
    f(prefix + "cwo", cwo); f(prefix + "cbo", cbo);
    f(prefix + "ln3_g", ln3_g); f(prefix + "ln3_b", ln3_b);
    f(prefix + "w1", w1); f(prefix + "b1", b1);
    f(prefix + "w2", w2); f(prefix + "b2", b2);
  }
};

template <Real T>
struct DitParams {
  Tensor2D<T> text_table;
  Tensor2D<T> w_in, b_in, pad;
  Tensor2D<T> wt1, bt1, wt2, bt2;
  Tensor2D<T> wd, bd;
  std::vector<LayerParams<T>> layers;
  Tensor2D<T> lnf_g, lnf_b, w_out, b_out, w_skip;

  DitParams() = default;

  DitParams(const DitConfig& c, std::size_t vocab_size) {
    const std::size_t d = c.dim;
    auto z = [](std::size_t r, std::size_t cols) { return Tensor2D<T>(r, cols); };
    auto ones = [](std::size_t n) { return Tensor2D<T>(1, n, T{1}); };
    text_table = z(vocab_size, c.text_dim);
    w_in = z(c.channels, d); b_in = z(1, d); pad = z(1, d);
    wt1 = z(d, d); bt1 = z(1, d); wt2 = z(d, d); bt2 = z(1, d);
    wd = z(d, d); bd = z(1, d);
    layers.resize(c.layers);
    for (auto& l : layers) {
      l.ln1_g = ones(d); l.ln1_b = z(1, d);
      l.wq = z(d, d); l.bq = z(1, d); l.wk = z(d, d);
      l.wv = z(d, d); l.bv = z(1, d); l.wo = z(d, d); l.bo = z(1, d);
      l.ln2_g = ones(d); l.ln2_b = z(1, d);
      l.cwq = z(d, d); l.cbq = z(1, d);
      l.cwk = z(c.text_dim, d);
      l.cwv = z(c.text_dim, d); l.cbv = z(1, d);
      l.cwo = z(d, d); l.cbo = z(1, d);
      l.ln3_g = ones(d); l.ln3_b = z(1, d);
      l.w1 = z(d, c.mlp_hidden); l.b1 = z(1, c.mlp_hidden);
      l.w2 = z(c.mlp_hidden, d); l.b2 = z(1, d);
    }
    lnf_g = ones(d); lnf_b = z(1, d);
    w_out = z(d, c.channels); b_out = z(1, c.channels);
    w_skip = z(c.channels, c.channels);
  }

  template <class F>
  void visit(F&& f) {
    f("text_table", text_table);
    f("w_in", w_in); f("b_in", b_in); f("pad", pad);
    f("wt1", wt1); f("bt1", bt1); f("wt2", wt2); f("bt2", bt2);
    f("wd", wd); f("bd", bd);
    for (std::size_t i = 0; i < layers.size(); ++i) {
      layers[i].visit("layer" + std::to_string(i) + ".", f);
    }
    f("lnf_g", lnf_g); f("lnf_b", lnf_b);
    f("w_out", w_out); f("b_out", b_out); f("w_skip", w_skip);
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<DitParams*>(this)->visit([&](const std::string& n, Tensor2D<T>& t) {
      f(n, static_cast<const Tensor2D<T>&>(t));
    });
  }

  // Same shapes, all zeros.
  DitParams zeros_like() const {
    DitParams out = *this;
    out.visit([](const std::string&, Tensor2D<T>& t) { t.fill(T{0}); });
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    visit([&](const std::string&, const Tensor2D<T>& t) { n += t.size(); });
    return n;
  }

  template <Real U>
  DitParams<U> cast() const {
    DitParams<U> out;
    out.text_table = text_table.template cast<U>();
    out.w_in = w_in.template cast<U>(); out.b_in = b_in.template cast<U>();
    out.pad = pad.template cast<U>();
    out.wt1 = wt1.template cast<U>(); out.bt1 = bt1.template cast<U>();
    out.wt2 = wt2.template cast<U>(); out.bt2 = bt2.template cast<U>();
    out.wd = wd.template cast<U>(); out.bd = bd.template cast<U>();
    out.layers.resize(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) {
      auto& src = const_cast<LayerParams<T>&>(layers[i]);
      std::vector<Tensor2D<U>*> dst;
      out.layers[i].visit("", [&](const std::string&, Tensor2D<U>& t) { dst.push_back(&t); });
      std::size_t k = 0;
      src.visit("", [&](const std::string&, Tensor2D<T>& t) { *dst[k++] = t.template cast<U>(); });
    }
    out.lnf_g = lnf_g.template cast<U>(); out.lnf_b = lnf_b.template cast<U>();
    out.w_out = w_out.template cast<U>(); out.b_out = b_out.template cast<U>();
    out.w_skip = w_skip.template cast<U>();
    return out;
  }
};

// ---- forward caches ----------------------------------------------------------

template <Real T>
struct LayerNormCache {
  Tensor2D<T> xhat;
  std::vector<T> inv_std;
};

template <Real T>
struct LayerCache {
  LayerNormCache<T> ln1, ln2, ln3;
  Tensor2D<T> n1, q, k, v, o;
  std::vector<ColMatrix<T>> p_self;
  Tensor2D<T> n2, cq, ctx, ck, cv, co;
  std::vector<ColMatrix<T>> p_cross;
  Tensor2D<T> n3, u, a;
};

template <Real T>
struct ElementCache {
  Tensor2D<T> x;
  std::size_t active = 0;
  std::vector<std::size_t> tokens;
  Tensor2D<T> sin_t, a1, s1, sin_d;
  std::vector<LayerCache<T>> layers;
  LayerNormCache<T> lnf;
  Tensor2D<T> nf;
};

namespace detail {

template <Real T>
T sigmoid(T u) {
  return T{1} / (T{1} + std::exp(-u));
}

template <Real T>
void layer_norm_forward(const Tensor2D<T>& x, const Tensor2D<T>& g, const Tensor2D<T>& b,
                        Tensor2D<T>& y, LayerNormCache<T>* cache) {
  const std::size_t rows = x.rows(), cols = x.cols();
  y = Tensor2D<T>(rows, cols);
  if (cache) {
    cache->xhat = Tensor2D<T>(rows, cols);
    cache->inv_std.assign(rows, T{0});
  }
  const T n = T(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.data() + r * cols;
    T mean = 0;
    for (std::size_t c = 0; c < cols; ++c) mean += in[c];
    mean /= n;
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (in[c] - mean) * (in[c] - mean);
    var /= n;
    const T inv = T{1} / std::sqrt(var + T(1e-5));
    T* out = y.data() + r * cols;
    for (std::size_t c = 0; c < cols; ++c) {
      const T xh = (in[c] - mean) * inv;
      if (cache) cache->xhat(r, c) = xh;
      out[c] = xh * g.data()[c] + b.data()[c];
    }
    if (cache) cache->inv_std[r] = inv;
  }
}

// Accumulates dgamma/dbeta and returns dx.
template <Real T>
Tensor2D<T> layer_norm_backward(const Tensor2D<T>& dy, const LayerNormCache<T>& cache,
                                const Tensor2D<T>& g, Tensor2D<T>& dg, Tensor2D<T>& db) {
  const std::size_t rows = dy.rows(), cols = dy.cols();
  Tensor2D<T> dx(rows, cols);
  std::vector<T> dxh(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    T m1 = 0, m2 = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const T d = dy(r, c);
      const T xh = cache.xhat(r, c);
      dg.data()[c] += d * xh;
      db.data()[c] += d;
      dxh[c] = d * g.data()[c];
      m1 += dxh[c];
      m2 += dxh[c] * xh;
    }
    m1 /= T(cols);
    m2 /= T(cols);
    const T inv = cache.inv_std[r];
    for (std::size_t c = 0; c < cols; ++c) dx(r, c) = inv * (dxh[c] - m1 - cache.xhat(r, c) * m2);
  }
  return dx;
}

// y = x W + b
template <Real T>
Tensor2D<T> linear(const Tensor2D<T>& x, const Tensor2D<T>& w, const Tensor2D<T>& b) {
  Tensor2D<T> y(x.rows(), w.cols());
  auto ym = y.map();
  ym.noalias() = x.map() * w.map();
  ym.rowwise() += b.map().row(0);
  return y;
}

// Accumulates dW, db; returns dx (when wanted).
template <Real T>
void linear_backward(const Tensor2D<T>& x, const Tensor2D<T>& w, const Tensor2D<T>& dy,
                     Tensor2D<T>& dw, Tensor2D<T>& db, Tensor2D<T>* dx) {
  dw.map().noalias() += x.map().transpose() * dy.map();
  db.map().row(0) += dy.map().colwise().sum();
  if (dx) {
    if (dx->rows() != x.rows() || dx->cols() != x.cols()) *dx = Tensor2D<T>(x.rows(), x.cols());
    dx->map().noalias() += dy.map() * w.map().transpose();
  }
}

// y = x W
template <Real T>
Tensor2D<T> project(const Tensor2D<T>& x, const Tensor2D<T>& w) {
  Tensor2D<T> y(x.rows(), w.cols());
  y.map().noalias() = x.map() * w.map();
  return y;
}

template <Real T>
void project_backward(const Tensor2D<T>& x, const Tensor2D<T>& w, const Tensor2D<T>& dy, Tensor2D<T>& dw,
                      Tensor2D<T>* dx) {
  dw.map().noalias() += x.map().transpose() * dy.map();
  if (dx) {
    if (dx->rows() != x.rows() || dx->cols() != x.cols()) *dx = Tensor2D<T>(x.rows(), x.cols());
    dx->map().noalias() += dy.map() * w.map().transpose();
  }
}

// Probabilities are kept transposed (keys x queries, column-major) so the
// softmax runs down contiguous columns.
template <Real T>
void mha_forward(const Tensor2D<T>& q, const Tensor2D<T>& k, const Tensor2D<T>& v,
                 std::size_t heads, Tensor2D<T>& o, std::vector<ColMatrix<T>>* probs) {
  const auto dh = Eigen::Index(q.cols() / heads);
  const T scale = T{1} / std::sqrt(T(dh));
  o = Tensor2D<T>(q.rows(), v.cols());
  if (probs) probs->resize(heads);
  ColMatrix<T> local;
  RowMatrix<T> qh, kh, vh;
  auto om = o.map();
  for (std::size_t h = 0; h < heads; ++h) {
    ColMatrix<T>& pt = probs ? (*probs)[h] : local;
    const auto c0 = Eigen::Index(h) * dh;
    qh = q.map().middleCols(c0, dh) * scale;
    kh = k.map().middleCols(c0, dh);
    vh = v.map().middleCols(c0, dh);
    pt.noalias() = kh * qh.transpose();
    const Eigen::Matrix<T, 1, Eigen::Dynamic> mx = pt.colwise().maxCoeff();
    pt.rowwise() -= mx;
    pt = pt.array().exp().matrix();
    const Eigen::Matrix<T, 1, Eigen::Dynamic> inv = pt.colwise().sum().cwiseInverse();
    pt.array().rowwise() *= inv.array();
    om.middleCols(c0, dh).noalias() = pt.transpose() * vh;
  }
}

template <Real T>
void mha_backward(const Tensor2D<T>& q, const Tensor2D<T>& k, const Tensor2D<T>& v,
                  std::size_t heads, const std::vector<ColMatrix<T>>& probs, const Tensor2D<T>& d_o,
                  Tensor2D<T>& dq, Tensor2D<T>& dk, Tensor2D<T>& dv) {
  const auto dh = Eigen::Index(q.cols() / heads);
  const T scale = T{1} / std::sqrt(T(dh));
  dq = Tensor2D<T>(q.rows(), q.cols());
  dk = Tensor2D<T>(k.rows(), k.cols());
  dv = Tensor2D<T>(v.rows(), v.cols());
  ColMatrix<T> ds;
  RowMatrix<T> dO, vh;
  for (std::size_t h = 0; h < heads; ++h) {
    const auto c0 = Eigen::Index(h) * dh;
    const ColMatrix<T>& pt = probs[h];
    dO = d_o.map().middleCols(c0, dh);
    vh = v.map().middleCols(c0, dh);
    dv.map().middleCols(c0, dh).noalias() = pt * dO;
    ds.noalias() = vh * dO.transpose();
    const Eigen::Matrix<T, 1, Eigen::Dynamic> cs = (ds.array() * pt.array()).colwise().sum();
    ds = (pt.array() * (ds.array().rowwise() - cs.array())).matrix();
    dq.map().middleCols(c0, dh).noalias() = (ds.transpose() * k.map().middleCols(c0, dh)) * scale;
    dk.map().middleCols(c0, dh).noalias() = (ds * q.map().middleCols(c0, dh)) * scale;
  }
}

}  // namespace detail

// ---- model -----------------------------------------------------------------

template <Real T>
class DitModel {
 public:
  DitModel() : DitModel(DitConfig{}) {}

  explicit DitModel(DitConfig config)
      : config_(std::move(config)), vocab_(config_.vocab),
        params_(config_, vocab_.size()) {
    config_.validate();
    build_positions();
  }

  DitModel(DitConfig config, DitParams<T> params)
      : config_(std::move(config)), vocab_(config_.vocab), params_(std::move(params)) {
    config_.validate();
    build_positions();
  }

  const DitConfig& config() const { return config_; }
  const Vocabulary& vocabulary() const { return vocab_; }
  DitParams<T>& params() { return params_; }
  const DitParams<T>& params() const { return params_; }

  // Scaled-normal initialization; residual output projections are shrunk
  // by 1/sqrt(2 * layers).
  void initialize(std::uint64_t seed, double output_std = 0.02) {
    SeededRng rng(seed);
    const double d = double(config_.dim);
    const double res = 1.0 / std::sqrt(2.0 * double(config_.layers));
    auto fill = [&](Tensor2D<T>& t, double stddev) { rng.fill_normal<T>(t.values(), stddev); };
    fill(params_.text_table, 1.0);
    fill(params_.w_in, 1.0 / std::sqrt(double(config_.channels)));
    fill(params_.pad, 1.0);
    fill(params_.wt1, 1.0 / std::sqrt(d));
    fill(params_.wt2, 1.0 / std::sqrt(d));
    fill(params_.wd, 1.0 / std::sqrt(d));
    for (auto& l : params_.layers) {
      fill(l.wq, 1.0 / std::sqrt(d)); fill(l.wk, 1.0 / std::sqrt(d));
      fill(l.wv, 1.0 / std::sqrt(d)); fill(l.wo, res / std::sqrt(d));
      fill(l.cwq, 1.0 / std::sqrt(d));
      fill(l.cwk, 1.0 / std::sqrt(double(config_.text_dim)));
      fill(l.cwv, 1.0 / std::sqrt(double(config_.text_dim)));
      fill(l.cwo, res / std::sqrt(d));
      fill(l.w1, 1.0 / std::sqrt(d));
      fill(l.w2, res / std::sqrt(double(config_.mlp_hidden)));
    }
    fill(params_.w_out, output_std);
    params_.w_skip.fill(T{0});
  }

  TextCondition<T> embed_text(std::string_view caption) const {
    bool blank = true;
    for (char c : caption) blank = blank && std::isspace(static_cast<unsigned char>(c));
    if (blank) throw ParseError("embed_text: empty caption");
    TextCondition<T> tc;
    tc.tokens = vocab_.tokenize(caption);
    if (tc.tokens.empty()) tc.tokens.push_back(Vocabulary::kOov);
    tc.embeddings = gather_text(tc.tokens);
    return tc;
  }

  TextCondition<T> condition_from_tokens(const std::vector<std::size_t>& tokens) const {
    for (std::size_t id : tokens) {
      if (id >= vocab_.size()) throw DimensionError("dit: token id outside vocabulary");
    }
    if (tokens.empty()) throw DimensionError("dit: text condition without tokens");
    return {tokens, gather_text(tokens)};
  }

  TextCondition<T> null_condition() const {
    TextCondition<T> tc;
    tc.tokens = {Vocabulary::kNull};
    tc.embeddings = gather_text(tc.tokens);
    return tc;
  }

  std::size_t active_frames(double seconds_total, std::size_t frames) const {
    if (!(seconds_total > 0.0) || seconds_total > config_.max_seconds + 1e-9) {
      throw RangeError("seconds_total " + std::to_string(seconds_total) + " outside (0, " +
                       std::to_string(config_.max_seconds) + "]");
    }
    const double f = std::floor(seconds_total * config_.frame_rate + 0.5);
    return std::min(frames, std::size_t(std::max(1.0, f)));
  }

  // x[b] is frames x channels (token-major). Returns predicted noise with
  // the same shapes. `caches`, when given, receives what backward needs.
  std::vector<Tensor2D<T>> forward(const std::vector<Tensor2D<T>>& x, std::size_t step,
                                   const std::vector<TextCondition<T>>& text,
                                   const std::vector<DurationCondition>& durations,
                                   const HookSet<T>* hooks = nullptr, std::size_t pass = 0,
                                   std::vector<ElementCache<T>>* caches = nullptr) const {
    const std::size_t batch = x.size();
    if (text.size() != batch || durations.size() != batch) {
      throw DimensionError("dit: batch size mismatch between latents and conditions");
    }
    if (batch == 0) return {};
    const std::size_t frames = x[0].rows();
    for (const auto& xi : x) {
      if (xi.rows() != frames || xi.cols() != config_.channels) {
        throw DimensionError("dit: latent batch must share frames x channels");
      }
    }
    if (frames > config_.max_frames) throw DimensionError("dit: more frames than max_frames");
    for (const auto& t : text) {
      if (t.tokens.empty()) throw DimensionError("dit: text condition without tokens");
      for (std::size_t id : t.tokens) {
        if (id >= vocab_.size()) throw DimensionError("dit: token id outside vocabulary");
      }
    }
    if (caches) caches->assign(batch, ElementCache<T>{});

    std::vector<Tensor2D<T>> h(batch);
    std::vector<std::size_t> active(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      active[b] = active_frames(durations[b].seconds_total, frames);
      h[b] = embed_tokens(x[b], active[b], step, durations[b].seconds_total,
                          caches ? &(*caches)[b] : nullptr);
      if (caches) {
        (*caches)[b].x = x[b];
        (*caches)[b].active = active[b];
        (*caches)[b].tokens = text[b].tokens;
        (*caches)[b].layers.resize(config_.layers);
      }
    }

    std::vector<Tensor2D<T>> q(batch), k(batch), v(batch), o(batch), n(batch);
    for (std::size_t l = 0; l < config_.layers; ++l) {
      const LayerParams<T>& p = params_.layers[l];
      auto lc = [&](std::size_t b) -> LayerCache<T>* {
        return caches ? &(*caches)[b].layers[l] : nullptr;
      };

      // self-attention
      for (std::size_t b = 0; b < batch; ++b) {
        detail::layer_norm_forward(h[b], p.ln1_g, p.ln1_b, n[b], lc(b) ? &lc(b)->ln1 : nullptr);
        q[b] = detail::linear(n[b], p.wq, p.bq);
        k[b] = detail::project(n[b], p.wk);
        v[b] = detail::linear(n[b], p.wv, p.bv);
      }
      run_attention({AttentionKind::self_attn, l}, hooks, pass, q, k, v, o, caches, l, false);
      for (std::size_t b = 0; b < batch; ++b) {
        if (auto* c = lc(b)) {
          c->n1 = n[b]; c->q = q[b]; c->k = k[b]; c->v = v[b]; c->o = o[b];
        }
        h[b].map() += detail::linear(o[b], p.wo, p.bo).map();
      }

      // cross-attention against text tokens
      for (std::size_t b = 0; b < batch; ++b) {
        detail::layer_norm_forward(h[b], p.ln2_g, p.ln2_b, n[b], lc(b) ? &lc(b)->ln2 : nullptr);
        q[b] = detail::linear(n[b], p.cwq, p.cbq);
        const Tensor2D<T> ctx = gather_text(text[b].tokens);
        k[b] = detail::project(ctx, p.cwk);
        v[b] = detail::linear(ctx, p.cwv, p.cbv);
        if (auto* c = lc(b)) c->ctx = ctx;
      }
      run_attention({AttentionKind::cross_attn, l}, hooks, pass, q, k, v, o, caches, l, true);
      for (std::size_t b = 0; b < batch; ++b) {
        if (auto* c = lc(b)) {
          c->n2 = n[b]; c->cq = q[b]; c->ck = k[b]; c->cv = v[b]; c->co = o[b];
        }
        h[b].map() += detail::linear(o[b], p.cwo, p.cbo).map();
      }

      // MLP
      for (std::size_t b = 0; b < batch; ++b) {
        detail::layer_norm_forward(h[b], p.ln3_g, p.ln3_b, n[b], lc(b) ? &lc(b)->ln3 : nullptr);
        Tensor2D<T> u = detail::linear(n[b], p.w1, p.b1);
        Tensor2D<T> a(u.rows(), u.cols());
        for (std::size_t i = 0; i < u.size(); ++i) {
          const T z = u.data()[i];
          a.data()[i] = z * detail::sigmoid(z);
        }
        h[b].map() += detail::linear(a, p.w2, p.b2).map();
        if (auto* c = lc(b)) {
          c->n3 = n[b]; c->u = std::move(u); c->a = std::move(a);
        }
      }
    }

    std::vector<Tensor2D<T>> out(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      Tensor2D<T> nf;
      detail::layer_norm_forward(h[b], params_.lnf_g, params_.lnf_b, nf,
                                 caches ? &(*caches)[b].lnf : nullptr);
      out[b] = detail::linear(nf, params_.w_out, params_.b_out);
      if (active[b] > 0) {
        const auto a = Eigen::Index(active[b]);
        out[b].map().topRows(a).noalias() += x[b].map().topRows(a) * params_.w_skip.map();
      }
      if (caches) (*caches)[b].nf = std::move(nf);
    }
    return out;
  }

  // Backpropagates d_out (frames x channels) through one cached element,
  // accumulating into grads.
  void backward(const ElementCache<T>& c, const Tensor2D<T>& d_out, DitParams<T>& g) const {
    const auto a = Eigen::Index(c.active);
    const std::size_t frames = c.x.rows();
    // output head
    Tensor2D<T> d_nf(frames, config_.dim);
    detail::linear_backward(c.nf, params_.w_out, d_out, g.w_out, g.b_out, &d_nf);
    if (a > 0) {
      g.w_skip.map().noalias() += c.x.map().topRows(a).transpose() * d_out.map().topRows(a);
    }
    Tensor2D<T> dh = detail::layer_norm_backward(d_nf, c.lnf, params_.lnf_g, g.lnf_g, g.lnf_b);

    for (std::size_t li = config_.layers; li-- > 0;) {
      const LayerParams<T>& p = params_.layers[li];
      LayerParams<T>& gp = g.layers[li];
      const LayerCache<T>& lc = c.layers[li];

      // MLP
      Tensor2D<T> da;
      detail::linear_backward(lc.a, p.w2, dh, gp.w2, gp.b2, &da);
      for (std::size_t i = 0; i < da.size(); ++i) {
        const T z = lc.u.data()[i];
        const T s = detail::sigmoid(z);
        da.data()[i] *= s * (T{1} + z * (T{1} - s));
      }
      Tensor2D<T> dn;
      detail::linear_backward(lc.n3, p.w1, da, gp.w1, gp.b1, &dn);
      dh.map() += detail::layer_norm_backward(dn, lc.ln3, p.ln3_g, gp.ln3_g, gp.ln3_b).map();

      // cross-attention
      Tensor2D<T> d_co;
      detail::linear_backward(lc.co, p.cwo, dh, gp.cwo, gp.cbo, &d_co);
      Tensor2D<T> dq, dk, dv;
      detail::mha_backward(lc.cq, lc.ck, lc.cv, config_.heads, lc.p_cross, d_co, dq, dk, dv);
      Tensor2D<T> dctx;
      detail::project_backward(lc.ctx, p.cwk, dk, gp.cwk, &dctx);
      detail::linear_backward(lc.ctx, p.cwv, dv, gp.cwv, gp.cbv, &dctx);
      for (std::size_t i = 0; i < c.tokens.size(); ++i) {
        auto dst = g.text_table.row(c.tokens[i]);
        auto src = dctx.row(i);
        for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
      }
      dn = Tensor2D<T>();
      detail::linear_backward(lc.n2, p.cwq, dq, gp.cwq, gp.cbq, &dn);
      dh.map() += detail::layer_norm_backward(dn, lc.ln2, p.ln2_g, gp.ln2_g, gp.ln2_b).map();

      // self-attention
      Tensor2D<T> d_o;
      detail::linear_backward(lc.o, p.wo, dh, gp.wo, gp.bo, &d_o);
      detail::mha_backward(lc.q, lc.k, lc.v, config_.heads, lc.p_self, d_o, dq, dk, dv);
      dn = Tensor2D<T>();
      detail::linear_backward(lc.n1, p.wq, dq, gp.wq, gp.bq, &dn);
      detail::project_backward(lc.n1, p.wk, dk, gp.wk, &dn);
      detail::linear_backward(lc.n1, p.wv, dv, gp.wv, gp.bv, &dn);
      dh.map() += detail::layer_norm_backward(dn, lc.ln1, p.ln1_g, gp.ln1_g, gp.ln1_b).map();
    }

    // token embedding
    if (a > 0) {
      g.w_in.map().noalias() += c.x.map().topRows(a).transpose() * dh.map().topRows(a);
      g.b_in.map().row(0) += dh.map().topRows(a).colwise().sum();
    }
    if (Eigen::Index(frames) > a) {
      g.pad.map().row(0) += dh.map().bottomRows(Eigen::Index(frames) - a).colwise().sum();
    }
    Tensor2D<T> dglobal(1, config_.dim);
    dglobal.map().row(0) = dh.map().colwise().sum();
    // global conditioning: step MLP and duration projection
    Tensor2D<T> ds1;
    detail::linear_backward(c.s1, params_.wt2, dglobal, g.wt2, g.bt2, &ds1);
    for (std::size_t i = 0; i < ds1.size(); ++i) {
      const T z = c.a1.data()[i];
      const T s = detail::sigmoid(z);
      ds1.data()[i] *= s * (T{1} + z * (T{1} - s));
    }
    detail::linear_backward<T>(c.sin_t, params_.wt1, ds1, g.wt1, g.bt1, nullptr);
    detail::linear_backward<T>(c.sin_d, params_.wd, dglobal, g.wd, g.bd, nullptr);
  }

  template <Real U>
  DitModel<U> cast() const {
    return DitModel<U>(config_, params_.template cast<U>());
  }

 private:
  void build_positions() {
    positions_ = Tensor2D<T>(config_.max_frames, config_.dim);
    for (std::size_t i = 0; i < config_.max_frames; ++i) {
      sinusoidal_embedding<T>(double(i), positions_.row(i), 1000.0);
    }
  }

  Tensor2D<T> gather_text(const std::vector<std::size_t>& tokens) const {
    Tensor2D<T> out(tokens.size(), config_.text_dim);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      auto src = params_.text_table.row(tokens[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  Tensor2D<T> embed_tokens(const Tensor2D<T>& x, std::size_t active, std::size_t step,
                           double seconds, ElementCache<T>* cache) const {
    const std::size_t d = config_.dim;
    Tensor2D<T> sin_t(1, d), sin_d(1, d);
    sinusoidal_embedding<T>(double(step), sin_t.row(0));
    sinusoidal_embedding<T>(seconds * 100.0, sin_d.row(0));
    Tensor2D<T> a1 = detail::linear(sin_t, params_.wt1, params_.bt1);
    Tensor2D<T> s1(1, d);
    for (std::size_t i = 0; i < d; ++i) s1.data()[i] = a1.data()[i] * detail::sigmoid(a1.data()[i]);
    Tensor2D<T> global = detail::linear(s1, params_.wt2, params_.bt2);
    global.map() += detail::linear(sin_d, params_.wd, params_.bd).map();

    const std::size_t frames = x.rows();
    Tensor2D<T> h(frames, d);
    auto hm = h.map();
    const auto a = Eigen::Index(active);
    if (a > 0) {
      hm.topRows(a).noalias() = x.map().topRows(a) * params_.w_in.map();
      hm.topRows(a).rowwise() += params_.b_in.map().row(0);
    }
    for (Eigen::Index r = a; r < Eigen::Index(frames); ++r) hm.row(r) = params_.pad.map().row(0);
    hm += positions_.map().topRows(Eigen::Index(frames));
    hm.rowwise() += global.map().row(0);
    if (cache) {
      cache->sin_t = std::move(sin_t);
      cache->sin_d = std::move(sin_d);
      cache->a1 = std::move(a1);
      cache->s1 = std::move(s1);
    }
    return h;
  }

  void run_attention(HookSite site, const HookSet<T>* hooks, std::size_t pass,
                     std::vector<Tensor2D<T>>& q, std::vector<Tensor2D<T>>& k,
                     std::vector<Tensor2D<T>>& v, std::vector<Tensor2D<T>>& o,
                     std::vector<ElementCache<T>>* caches, std::size_t layer, bool cross) const {
    const std::size_t batch = q.size();
    auto make_view = [&](HookPhase phase) {
      AttentionBatch<T> view;
      view.site = site;
      view.phase = phase;
      view.heads = config_.heads;
      view.pass = pass;
      for (std::size_t b = 0; b < batch; ++b) {
        view.q.push_back(&q[b]);
        view.k.push_back(&k[b]);
        view.v.push_back(&v[b]);
        if (phase == HookPhase::post_output) view.out.push_back(&o[b]);
      }
      return view;
    };
    if (hooks) {
      if (const auto* fn = hooks->find(site, HookPhase::pre_query)) {
        auto view = make_view(HookPhase::pre_query);
        (*fn)(view);
      }
    }
    for (std::size_t b = 0; b < batch; ++b) {
      std::vector<ColMatrix<T>>* probs = nullptr;
      if (caches) {
        auto& lc = (*caches)[b].layers[layer];
        probs = cross ? &lc.p_cross : &lc.p_self;
      }
      detail::mha_forward(q[b], k[b], v[b], config_.heads, o[b], probs);
    }
    if (hooks) {
      if (const auto* fn = hooks->find(site, HookPhase::post_output)) {
        auto view = make_view(HookPhase::post_output);
        (*fn)(view);
      }
    }
  }

  DitConfig config_;
  Vocabulary vocab_;
  DitParams<T> params_;
  Tensor2D<T> positions_;
};

// ---- checkpoint --------------------------------------------------------------
//
// Layout (little-endian):
//   "FADITCK\0" | u32 version | u32 json_len | json (config + metadata)
//   | u32 n_arrays | { u32 name_len | name | u64 rows | u64 cols | u32 elem_size | data }*
// Arrays are written in visit() order, raw weights under "raw/", EMA under "ema/".

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <Real T>
struct Checkpoint {
  DitConfig config;
  DitParams<T> raw;
  DitParams<T> ema;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), std::streamsize(n));
}
template <class I>
void write_int(std::ostream& os, I v) {
  write_bytes(os, &v, sizeof(I));
}
template <class I>
I read_int(std::istream& is) {
  I v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(I));
  if (!is) throw FormatError("checkpoint: truncated");
  return v;
}

}  // namespace detail

template <Real T>
void save_checkpoint(std::ostream& os, const Checkpoint<T>& ck) {
  os.write("FADITCK", 8);
  detail::write_int<std::uint32_t>(os, kCheckpointVersion);
  nlohmann::ordered_json j;
  j["config"] = to_json(ck.config);
  j["metadata"] = ck.metadata;
  const std::string js = j.dump();
  detail::write_int<std::uint32_t>(os, std::uint32_t(js.size()));
  detail::write_bytes(os, js.data(), js.size());
  std::vector<std::pair<std::string, const Tensor2D<T>*>> arrays;
  ck.raw.visit([&](const std::string& n, const Tensor2D<T>& t) { arrays.emplace_back("raw/" + n, &t); });
  ck.ema.visit([&](const std::string& n, const Tensor2D<T>& t) { arrays.emplace_back("ema/" + n, &t); });
  detail::write_int<std::uint32_t>(os, std::uint32_t(arrays.size()));
  for (const auto& [name, t] : arrays) {
    detail::write_int<std::uint32_t>(os, std::uint32_t(name.size()));
    detail::write_bytes(os, name.data(), name.size());
    detail::write_int<std::uint64_t>(os, t->rows());
    detail::write_int<std::uint64_t>(os, t->cols());
    detail::write_int<std::uint32_t>(os, sizeof(T));
    detail::write_bytes(os, t->data(), t->size() * sizeof(T));
  }
}

template <Real T>
Checkpoint<T> load_checkpoint(std::istream& is) {
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "FADITCK", 8) != 0) throw FormatError("checkpoint: bad magic");
  const auto version = detail::read_int<std::uint32_t>(is);
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  }
  const auto jlen = detail::read_int<std::uint32_t>(is);
  std::string js(jlen, '\0');
  is.read(js.data(), jlen);
  if (!is) throw FormatError("checkpoint: truncated header");
  Checkpoint<T> ck;
  try {
    const auto j = nlohmann::ordered_json::parse(js);
    ck.config = dit_config_from_json(j.at("config"));
    ck.metadata = j.at("metadata");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint: bad header: ") + e.what());
  }
  ck.config.validate();
  const Vocabulary vocab(ck.config.vocab);
  ck.raw = DitParams<T>(ck.config, vocab.size());
  ck.ema = DitParams<T>(ck.config, vocab.size());
  std::map<std::string, Tensor2D<T>*> slots;
  ck.raw.visit([&](const std::string& n, Tensor2D<T>& t) { slots["raw/" + n] = &t; });
  ck.ema.visit([&](const std::string& n, Tensor2D<T>& t) { slots["ema/" + n] = &t; });
  const auto count = detail::read_int<std::uint32_t>(is);
  if (count != slots.size()) throw FormatError("checkpoint: array count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto nlen = detail::read_int<std::uint32_t>(is);
    std::string name(nlen, '\0');
    is.read(name.data(), nlen);
    const auto rows = detail::read_int<std::uint64_t>(is);
    const auto cols = detail::read_int<std::uint64_t>(is);
    const auto esize = detail::read_int<std::uint32_t>(is);
    auto it = slots.find(name);
    if (it == slots.end()) throw FormatError("checkpoint: unexpected array " + name);
    Tensor2D<T>& dst = *it->second;
    if (rows != dst.rows() || cols != dst.cols()) throw FormatError("checkpoint: shape mismatch in " + name);
    const std::size_t n = std::size_t(rows * cols);
    if (esize == sizeof(T)) {
      is.read(reinterpret_cast<char*>(dst.data()), std::streamsize(n * sizeof(T)));
    } else if (esize == 4 || esize == 8) {
      std::vector<char> buf(n * esize);
      is.read(buf.data(), std::streamsize(buf.size()));
      for (std::size_t e = 0; e < n; ++e) {
        if (esize == 4) {
          float f;
          std::memcpy(&f, buf.data() + e * 4, 4);
          dst.data()[e] = T(f);
        } else {
          double d;
          std::memcpy(&d, buf.data() + e * 8, 8);
          dst.data()[e] = T(d);
        }
      }
    } else {
      throw FormatError("checkpoint: bad element size");
    }
    if (!is) throw FormatError("checkpoint: truncated array " + name);
  }
  return ck;
}

template <Real T>
void save_checkpoint(const std::string& path, const Checkpoint<T>& ck) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path + " for writing");
  save_checkpoint(f, ck);
  if (!f) throw FormatError("checkpoint write failed: " + path);
}

template <Real T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("missing checkpoint: " + path);
  return load_checkpoint<T>(f);
}

}  // namespace freeaudio
