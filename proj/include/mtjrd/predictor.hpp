#ifndef MTJRD_PREDICTOR_HPP
#define MTJRD_PREDICTOR_HPP

// Multi-task JRD predictor: a shared transformer trunk feeds one specialized
// branch per task; each branch ends in its own layer norm and is mean-pooled,
// concatenated with an MLP embedding of the object attributes, and classified
// into 64 JRD bins. All layers carry hand-written backward passes; the scalar
// type is a template parameter so the gradient check can run in double.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <numeric>
#include <optional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mtjrd/core.hpp"
#include "mtjrd/image_io.hpp"

namespace mtjrd::predictor {

inline constexpr int kClasses = kNumLevels;
inline constexpr double kDefaultSigma = 3.0;

struct ModelConfig {
  int image_size = 64;
  int patch_size = 16;
  int embed_dim = 32;  // C
  int attr_dim = 32;   // C_A
  int trunk_depth = 2;
  int branch_depth = 1;
  int ff_mult = 2;
  std::uint64_t seed = 0;
  bool shared_branch_init = false;

  int tokens() const { return (image_size / patch_size) * (image_size / patch_size); }
  int patch_dim() const { return 3 * patch_size * patch_size; }
  int hidden() const { return ff_mult * embed_dim; }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || embed_dim <= 0 || attr_dim <= 0 || trunk_depth < 0 ||
        branch_depth < 0 || ff_mult <= 0)
      throw InvalidArgument("ModelConfig: dimensions must be positive");
    if (image_size % patch_size != 0)
      throw InvalidArgument("ModelConfig: image_size must be a multiple of patch_size");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::ordered_json config_to_json(const ModelConfig& c) {
  return {{"image_size", c.image_size},     {"patch_size", c.patch_size},
          {"embed_dim", c.embed_dim},       {"attr_dim", c.attr_dim},
          {"trunk_depth", c.trunk_depth},   {"branch_depth", c.branch_depth},
          {"ff_mult", c.ff_mult},           {"classes", kClasses},
          {"seed", c.seed},                 {"shared_branch_init", c.shared_branch_init}};
}

inline ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.value("image_size", c.image_size);
  c.patch_size = j.value("patch_size", c.patch_size);
  c.embed_dim = j.value("embed_dim", c.embed_dim);
  c.attr_dim = j.value("attr_dim", c.attr_dim);
  c.trunk_depth = j.value("trunk_depth", c.trunk_depth);
  c.branch_depth = j.value("branch_depth", c.branch_depth);
  c.ff_mult = j.value("ff_mult", c.ff_mult);
  c.seed = j.value("seed", c.seed);
  c.shared_branch_init = j.value("shared_branch_init", c.shared_branch_init);
  if (j.value("classes", kClasses) != kClasses) throw InvalidArgument("ModelConfig: class count is fixed at 64");
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Soft labels and loss
// ---------------------------------------------------------------------------

using Distribution = std::array<double, kClasses>;

/// Gaussian soft label over the 64 bins, truncated to the support and renormalized.
struct GdslTarget {
  Distribution probs{};
};

inline GdslTarget gdsl_targets(int jrd, double sigma = kDefaultSigma) {
  if (jrd < 0 || jrd > kMaxJrd) throw InvalidArgument("gdsl_targets: jrd must lie in [0,63]");
  if (!(sigma > 0)) throw InvalidArgument("gdsl_targets: sigma must be positive");
  GdslTarget t;
  double z = 0;
  for (int i = 0; i < kClasses; ++i) {
    const double d = i - jrd;
    t.probs[i] = std::exp(-d * d / (2 * sigma * sigma));
    z += t.probs[i];
  }
  for (auto& p : t.probs) p /= z;
  return t;
}

template <typename T>
std::array<T, kClasses> softmax(const std::array<T, kClasses>& logits) {
  std::array<T, kClasses> p{};
  const T m = *std::max_element(logits.begin(), logits.end());
  T z = 0;
  for (int i = 0; i < kClasses; ++i) {
    p[i] = std::exp(logits[i] - m);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

template <typename T>
using Logits = std::array<std::array<T, kClasses>, kNumTasks>;

/// Cross-entropy between softmax(logits) and target, via log-sum-exp.
template <typename T>
T cross_entropy(const std::array<T, kClasses>& logits, const Distribution& target) {
  const T m = *std::max_element(logits.begin(), logits.end());
  T z = 0;
  for (auto v : logits) z += std::exp(v - m);
  const T lse = m + std::log(z);
  T ce = 0;
  for (int i = 0; i < kClasses; ++i) ce += static_cast<T>(target[i]) * (lse - logits[i]);
  return ce;
}

/// Equally weighted sum over tasks; absent targets contribute nothing.
template <typename T>
T loss(const Logits<T>& logits, const std::array<std::optional<GdslTarget>, kNumTasks>& targets) {
  T total = 0;
  for (int t = 0; t < kNumTasks; ++t)
    if (targets[t]) total += cross_entropy(logits[t], targets[t]->probs);
  return total;
}

inline double entropy(const Distribution& p) {
  double h = 0;
  for (double v : p)
    if (v > 0) h -= v * std::log(v);
  return h;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
  int in = 0, out = 0;
  std::vector<T> w;  // in x out, row-major
  std::vector<T> b;  // out
};

template <typename T>
struct Norm {
  std::vector<T> gamma, beta;
};

template <typename T>
struct Block {
  Norm<T> ln1;
  Linear<T> q, k, v, o;
  Norm<T> ln2;
  Linear<T> ff1, ff2;
};

template <typename T>
struct Params {
  Linear<T> embed;
  std::vector<T> pos;  // tokens x C
  std::vector<Block<T>> trunk;
  std::array<std::vector<Block<T>>, kNumTasks> branches;
  std::array<Norm<T>, kNumTasks> branch_norm;
  Linear<T> attr1, attr2;
  std::array<Linear<T>, kNumTasks> heads;
};

namespace detail {

template <typename T>
Linear<T> make_linear(int in, int out) {
  return {in, out, std::vector<T>(static_cast<std::size_t>(in) * out, T(0)), std::vector<T>(static_cast<std::size_t>(out), T(0))};
}

template <typename T>
Norm<T> make_norm(int d) {
  return {std::vector<T>(static_cast<std::size_t>(d), T(0)), std::vector<T>(static_cast<std::size_t>(d), T(0))};
}

template <typename T>
Block<T> make_block(int c, int hidden) {
  return {make_norm<T>(c),          make_linear<T>(c, c), make_linear<T>(c, c),
          make_linear<T>(c, c),     make_linear<T>(c, c), make_norm<T>(c),
          make_linear<T>(c, hidden), make_linear<T>(hidden, c)};
}

template <typename T, typename Fn>
void visit_block(Block<T>& b, const std::string& p, Fn&& fn) {
  fn(p + ".ln1.gamma", b.ln1.gamma);
  fn(p + ".ln1.beta", b.ln1.beta);
  for (auto [name, lin] : {std::pair<const char*, Linear<T>*>{"q", &b.q}, {"k", &b.k}, {"v", &b.v}, {"o", &b.o}}) {
    fn(p + ".attn." + name + ".w", lin->w);
    fn(p + ".attn." + name + ".b", lin->b);
  }
  fn(p + ".ln2.gamma", b.ln2.gamma);
  fn(p + ".ln2.beta", b.ln2.beta);
  fn(p + ".ff1.w", b.ff1.w);
  fn(p + ".ff1.b", b.ff1.b);
  fn(p + ".ff2.w", b.ff2.w);
  fn(p + ".ff2.b", b.ff2.b);
}

}  // namespace detail

/// Visits every parameter tensor in a fixed order with a stable name.
template <typename T, typename Fn>
void for_each_tensor(Params<T>& p, Fn&& fn) {
  fn(std::string("embed.w"), p.embed.w);
  fn(std::string("embed.b"), p.embed.b);
  fn(std::string("embed.pos"), p.pos);
  for (std::size_t i = 0; i < p.trunk.size(); ++i) detail::visit_block(p.trunk[i], "trunk." + std::to_string(i), fn);
  for (int t = 0; t < kNumTasks; ++t) {
    const std::string tn(task_name(static_cast<Task>(t)));
    for (std::size_t i = 0; i < p.branches[t].size(); ++i)
      detail::visit_block(p.branches[t][i], "branch." + tn + "." + std::to_string(i), fn);
    fn("branch." + tn + ".norm.gamma", p.branch_norm[t].gamma);
    fn("branch." + tn + ".norm.beta", p.branch_norm[t].beta);
  }
  fn(std::string("attr.fc1.w"), p.attr1.w);
  fn(std::string("attr.fc1.b"), p.attr1.b);
  fn(std::string("attr.fc2.w"), p.attr2.w);
  fn(std::string("attr.fc2.b"), p.attr2.b);
  for (int t = 0; t < kNumTasks; ++t) {
    const std::string tn(task_name(static_cast<Task>(t)));
    fn("head." + tn + ".w", p.heads[t].w);
    fn("head." + tn + ".b", p.heads[t].b);
  }
}

template <typename T, typename Fn>
void for_each_tensor(const Params<T>& p, Fn&& fn) {
  for_each_tensor(const_cast<Params<T>&>(p), [&](const std::string& n, std::vector<T>& v) { fn(n, static_cast<const std::vector<T>&>(v)); });
}

/// All-zero parameters with the architecture of `cfg` (gradient and momentum buffers).
template <typename T>
Params<T> zero_params(const ModelConfig& cfg) {
  cfg.validate();
  const int c = cfg.embed_dim, h = cfg.hidden();
  Params<T> p;
  p.embed = detail::make_linear<T>(cfg.patch_dim(), c);
  p.pos.assign(static_cast<std::size_t>(cfg.tokens()) * c, T(0));
  for (int i = 0; i < cfg.trunk_depth; ++i) p.trunk.push_back(detail::make_block<T>(c, h));
  for (int t = 0; t < kNumTasks; ++t) {
    for (int i = 0; i < cfg.branch_depth; ++i) p.branches[t].push_back(detail::make_block<T>(c, h));
    p.branch_norm[t] = detail::make_norm<T>(c);
  }
  p.attr1 = detail::make_linear<T>(3, cfg.attr_dim);
  p.attr2 = detail::make_linear<T>(cfg.attr_dim, cfg.attr_dim);
  for (int t = 0; t < kNumTasks; ++t) p.heads[t] = detail::make_linear<T>(c + cfg.attr_dim, kClasses);
  return p;
}

template <typename T>
void zero_fill(Params<T>& p) {
  for_each_tensor(p, [](const std::string&, std::vector<T>& v) { std::fill(v.begin(), v.end(), T(0)); });
}

template <typename T>
std::size_t parameter_count(const Params<T>& p) {
  std::size_t n = 0;
  for_each_tensor(p, [&](const std::string&, const std::vector<T>& v) { n += v.size(); });
  return n;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Normalized network input: 3 x S x S planar image plus the attribute triplet.
struct Sample {
  std::vector<float> image;
  AttributeTriplet attrs;
  std::array<std::optional<int>, kNumTasks> jrd;
};

template <typename T>
class Model {
 public:
  Model() = default;

  /// Seeded initialization: weights ~ N(0, 1/fan_in), biases 0, norms identity,
  /// positional embeddings N(0, 0.02^2).
  explicit Model(const ModelConfig& cfg) : cfg_(cfg), params_(zero_params<T>(cfg)) {
    std::mt19937_64 rng(cfg.seed);
    auto init_linear = [&](Linear<T>& l) {
      std::normal_distribution<double> nd(0.0, 1.0 / std::sqrt(static_cast<double>(l.in)));
      for (auto& v : l.w) v = static_cast<T>(nd(rng));
    };
    auto init_block = [&](Block<T>& b) {
      for (auto* l : {&b.q, &b.k, &b.v, &b.o, &b.ff1, &b.ff2}) init_linear(*l);
      std::fill(b.ln1.gamma.begin(), b.ln1.gamma.end(), T(1));
      std::fill(b.ln2.gamma.begin(), b.ln2.gamma.end(), T(1));
    };
    init_linear(params_.embed);
    std::normal_distribution<double> pd(0.0, 0.02);
    for (auto& v : params_.pos) v = static_cast<T>(pd(rng));
    for (auto& b : params_.trunk) init_block(b);
    for (int t = 0; t < kNumTasks; ++t) {
      if (cfg.shared_branch_init && t > 0) {
        params_.branches[t] = params_.branches[0];
        continue;
      }
      for (auto& b : params_.branches[t]) init_block(b);
    }
    for (auto& n : params_.branch_norm) std::fill(n.gamma.begin(), n.gamma.end(), T(1));
    init_linear(params_.attr1);
    init_linear(params_.attr2);
    for (auto& h : params_.heads) init_linear(h);
  }

  Model(const ModelConfig& cfg, Params<T> params) : cfg_(cfg), params_(std::move(params)) {}

  const ModelConfig& config() const noexcept { return cfg_; }
  Params<T>& params() noexcept { return params_; }
  const Params<T>& params() const noexcept { return params_; }

  /// Same architecture, different scalar type.
  template <typename U>
  Model<U> cast() const {
    Params<U> out = zero_params<U>(cfg_);
    std::vector<const std::vector<T>*> src;
    for_each_tensor(params_, [&](const std::string&, const std::vector<T>& v) { src.push_back(&v); });
    std::size_t i = 0;
    for_each_tensor(out, [&](const std::string&, std::vector<U>& v) {
      const auto& s = *src[i++];
      for (std::size_t k = 0; k < v.size(); ++k) v[k] = static_cast<U>(s[k]);
    });
    return Model<U>(cfg_, std::move(out));
  }

  friend bool operator==(const Model& a, const Model& b) {
    if (!(a.cfg_ == b.cfg_)) return false;
    std::vector<const std::vector<T>*> x, y;
    for_each_tensor(a.params_, [&](const std::string&, const std::vector<T>& v) { x.push_back(&v); });
    for_each_tensor(b.params_, [&](const std::string&, const std::vector<T>& v) { y.push_back(&v); });
    for (std::size_t i = 0; i < x.size(); ++i)
      if (*x[i] != *y[i]) return false;
    return true;
  }

 private:
  ModelConfig cfg_;
  Params<T> params_;
};

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace kernels {

/// y[n x out] = x[n x in] * W + b
template <typename T>
void linear_fwd(const Linear<T>& l, const T* x, int n, T* y) {
  for (int r = 0; r < n; ++r) {
    T* yr = y + static_cast<std::size_t>(r) * l.out;
    for (int j = 0; j < l.out; ++j) yr[j] = l.b[j];
    const T* xr = x + static_cast<std::size_t>(r) * l.in;
    for (int i = 0; i < l.in; ++i) {
      const T xv = xr[i];
      const T* wr = l.w.data() + static_cast<std::size_t>(i) * l.out;
      for (int j = 0; j < l.out; ++j) yr[j] += xv * wr[j];
    }
  }
}

/// Accumulates dW, db and (optionally) writes dx.
template <typename T>
void linear_bwd(const Linear<T>& l, Linear<T>& g, const T* x, const T* dy, int n, T* dx) {
  for (int r = 0; r < n; ++r) {
    const T* xr = x + static_cast<std::size_t>(r) * l.in;
    const T* dyr = dy + static_cast<std::size_t>(r) * l.out;
    for (int j = 0; j < l.out; ++j) g.b[j] += dyr[j];
    for (int i = 0; i < l.in; ++i) {
      const T xv = xr[i];
      T* gw = g.w.data() + static_cast<std::size_t>(i) * l.out;
      const T* wr = l.w.data() + static_cast<std::size_t>(i) * l.out;
      T acc = 0;
      for (int j = 0; j < l.out; ++j) {
        gw[j] += xv * dyr[j];
        acc += wr[j] * dyr[j];
      }
      if (dx) dx[static_cast<std::size_t>(r) * l.in + i] = acc;
    }
  }
}

inline constexpr double kLnEps = 1e-5;

template <typename T>
struct NormCache {
  std::vector<T> xhat, inv_std;
};

template <typename T>
void norm_fwd(const Norm<T>& p, const T* x, int n, int d, T* y, NormCache<T>& c) {
  c.xhat.resize(static_cast<std::size_t>(n) * d);
  c.inv_std.resize(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    const T* xr = x + static_cast<std::size_t>(r) * d;
    T mu = 0;
    for (int i = 0; i < d; ++i) mu += xr[i];
    mu /= d;
    T var = 0;
    for (int i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= d;
    const T is = T(1) / std::sqrt(var + T(kLnEps));
    c.inv_std[r] = is;
    for (int i = 0; i < d; ++i) {
      const T xh = (xr[i] - mu) * is;
      c.xhat[static_cast<std::size_t>(r) * d + i] = xh;
      y[static_cast<std::size_t>(r) * d + i] = p.gamma[i] * xh + p.beta[i];
    }
  }
}

template <typename T>
void norm_bwd(const Norm<T>& p, Norm<T>& g, const NormCache<T>& c, const T* dy, int n, int d, T* dx) {
  std::vector<T> dxh(static_cast<std::size_t>(d));
  for (int r = 0; r < n; ++r) {
    const T* dyr = dy + static_cast<std::size_t>(r) * d;
    const T* xh = c.xhat.data() + static_cast<std::size_t>(r) * d;
    T s1 = 0, s2 = 0;
    for (int i = 0; i < d; ++i) {
      g.gamma[i] += dyr[i] * xh[i];
      g.beta[i] += dyr[i];
      dxh[i] = dyr[i] * p.gamma[i];
      s1 += dxh[i];
      s2 += dxh[i] * xh[i];
    }
    for (int i = 0; i < d; ++i)
      dx[static_cast<std::size_t>(r) * d + i] = c.inv_std[r] / T(d) * (T(d) * dxh[i] - s1 - xh[i] * s2);
  }
}

inline constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

template <typename T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::tanh(T(kGeluC) * (x + T(0.044715) * x * x * x)));
}

template <typename T>
T gelu_grad(T x) {
  const T u = T(kGeluC) * (x + T(0.044715) * x * x * x);
  const T t = std::tanh(u);
  return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * T(kGeluC) * (T(1) + T(3 * 0.044715) * x * x);
}

template <typename T>
struct BlockCache {
  std::vector<T> x, z1, q, k, v, a, o, h, z2, u, gu;
  NormCache<T> n1, n2;
};

/// Pre-norm block: h = x + Attn(LN1(x)); y = h + FF(LN2(h)). Single-head attention.
template <typename T>
void block_fwd(const Block<T>& b, const T* x, int n, int d, T* y, BlockCache<T>& c) {
  const std::size_t nd = static_cast<std::size_t>(n) * d;
  const int hid = b.ff1.out;
  c.x.assign(x, x + nd);
  c.z1.resize(nd);
  norm_fwd(b.ln1, x, n, d, c.z1.data(), c.n1);
  c.q.resize(nd);
  c.k.resize(nd);
  c.v.resize(nd);
  linear_fwd(b.q, c.z1.data(), n, c.q.data());
  linear_fwd(b.k, c.z1.data(), n, c.k.data());
  linear_fwd(b.v, c.z1.data(), n, c.v.data());
  const T scale = T(1) / std::sqrt(T(d));
  c.a.resize(static_cast<std::size_t>(n) * n);
  for (int i = 0; i < n; ++i) {
    T* ar = c.a.data() + static_cast<std::size_t>(i) * n;
    T m = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < n; ++j) {
      T s = 0;
      for (int e = 0; e < d; ++e) s += c.q[static_cast<std::size_t>(i) * d + e] * c.k[static_cast<std::size_t>(j) * d + e];
      ar[j] = s * scale;
      m = std::max(m, ar[j]);
    }
    T z = 0;
    for (int j = 0; j < n; ++j) {
      ar[j] = std::exp(ar[j] - m);
      z += ar[j];
    }
    for (int j = 0; j < n; ++j) ar[j] /= z;
  }
  c.o.assign(nd, T(0));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const T aij = c.a[static_cast<std::size_t>(i) * n + j];
      for (int e = 0; e < d; ++e) c.o[static_cast<std::size_t>(i) * d + e] += aij * c.v[static_cast<std::size_t>(j) * d + e];
    }
  c.h.resize(nd);
  linear_fwd(b.o, c.o.data(), n, c.h.data());
  for (std::size_t i = 0; i < nd; ++i) c.h[i] += x[i];
  c.z2.resize(nd);
  norm_fwd(b.ln2, c.h.data(), n, d, c.z2.data(), c.n2);
  c.u.resize(static_cast<std::size_t>(n) * hid);
  linear_fwd(b.ff1, c.z2.data(), n, c.u.data());
  c.gu.resize(c.u.size());
  for (std::size_t i = 0; i < c.u.size(); ++i) c.gu[i] = gelu(c.u[i]);
  linear_fwd(b.ff2, c.gu.data(), n, y);
  for (std::size_t i = 0; i < nd; ++i) y[i] += c.h[i];
}

template <typename T>
void block_bwd(const Block<T>& b, Block<T>& g, const BlockCache<T>& c, const T* dy, int n, int d, T* dx) {
  const std::size_t nd = static_cast<std::size_t>(n) * d;
  const int hid = b.ff1.out;
  std::vector<T> dh(dy, dy + nd);
  std::vector<T> dgu(static_cast<std::size_t>(n) * hid);
  linear_bwd(b.ff2, g.ff2, c.gu.data(), dy, n, dgu.data());
  for (std::size_t i = 0; i < dgu.size(); ++i) dgu[i] *= gelu_grad(c.u[i]);
  std::vector<T> dz2(nd), tmp(nd);
  linear_bwd(b.ff1, g.ff1, c.z2.data(), dgu.data(), n, dz2.data());
  norm_bwd(b.ln2, g.ln2, c.n2, dz2.data(), n, d, tmp.data());
  for (std::size_t i = 0; i < nd; ++i) dh[i] += tmp[i];

  std::vector<T> dout(nd);
  linear_bwd(b.o, g.o, c.o.data(), dh.data(), n, dout.data());
  const T scale = T(1) / std::sqrt(T(d));
  std::vector<T> dq(nd, T(0)), dk(nd, T(0)), dv(nd, T(0));
  std::vector<T> da(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const T* ar = c.a.data() + static_cast<std::size_t>(i) * n;
    const T* dor = dout.data() + static_cast<std::size_t>(i) * d;
    T dot = 0;
    for (int j = 0; j < n; ++j) {
      T s = 0;
      const T* vr = c.v.data() + static_cast<std::size_t>(j) * d;
      T* dvr = dv.data() + static_cast<std::size_t>(j) * d;
      for (int e = 0; e < d; ++e) {
        s += dor[e] * vr[e];
        dvr[e] += ar[j] * dor[e];
      }
      da[j] = s;
      dot += s * ar[j];
    }
    for (int j = 0; j < n; ++j) {
      const T ds = ar[j] * (da[j] - dot) * scale;
      for (int e = 0; e < d; ++e) {
        dq[static_cast<std::size_t>(i) * d + e] += ds * c.k[static_cast<std::size_t>(j) * d + e];
        dk[static_cast<std::size_t>(j) * d + e] += ds * c.q[static_cast<std::size_t>(i) * d + e];
      }
    }
  }
  std::vector<T> dz1(nd, T(0));
  linear_bwd(b.q, g.q, c.z1.data(), dq.data(), n, tmp.data());
  for (std::size_t i = 0; i < nd; ++i) dz1[i] += tmp[i];
  linear_bwd(b.k, g.k, c.z1.data(), dk.data(), n, tmp.data());
  for (std::size_t i = 0; i < nd; ++i) dz1[i] += tmp[i];
  linear_bwd(b.v, g.v, c.z1.data(), dv.data(), n, tmp.data());
  for (std::size_t i = 0; i < nd; ++i) dz1[i] += tmp[i];
  norm_bwd(b.ln1, g.ln1, c.n1, dz1.data(), n, d, tmp.data());
  for (std::size_t i = 0; i < nd; ++i) dx[i] = dh[i] + tmp[i];
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

template <typename T>
struct ForwardCache {
  std::vector<T> patches;  // tokens x patch_dim
  std::vector<T> tokens0;
  std::vector<kernels::BlockCache<T>> trunk;
  std::vector<T> shared;  // trunk output
  std::array<std::vector<kernels::BlockCache<T>>, kNumTasks> branch;
  std::array<std::vector<T>, kNumTasks> branch_out;
  std::array<kernels::NormCache<T>, kNumTasks> branch_norm;
  std::array<std::vector<T>, kNumTasks> features;  // C + C_A
  std::array<T, 3> attr_in{};
  std::vector<T> attr_pre, attr_hidden, attr_feat;
};

namespace detail {

template <typename T>
void check_finite(const std::vector<T>& v, const std::string& layer) {
  for (auto x : v)
    if (!std::isfinite(x)) throw NumericError(layer, "non-finite activation");
}

}  // namespace detail

/// Splits a planar 3 x S x S image into row-major patch vectors (c, py, px order).
template <typename T>
std::vector<T> patchify(const std::vector<float>& image, const ModelConfig& cfg) {
  const int s = cfg.image_size, p = cfg.patch_size, g = s / p;
  if (image.size() != static_cast<std::size_t>(3) * s * s)
    throw InvalidArgument("forward: input must be 3 x " + std::to_string(s) + " x " + std::to_string(s));
  std::vector<T> out(static_cast<std::size_t>(cfg.tokens()) * cfg.patch_dim());
  for (int ty = 0; ty < g; ++ty)
    for (int tx = 0; tx < g; ++tx) {
      T* dst = out.data() + static_cast<std::size_t>(ty * g + tx) * cfg.patch_dim();
      int k = 0;
      for (int c = 0; c < 3; ++c)
        for (int y = 0; y < p; ++y)
          for (int x = 0; x < p; ++x)
            dst[k++] = static_cast<T>(image[(static_cast<std::size_t>(c) * s + ty * p + y) * s + tx * p + x]);
    }
  return out;
}

template <typename T>
Logits<T> forward(const Model<T>& model, const std::vector<float>& image, const AttributeTriplet& attrs,
                  ForwardCache<T>& c) {
  using namespace kernels;
  const auto& cfg = model.config();
  const auto& p = model.params();
  const int n = cfg.tokens(), d = cfg.embed_dim;
  const std::size_t nd = static_cast<std::size_t>(n) * d;

  c.patches = patchify<T>(image, cfg);
  c.tokens0.resize(nd);
  linear_fwd(p.embed, c.patches.data(), n, c.tokens0.data());
  for (std::size_t i = 0; i < nd; ++i) c.tokens0[i] += p.pos[i];
  detail::check_finite(c.tokens0, "embed");

  std::vector<T> cur = c.tokens0, next(nd);
  c.trunk.resize(p.trunk.size());
  for (std::size_t i = 0; i < p.trunk.size(); ++i) {
    block_fwd(p.trunk[i], cur.data(), n, d, next.data(), c.trunk[i]);
    std::swap(cur, next);
    detail::check_finite(cur, "trunk." + std::to_string(i));
  }
  c.shared = cur;

  c.attr_in = {static_cast<T>(attrs.s), static_cast<T>(attrs.x0), static_cast<T>(attrs.y0)};
  c.attr_pre.resize(static_cast<std::size_t>(cfg.attr_dim));
  c.attr_hidden.resize(c.attr_pre.size());
  c.attr_feat.resize(c.attr_pre.size());
  linear_fwd(p.attr1, c.attr_in.data(), 1, c.attr_pre.data());
  for (std::size_t i = 0; i < c.attr_pre.size(); ++i) c.attr_hidden[i] = gelu(c.attr_pre[i]);
  linear_fwd(p.attr2, c.attr_hidden.data(), 1, c.attr_feat.data());
  detail::check_finite(c.attr_feat, "attr");

  Logits<T> logits{};
  for (int t = 0; t < kNumTasks; ++t) {
    const std::string tn(task_name(static_cast<Task>(t)));
    std::vector<T> bcur = c.shared;
    c.branch[t].resize(p.branches[t].size());
    for (std::size_t i = 0; i < p.branches[t].size(); ++i) {
      block_fwd(p.branches[t][i], bcur.data(), n, d, next.data(), c.branch[t][i]);
      std::swap(bcur, next);
    }
    c.branch_out[t] = bcur;
    std::vector<T> normed(nd);
    norm_fwd(p.branch_norm[t], bcur.data(), n, d, normed.data(), c.branch_norm[t]);
    detail::check_finite(normed, "branch." + tn);
    auto& f = c.features[t];
    f.assign(static_cast<std::size_t>(d + cfg.attr_dim), T(0));
    for (int r = 0; r < n; ++r)
      for (int e = 0; e < d; ++e) f[static_cast<std::size_t>(e)] += normed[static_cast<std::size_t>(r) * d + e];
    for (int e = 0; e < d; ++e) f[static_cast<std::size_t>(e)] /= T(n);
    std::copy(c.attr_feat.begin(), c.attr_feat.end(), f.begin() + d);
    linear_fwd(p.heads[t], f.data(), 1, logits[t].data());
    for (auto v : logits[t])
      if (!std::isfinite(v)) throw NumericError("head." + tn, "non-finite logit");
  }
  return logits;
}

template <typename T>
Logits<T> forward(const Model<T>& model, const std::vector<float>& image, const AttributeTriplet& attrs) {
  ForwardCache<T> c;
  return forward(model, image, attrs, c);
}

/// Accumulates parameter gradients for dL/dlogits into `grads`.
template <typename T>
void backward(const Model<T>& model, const ForwardCache<T>& c, const Logits<T>& dlogits, Params<T>& grads) {
  using namespace kernels;
  const auto& cfg = model.config();
  const auto& p = model.params();
  const int n = cfg.tokens(), d = cfg.embed_dim;
  const std::size_t nd = static_cast<std::size_t>(n) * d;

  std::vector<T> dshared(nd, T(0));
  std::vector<T> dattr(static_cast<std::size_t>(cfg.attr_dim), T(0));
  std::vector<T> df(static_cast<std::size_t>(d + cfg.attr_dim));
  for (int t = 0; t < kNumTasks; ++t) {
    linear_bwd(p.heads[t], grads.heads[t], c.features[t].data(), dlogits[t].data(), 1, df.data());
    for (int e = 0; e < cfg.attr_dim; ++e) dattr[static_cast<std::size_t>(e)] += df[static_cast<std::size_t>(d + e)];
    std::vector<T> dnormed(nd);
    for (int r = 0; r < n; ++r)
      for (int e = 0; e < d; ++e) dnormed[static_cast<std::size_t>(r) * d + e] = df[static_cast<std::size_t>(e)] / T(n);
    std::vector<T> db(nd), tmp(nd);
    norm_bwd(p.branch_norm[t], grads.branch_norm[t], c.branch_norm[t], dnormed.data(), n, d, db.data());
    for (std::size_t i = p.branches[t].size(); i-- > 0;) {
      block_bwd(p.branches[t][i], grads.branches[t][i], c.branch[t][i], db.data(), n, d, tmp.data());
      std::swap(db, tmp);
    }
    for (std::size_t i = 0; i < nd; ++i) dshared[i] += db[i];
  }

  std::vector<T> dh(c.attr_pre.size());
  linear_bwd(p.attr2, grads.attr2, c.attr_hidden.data(), dattr.data(), 1, dh.data());
  for (std::size_t i = 0; i < dh.size(); ++i) dh[i] *= gelu_grad(c.attr_pre[i]);
  linear_bwd(p.attr1, grads.attr1, c.attr_in.data(), dh.data(), 1, static_cast<T*>(nullptr));

  std::vector<T> cur = dshared, tmp(nd);
  for (std::size_t i = p.trunk.size(); i-- > 0;) {
    block_bwd(p.trunk[i], grads.trunk[i], c.trunk[i], cur.data(), n, d, tmp.data());
    std::swap(cur, tmp);
  }
  for (std::size_t i = 0; i < nd; ++i) grads.pos[i] += cur[i];
  linear_bwd(p.embed, grads.embed, c.patches.data(), cur.data(), n, static_cast<T*>(nullptr));
}

inline std::array<std::optional<GdslTarget>, kNumTasks> targets_for(const Sample& s, double sigma) {
  std::array<std::optional<GdslTarget>, kNumTasks> t;
  for (int k = 0; k < kNumTasks; ++k)
    if (s.jrd[k]) t[k] = gdsl_targets(*s.jrd[k], sigma);
  return t;
}

/// Loss of one sample; accumulates scaled gradients into `grads` when non-null.
template <typename T>
T sample_loss(const Model<T>& model, const Sample& s, double sigma, Params<T>* grads, T grad_scale = T(1)) {
  ForwardCache<T> c;
  const Logits<T> logits = forward(model, s.image, s.attrs, c);
  const auto targets = targets_for(s, sigma);
  const T l = loss(logits, targets);
  if (grads) {
    Logits<T> dl{};
    for (int t = 0; t < kNumTasks; ++t) {
      if (!targets[t]) continue;
      const auto p = softmax(logits[t]);
      for (int i = 0; i < kClasses; ++i) dl[t][i] = grad_scale * (p[i] - static_cast<T>(targets[t]->probs[i]));
    }
    backward(model, c, dl, *grads);
  }
  return l;
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

struct GroupGradError {
  std::string name;
  std::size_t checked = 0;
  double relative_error = 0;  // ||g_analytic - g_numeric|| / (||g_analytic|| + ||g_numeric||)
};

struct GradCheckReport {
  std::vector<GroupGradError> groups;
  double max_relative_error = 0;
};

/// Central differences (step h) against backprop for every parameter group.
/// `max_per_group` > 0 checks an evenly strided subset of each group.
inline GradCheckReport grad_check(const Model<double>& model, const Sample& sample, double sigma = kDefaultSigma,
                                  double h = 1e-5, std::size_t max_per_group = 0) {
  Model<double> work = model;
  Params<double> grads = zero_params<double>(model.config());
  sample_loss(work, sample, sigma, &grads);

  std::vector<std::pair<std::string, std::vector<double>*>> params, gvec;
  for_each_tensor(work.params(), [&](const std::string& n, std::vector<double>& v) { params.emplace_back(n, &v); });
  for_each_tensor(grads, [&](const std::string& n, std::vector<double>& v) { gvec.emplace_back(n, &v); });

  double total2 = 0;
  for (const auto& [n, v] : gvec)
    for (double x : *v) total2 += x * x;
  // groups whose gradient is identically zero are measured against the model-wide scale
  const double floor = 1e-3 * std::sqrt(total2);

  GradCheckReport rep;
  for (std::size_t g = 0; g < params.size(); ++g) {
    auto& vals = *params[g].second;
    const auto& ana = *gvec[g].second;
    const std::size_t stride = (max_per_group && vals.size() > max_per_group) ? vals.size() / max_per_group : 1;
    double diff2 = 0, a2 = 0, n2 = 0;
    std::size_t checked = 0;
    for (std::size_t i = 0; i < vals.size(); i += stride) {
      const double orig = vals[i];
      vals[i] = orig + h;
      const double lp = sample_loss<double>(work, sample, sigma, nullptr);
      vals[i] = orig - h;
      const double lm = sample_loss<double>(work, sample, sigma, nullptr);
      vals[i] = orig;
      const double num = (lp - lm) / (2 * h);
      diff2 += (num - ana[i]) * (num - ana[i]);
      a2 += ana[i] * ana[i];
      n2 += num * num;
      ++checked;
    }
    const double denom = std::max(std::sqrt(a2) + std::sqrt(n2), floor);
    GroupGradError e{params[g].first, checked, denom > 1e-12 ? std::sqrt(diff2) / denom : 0.0};
    rep.max_relative_error = std::max(rep.max_relative_error, e.relative_error);
    rep.groups.push_back(std::move(e));
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainConfig {
  int epochs = 200;
  int batch_size = 8;
  double lr = 0.01;
  double momentum = 0.9;
  double sigma = kDefaultSigma;
  bool hflip = false;
  std::uint64_t seed = 0;
};

struct TrainResult {
  Model<float> model;
  std::vector<double> epoch_loss;  // mean per-sample loss
};

inline double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double pi = std::acos(-1.0);
  return 0.5 * base * (1.0 + std::cos(pi * static_cast<double>(step) / static_cast<double>(total)));
}

inline Sample flipped(const Sample& s, int size) {
  Sample out = s;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x)
        out.image[(static_cast<std::size_t>(c) * size + y) * size + x] =
            s.image[(static_cast<std::size_t>(c) * size + y) * size + (size - 1 - x)];
  out.attrs = AttributeTriplet(s.attrs.s, 1.0 - s.attrs.x0, s.attrs.y0);
  return out;
}

/// Mini-batch SGD with momentum and a cosine-decayed learning rate.
inline TrainResult train(const std::vector<Sample>& data, const ModelConfig& cfg, const TrainConfig& tc,
                         const std::function<void(int, double)>& on_epoch = {}) {
  if (data.empty()) throw InvalidArgument("train: dataset is empty");
  if (tc.batch_size <= 0 || tc.epochs < 0) throw InvalidArgument("train: invalid schedule");
  for (const auto& s : data)
    for (const auto& j : s.jrd)
      if (j && (*j < 0 || *j > kMaxJrd)) throw InvalidArgument("train: jrd outside [0,63]");

  TrainResult res{Model<float>(cfg), {}};
  Params<float>& p = res.model.params();
  Params<float> velocity = zero_params<float>(cfg);
  Params<float> grads = zero_params<float>(cfg);
  std::mt19937_64 rng(tc.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t steps_per_epoch = (data.size() + static_cast<std::size_t>(tc.batch_size) - 1) / static_cast<std::size_t>(tc.batch_size);
  const std::size_t total = steps_per_epoch * static_cast<std::size_t>(tc.epochs);
  std::size_t step = 0;

  for (int epoch = 0; epoch < tc.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(tc.batch_size));
      zero_fill(grads);
      const float scale = 1.0f / static_cast<float>(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = data[order[i]];
        const bool flip = tc.hflip && std::uniform_int_distribution<int>(0, 1)(rng) == 1;
        const double l = flip ? sample_loss(res.model, flipped(s, cfg.image_size), tc.sigma, &grads, scale)
                              : sample_loss(res.model, s, tc.sigma, &grads, scale);
        if (!std::isfinite(l)) throw NumericError("epoch " + std::to_string(epoch), "non-finite loss (divergence)");
        epoch_loss += l;
      }
      const float lr = static_cast<float>(cosine_lr(tc.lr, step++, total));
      const float mu = static_cast<float>(tc.momentum);
      std::vector<std::vector<float>*> pv, vv, gv;
      for_each_tensor(p, [&](const std::string&, std::vector<float>& v) { pv.push_back(&v); });
      for_each_tensor(velocity, [&](const std::string&, std::vector<float>& v) { vv.push_back(&v); });
      for_each_tensor(grads, [&](const std::string&, std::vector<float>& v) { gv.push_back(&v); });
      for (std::size_t k = 0; k < pv.size(); ++k)
        for (std::size_t i = 0; i < pv[k]->size(); ++i) {
          float& vel = (*vv[k])[i];
          vel = mu * vel + (*gv[k])[i];
          (*pv[k])[i] -= lr * vel;
        }
    }
    epoch_loss /= static_cast<double>(data.size());
    if (!std::isfinite(epoch_loss)) throw NumericError("epoch " + std::to_string(epoch), "non-finite loss (divergence)");
    res.epoch_loss.push_back(epoch_loss);
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Prediction and error metrics
// ---------------------------------------------------------------------------

enum class PredictMode { Argmax, Expectation };

template <typename T>
int decode_logits(const std::array<T, kClasses>& logits, PredictMode mode) {
  if (mode == PredictMode::Argmax)
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  const auto p = softmax(logits);
  double e = 0;
  for (int i = 0; i < kClasses; ++i) e += i * static_cast<double>(p[i]);
  return std::clamp(static_cast<int>(std::lround(e)), 0, kMaxJrd);
}

template <typename T>
std::array<int, kNumTasks> predict(const Model<T>& model, const std::vector<float>& image,
                                   const AttributeTriplet& attrs, PredictMode mode = PredictMode::Argmax) {
  const auto logits = forward(model, image, attrs);
  std::array<int, kNumTasks> out{};
  for (int t = 0; t < kNumTasks; ++t) out[t] = decode_logits(logits[t], mode);
  return out;
}

struct PredictionErrorReport {
  double e_a = 0;                  // mean |pred - gt|
  std::optional<double> e_range;   // same over gt in [27, 51]; empty when no such sample
  double sigma_e = 0;              // population std of (pred - gt)
  std::size_t count = 0;
};

inline constexpr int kBandLo = 27;
inline constexpr int kBandHi = 51;

inline PredictionErrorReport error_metrics(std::span<const int> predictions, std::span<const int> ground_truth) {
  if (predictions.size() != ground_truth.size())
    throw InvalidArgument("error_metrics: prediction and ground-truth lists differ in length");
  if (predictions.empty()) throw InvalidArgument("error_metrics: empty input");
  PredictionErrorReport r;
  r.count = predictions.size();
  double abs_sum = 0, band_sum = 0, mean = 0;
  std::size_t band_n = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - ground_truth[i];
    abs_sum += std::abs(e);
    mean += e;
    if (ground_truth[i] >= kBandLo && ground_truth[i] <= kBandHi) {
      band_sum += std::abs(e);
      ++band_n;
    }
  }
  const double n = static_cast<double>(predictions.size());
  r.e_a = abs_sum / n;
  mean /= n;
  double var = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - ground_truth[i] - mean;
    var += e * e;
  }
  r.sigma_e = std::sqrt(var / n);
  if (band_n) r.e_range = band_sum / static_cast<double>(band_n);
  return r;
}

// ---------------------------------------------------------------------------
// Input preparation
// ---------------------------------------------------------------------------

inline constexpr std::array<float, 3> kMean = {0.485f, 0.456f, 0.406f};
inline constexpr std::array<float, 3> kStd = {0.229f, 0.224f, 0.225f};

/// Bilinear resize of a box crop to size x size, normalized, planar.
inline std::vector<float> prepare_input(const ImagePlane& img, const BoundingBox& box, int size) {
  std::vector<float> out(static_cast<std::size_t>(3) * size * size);
  const double sx = box.w / size, sy = box.h / size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double fx = std::clamp(box.x + (x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const double fy = std::clamp(box.y + (y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const int x1 = std::min(x0 + 1, img.width() - 1), y1 = std::min(y0 + 1, img.height() - 1);
      const double ax = fx - x0, ay = fy - y0;
      for (int c = 0; c < 3; ++c) {
        const int sc = img.channels() == 3 ? c : 0;
        const double v = (1 - ay) * ((1 - ax) * img.at(x0, y0, sc) + ax * img.at(x1, y0, sc)) +
                         ay * ((1 - ax) * img.at(x0, y1, sc) + ax * img.at(x1, y1, sc));
        out[(static_cast<std::size_t>(c) * size + y) * size + x] =
            (static_cast<float>(v / 255.0) - kMean[static_cast<std::size_t>(c)]) / kStd[static_cast<std::size_t>(c)];
      }
    }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic toy set
// ---------------------------------------------------------------------------

/// Colored square or disk on a flat background. The JRD of each task is a fixed
/// affine function of the shape's size, so the set is learnable from pixels and attributes.
struct ToyItem {
  ImagePlane image;
  BoundingBox box;
  Sample sample;
};

inline std::array<int, kNumTasks> toy_jrd(int size) {
  return {std::clamp(10 + size, 0, kMaxJrd), std::clamp(6 + size, 0, kMaxJrd), std::clamp(18 + size, 0, kMaxJrd)};
}

inline std::vector<ToyItem> toy_dataset(std::size_t n, int image_size, std::uint64_t seed) {
  if (image_size < 32) throw InvalidArgument("toy_dataset: image_size must be at least 32");
  std::mt19937_64 rng(seed);
  auto uni = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  const int smin = image_size / 8, smax = image_size * 5 / 8;
  std::vector<ToyItem> out;
  for (std::size_t i = 0; i < n; ++i) {
    ImagePlane img(image_size, image_size, 3);
    std::array<int, 3> bg{uni(0, 255), uni(0, 255), uni(0, 255)}, fg{};
    do {
      fg = {uni(0, 255), uni(0, 255), uni(0, 255)};
    } while (std::abs(fg[0] - bg[0]) + std::abs(fg[1] - bg[1]) + std::abs(fg[2] - bg[2]) < 150);
    const int size = uni(smin, smax);
    const int x0 = uni(0, image_size - size), y0 = uni(0, image_size - size);
    const bool disk = uni(0, 1) == 1;
    const double cx = x0 + size / 2.0, cy = y0 + size / 2.0, r = size / 2.0;
    for (int y = 0; y < image_size; ++y)
      for (int x = 0; x < image_size; ++x) {
        bool inside = x >= x0 && x < x0 + size && y >= y0 && y < y0 + size;
        if (disk && inside) inside = (x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy) <= r * r;
        for (int c = 0; c < 3; ++c) img.at(x, y, c) = static_cast<std::uint8_t>(inside ? fg[c] : bg[c]);
      }
    const BoundingBox box(x0, y0, size, size);
    Sample s;
    s.image = prepare_input(img, BoundingBox(0, 0, image_size, image_size), image_size);
    s.attrs = attribute_triplet(box, image_size, image_size);
    const auto j = toy_jrd(size);
    for (int t = 0; t < kNumTasks; ++t) s.jrd[t] = j[t];
    out.push_back({std::move(img), box, std::move(s)});
  }
  return out;
}

inline std::vector<Sample> samples_of(const std::vector<ToyItem>& items) {
  std::vector<Sample> s;
  for (const auto& it : items) s.push_back(it.sample);
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'M', 'T', 'J', 'R', 'D', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& d, std::string name) : d_(d), name_(std::move(name)) {}
  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(d_[pos_++]) << (8 * i);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(d_.begin() + static_cast<std::ptrdiff_t>(pos_), d_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  double f64() {
    const std::uint64_t bits = uint(8);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  bool done() const { return pos_ == d_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > d_.size()) throw ParseError(name_, "truncated checkpoint");
  }
  const std::vector<std::uint8_t>& d_;
  std::string name_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Layout (little endian): magic[8], u32 version, u32 n, config JSON[n], u32 groups,
/// then per group: u32 len, name[len], u64 count, f64[count].
template <typename T>
std::vector<std::uint8_t> serialize(const Model<T>& m) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put_u32(out, kCheckpointVersion);
  const std::string cfg = config_to_json(m.config()).dump();
  detail::put_u32(out, static_cast<std::uint32_t>(cfg.size()));
  out.insert(out.end(), cfg.begin(), cfg.end());
  std::uint32_t groups = 0;
  for_each_tensor(m.params(), [&](const std::string&, const std::vector<T>&) { ++groups; });
  detail::put_u32(out, groups);
  for_each_tensor(m.params(), [&](const std::string& name, const std::vector<T>& v) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    detail::put_u64(out, v.size());
    for (T x : v) {
      const double dx = static_cast<double>(x);
      std::uint64_t bits;
      std::memcpy(&bits, &dx, 8);
      detail::put_u64(out, bits);
    }
  });
  return out;
}

template <typename T>
Model<T> deserialize(const std::vector<std::uint8_t>& bytes, const std::string& name = "checkpoint") {
  if (bytes.size() < 8 || !std::equal(kCheckpointMagic, kCheckpointMagic + 8, bytes.begin()))
    throw ParseError(name, "not a model checkpoint");
  detail::Reader r(bytes, name);
  r.str(8);
  if (r.uint(4) != kCheckpointVersion) throw ParseError(name, "unsupported checkpoint version");
  const auto cfg_len = static_cast<std::size_t>(r.uint(4));
  ModelConfig cfg;
  try {
    cfg = config_from_json(nlohmann::json::parse(r.str(cfg_len)));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(name, e.what());
  }
  Params<T> p = zero_params<T>(cfg);
  std::uint32_t expected = 0;
  for_each_tensor(p, [&](const std::string&, const std::vector<T>&) { ++expected; });
  if (r.uint(4) != expected) throw ParseError(name, "parameter group count does not match config");
  for_each_tensor(p, [&](const std::string& gname, std::vector<T>& v) {
    const auto len = static_cast<std::size_t>(r.uint(4));
    if (r.str(len) != gname) throw ParseError(name, "unexpected parameter group (wanted " + gname + ")");
    if (r.uint(8) != v.size()) throw ParseError(name, "size mismatch in group " + gname);
    for (auto& x : v) x = static_cast<T>(r.f64());
  });
  if (!r.done()) throw ParseError(name, "trailing bytes in checkpoint");
  return Model<T>(cfg, std::move(p));
}

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& m) {
  io::write_file(path, serialize(m));
}

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path) {
  return deserialize<T>(io::read_file(path), path.string());
}

}  // namespace mtjrd::predictor

#endif  // MTJRD_PREDICTOR_HPP
