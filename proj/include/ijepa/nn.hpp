#pragma once

#include "ijepa/core.hpp"
#include "ijepa/rng.hpp"

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

namespace ijepa {

inline constexpr double kLayerNormEps = 1e-6;
inline constexpr double kInitStd = 0.02;

template <class T>
Mat<T> trunc_normal(Index rows, Index cols, Rng& rng, double stddev = kInitStd) {
  Mat<T> m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.trunc_normal(stddev));
  return m;
}

template <class T>
Mat<T> zeros(Index rows, Index cols) {
  return Mat<T>::Zero(rows, cols);
}

template <class T>
Mat<T> ones(Index rows, Index cols) {
  return Mat<T>::Ones(rows, cols);
}

// ---------------------------------------------------------------------------
// Named-tensor plumbing. Every parameter struct exposes
//   template <class Self, class F> static void visit(Self&, const std::string& prefix, F&&)
// which calls f(name, tensor) in a fixed canonical order. Gradients, optimizer
// moments and EMA all reuse the same struct type and walk it in lockstep.

template <class T>
struct NamedTensor {
  std::string name;
  Mat<T>* tensor;
};

template <class T>
struct ConstNamedTensor {
  std::string name;
  const Mat<T>* tensor;
};

template <class P>
auto named_tensors(P& params, const std::string& prefix = "") {
  using T = typename P::Scalar;
  std::vector<NamedTensor<T>> out;
  P::visit(params, prefix, [&](const std::string& n, Mat<T>& t) { out.push_back({n, &t}); });
  return out;
}

template <class P>
auto named_tensors(const P& params, const std::string& prefix = "") {
  using T = typename P::Scalar;
  std::vector<ConstNamedTensor<T>> out;
  P::visit(params, prefix, [&](const std::string& n, const Mat<T>& t) { out.push_back({n, &t}); });
  return out;
}

template <class P>
P zeros_like(const P& params) {
  P out = params;
  for (auto& nt : named_tensors(out)) nt.tensor->setZero();
  return out;
}

template <class P>
void set_zero(P& params) {
  for (auto& nt : named_tensors(params)) nt.tensor->setZero();
}

template <class P>
Index parameter_count(const P& params) {
  Index n = 0;
  for (const auto& nt : named_tensors(params)) n += nt.tensor->size();
  return n;
}

// Walks two structurally identical parameter sets; throws on mismatch.
template <class PA, class PB, class F>
void zip_tensors(PA& a, PB& b, F&& f) {
  auto ta = named_tensors(a);
  auto tb = named_tensors(b);
  if (ta.size() != tb.size()) throw CheckpointError(CheckpointErrorKind::kShape, "parameter trees differ in size");
  for (std::size_t i = 0; i < ta.size(); ++i) {
    if (ta[i].name != tb[i].name || ta[i].tensor->rows() != tb[i].tensor->rows() ||
        ta[i].tensor->cols() != tb[i].tensor->cols()) {
      throw CheckpointError(CheckpointErrorKind::kShape, "parameter mismatch at " + ta[i].name);
    }
    f(ta[i].name, *ta[i].tensor, *tb[i].tensor);
  }
}

// ---------------------------------------------------------------------------
// Layer primitives. Activations are (tokens x features).

template <class T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  Mat<T> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <class T>
Mat<T> linear_backward(const Mat<T>& x, const Mat<T>& w, const Mat<T>& dy, Mat<T>& dw, Mat<T>& db) {
  dw.noalias() += x.transpose() * dy;
  db += dy.colwise().sum();
  return dy * w.transpose();
}

template <class T>
struct LayerNormCache {
  Mat<T> xhat;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
};

template <class T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& gamma, const Mat<T>& beta, LayerNormCache<T>* cache) {
  const Index n = x.rows();
  const Index d = x.cols();
  Mat<T> xhat(n, d);
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(n);
  for (Index i = 0; i < n; ++i) {
    const T mean = x.row(i).mean();
    const auto centered = (x.row(i).array() - mean).eval();
    const T var = centered.square().mean();
    rstd(i) = T(1) / std::sqrt(var + static_cast<T>(kLayerNormEps));
    xhat.row(i) = centered * rstd(i);
  }
  Mat<T> y = (xhat.array().rowwise() * gamma.row(0).array()).matrix();
  y.rowwise() += beta.row(0);
  if (cache != nullptr) {
    cache->xhat = std::move(xhat);
    cache->rstd = std::move(rstd);
  }
  return y;
}

template <class T>
Mat<T> layer_norm_backward(const LayerNormCache<T>& c, const Mat<T>& gamma, const Mat<T>& dy, Mat<T>& dgamma,
                           Mat<T>& dbeta) {
  dgamma += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  const Mat<T> dxhat = (dy.array().rowwise() * gamma.row(0).array()).matrix();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).mean();
    const T m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
    dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
  }
  return dx;
}

template <class T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
}

template <class T>
T gelu_grad(T x) {
  const T cdf = static_cast<T>(0.5) * (T(1) + std::erf(x / std::numbers::sqrt2_v<T>));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) / std::sqrt(static_cast<T>(2) * std::numbers::pi_v<T>);
  return cdf + x * pdf;
}

// ---------------------------------------------------------------------------
// Pre-norm transformer block: x + attn(ln1(x)), then + mlp(ln2(.)).

template <class T>
struct BlockParams {
  using Scalar = T;
  Mat<T> ln1_g, ln1_b;
  Mat<T> qkv_w, qkv_b;
  Mat<T> proj_w, proj_b;
  Mat<T> ln2_g, ln2_b;
  Mat<T> fc1_w, fc1_b;
  Mat<T> fc2_w, fc2_b;

  static BlockParams init(int width, int hidden, Rng& rng) {
    BlockParams p;
    p.ln1_g = ones<T>(1, width);
    p.ln1_b = zeros<T>(1, width);
    p.qkv_w = trunc_normal<T>(width, 3 * width, rng);
    p.qkv_b = zeros<T>(1, 3 * width);
    p.proj_w = trunc_normal<T>(width, width, rng);
    p.proj_b = zeros<T>(1, width);
    p.ln2_g = ones<T>(1, width);
    p.ln2_b = zeros<T>(1, width);
    p.fc1_w = trunc_normal<T>(width, hidden, rng);
    p.fc1_b = zeros<T>(1, hidden);
    p.fc2_w = trunc_normal<T>(hidden, width, rng);
    p.fc2_b = zeros<T>(1, width);
    return p;
  }

  template <class Self, class F>
  static void visit(Self& s, const std::string& p, F&& f) {
    f(p + "norm1.weight", s.ln1_g);
    f(p + "norm1.bias", s.ln1_b);
    f(p + "attn.qkv.weight", s.qkv_w);
    f(p + "attn.qkv.bias", s.qkv_b);
    f(p + "attn.proj.weight", s.proj_w);
    f(p + "attn.proj.bias", s.proj_b);
    f(p + "norm2.weight", s.ln2_g);
    f(p + "norm2.bias", s.ln2_b);
    f(p + "mlp.fc1.weight", s.fc1_w);
    f(p + "mlp.fc1.bias", s.fc1_b);
    f(p + "mlp.fc2.weight", s.fc2_w);
    f(p + "mlp.fc2.bias", s.fc2_b);
  }
};

template <class T>
struct BlockCache {
  Mat<T> x_in;
  LayerNormCache<T> ln1;
  Mat<T> a_in;
  Mat<T> qkv;
  std::vector<Mat<T>> probs;  // one (n x n) softmax matrix per head
  Mat<T> attn_ctx;
  Mat<T> x_mid;
  LayerNormCache<T> ln2;
  Mat<T> m_in;
  Mat<T> fc1_pre;
  Mat<T> fc1_act;
};

// Multi-head self-attention over all rows of `a` (already layer-normed).
template <class T>
Mat<T> attention(const BlockParams<T>& p, const Mat<T>& a, int heads, BlockCache<T>* cache) {
  const Index n = a.rows();
  const Index d = a.cols();
  const Index hd = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  Mat<T> qkv = linear(a, p.qkv_w, p.qkv_b);
  Mat<T> ctx(n, d);
  if (cache != nullptr) cache->probs.assign(static_cast<std::size_t>(heads), Mat<T>());
  for (int h = 0; h < heads; ++h) {
    const auto q = qkv.middleCols(h * hd, hd);
    const auto k = qkv.middleCols(d + h * hd, hd);
    const auto v = qkv.middleCols(2 * d + h * hd, hd);
    Mat<T> s = (q * k.transpose()) * scale;
    for (Index i = 0; i < n; ++i) {
      const T mx = s.row(i).maxCoeff();
      s.row(i) = (s.row(i).array() - mx).exp();
      s.row(i) /= s.row(i).sum();
    }
    ctx.middleCols(h * hd, hd).noalias() = s * v;
    if (cache != nullptr) cache->probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  Mat<T> out = linear(ctx, p.proj_w, p.proj_b);
  if (cache != nullptr) {
    cache->qkv = std::move(qkv);
    cache->attn_ctx = std::move(ctx);
  }
  return out;
}

template <class T>
Mat<T> attention_backward(const BlockParams<T>& p, const BlockCache<T>& c, const Mat<T>& dout, int heads,
                          BlockParams<T>& g) {
  const Index n = c.a_in.rows();
  const Index d = c.a_in.cols();
  const Index hd = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const Mat<T> dctx = linear_backward(c.attn_ctx, p.proj_w, dout, g.proj_w, g.proj_b);
  Mat<T> dqkv(n, 3 * d);
  for (int h = 0; h < heads; ++h) {
    const auto q = c.qkv.middleCols(h * hd, hd);
    const auto k = c.qkv.middleCols(d + h * hd, hd);
    const auto v = c.qkv.middleCols(2 * d + h * hd, hd);
    const Mat<T>& prob = c.probs[static_cast<std::size_t>(h)];
    const auto dh = dctx.middleCols(h * hd, hd);
    dqkv.middleCols(2 * d + h * hd, hd).noalias() = prob.transpose() * dh;
    const Mat<T> dprob = dh * v.transpose();
    Mat<T> ds = prob.cwiseProduct(dprob);
    const Eigen::Matrix<T, Eigen::Dynamic, 1> rowdot = ds.rowwise().sum();
    ds -= (prob.array().colwise() * rowdot.array()).matrix();
    ds *= scale;
    dqkv.middleCols(h * hd, hd).noalias() = ds * k;
    dqkv.middleCols(d + h * hd, hd).noalias() = ds.transpose() * q;
  }
  return linear_backward(c.a_in, p.qkv_w, dqkv, g.qkv_w, g.qkv_b);
}

template <class T>
Mat<T> block_forward(const BlockParams<T>& p, const Mat<T>& x, int heads, BlockCache<T>* cache) {
  LayerNormCache<T> ln1c;
  Mat<T> a = layer_norm(x, p.ln1_g, p.ln1_b, cache != nullptr ? &ln1c : nullptr);
  Mat<T> x_mid = x + attention(p, a, heads, cache);
  LayerNormCache<T> ln2c;
  Mat<T> m = layer_norm(x_mid, p.ln2_g, p.ln2_b, cache != nullptr ? &ln2c : nullptr);
  Mat<T> pre = linear(m, p.fc1_w, p.fc1_b);
  Mat<T> act = pre.unaryExpr([](T v) { return gelu(v); });
  Mat<T> out = x_mid + linear(act, p.fc2_w, p.fc2_b);
  if (cache != nullptr) {
    cache->x_in = x;
    cache->ln1 = std::move(ln1c);
    cache->a_in = std::move(a);
    cache->x_mid = std::move(x_mid);
    cache->ln2 = std::move(ln2c);
    cache->m_in = std::move(m);
    cache->fc1_pre = std::move(pre);
    cache->fc1_act = std::move(act);
  }
  return out;
}

template <class T>
Mat<T> block_backward(const BlockParams<T>& p, const BlockCache<T>& c, const Mat<T>& dout, int heads,
                      BlockParams<T>& g) {
  Mat<T> dact = linear_backward(c.fc1_act, p.fc2_w, dout, g.fc2_w, g.fc2_b);
  const Mat<T> dpre = dact.cwiseProduct(c.fc1_pre.unaryExpr([](T v) { return gelu_grad(v); }));
  const Mat<T> dm = linear_backward(c.m_in, p.fc1_w, dpre, g.fc1_w, g.fc1_b);
  Mat<T> dx_mid = dout + layer_norm_backward(c.ln2, p.ln2_g, dm, g.ln2_g, g.ln2_b);
  const Mat<T> da = attention_backward(p, c, dx_mid, heads, g);
  return dx_mid + layer_norm_backward(c.ln1, p.ln1_g, da, g.ln1_g, g.ln1_b);
}

// ---------------------------------------------------------------------------
// A stack of blocks followed by a final layer norm.

template <class T>
struct StackParams {
  using Scalar = T;
  std::vector<BlockParams<T>> blocks;
  Mat<T> norm_g, norm_b;

  static StackParams init(int width, int depth, double mlp_ratio, Rng& rng) {
    StackParams s;
    const int hidden = static_cast<int>(std::lround(width * mlp_ratio));
    for (int i = 0; i < depth; ++i) s.blocks.push_back(BlockParams<T>::init(width, hidden, rng));
    s.norm_g = ones<T>(1, width);
    s.norm_b = zeros<T>(1, width);
    return s;
  }

  template <class Self, class F>
  static void visit(Self& s, const std::string& p, F&& f) {
    for (std::size_t i = 0; i < s.blocks.size(); ++i) {
      BlockParams<T>::visit(s.blocks[i], p + "blocks." + std::to_string(i) + ".", f);
    }
    f(p + "norm.weight", s.norm_g);
    f(p + "norm.bias", s.norm_b);
  }
};

template <class T>
struct StackCache {
  std::vector<BlockCache<T>> blocks;
  LayerNormCache<T> norm;
};

struct StackOptions {
  int heads = 1;
  std::string name = "stack";
  // When > 0, also return the final-normed outputs of the last `keep_last` blocks.
  int keep_last = 0;
};

template <class T>
Mat<T> stack_forward(const StackParams<T>& p, Mat<T> x, const StackOptions& opt, StackCache<T>* cache,
                     std::vector<Mat<T>>* layer_outputs = nullptr) {
  if (cache != nullptr) cache->blocks.assign(p.blocks.size(), BlockCache<T>());
  const int depth = static_cast<int>(p.blocks.size());
  for (int i = 0; i < depth; ++i) {
    x = block_forward(p.blocks[static_cast<std::size_t>(i)], x, opt.heads,
                      cache != nullptr ? &cache->blocks[static_cast<std::size_t>(i)] : nullptr);
    if (!x.allFinite()) throw NumericalFailure(opt.name, i);
    if (layer_outputs != nullptr && i >= depth - opt.keep_last) {
      layer_outputs->push_back(layer_norm<T>(x, p.norm_g, p.norm_b, nullptr));
    }
  }
  Mat<T> y = layer_norm(x, p.norm_g, p.norm_b, cache != nullptr ? &cache->norm : nullptr);
  if (!y.allFinite()) throw NumericalFailure(opt.name + " final norm", depth);
  return y;
}

template <class T>
Mat<T> stack_backward(const StackParams<T>& p, const StackCache<T>& c, const Mat<T>& dy, int heads,
                      StackParams<T>& g) {
  Mat<T> dx = layer_norm_backward(c.norm, p.norm_g, dy, g.norm_g, g.norm_b);
  for (std::size_t i = p.blocks.size(); i-- > 0;) {
    dx = block_backward(p.blocks[i], c.blocks[i], dx, heads, g.blocks[i]);
  }
  return dx;
}

}  // namespace ijepa
