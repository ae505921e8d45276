#pragma once

// Transformer building blocks with hand-written backward passes.
//
// Every layer exposes forward(x, cache*) and backward(dy, cache, grad) -> dx.
// Gradients accumulate into a layer of identical shape, so a zero-initialized
// copy of the model doubles as its gradient buffer.

#include <cmath>
#include <numbers>
#include <vector>

#include "hsmae/common.hpp"

namespace hsmae {

template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
struct Linear {
  Mat<T> weight;  // in x out
  Mat<T> bias;    // 1 x out; empty for bias-free layers

  bool has_bias() const noexcept { return bias.size() != 0; }

  Mat<T> forward(const Mat<T>& x) const {
    Mat<T> y = x * weight;
    if (has_bias()) y.rowwise() += bias.row(0);
    return y;
  }

  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy, Linear& grad) const {
    grad.weight.noalias() += x.transpose() * dy;
    if (has_bias()) grad.bias += dy.colwise().sum();
    return dy * weight.transpose();
  }
};

template <typename T>
struct LayerNorm {
  static constexpr double kEps = 1e-6;
  Mat<T> gain;  // 1 x d
  Mat<T> bias;  // 1 x d

  struct Cache {
    Mat<T> xhat;
    ColVec<T> rstd;
  };

  Mat<T> forward(const Mat<T>& x, Cache* cache) const {
    const auto d = static_cast<T>(x.cols());
    ColVec<T> mean = x.rowwise().sum() / d;
    Mat<T> xhat = x.colwise() - mean;
    ColVec<T> rstd =
        ((xhat.array().square().rowwise().sum() / d) + static_cast<T>(kEps)).sqrt().inverse().matrix();
    xhat = rstd.asDiagonal() * xhat;
    Mat<T> y = (xhat.array().rowwise() * gain.row(0).array()).matrix();
    y.rowwise() += bias.row(0);
    if (cache) *cache = {std::move(xhat), std::move(rstd)};
    return y;
  }

  Mat<T> backward(const Mat<T>& dy, const Cache& c, LayerNorm& grad) const {
    grad.gain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    grad.bias += dy.colwise().sum();
    const auto d = static_cast<T>(dy.cols());
    Mat<T> dxhat = (dy.array().rowwise() * gain.row(0).array()).matrix();
    ColVec<T> mean_dxhat = dxhat.rowwise().sum() / d;
    ColVec<T> mean_dxhat_xhat = (dxhat.array() * c.xhat.array()).rowwise().sum().matrix() / d;
    Mat<T> dx = dxhat.colwise() - mean_dxhat;
    dx -= (c.xhat.array().colwise() * mean_dxhat_xhat.array()).matrix();
    return c.rstd.asDiagonal() * dx;
  }
};

template <typename T>
T gelu(T x) {
  return static_cast<T>(0.5) * x * (static_cast<T>(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
}

template <typename T>
T gelu_grad(T x) {
  const T cdf = static_cast<T>(0.5) * (static_cast<T>(1) + std::erf(x * static_cast<T>(std::numbers::sqrt2 / 2)));
  const T pdf = std::exp(static_cast<T>(-0.5) * x * x) * static_cast<T>(std::numbers::inv_sqrtpi / std::numbers::sqrt2);
  return cdf + x * pdf;
}

/// Multi-head scaled dot-product self-attention. The key projection carries no bias:
/// a key bias shifts every score of a query row equally and cancels in the softmax.
template <typename T>
struct Attention {
  std::size_t heads = 1;
  Linear<T> query, key, value, out;

  struct Cache {
    Mat<T> x, q, k, v, context;
    std::vector<Mat<T>> probs;  // one N x N matrix per head
  };

  std::size_t head_dim() const { return static_cast<std::size_t>(query.weight.cols()) / heads; }

  Mat<T> forward(const Mat<T>& x, Cache* cache) const {
    const auto n = x.rows();
    const auto hd = static_cast<Eigen::Index>(head_dim());
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    Mat<T> q = query.forward(x), k = key.forward(x), v = value.forward(x);
    Mat<T> context(n, q.cols());
    std::vector<Mat<T>> probs;
    for (std::size_t h = 0; h < heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h) * hd;
      Mat<T> scores = (q.middleCols(c0, hd) * k.middleCols(c0, hd).transpose()) * scale;
      ColVec<T> row_max = scores.rowwise().maxCoeff();
      Mat<T> p = (scores.colwise() - row_max).array().exp().matrix();
      ColVec<T> row_sum = p.rowwise().sum();
      p = row_sum.cwiseInverse().asDiagonal() * p;
      context.middleCols(c0, hd).noalias() = p * v.middleCols(c0, hd);
      if (cache) probs.push_back(std::move(p));
    }
    Mat<T> y = out.forward(context);
    if (cache) *cache = {x, std::move(q), std::move(k), std::move(v), std::move(context), std::move(probs)};
    return y;
  }

  Mat<T> backward(const Mat<T>& dy, const Cache& c, Attention& grad) const {
    const auto hd = static_cast<Eigen::Index>(head_dim());
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
    Mat<T> dcontext = out.backward(c.context, dy, grad.out);
    Mat<T> dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
    for (std::size_t h = 0; h < heads; ++h) {
      const auto c0 = static_cast<Eigen::Index>(h) * hd;
      const Mat<T>& p = c.probs[h];
      Mat<T> dctx_h = dcontext.middleCols(c0, hd);
      dv.middleCols(c0, hd).noalias() = p.transpose() * dctx_h;
      Mat<T> dp = dctx_h * c.v.middleCols(c0, hd).transpose();
      ColVec<T> inner = (dp.array() * p.array()).rowwise().sum().matrix();
      Mat<T> dscores = (p.array() * (dp.colwise() - inner).array()).matrix() * scale;
      dq.middleCols(c0, hd).noalias() = dscores * c.k.middleCols(c0, hd);
      dk.middleCols(c0, hd).noalias() = dscores.transpose() * c.q.middleCols(c0, hd);
    }
    Mat<T> dx = query.backward(c.x, dq, grad.query);
    dx += key.backward(c.x, dk, grad.key);
    dx += value.backward(c.x, dv, grad.value);
    return dx;
  }
};

/// Pre-norm transformer block: x + attn(norm1(x)), then + mlp(norm2(.)) with a GELU MLP.
template <typename T>
struct Block {
  LayerNorm<T> norm1;
  Attention<T> attn;
  LayerNorm<T> norm2;
  Linear<T> fc1, fc2;

  struct Cache {
    typename LayerNorm<T>::Cache n1, n2;
    typename Attention<T>::Cache a;
    Mat<T> mlp_in, pre_act, act;
  };

  Mat<T> forward(const Mat<T>& x, Cache* cache) const {
    typename LayerNorm<T>::Cache n1, n2;
    typename Attention<T>::Cache a;
    Mat<T> h = x + attn.forward(norm1.forward(x, cache ? &n1 : nullptr), cache ? &a : nullptr);
    Mat<T> mlp_in = norm2.forward(h, cache ? &n2 : nullptr);
    Mat<T> pre = fc1.forward(mlp_in);
    Mat<T> act = pre.unaryExpr([](T v) { return gelu(v); });
    Mat<T> y = h + fc2.forward(act);
    if (cache) *cache = {std::move(n1), std::move(n2), std::move(a), std::move(mlp_in), std::move(pre), std::move(act)};
    return y;
  }

  Mat<T> backward(const Mat<T>& dy, const Cache& c, Block& grad) const {
    Mat<T> dact = fc2.backward(c.act, dy, grad.fc2);
    Mat<T> dpre = (dact.array() * c.pre_act.unaryExpr([](T v) { return gelu_grad(v); }).array()).matrix();
    Mat<T> dmlp_in = fc1.backward(c.mlp_in, dpre, grad.fc1);
    Mat<T> dh = dy + norm2.backward(dmlp_in, c.n2, grad.norm2);
    Mat<T> dattn_in = attn.backward(dh, c.a, grad.attn);
    return dh + norm1.backward(dattn_in, c.n1, grad.norm1);
  }
};

}  // namespace hsmae
