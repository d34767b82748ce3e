#pragma once

// Decoder-only RoPE transformer with hand-written reverse-mode gradients.
//
// Block (pre-norm): x += Wo * attn(rope(Wq h), rope(Wk h), Wv h), h = rms(x) * g1
//                   x += W2 * silu(W1 h2),                       h2 = rms(x) * g2
// Readout: logits = (rms(x) * gf) * Wu. No positional embedding besides RoPE.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lct/rope.hpp"
#include "lct/toy/config.hpp"
#include "lct/toy/rng.hpp"

namespace lct::toy {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
struct LayerParams {
  Mat<T> attn_norm, wq, wk, wv, wo, mlp_norm, w1, w2;
};

template <typename T>
struct Params {
  Mat<T> embed;  // vocab x d_model
  std::vector<LayerParams<T>> layers;
  Mat<T> final_norm;  // 1 x d_model
  Mat<T> unembed;     // d_model x vocab

  static Params zeros(const ToyConfig& c) {
    const int d = c.d_model, f = c.ff_dim();
    Params p;
    p.embed = Mat<T>::Zero(c.vocab, d);
    for (int l = 0; l < c.layers; ++l) {
      LayerParams<T> lp;
      lp.attn_norm = Mat<T>::Zero(1, d);
      lp.wq = lp.wk = lp.wv = lp.wo = Mat<T>::Zero(d, d);
      lp.mlp_norm = Mat<T>::Zero(1, d);
      lp.w1 = Mat<T>::Zero(d, f);
      lp.w2 = Mat<T>::Zero(f, d);
      p.layers.push_back(std::move(lp));
    }
    p.final_norm = Mat<T>::Zero(1, d);
    p.unembed = Mat<T>::Zero(d, c.vocab);
    return p;
  }

  static Params init(const ToyConfig& c, Rng& rng) {
    Params p = zeros(c);
    auto fill = [&rng](Mat<T>& m, double stddev) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(stddev * rng.normal());
    };
    const double d = c.d_model;
    const double depth = 1.0 / std::sqrt(2.0 * std::max(1, c.layers));
    fill(p.embed, 1.0);
    for (auto& lp : p.layers) {
      lp.attn_norm.setOnes();
      lp.mlp_norm.setOnes();
      fill(lp.wq, 1.0 / std::sqrt(d));
      fill(lp.wk, 1.0 / std::sqrt(d));
      fill(lp.wv, 1.0 / std::sqrt(d));
      fill(lp.wo, depth / std::sqrt(d));
      fill(lp.w1, 1.0 / std::sqrt(d));
      fill(lp.w2, depth / std::sqrt(static_cast<double>(c.ff_dim())));
    }
    p.final_norm.setOnes();
    fill(p.unembed, 1.0 / std::sqrt(d));
    return p;
  }

  /// Visits every tensor with its checkpoint name, in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    f(std::string("embed"), embed);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string pre = "layers." + std::to_string(l) + ".";
      auto& lp = layers[l];
      f(pre + "attn_norm", lp.attn_norm);
      f(pre + "wq", lp.wq);
      f(pre + "wk", lp.wk);
      f(pre + "wv", lp.wv);
      f(pre + "wo", lp.wo);
      f(pre + "mlp_norm", lp.mlp_norm);
      f(pre + "w1", lp.w1);
      f(pre + "w2", lp.w2);
    }
    f(std::string("final_norm"), final_norm);
    f(std::string("unembed"), unembed);
  }

  template <typename F>
  void for_each(F&& f) const {
    const_cast<Params*>(this)->for_each([&f](const std::string& name, Mat<T>& m) { f(name, std::as_const(m)); });
  }

  template <typename U>
  Params<U> cast() const {
    Params<U> out;
    out.embed = embed.template cast<U>();
    for (const auto& lp : layers) {
      out.layers.push_back({lp.attn_norm.template cast<U>(), lp.wq.template cast<U>(), lp.wk.template cast<U>(),
                            lp.wv.template cast<U>(), lp.wo.template cast<U>(), lp.mlp_norm.template cast<U>(),
                            lp.w1.template cast<U>(), lp.w2.template cast<U>()});
    }
    out.final_norm = final_norm.template cast<U>();
    out.unembed = unembed.template cast<U>();
    return out;
  }
};

/// Supervised position: the logits at `position` should predict `label`.
struct Target {
  int position;
  int label;
};

namespace detail {

inline constexpr double kRmsEps = 1e-6;

template <typename T>
void rms_forward(const Mat<T>& x, const Mat<T>& gain, Mat<T>& y, std::vector<T>& inv_rms) {
  const auto rows = x.rows();
  const T inv_d = T(1) / static_cast<T>(x.cols());
  y.resize(rows, x.cols());
  inv_rms.resize(static_cast<std::size_t>(rows));
  for (Eigen::Index t = 0; t < rows; ++t) {
    const T r = T(1) / std::sqrt(x.row(t).squaredNorm() * inv_d + static_cast<T>(kRmsEps));
    inv_rms[static_cast<std::size_t>(t)] = r;
    y.row(t) = (x.row(t) * r).cwiseProduct(gain);
  }
}

// dx += d(rms(x)*g)/dx^T dy ; dgain += sum_t dy_t * x_t / rms_t
template <typename T>
void rms_backward(const Mat<T>& x, const Mat<T>& gain, const std::vector<T>& inv_rms, const Mat<T>& dy, Mat<T>& dx,
                  Mat<T>& dgain) {
  const T inv_d = T(1) / static_cast<T>(x.cols());
  for (Eigen::Index t = 0; t < x.rows(); ++t) {
    const T r = inv_rms[static_cast<std::size_t>(t)];
    const auto gdy = dy.row(t).cwiseProduct(gain);
    const T dot = gdy.dot(x.row(t));
    dx.row(t) += gdy * r - x.row(t) * (r * r * r * dot * inv_d);
    dgain += dy.row(t).cwiseProduct(x.row(t)) * r;
  }
}

template <typename T>
T sigmoid(T u) {
  return T(1) / (T(1) + std::exp(-u));
}

}  // namespace detail

template <typename T>
struct LayerActivations {
  Mat<T> x_in, h1, q, k, v, o, x_mid, h2, u, z;
  std::vector<T> inv_rms1, inv_rms2;
  std::vector<Mat<T>> probs;  // per head, causal (upper triangle zero)
};

template <typename T>
struct Activations {
  std::vector<int> tokens;
  std::vector<LayerActivations<T>> layers;
  Mat<T> x_final, h_final;
  std::vector<T> inv_rms_final;
};

/// Full forward pass; fills `acts` so backward() can run. `rot` must cover tokens.size().
template <typename T>
void forward(const ToyConfig& cfg, const Params<T>& p, std::span<const int> tokens, const rope::RotationCache<T>& rot,
             Activations<T>& acts) {
  const int len = static_cast<int>(tokens.size());
  const int hd = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  acts.tokens.assign(tokens.begin(), tokens.end());
  acts.layers.resize(p.layers.size());
  Mat<T> x(len, cfg.d_model);
  for (int t = 0; t < len; ++t) x.row(t) = p.embed.row(tokens[static_cast<std::size_t>(t)]);

  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& lp = p.layers[l];
    auto& a = acts.layers[l];
    a.x_in = x;
    detail::rms_forward(x, lp.attn_norm, a.h1, a.inv_rms1);
    a.q.noalias() = a.h1 * lp.wq;
    a.k.noalias() = a.h1 * lp.wk;
    a.v.noalias() = a.h1 * lp.wv;
    for (int t = 0; t < len; ++t) {
      for (int h = 0; h < cfg.heads; ++h) {
        rot.rotate(a.q.row(t).data() + h * hd, t);
        rot.rotate(a.k.row(t).data() + h * hd, t);
      }
    }
    a.o.setZero(len, cfg.d_model);
    a.probs.resize(static_cast<std::size_t>(cfg.heads));
    for (int h = 0; h < cfg.heads; ++h) {
      Mat<T>& s = a.probs[static_cast<std::size_t>(h)];
      s.noalias() = (a.q.middleCols(h * hd, hd) * a.k.middleCols(h * hd, hd).transpose()) * scale;
      for (int t = 0; t < len; ++t) {
        auto row = s.row(t);
        T mx = row(0);
        for (int j = 1; j <= t; ++j) mx = std::max(mx, row(j));
        T sum = 0;
        for (int j = 0; j <= t; ++j) {
          row(j) = std::exp(row(j) - mx);
          sum += row(j);
        }
        const T inv = T(1) / sum;
        for (int j = 0; j <= t; ++j) row(j) *= inv;
        for (int j = t + 1; j < len; ++j) row(j) = 0;
      }
      a.o.middleCols(h * hd, hd).noalias() = s * a.v.middleCols(h * hd, hd);
    }
    x.noalias() += a.o * lp.wo;
    a.x_mid = x;
    detail::rms_forward(x, lp.mlp_norm, a.h2, a.inv_rms2);
    a.u.noalias() = a.h2 * lp.w1;
    a.z = a.u.unaryExpr([](T u) { return u * detail::sigmoid(u); });
    x.noalias() += a.z * lp.w2;
  }
  acts.x_final = std::move(x);
  detail::rms_forward(acts.x_final, p.final_norm, acts.h_final, acts.inv_rms_final);
}

template <typename T>
Mat<T> logits_at(const Params<T>& p, const Activations<T>& acts, std::span<const int> positions) {
  Mat<T> out(static_cast<Eigen::Index>(positions.size()), p.unembed.cols());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)).noalias() = acts.h_final.row(positions[i]) * p.unembed;
  }
  return out;
}

/// Backpropagates dlogits (rows aligned with `positions`) and accumulates into `grads`.
template <typename T>
void backward(const ToyConfig& cfg, const Params<T>& p, const Activations<T>& acts, const rope::RotationCache<T>& rot,
              std::span<const int> positions, const Mat<T>& dlogits, Params<T>& grads) {
  const int len = static_cast<int>(acts.tokens.size());
  const int hd = cfg.head_dim();
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));

  Mat<T> dh_final = Mat<T>::Zero(len, cfg.d_model);
  for (std::size_t i = 0; i < positions.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    grads.unembed.noalias() += acts.h_final.row(positions[i]).transpose() * dlogits.row(r);
    dh_final.row(positions[i]).noalias() += dlogits.row(r) * p.unembed.transpose();
  }
  Mat<T> dx = Mat<T>::Zero(len, cfg.d_model);
  detail::rms_backward(acts.x_final, p.final_norm, acts.inv_rms_final, dh_final, dx, grads.final_norm);

  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& lp = p.layers[li];
    const auto& a = acts.layers[li];
    auto& g = grads.layers[li];

    // MLP branch; dx flows through the residual unchanged.
    Mat<T> dz = dx * lp.w2.transpose();
    g.w2.noalias() += a.z.transpose() * dx;
    Mat<T> du(len, dz.cols());
    for (Eigen::Index i = 0; i < du.size(); ++i) {
      const T u = a.u.data()[i];
      const T s = detail::sigmoid(u);
      du.data()[i] = dz.data()[i] * s * (T(1) + u * (T(1) - s));
    }
    g.w1.noalias() += a.h2.transpose() * du;
    Mat<T> dh2 = du * lp.w1.transpose();
    detail::rms_backward(a.x_mid, lp.mlp_norm, a.inv_rms2, dh2, dx, g.mlp_norm);

    // Attention branch.
    g.wo.noalias() += a.o.transpose() * dx;
    Mat<T> d_o = dx * lp.wo.transpose();
    Mat<T> dq = Mat<T>::Zero(len, cfg.d_model), dk = Mat<T>::Zero(len, cfg.d_model), dv = Mat<T>::Zero(len, cfg.d_model);
    for (int h = 0; h < cfg.heads; ++h) {
      const Mat<T>& prob = a.probs[static_cast<std::size_t>(h)];
      Mat<T> dp = d_o.middleCols(h * hd, hd) * a.v.middleCols(h * hd, hd).transpose();
      dv.middleCols(h * hd, hd).noalias() += prob.transpose() * d_o.middleCols(h * hd, hd);
      for (int t = 0; t < len; ++t) {
        T dot = 0;
        for (int j = 0; j <= t; ++j) dot += dp(t, j) * prob(t, j);
        for (int j = 0; j <= t; ++j) dp(t, j) = prob(t, j) * (dp(t, j) - dot) * scale;
        for (int j = t + 1; j < len; ++j) dp(t, j) = 0;
      }
      dq.middleCols(h * hd, hd).noalias() += dp * a.k.middleCols(h * hd, hd);
      dk.middleCols(h * hd, hd).noalias() += dp.transpose() * a.q.middleCols(h * hd, hd);
    }
    for (int t = 0; t < len; ++t) {
      for (int h = 0; h < cfg.heads; ++h) {
        rot.rotate(dq.row(t).data() + h * hd, t, /*inverse=*/true);
        rot.rotate(dk.row(t).data() + h * hd, t, /*inverse=*/true);
      }
    }
    g.wq.noalias() += a.h1.transpose() * dq;
    g.wk.noalias() += a.h1.transpose() * dk;
    g.wv.noalias() += a.h1.transpose() * dv;
    Mat<T> dh1 = dq * lp.wq.transpose();
    dh1.noalias() += dk * lp.wk.transpose();
    dh1.noalias() += dv * lp.wv.transpose();
    detail::rms_backward(a.x_in, lp.attn_norm, a.inv_rms1, dh1, dx, g.attn_norm);
  }

  for (int t = 0; t < len; ++t) grads.embed.row(acts.tokens[static_cast<std::size_t>(t)]) += dx.row(t);
}

/// Summed cross-entropy over `targets`; when `grads` is non-null, accumulates
/// `grad_scale` * d(loss)/d(params) into it.
template <typename T>
T loss_and_grad(const ToyConfig& cfg, const Params<T>& p, std::span<const int> tokens, std::span<const Target> targets,
                const rope::RotationCache<T>& rot, Params<T>* grads, T grad_scale, Activations<T>& acts) {
  forward(cfg, p, tokens, rot, acts);
  std::vector<int> positions;
  for (const auto& tg : targets) positions.push_back(tg.position);
  Mat<T> logits = logits_at(p, acts, positions);
  T loss = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    auto row = logits.row(r);
    const T mx = row.maxCoeff();
    row = (row.array() - mx).exp().matrix();
    const T sum = row.sum();
    row /= sum;
    const int label = targets[static_cast<std::size_t>(r)].label;
    loss -= std::log(std::max(row(label), std::numeric_limits<T>::min()));
    row(label) -= T(1);
  }
  if (grads) {
    logits *= grad_scale;
    backward(cfg, p, acts, rot, positions, logits, *grads);
  }
  return loss;
}

}  // namespace lct::toy
