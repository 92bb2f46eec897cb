#ifndef STIN_MIXER_HPP_
#define STIN_MIXER_HPP_

// Value-decomposition mixers turning per-agent chosen-action values into a
// joint value. Inputs are agents x batch; outputs are 1 x batch.

#include <cmath>
#include <string>
#include <vector>

#include "stin/error.hpp"
#include "stin/neural.hpp"

namespace stin {

enum class MixerKind { kVdnSum, kQmixMonotonic, kNoneIql };

inline const char* to_string(MixerKind k) {
  switch (k) {
    case MixerKind::kVdnSum: return "vdn";
    case MixerKind::kQmixMonotonic: return "qmix";
    case MixerKind::kNoneIql: return "iql";
  }
  return "?";
}

// Q_tot = sum_i Q_i
inline Matrix vdn_mix(const Matrix& q) { return q.colwise().sum(); }

inline Matrix vdn_backward(const Matrix& dq_tot, Eigen::Index agents) {
  if (dq_tot.rows() != 1) throw ShapeError("vdn upstream must be 1 x batch");
  return dq_tot.replicate(agents, 1);
}

// Monotonic two-layer mixer whose weights are produced from the global state
// by single-layer hypernetworks; absolute values keep dQ_tot/dQ_i >= 0.
//   hidden = elu(|W1(s)|^T q + b1(s)),  Q_tot = |w2(s)| . hidden + b2(s)
struct QmixMixer {
  DenseLayer hyper_w1;  // state -> agents * embed, abs
  DenseLayer hyper_b1;  // state -> embed
  DenseLayer hyper_w2;  // state -> embed, abs
  DenseLayer hyper_b2;  // state -> 1
  Eigen::Index agents = 0;
  Eigen::Index embed = 0;
  Eigen::Index state_size = 0;
};

inline QmixMixer add_qmix_mixer(ParameterSet& p, Eigen::Index agents,
                                Eigen::Index state_size, Eigen::Index embed) {
  QmixMixer m;
  m.agents = agents;
  m.embed = embed;
  m.state_size = state_size;
  m.hyper_w1 = add_dense(p, "mixer.hyper_w1", state_size, agents * embed,
                         Activation::kAbs);
  m.hyper_b1 =
      add_dense(p, "mixer.hyper_b1", state_size, embed, Activation::kIdentity);
  m.hyper_w2 =
      add_dense(p, "mixer.hyper_w2", state_size, embed, Activation::kAbs);
  m.hyper_b2 =
      add_dense(p, "mixer.hyper_b2", state_size, 1, Activation::kIdentity);
  return m;
}

struct QmixCache {
  Matrix q;
  DenseCache w1_cache, b1_cache, w2_cache, b2_cache;
  Matrix w1;      // agents*embed x batch, nonnegative
  Matrix w2;      // embed x batch, nonnegative
  Matrix pre;     // embed x batch
  Matrix hidden;  // embed x batch
};

inline double elu(double x) { return x > 0.0 ? x : std::expm1(x); }
inline double elu_grad(double x) { return x > 0.0 ? 1.0 : std::exp(x); }

inline Matrix qmix_forward(const ParameterSet& p, const QmixMixer& m,
                           const Matrix& q, const Matrix& state,
                           QmixCache* cache = nullptr) {
  if (q.rows() != m.agents) throw ShapeError("mixer/agent-count mismatch");
  if (state.rows() != m.state_size || state.cols() != q.cols()) {
    throw ShapeError("mixer state has wrong shape");
  }
  QmixCache local;
  QmixCache& k = cache ? *cache : local;
  k.w1 = dense_forward(p, m.hyper_w1, state, &k.w1_cache);
  const Matrix b1 = dense_forward(p, m.hyper_b1, state, &k.b1_cache);
  k.w2 = dense_forward(p, m.hyper_w2, state, &k.w2_cache);
  const Matrix b2 = dense_forward(p, m.hyper_b2, state, &k.b2_cache);
  const Eigen::Index n = q.cols();
  k.pre.resize(m.embed, n);
  for (Eigen::Index b = 0; b < n; ++b) {
    const Eigen::Map<const Matrix> w1(k.w1.col(b).data(), m.embed, m.agents);
    k.pre.col(b) = w1 * q.col(b) + b1.col(b);
  }
  k.hidden = k.pre.unaryExpr([](double v) { return elu(v); });
  Matrix out(1, n);
  for (Eigen::Index b = 0; b < n; ++b) {
    out(0, b) = k.w2.col(b).dot(k.hidden.col(b)) + b2(0, b);
  }
  k.q = q;
  return out;
}

// Accumulates hypernetwork gradients; returns dQ_tot/dq scaled by upstream.
inline Matrix qmix_backward(ParameterSet& p, const QmixMixer& m,
                            const QmixCache& k, const Matrix& dq_tot) {
  const Eigen::Index n = k.q.cols();
  if (dq_tot.rows() != 1 || dq_tot.cols() != n) {
    throw ShapeError("qmix upstream must be 1 x batch");
  }
  Matrix dw2(m.embed, n);
  Matrix dpre(m.embed, n);
  for (Eigen::Index b = 0; b < n; ++b) {
    dw2.col(b) = dq_tot(0, b) * k.hidden.col(b);
    for (Eigen::Index h = 0; h < m.embed; ++h) {
      dpre(h, b) = dq_tot(0, b) * k.w2(h, b) * elu_grad(k.pre(h, b));
    }
  }
  Matrix dw1(m.agents * m.embed, n);
  Matrix dq(m.agents, n);
  for (Eigen::Index b = 0; b < n; ++b) {
    const Eigen::Map<const Matrix> w1(k.w1.col(b).data(), m.embed, m.agents);
    Eigen::Map<Matrix> g(dw1.col(b).data(), m.embed, m.agents);
    g.noalias() = dpre.col(b) * k.q.col(b).transpose();
    dq.col(b).noalias() = w1.transpose() * dpre.col(b);
  }
  dense_backward(p, m.hyper_w1, k.w1_cache, dw1);
  dense_backward(p, m.hyper_b1, k.b1_cache, dpre);
  dense_backward(p, m.hyper_w2, k.w2_cache, dw2);
  dense_backward(p, m.hyper_b2, k.b2_cache, dq_tot);
  return dq;
}

}  // namespace stin

#endif  // STIN_MIXER_HPP_
