#ifndef STIN_NEURAL_HPP_
#define STIN_NEURAL_HPP_

// Small differentiable toolkit: dense layers, a GRU cell, an agent Q network
// unrolled through time with exact reverse-mode gradients, RMSProp, soft
// target updates and JSON checkpoints.
//
// Batches are column-major: every matrix holds one sample per column.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stin/error.hpp"

namespace stin {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Tensor {
  std::string name;
  Matrix value;
  Matrix grad;
  Eigen::Index fan_in = 1;
};

// Named parameters with gradient accumulators of identical shape.
class ParameterSet {
 public:
  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols,
                  Eigen::Index fan_in) {
    tensors_.push_back({std::move(name), Matrix::Zero(rows, cols),
                        Matrix::Zero(rows, cols), fan_in});
    return tensors_.size() - 1;
  }

  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  std::size_t size() const { return tensors_.size(); }
  auto begin() { return tensors_.begin(); }
  auto end() { return tensors_.end(); }
  auto begin() const { return tensors_.begin(); }
  auto end() const { return tensors_.end(); }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
    return n;
  }

  // Flat view across all tensors, in insertion order.
  double& scalar(std::size_t flat) { return locate(flat, false); }
  double& grad_scalar(std::size_t flat) { return locate(flat, true); }

  void zero_grad() {
    for (auto& t : tensors_) t.grad.setZero();
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& t : tensors_) s += t.grad.squaredNorm();
    return std::sqrt(s);
  }

  bool grads_finite() const {
    for (const auto& t : tensors_) {
      if (!t.grad.allFinite()) return false;
    }
    return true;
  }

  // Uniform in +-1/sqrt(fan_in).
  template <typename Rng>
  void init_uniform(Rng& rng) {
    for (auto& t : tensors_) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(t.fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        for (Eigen::Index r = 0; r < t.value.rows(); ++r) {
          t.value(r, c) = dist(rng);
        }
      }
    }
  }

  bool same_shape(const ParameterSet& other) const {
    if (other.size() != size()) return false;
    for (std::size_t i = 0; i < size(); ++i) {
      if (tensors_[i].name != other[i].name ||
          tensors_[i].value.rows() != other[i].value.rows() ||
          tensors_[i].value.cols() != other[i].value.cols()) {
        return false;
      }
    }
    return true;
  }

 private:
  double& locate(std::size_t flat, bool grad) {
    for (auto& t : tensors_) {
      const auto n = static_cast<std::size_t>(t.value.size());
      if (flat < n) {
        return grad ? t.grad.data()[flat] : t.value.data()[flat];
      }
      flat -= n;
    }
    throw ShapeError("flat parameter index out of range");
  }

  std::vector<Tensor> tensors_;
};

enum class Activation { kIdentity, kRelu, kAbs };

inline Matrix activate(Activation a, const Matrix& z) {
  switch (a) {
    case Activation::kIdentity: return z;
    case Activation::kRelu: return z.cwiseMax(0.0);
    case Activation::kAbs: return z.cwiseAbs();
  }
  return z;
}

inline Matrix activation_grad(Activation a, const Matrix& z, const Matrix& dy) {
  switch (a) {
    case Activation::kIdentity: return dy;
    case Activation::kRelu:
      return (z.array() > 0.0).select(dy, Matrix::Zero(dy.rows(), dy.cols()));
    case Activation::kAbs:
      return (z.array() >= 0.0).select(dy, -dy);
  }
  return dy;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct DenseLayer {
  std::size_t weight = 0;  // out x in
  std::size_t bias = 0;    // out x 1
  Eigen::Index in = 0;
  Eigen::Index out = 0;
  Activation activation = Activation::kIdentity;
};

inline DenseLayer add_dense(ParameterSet& p, const std::string& name,
                            Eigen::Index in, Eigen::Index out,
                            Activation act) {
  DenseLayer l;
  l.in = in;
  l.out = out;
  l.activation = act;
  l.weight = p.add(name + ".weight", out, in, in);
  l.bias = p.add(name + ".bias", out, 1, in);
  return l;
}

struct DenseCache {
  Matrix input;
  Matrix pre;
};

inline Matrix dense_forward(const ParameterSet& p, const DenseLayer& l,
                            const Matrix& x, DenseCache* cache = nullptr) {
  if (x.rows() != l.in) throw ShapeError("dense input has wrong length");
  Matrix z = p[l.weight].value * x;
  z.colwise() += p[l.bias].value.col(0);
  Matrix y = activate(l.activation, z);
  if (cache) {
    cache->input = x;
    cache->pre = std::move(z);
  }
  return y;
}

// Accumulates parameter gradients; returns d(loss)/d(input).
inline Matrix dense_backward(ParameterSet& p, const DenseLayer& l,
                             const DenseCache& cache, const Matrix& dy) {
  if (dy.rows() != l.out || dy.cols() != cache.input.cols()) {
    throw ShapeError("dense upstream gradient has wrong shape");
  }
  const Matrix dz = activation_grad(l.activation, cache.pre, dy);
  p[l.weight].grad.noalias() += dz * cache.input.transpose();
  p[l.bias].grad.col(0) += dz.rowwise().sum();
  return p[l.weight].value.transpose() * dz;
}

// Gated recurrent unit:
//   z = sig(Wz [x; h] + bz), r = sig(Wr [x; h] + br)
//   c = tanh(Wh [x; r*h] + bh), h' = (1 - z) * h + z * c
struct GruCell {
  std::size_t wz = 0, bz = 0, wr = 0, br = 0, wh = 0, bh = 0;
  Eigen::Index input = 0;
  Eigen::Index hidden = 0;
};

inline GruCell add_gru(ParameterSet& p, const std::string& name,
                       Eigen::Index input, Eigen::Index hidden) {
  GruCell g;
  g.input = input;
  g.hidden = hidden;
  const Eigen::Index fan = input + hidden;
  g.wz = p.add(name + ".wz", hidden, fan, fan);
  g.bz = p.add(name + ".bz", hidden, 1, fan);
  g.wr = p.add(name + ".wr", hidden, fan, fan);
  g.br = p.add(name + ".br", hidden, 1, fan);
  g.wh = p.add(name + ".wh", hidden, fan, fan);
  g.bh = p.add(name + ".bh", hidden, 1, fan);
  return g;
}

struct GruCache {
  Matrix xh;   // [x; h_prev]
  Matrix xrh;  // [x; r * h_prev]
  Matrix h_prev, z, r, c;
};

inline Matrix gru_step(const ParameterSet& p, const GruCell& g,
                       const Matrix& x, const Matrix& h_prev,
                       GruCache* cache = nullptr) {
  if (x.rows() != g.input || h_prev.rows() != g.hidden ||
      x.cols() != h_prev.cols()) {
    throw ShapeError("gru input or hidden state has wrong shape");
  }
  const Eigen::Index n = x.cols();
  Matrix xh(g.input + g.hidden, n);
  xh << x, h_prev;
  Matrix az = p[g.wz].value * xh;
  az.colwise() += p[g.bz].value.col(0);
  Matrix ar = p[g.wr].value * xh;
  ar.colwise() += p[g.br].value.col(0);
  Matrix z = az.unaryExpr([](double v) { return sigmoid(v); });
  Matrix r = ar.unaryExpr([](double v) { return sigmoid(v); });
  Matrix xrh(g.input + g.hidden, n);
  xrh << x, r.cwiseProduct(h_prev);
  Matrix ac = p[g.wh].value * xrh;
  ac.colwise() += p[g.bh].value.col(0);
  Matrix c = ac.array().tanh().matrix();
  Matrix h = h_prev + z.cwiseProduct(c - h_prev);
  if (cache) {
    cache->xh = std::move(xh);
    cache->xrh = std::move(xrh);
    cache->h_prev = h_prev;
    cache->z = std::move(z);
    cache->r = std::move(r);
    cache->c = std::move(c);
  }
  return h;
}

struct GruGrads {
  Matrix dx;
  Matrix dh_prev;
};

inline GruGrads gru_backward(ParameterSet& p, const GruCell& g,
                             const GruCache& k, const Matrix& dh) {
  const Eigen::Index in = g.input;
  const Eigen::Index hid = g.hidden;
  const Matrix one = Matrix::Ones(hid, dh.cols());
  const Matrix dc = dh.cwiseProduct(k.z);
  const Matrix dz = dh.cwiseProduct(k.c - k.h_prev);
  Matrix dh_prev = dh.cwiseProduct(one - k.z);

  const Matrix dac = dc.cwiseProduct(one - k.c.cwiseProduct(k.c));
  p[g.wh].grad.noalias() += dac * k.xrh.transpose();
  p[g.bh].grad.col(0) += dac.rowwise().sum();
  const Matrix dxrh = p[g.wh].value.transpose() * dac;
  Matrix dx = dxrh.topRows(in);
  const Matrix drh = dxrh.bottomRows(hid);
  const Matrix dr = drh.cwiseProduct(k.h_prev);
  dh_prev += drh.cwiseProduct(k.r);

  const Matrix daz = dz.cwiseProduct(k.z).cwiseProduct(one - k.z);
  const Matrix dar = dr.cwiseProduct(k.r).cwiseProduct(one - k.r);
  p[g.wz].grad.noalias() += daz * k.xh.transpose();
  p[g.bz].grad.col(0) += daz.rowwise().sum();
  p[g.wr].grad.noalias() += dar * k.xh.transpose();
  p[g.br].grad.col(0) += dar.rowwise().sum();
  Matrix dxh = p[g.wz].value.transpose() * daz;
  dxh.noalias() += p[g.wr].value.transpose() * dar;
  dx += dxh.topRows(in);
  dh_prev += dxh.bottomRows(hid);
  return {std::move(dx), std::move(dh_prev)};
}

// input -> FC(hidden, relu) -> GRU(hidden) -> FC(actions), one Q per action.
struct AgentNetwork {
  DenseLayer fc_in;
  GruCell gru;
  DenseLayer fc_out;

  Eigen::Index input_size() const { return fc_in.in; }
  Eigen::Index hidden_size() const { return gru.hidden; }
  Eigen::Index num_actions() const { return fc_out.out; }
};

inline AgentNetwork add_agent_network(ParameterSet& p, Eigen::Index input,
                                      Eigen::Index hidden,
                                      Eigen::Index actions) {
  AgentNetwork net;
  net.fc_in = add_dense(p, "agent.fc_in", input, hidden, Activation::kRelu);
  net.gru = add_gru(p, "agent.gru", hidden, hidden);
  net.fc_out =
      add_dense(p, "agent.fc_out", hidden, actions, Activation::kIdentity);
  return net;
}

struct AgentStepCache {
  DenseCache fc_in;
  GruCache gru;
  DenseCache fc_out;
};

// One time step for a batch of agents; returns (Q, next hidden).
inline std::pair<Matrix, Matrix> agent_step(const ParameterSet& p,
                                            const AgentNetwork& net,
                                            const Matrix& x,
                                            const Matrix& h_prev,
                                            AgentStepCache* cache = nullptr) {
  const Matrix e =
      dense_forward(p, net.fc_in, x, cache ? &cache->fc_in : nullptr);
  Matrix h = gru_step(p, net.gru, e, h_prev, cache ? &cache->gru : nullptr);
  Matrix q = dense_forward(p, net.fc_out, h, cache ? &cache->fc_out : nullptr);
  return {std::move(q), std::move(h)};
}

// Forward record of an unrolled sequence, consumed by backward().
class SequenceTape {
 public:
  SequenceTape(ParameterSet& p, const AgentNetwork& net)
      : params_(&p), net_(net) {}

  // Runs the whole sequence from a zero hidden state; returns Q per step.
  std::vector<Matrix> forward(const std::vector<Matrix>& inputs) {
    steps_.clear();
    steps_.resize(inputs.size());
    std::vector<Matrix> qs;
    qs.reserve(inputs.size());
    if (inputs.empty()) return qs;
    Matrix h = Matrix::Zero(net_.hidden_size(), inputs[0].cols());
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      auto [q, h_next] = agent_step(*params_, net_, inputs[t], h, &steps_[t]);
      qs.push_back(std::move(q));
      h = std::move(h_next);
    }
    return qs;
  }

  bool recorded() const { return !steps_.empty(); }

  // Backpropagation through time. `dq[t]` is d(loss)/dQ at step t; gradients
  // accumulate into the recorded parameter set.
  void backward(const std::vector<Matrix>& dq) const {
    ParameterSet& grads_into = *params_;
    if (steps_.empty()) throw ShapeError("backward without a recorded forward");
    if (dq.size() != steps_.size()) {
      throw ShapeError("upstream gradient count differs from sequence length");
    }
    Matrix dh_next;
    for (std::size_t t = steps_.size(); t-- > 0;) {
      Matrix dh = dense_backward(grads_into, net_.fc_out, steps_[t].fc_out, dq[t]);
      if (dh_next.size() != 0) dh += dh_next;
      GruGrads g = gru_backward(grads_into, net_.gru, steps_[t].gru, dh);
      dense_backward(grads_into, net_.fc_in, steps_[t].fc_in, g.dx);
      dh_next = std::move(g.dh_prev);
    }
  }

 private:
  ParameterSet* params_;
  AgentNetwork net_;
  std::vector<AgentStepCache> steps_;
};

inline double clip_grad_norm(ParameterSet& p, double max_norm) {
  const double norm = p.grad_norm();
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (auto& t : p) t.grad *= s;
  }
  return norm;
}

struct RmsPropConfig {
  double learning_rate = 1e-4;
  double decay = 0.99;
  double epsilon = 1e-5;
};

// s <- decay*s + (1-decay)*g^2; theta <- theta - lr*g/(sqrt(s)+eps)
class RmsProp {
 public:
  RmsProp() = default;
  RmsProp(const ParameterSet& p, RmsPropConfig cfg) : cfg_(cfg) {
    for (const auto& t : p) {
      square_avg_.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    }
  }

  const RmsPropConfig& config() const { return cfg_; }
  const std::vector<Matrix>& square_avg() const { return square_avg_; }

  void step(ParameterSet& p) {
    if (p.size() != square_avg_.size()) {
      throw ShapeError("optimizer state does not match parameters");
    }
    if (!p.grads_finite()) throw DivergenceError("non-finite gradient");
    for (std::size_t i = 0; i < p.size(); ++i) {
      Tensor& t = p[i];
      Matrix& s = square_avg_[i];
      if (s.rows() != t.value.rows() || s.cols() != t.value.cols()) {
        throw ShapeError("optimizer state does not match parameters");
      }
      s = cfg_.decay * s + (1.0 - cfg_.decay) * t.grad.cwiseProduct(t.grad);
      t.value.array() -= cfg_.learning_rate * t.grad.array() /
                         (s.array().sqrt() + cfg_.epsilon);
    }
  }

 private:
  RmsPropConfig cfg_;
  std::vector<Matrix> square_avg_;
};

// target <- (1 - tau) * target + tau * online
inline void soft_update(ParameterSet& target, const ParameterSet& online,
                        double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw DomainError("tau must lie in (0, 1]");
  if (!target.same_shape(online)) {
    throw ShapeError("soft_update between differently shaped parameter sets");
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (tau == 1.0) {
      target[i].value = online[i].value;
    } else {
      target[i].value = (1.0 - tau) * target[i].value + tau * online[i].value;
    }
  }
}

// Checkpoint layout:
//   {"format": "stin-params-v1", "config_hash": "...",
//    "tensors": [{"name": ..., "rows": r, "cols": c, "data": [col-major]}]}
inline constexpr const char* kCheckpointFormat = "stin-params-v1";

inline nlohmann::json checkpoint_json(const ParameterSet& p,
                                      const std::string& config_hash) {
  nlohmann::json j;
  j["format"] = kCheckpointFormat;
  j["config_hash"] = config_hash;
  auto arr = nlohmann::json::array();
  for (const auto& t : p) {
    std::vector<double> data(t.value.data(), t.value.data() + t.value.size());
    arr.push_back({{"name", t.name},
                   {"rows", t.value.rows()},
                   {"cols", t.value.cols()},
                   {"data", data}});
  }
  j["tensors"] = std::move(arr);
  return j;
}

inline void save_checkpoint(const std::string& path, const ParameterSet& p,
                            const std::string& config_hash) {
  std::ofstream os(path);
  if (!os) throw MissingFileError("cannot write checkpoint " + path);
  os << checkpoint_json(p, config_hash).dump() << '\n';
}

// Loads values into `p`, whose layout must match the file exactly.
// Returns the stored config hash.
inline std::string load_checkpoint(const nlohmann::json& j, ParameterSet& p) {
  if (j.value("format", "") != kCheckpointFormat) {
    throw ParseError("not a parameter checkpoint");
  }
  const auto& arr = j.at("tensors");
  if (arr.size() != p.size()) {
    throw ShapeError("checkpoint tensor count differs from network");
  }
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& e = arr[i];
    Tensor& t = p[i];
    const auto rows = e.at("rows").get<Eigen::Index>();
    const auto cols = e.at("cols").get<Eigen::Index>();
    if (e.at("name").get<std::string>() != t.name || rows != t.value.rows() ||
        cols != t.value.cols()) {
      throw ShapeError("checkpoint tensor " + e.at("name").get<std::string>() +
                       " does not match " + t.name);
    }
    const auto data = e.at("data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw ShapeError("checkpoint tensor " + t.name + " has wrong data size");
    }
    t.value = Eigen::Map<const Matrix>(data.data(), rows, cols);
  }
  return j.value("config_hash", "");
}

inline std::string load_checkpoint(const std::string& path, ParameterSet& p) {
  std::ifstream is(path);
  if (!is) throw MissingFileError("cannot open checkpoint " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("checkpoint " + path + ": " + e.what());
  }
  return load_checkpoint(j, p);
}

}  // namespace stin

#endif  // STIN_NEURAL_HPP_
