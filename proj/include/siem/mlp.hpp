#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "siem/errors.hpp"
#include "siem/rng.hpp"

namespace siem {

/// Fully connected network with SiLU hidden activations and a linear output.
/// Batches are column-major: one sample per column.
class Mlp {
 public:
  struct Trace {
    std::vector<Eigen::MatrixXd> pre;   // pre-activations per layer
    std::vector<Eigen::MatrixXd> act;   // act[0] is the input
  };

  struct Gradients {
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
  };

  Mlp() = default;

  /// LeCun-normal weights, zero biases.
  Mlp(std::vector<int> sizes, std::uint64_t seed) : sizes_(std::move(sizes)) {
    if (sizes_.size() < 2) throw InvalidArgument("Mlp needs at least an input and an output layer");
    for (int s : sizes_)
      if (s < 1) throw InvalidArgument("Mlp layer sizes must be >= 1");
    auto rng = CounterRng::stream(seed, Stream::network_init);
    for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
      Eigen::MatrixXd w(sizes_[l + 1], sizes_[l]);
      const double scale = 1.0 / std::sqrt(static_cast<double>(sizes_[l]));
      for (Eigen::Index c = 0; c < w.cols(); ++c)
        for (Eigen::Index r = 0; r < w.rows(); ++r) w(r, c) = scale * rng.normal();
      weights_.push_back(std::move(w));
      biases_.push_back(Eigen::VectorXd::Zero(sizes_[l + 1]));
    }
  }

  const std::vector<int>& sizes() const noexcept { return sizes_; }
  int inputs() const { return sizes_.front(); }
  int outputs() const { return sizes_.back(); }
  std::size_t layers() const noexcept { return weights_.size(); }
  std::vector<Eigen::MatrixXd>& weights() noexcept { return weights_; }
  std::vector<Eigen::VectorXd>& biases() noexcept { return biases_; }
  const std::vector<Eigen::MatrixXd>& weights() const noexcept { return weights_; }
  const std::vector<Eigen::VectorXd>& biases() const noexcept { return biases_; }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input) const {
    Eigen::MatrixXd a = input;
    for (std::size_t l = 0; l < layers(); ++l) {
      Eigen::MatrixXd z = weights_[l] * a;
      z.colwise() += biases_[l];
      a = (l + 1 < layers()) ? silu(z) : std::move(z);
    }
    return a;
  }

  Eigen::MatrixXd forward(const Eigen::MatrixXd& input, Trace& trace) const {
    trace.pre.assign(layers(), {});
    trace.act.assign(layers() + 1, {});
    trace.act[0] = input;
    for (std::size_t l = 0; l < layers(); ++l) {
      trace.pre[l] = weights_[l] * trace.act[l];
      trace.pre[l].colwise() += biases_[l];
      trace.act[l + 1] = (l + 1 < layers()) ? silu(trace.pre[l]) : trace.pre[l];
    }
    return trace.act.back();
  }

  /// Back-propagates dLoss/dOutput through a recorded forward pass.
  Gradients backward(const Trace& trace, const Eigen::MatrixXd& grad_output) const {
    Gradients g;
    g.weights.resize(layers());
    g.biases.resize(layers());
    Eigen::MatrixXd delta = grad_output;
    for (std::size_t l = layers(); l-- > 0;) {
      g.weights[l] = delta * trace.act[l].transpose();
      g.biases[l] = delta.rowwise().sum();
      if (l > 0) delta = (weights_[l].transpose() * delta).cwiseProduct(silu_grad(trace.pre[l - 1]));
    }
    return g;
  }

  bool finite() const {
    for (std::size_t l = 0; l < layers(); ++l)
      if (!weights_[l].allFinite() || !biases_[l].allFinite()) return false;
    return true;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out.write(kMagic.data(), kMagic.size());
    write_u32(out, kVersion);
    write_u32(out, static_cast<std::uint32_t>(sizes_.size()));
    for (int s : sizes_) write_u32(out, static_cast<std::uint32_t>(s));
    for (std::size_t l = 0; l < layers(); ++l) {
      out.write(reinterpret_cast<const char*>(weights_[l].data()),
                static_cast<std::streamsize>(weights_[l].size() * sizeof(double)));
      out.write(reinterpret_cast<const char*>(biases_[l].data()),
                static_cast<std::streamsize>(biases_[l].size() * sizeof(double)));
    }
    if (!out) throw Error("failed writing " + path);
  }

  static Mlp load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path);
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kMagic) throw Error(path + ": not a network checkpoint");
    if (const auto version = read_u32(in); version != kVersion)
      throw Error(path + ": unsupported checkpoint version " + std::to_string(version));
    const auto count = read_u32(in);
    if (count < 2 || count > 64) throw Error(path + ": corrupt layer count");
    Mlp net;
    for (std::uint32_t i = 0; i < count; ++i) net.sizes_.push_back(static_cast<int>(read_u32(in)));
    for (std::size_t l = 0; l + 1 < net.sizes_.size(); ++l) {
      Eigen::MatrixXd w(net.sizes_[l + 1], net.sizes_[l]);
      Eigen::VectorXd b(net.sizes_[l + 1]);
      in.read(reinterpret_cast<char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
      in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size() * sizeof(double)));
      net.weights_.push_back(std::move(w));
      net.biases_.push_back(std::move(b));
    }
    if (!in) throw Error(path + ": truncated checkpoint");
    return net;
  }

 private:
  static constexpr std::array<char, 8> kMagic{'S', 'I', 'E', 'M', 'M', 'L', 'P', '\0'};
  static constexpr std::uint32_t kVersion = 1;

  static Eigen::MatrixXd silu(const Eigen::MatrixXd& z) {
    return (z.array() / (1.0 + (-z.array()).exp())).matrix();
  }
  static Eigen::MatrixXd silu_grad(const Eigen::MatrixXd& z) {
    const Eigen::ArrayXXd s = 1.0 / (1.0 + (-z.array()).exp());
    return (s * (1.0 + z.array() * (1.0 - s))).matrix();
  }
  static void write_u32(std::ofstream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }
  static std::uint32_t read_u32(std::ifstream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  }

  std::vector<int> sizes_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

/// Plain stochastic gradient descent.
class Sgd {
 public:
  explicit Sgd(double learning_rate) : rate_(learning_rate) {}
  void step(Mlp& net, const Mlp::Gradients& g) const {
    for (std::size_t l = 0; l < net.layers(); ++l) {
      net.weights()[l] -= rate_ * g.weights[l];
      net.biases()[l] -= rate_ * g.biases[l];
    }
  }

 private:
  double rate_;
};

/// Adam with the usual bias correction.
class Adam {
 public:
  explicit Adam(const Mlp& net, double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : rate_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (std::size_t l = 0; l < net.layers(); ++l) {
      mw_.push_back(Eigen::MatrixXd::Zero(net.weights()[l].rows(), net.weights()[l].cols()));
      vw_.push_back(mw_.back());
      mb_.push_back(Eigen::VectorXd::Zero(net.biases()[l].size()));
      vb_.push_back(mb_.back());
    }
  }

  void step(Mlp& net, const Mlp::Gradients& g) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t l = 0; l < net.layers(); ++l) {
      update(net.weights()[l], mw_[l], vw_[l], g.weights[l], c1, c2);
      update(net.biases()[l], mb_[l], vb_[l], g.biases[l], c1, c2);
    }
  }

 private:
  template <class P, class G>
  void update(P& param, P& m, P& v, const G& grad, double c1, double c2) const {
    m = beta1_ * m + (1.0 - beta1_) * grad;
    v = beta2_ * v + (1.0 - beta2_) * grad.cwiseAbs2();
    param.array() -= rate_ * (m.array() / c1) / ((v.array() / c2).sqrt() + eps_);
  }

  double rate_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Eigen::MatrixXd> mw_, vw_;
  std::vector<Eigen::VectorXd> mb_, vb_;
};

}  // namespace siem
