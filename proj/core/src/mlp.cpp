#include "plume/mlp.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <random>

#include "plume/error.hpp"
#include "plume/rng.hpp"

namespace plume {

namespace {

constexpr char kMagic[8] = {'P', 'L', 'U', 'M', 'E', 'M', 'L', 'P'};
constexpr std::uint32_t kFormatVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw InvalidArgument("truncated network checkpoint");
  return v;
}

}  // namespace

Mlp::Mlp(std::vector<std::size_t> sizes, std::uint64_t seed, bool relu_output)
    : sizes_(std::move(sizes)), relu_output_(relu_output) {
  if (sizes_.size() < 2) throw InvalidArgument("an MLP needs input and output sizes");
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    const auto in = static_cast<Eigen::Index>(sizes_[l]);
    const auto out = static_cast<Eigen::Index>(sizes_[l + 1]);
    if (in == 0 || out == 0) throw InvalidArgument("MLP layer sizes must be positive");
    const double bound = std::sqrt(6.0 / static_cast<double>(in));
    std::uniform_real_distribution<double> u(-bound, bound);
    Layer layer;
    layer.w.resize(out, in);
    for (Eigen::Index i = 0; i < layer.w.size(); ++i) layer.w.data()[i] = u(rng);
    layer.b = Eigen::VectorXd::Zero(out);
    layer.gw = Eigen::MatrixXd::Zero(out, in);
    layer.gb = Eigen::VectorXd::Zero(out);
    layer.mw = Eigen::MatrixXd::Zero(out, in);
    layer.vw = Eigen::MatrixXd::Zero(out, in);
    layer.mb = Eigen::VectorXd::Zero(out);
    layer.vb = Eigen::VectorXd::Zero(out);
    layers_.push_back(std::move(layer));
  }
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += static_cast<std::size_t>(l.w.size() + l.b.size());
  return n;
}

Eigen::MatrixXd Mlp::forward(const Eigen::MatrixXd& x) const {
  if (static_cast<std::size_t>(x.rows()) != input_size()) {
    throw InvalidArgument("MLP input has " + std::to_string(x.rows()) + " rows, expected " +
                          std::to_string(input_size()));
  }
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = (layers_[l].w * h).colwise() + layers_[l].b;
    if (l + 1 < layers_.size() || relu_output_) z = z.cwiseMax(0.0);
    h = std::move(z);
  }
  return h;
}

const Eigen::MatrixXd& Mlp::forward_train(const Eigen::MatrixXd& x) {
  if (static_cast<std::size_t>(x.rows()) != input_size()) {
    throw InvalidArgument("MLP input has " + std::to_string(x.rows()) + " rows, expected " +
                          std::to_string(input_size()));
  }
  activations_.resize(layers_.size() + 1);
  activations_[0] = x;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Eigen::MatrixXd z = (layers_[l].w * activations_[l]).colwise() + layers_[l].b;
    if (l + 1 < layers_.size() || relu_output_) z = z.cwiseMax(0.0);
    activations_[l + 1] = std::move(z);
  }
  return activations_.back();
}

Eigen::MatrixXd Mlp::backward(const Eigen::MatrixXd& grad_out) {
  if (activations_.size() != layers_.size() + 1) throw InvalidArgument("backward without forward_train");
  Eigen::MatrixXd g = grad_out;
  for (std::size_t l = layers_.size(); l-- > 0;) {
    if (l + 1 < layers_.size() || relu_output_) {
      g = g.cwiseProduct((activations_[l + 1].array() > 0.0).cast<double>().matrix());
    }
    layers_[l].gw.noalias() += g * activations_[l].transpose();
    layers_[l].gb += g.rowwise().sum();
    g = layers_[l].w.transpose() * g;
  }
  return g;
}

void Mlp::zero_grad() {
  for (auto& l : layers_) {
    l.gw.setZero();
    l.gb.setZero();
  }
}

double Mlp::grad_norm() const {
  double s = 0.0;
  for (const auto& l : layers_) s += l.gw.squaredNorm() + l.gb.squaredNorm();
  return std::sqrt(s);
}

void Mlp::scale_grad(double factor) {
  for (auto& l : layers_) {
    l.gw *= factor;
    l.gb *= factor;
  }
}

void Mlp::adam_step(const AdamConfig& cfg) {
  if (cfg.max_grad_norm > 0.0) {
    const double norm = grad_norm();
    if (norm > cfg.max_grad_norm) scale_grad(cfg.max_grad_norm / norm);
  }
  ++adam_t_;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(adam_t_));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(adam_t_));
  const double step = cfg.lr * std::sqrt(c2) / c1;
  for (auto& l : layers_) {
    l.mw = cfg.beta1 * l.mw + (1.0 - cfg.beta1) * l.gw;
    l.vw = cfg.beta2 * l.vw + (1.0 - cfg.beta2) * l.gw.cwiseAbs2();
    l.w.array() -= step * l.mw.array() / (l.vw.array().sqrt() + cfg.eps);
    l.mb = cfg.beta1 * l.mb + (1.0 - cfg.beta1) * l.gb;
    l.vb = cfg.beta2 * l.vb + (1.0 - cfg.beta2) * l.gb.cwiseAbs2();
    l.b.array() -= step * l.mb.array() / (l.vb.array().sqrt() + cfg.eps);
  }
  zero_grad();
}

void Mlp::copy_weights_from(const Mlp& other) {
  if (other.sizes_ != sizes_) throw InvalidArgument("copy_weights_from: architecture mismatch");
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    layers_[l].w = other.layers_[l].w;
    layers_[l].b = other.layers_[l].b;
  }
}

bool Mlp::same_weights(const Mlp& other) const {
  if (other.sizes_ != sizes_) return false;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].w != other.layers_[l].w || layers_[l].b != other.layers_[l].b) return false;
  }
  return true;
}

void Mlp::save(std::ostream& out) const {
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kFormatVersion);
  write_pod(out, static_cast<std::uint32_t>(sizes_.size()));
  for (auto s : sizes_) write_pod(out, static_cast<std::uint64_t>(s));
  write_pod(out, static_cast<std::uint8_t>(relu_output_ ? 1 : 0));
  for (const auto& l : layers_) {
    out.write(reinterpret_cast<const char*>(l.w.data()), static_cast<std::streamsize>(sizeof(double) * l.w.size()));
    out.write(reinterpret_cast<const char*>(l.b.data()), static_cast<std::streamsize>(sizeof(double) * l.b.size()));
  }
}

Mlp Mlp::load(std::istream& in) {
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw InvalidArgument("not a network checkpoint (bad magic)");
  }
  const auto version = read_pod<std::uint32_t>(in);
  if (version != kFormatVersion) {
    throw InvalidArgument("unsupported network checkpoint version " + std::to_string(version));
  }
  const auto count = read_pod<std::uint32_t>(in);
  if (count < 2 || count > 64) throw InvalidArgument("corrupt network checkpoint");
  std::vector<std::size_t> sizes;
  for (std::uint32_t i = 0; i < count; ++i) sizes.push_back(static_cast<std::size_t>(read_pod<std::uint64_t>(in)));
  const bool relu_output = read_pod<std::uint8_t>(in) != 0;
  Mlp net(sizes, 0, relu_output);
  for (auto& l : net.layers_) {
    in.read(reinterpret_cast<char*>(l.w.data()), static_cast<std::streamsize>(sizeof(double) * l.w.size()));
    in.read(reinterpret_cast<char*>(l.b.data()), static_cast<std::streamsize>(sizeof(double) * l.b.size()));
    if (!in) throw InvalidArgument("truncated network checkpoint");
  }
  return net;
}

}  // namespace plume
