#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include <Eigen/Dense>

namespace plume {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 10.0;  // <= 0 disables clipping
};

/// Fully connected network with ReLU hidden layers. Batches are column-major: one column per
/// example.
class Mlp {
 public:
  Mlp() = default;
  /// sizes = {input, hidden..., output}. Weights use He-uniform initialisation from `seed`.
  Mlp(std::vector<std::size_t> sizes, std::uint64_t seed, bool relu_output = false);

  std::size_t input_size() const { return sizes_.front(); }
  std::size_t output_size() const { return sizes_.back(); }
  const std::vector<std::size_t>& sizes() const { return sizes_; }
  std::size_t parameter_count() const;

  Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
  /// Forward pass that keeps activations for backward().
  const Eigen::MatrixXd& forward_train(const Eigen::MatrixXd& x);
  /// Accumulates parameter gradients for dL/d(output) of the last forward_train() call and
  /// returns dL/d(input).
  Eigen::MatrixXd backward(const Eigen::MatrixXd& grad_out);

  void zero_grad();
  /// Adam update with the accumulated gradients (optionally norm-clipped), then zero_grad().
  void adam_step(const AdamConfig& cfg);
  double grad_norm() const;
  void scale_grad(double factor);

  /// Copies weights only; optimizer state is left untouched.
  void copy_weights_from(const Mlp& other);
  bool same_weights(const Mlp& other) const;

  void save(std::ostream& out) const;
  static Mlp load(std::istream& in);

 private:
  struct Layer {
    Eigen::MatrixXd w;
    Eigen::VectorXd b;
    Eigen::MatrixXd gw;
    Eigen::VectorXd gb;
    Eigen::MatrixXd mw, vw;
    Eigen::VectorXd mb, vb;
  };

  std::vector<std::size_t> sizes_;
  std::vector<Layer> layers_;
  bool relu_output_ = false;
  std::vector<Eigen::MatrixXd> activations_;  // input plus post-activation of every layer
  long adam_t_ = 0;
};

}  // namespace plume
