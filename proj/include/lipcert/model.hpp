#pragma once

// Feedforward ReLU networks: dense affine layers with a ReLU after every
// layer except the last. Convolutions are lowered to dense layers on load.

#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace lipcert {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Shape or size disagreement between two operands.
class DimensionError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A model that fails validation. `layer()` is the index of the offending
/// entry in the model's layer list, or -1 when the problem is global.
class ModelError : public std::runtime_error {
public:
  ModelError(const std::string& what, int layer = -1)
      : std::runtime_error(layer >= 0 ? "layer " + std::to_string(layer) + ": " + what : what),
        layer_(layer) {}

  int layer() const noexcept { return layer_; }

private:
  int layer_;
};

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

struct AffineLayer {
  Matrix weight;  // out_dim x in_dim
  Vector bias;    // out_dim

  std::size_t in_dim() const { return static_cast<std::size_t>(weight.cols()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.rows()); }

  void validate(int index = -1) const {
    if (weight.rows() != bias.size()) {
      throw ModelError("dimension mismatch: weight has " + std::to_string(weight.rows()) +
                           " rows but bias has length " + std::to_string(bias.size()),
                       index);
    }
    if (weight.rows() == 0 || weight.cols() == 0) {
      throw ModelError("empty weight matrix", index);
    }
    if (!weight.allFinite() || !bias.allFinite()) {
      throw ModelError("non-finite entry in weight or bias", index);
    }
  }
};

/// Ordered affine layers; layers 0..n-2 are followed by a ReLU, layer n-1 is
/// the output. Immutable after construction.
class Network {
public:
  Network() = default;

  explicit Network(std::vector<AffineLayer> layers) : layers_(std::move(layers)) {
    if (layers_.empty()) {
      throw ModelError("network has no affine layers");
    }
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i].validate(static_cast<int>(i));
      if (i > 0 && layers_[i].in_dim() != layers_[i - 1].out_dim()) {
        throw ModelError("dimension mismatch: layer expects input of size " +
                             std::to_string(layers_[i].in_dim()) + " but previous layer produces " +
                             std::to_string(layers_[i - 1].out_dim()),
                         static_cast<int>(i));
      }
    }
  }

  std::size_t num_layers() const { return layers_.size(); }
  std::size_t num_hidden() const { return layers_.size() - 1; }
  std::size_t input_dim() const { return layers_.front().in_dim(); }
  std::size_t output_dim() const { return layers_.back().out_dim(); }

  const AffineLayer& layer(std::size_t i) const { return layers_.at(i); }
  const std::vector<AffineLayer>& layers() const { return layers_; }

  /// True for every layer except the last.
  bool activation_after(std::size_t i) const { return i + 1 < layers_.size(); }

  std::size_t hidden_width(std::size_t h) const { return layers_.at(h).out_dim(); }

  std::size_t total_hidden_neurons() const {
    std::size_t count = 0;
    for (std::size_t h = 0; h < num_hidden(); ++h) count += hidden_width(h);
    return count;
  }

private:
  std::vector<AffineLayer> layers_;
};

inline double relu(double z) { return z > 0.0 ? z : 0.0; }

inline void check_input(const Network& net, const Vector& x) {
  if (static_cast<std::size_t>(x.size()) != net.input_dim()) {
    throw DimensionError("input has length " + std::to_string(x.size()) + ", network expects " +
                         std::to_string(net.input_dim()));
  }
}

struct ForwardResult {
  Vector output;
  std::vector<Vector> preactivations;  // z of every hidden layer
};

inline ForwardResult forward(const Network& net, const Vector& x) {
  check_input(net, x);
  ForwardResult result;
  result.preactivations.reserve(net.num_hidden());
  Vector h = x;
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    const auto& layer = net.layer(i);
    Vector z = layer.weight * h + layer.bias;
    if (net.activation_after(i)) {
      result.preactivations.push_back(z);
      h = z.unaryExpr([](double v) { return relu(v); });
    } else {
      result.output = std::move(z);
    }
  }
  return result;
}

/// Value taken by the ReLU derivative at exactly zero.
enum class ZeroRule { zero, one };

/// One element of the Clarke Jacobian at `x`:
/// W_n * D_{n-1} * W_{n-1} * ... * D_1 * W_1, with D chosen by pre-activation sign.
inline Matrix jacobian_at(const Network& net, const Vector& x, ZeroRule zero_rule = ZeroRule::one) {
  auto fwd = forward(net, x);
  const double at_zero = zero_rule == ZeroRule::one ? 1.0 : 0.0;
  Matrix jac = net.layer(0).weight;
  for (std::size_t h = 0; h < net.num_hidden(); ++h) {
    const Vector& z = fwd.preactivations[h];
    for (Eigen::Index j = 0; j < z.size(); ++j) {
      const double d = z(j) > 0.0 ? 1.0 : (z(j) < 0.0 ? 0.0 : at_zero);
      jac.row(j) *= d;
    }
    jac = (net.layer(h + 1).weight * jac).eval();
  }
  return jac;
}

/// Induced infinity norm: maximum absolute row sum.
inline double induced_inf_norm(const Eigen::Ref<const Matrix>& m) {
  if (m.rows() == 0) return 0.0;
  return m.cwiseAbs().rowwise().sum().maxCoeff();
}

// -- convolution lowering --------------------------------------------------

/// Input tensors are flattened row-major as (channel, row, column).
struct ConvSpec {
  // kernel[o][c][r][s], stored flat in that order
  std::vector<double> kernel;
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  Vector bias;
  std::array<std::size_t, 2> stride{1, 1};
  std::array<std::size_t, 2> padding{0, 0};
  std::array<std::size_t, 3> input_shape{0, 0, 0};  // channels, height, width

  double k(std::size_t o, std::size_t c, std::size_t r, std::size_t s) const {
    return kernel[((o * in_channels + c) * kernel_h + r) * kernel_w + s];
  }

  std::array<std::size_t, 3> output_shape() const {
    const auto [ch, height, width] = input_shape;
    (void)ch;
    const long oh = (static_cast<long>(height) + 2 * static_cast<long>(padding[0]) -
                     static_cast<long>(kernel_h)) /
                        static_cast<long>(stride[0]) +
                    1;
    const long ow = (static_cast<long>(width) + 2 * static_cast<long>(padding[1]) -
                     static_cast<long>(kernel_w)) /
                        static_cast<long>(stride[1]) +
                    1;
    if (kernel_h == 0 || kernel_w == 0 ||
        static_cast<long>(height) + 2 * static_cast<long>(padding[0]) < static_cast<long>(kernel_h) ||
        static_cast<long>(width) + 2 * static_cast<long>(padding[1]) < static_cast<long>(kernel_w) ||
        oh <= 0 || ow <= 0) {
      throw ModelError("convolution produces non-positive output size");
    }
    return {out_channels, static_cast<std::size_t>(oh), static_cast<std::size_t>(ow)};
  }

  void validate() const {
    if (stride[0] == 0 || stride[1] == 0) throw ModelError("convolution stride must be positive");
    if (kernel.size() != out_channels * in_channels * kernel_h * kernel_w) {
      throw ModelError("convolution kernel size does not match its declared shape");
    }
    if (static_cast<std::size_t>(bias.size()) != out_channels) {
      throw ModelError("convolution bias length " + std::to_string(bias.size()) +
                       " does not match output channels " + std::to_string(out_channels));
    }
    if (input_shape[0] != in_channels) {
      throw ModelError("convolution expects " + std::to_string(in_channels) +
                       " input channels, got " + std::to_string(input_shape[0]));
    }
    for (double v : kernel) {
      if (!std::isfinite(v)) throw ModelError("non-finite convolution kernel entry");
    }
    if (!bias.allFinite()) throw ModelError("non-finite convolution bias entry");
    (void)output_shape();
  }
};

inline AffineLayer lower_conv(const ConvSpec& spec) {
  spec.validate();
  const auto [in_c, in_h, in_w] = spec.input_shape;
  const auto [out_c, out_h, out_w] = spec.output_shape();

  AffineLayer layer;
  layer.weight = Matrix::Zero(static_cast<Eigen::Index>(out_c * out_h * out_w),
                              static_cast<Eigen::Index>(in_c * in_h * in_w));
  layer.bias.resize(static_cast<Eigen::Index>(out_c * out_h * out_w));

  const long pad_h = static_cast<long>(spec.padding[0]);
  const long pad_w = static_cast<long>(spec.padding[1]);
  for (std::size_t o = 0; o < out_c; ++o) {
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto row = static_cast<Eigen::Index>((o * out_h + y) * out_w + x);
        layer.bias(row) = spec.bias(static_cast<Eigen::Index>(o));
        for (std::size_t c = 0; c < in_c; ++c) {
          for (std::size_t r = 0; r < spec.kernel_h; ++r) {
            const long iy = static_cast<long>(y * spec.stride[0] + r) - pad_h;
            if (iy < 0 || iy >= static_cast<long>(in_h)) continue;
            for (std::size_t s = 0; s < spec.kernel_w; ++s) {
              const long ix = static_cast<long>(x * spec.stride[1] + s) - pad_w;
              if (ix < 0 || ix >= static_cast<long>(in_w)) continue;
              const auto col = static_cast<Eigen::Index>((c * in_h + static_cast<std::size_t>(iy)) * in_w +
                                                         static_cast<std::size_t>(ix));
              layer.weight(row, col) += spec.k(o, c, r, s);
            }
          }
        }
      }
    }
  }
  return layer;
}

}  // namespace lipcert
