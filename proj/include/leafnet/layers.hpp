#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "leafnet/fft.hpp"
#include "leafnet/patches.hpp"
#include "leafnet/tensor.hpp"

namespace leafnet {

/// Non-owning view of one trainable tensor and its gradient.
template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* value = nullptr;
    Tensor<T>* grad = nullptr;
};

/// Uniform forward/backward contract. forward() caches what backward() needs,
/// so backward() must follow a forward() on the same instance. backward()
/// overwrites the parameter gradients; it never accumulates across calls.
template <typename T>
class Layer {
public:
    virtual ~Layer() = default;

    virtual std::string kind() const = 0;
    virtual Tensor<T> forward(const Tensor<T>& x, bool train = true) = 0;
    virtual Tensor<T> backward(const Tensor<T>& dzdy) = 0;
    virtual std::vector<ParamRef<T>> parameters() { return {}; }
    /// Shape produced for a given input shape; throws DimensionError if the
    /// input cannot be consumed.
    virtual Shape output_shape(const Shape& input) const = 0;
    virtual std::unique_ptr<Layer> clone() const = 0;
    /// Inputs feeding each output unit, for weight initialization. 0 for
    /// layers without weights.
    virtual std::size_t fan_in() const { return 0; }
};

/// y = W x + b over a batch of columns: x is in_dim x B.
template <typename T>
class LinearLayer final : public Layer<T> {
public:
    LinearLayer(std::size_t in_dim, std::size_t out_dim);
    LinearLayer(Tensor<T> weights, Tensor<T> bias);

    std::string kind() const override { return "linear"; }
    Tensor<T> forward(const Tensor<T>& x, bool train = true) override;
    Tensor<T> backward(const Tensor<T>& dzdy) override;
    std::vector<ParamRef<T>> parameters() override;
    Shape output_shape(const Shape& input) const override;
    std::unique_ptr<Layer<T>> clone() const override;
    std::size_t fan_in() const override { return in_dim(); }

    std::size_t in_dim() const { return weights_.extent(1); }
    std::size_t out_dim() const { return weights_.extent(0); }
    Tensor<T>& weights() { return weights_; }
    Tensor<T>& bias() { return bias_; }
    const Tensor<T>& weight_grad() const { return weight_grad_; }
    const Tensor<T>& bias_grad() const { return bias_grad_; }

private:
    Tensor<T> weights_;
    Tensor<T> bias_;
    Tensor<T> weight_grad_;
    Tensor<T> bias_grad_;
    std::optional<Tensor<T>> input_;
};

/// Multi-map 2-D convolution over H x W x Cin x B input:
///   y_o = sum_i k_io * x_i + b_o
/// where * is true (kernel-flipped) convolution, evaluated in the frequency
/// domain. Kernels are stored as Kh x Kw x Cin x Cout.
///
/// Backward, with dy_o upsampled by the stride into the stride-1 grid:
///   dx_i  = sum_o corr(dy_o, k_io), cropped back to the unpadded input
///   dk_io = flip(corr(x_i, dy_o))
///   db_o  = sum of dy_o
template <typename T>
class ConvLayer final : public Layer<T> {
public:
    ConvLayer(std::size_t kernel_rows, std::size_t kernel_cols, std::size_t in_maps,
              std::size_t out_maps, Padding pad = {}, std::size_t stride_rows = 1,
              std::size_t stride_cols = 1);

    std::string kind() const override { return "conv"; }
    Tensor<T> forward(const Tensor<T>& x, bool train = true) override;
    Tensor<T> backward(const Tensor<T>& dzdy) override;
    std::vector<ParamRef<T>> parameters() override;
    Shape output_shape(const Shape& input) const override;
    std::unique_ptr<Layer<T>> clone() const override;
    std::size_t fan_in() const override;

    Tensor<T>& kernels() { return kernels_; }
    Tensor<T>& bias() { return bias_; }
    const Tensor<T>& kernel_grad() const { return kernel_grad_; }
    const Tensor<T>& bias_grad() const { return bias_grad_; }
    ConvGeometry geometry_for(std::size_t in_rows, std::size_t in_cols) const;

private:
    std::size_t in_maps() const { return kernels_.extent(2); }
    std::size_t out_maps() const { return kernels_.extent(3); }

    Tensor<T> kernels_;
    Tensor<T> bias_;
    Tensor<T> kernel_grad_;
    Tensor<T> bias_grad_;
    Padding pad_;
    std::size_t stride_rows_;
    std::size_t stride_cols_;

    // Per-forward cache.
    Shape input_shape_;
    std::optional<Fft2d<T>> plan_;
    std::vector<ComplexBuffer<T>> input_spectra_;  // [i * B + b]
    std::vector<ComplexBuffer<T>> kernel_spectra_; // [i * Cout + o]
};

/// Max over sliding windows of each map. Padding cells behave as -infinity
/// and are never selected. Ties go to the first cell in window raster order.
template <typename T>
class MaxPoolLayer final : public Layer<T> {
public:
    explicit MaxPoolLayer(WindowSpec spec);

    std::string kind() const override { return "maxpool"; }
    Tensor<T> forward(const Tensor<T>& x, bool train = true) override;
    Tensor<T> backward(const Tensor<T>& dzdy) override;
    Shape output_shape(const Shape& input) const override;
    std::unique_ptr<Layer<T>> clone() const override;

    /// Flat input offset of each selected maximum ("from"), output-shaped.
    const IndexTensor& source_indices() const { return from_; }

private:
    WindowSpec spec_;
    Shape input_shape_;
    IndexTensor from_;
    bool has_cache_ = false;
};

enum class Activation { relu, sigmoid, tanh };

std::string activation_name(Activation a);

/// Elementwise nonlinearity. relu'(0) is taken as 0.
template <typename T>
class ActivationLayer final : public Layer<T> {
public:
    explicit ActivationLayer(Activation fn) : fn_(fn) {}

    std::string kind() const override { return activation_name(fn_); }
    Tensor<T> forward(const Tensor<T>& x, bool train = true) override;
    Tensor<T> backward(const Tensor<T>& dzdy) override;
    Shape output_shape(const Shape& input) const override { return input; }
    std::unique_ptr<Layer<T>> clone() const override;

    Activation function() const { return fn_; }

private:
    Activation fn_;
    std::optional<Tensor<T>> cache_; // input for relu, output otherwise
};

/// d0 x ... x dk x N  ->  (d0*...*dk) x N. Free, given the row-major layout.
template <typename T>
class FlattenLayer final : public Layer<T> {
public:
    std::string kind() const override { return "flatten"; }
    Tensor<T> forward(const Tensor<T>& x, bool train = true) override;
    Tensor<T> backward(const Tensor<T>& dzdy) override;
    Shape output_shape(const Shape& input) const override;
    std::unique_ptr<Layer<T>> clone() const override;

private:
    Shape input_shape_;
};

/// Numerically stable scalar activations, shared with the recurrent model.
template <typename T>
T sigmoid(T x);

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dzdy);
template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dzdy);
template <typename T>
Tensor<T> tanh_forward(const Tensor<T>& x);
template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& dzdy);

/// Mean negative log-likelihood of integer labels under softmax(logits),
/// logits K x B. The 1/B normalization lives here and nowhere else.
template <typename T>
class SoftmaxLogLoss {
public:
    T forward(const Tensor<T>& logits, std::span<const std::int32_t> labels);
    /// (softmax - onehot) / B for the last forward().
    Tensor<T> backward() const;

    const Tensor<T>& probabilities() const { return probs_; }
    /// Top-1 mistakes in the last forward(); ties resolve to the lowest class.
    std::size_t errors() const;

private:
    Tensor<T> probs_;
    std::vector<std::int32_t> labels_;
};

/// First index of the maximum of column `col` in a K x B matrix.
template <typename T>
std::size_t argmax_column(const Tensor<T>& m, std::size_t col);

} // namespace leafnet
