#include "leafnet/layers.hpp"

#include <cmath>
#include <limits>

namespace leafnet {

std::string activation_name(Activation a) {
    switch (a) {
    case Activation::relu:
        return "relu";
    case Activation::sigmoid:
        return "sigmoid";
    case Activation::tanh:
        return "tanh";
    }
    return "unknown";
}

namespace {

void require_cache(bool present, const std::string& kind) {
    if (!present) {
        throw StateError(kind + ": backward called before forward");
    }
}

void require_same_shape(const Shape& a, const Shape& b, const std::string& what) {
    if (a != b) {
        throw DimensionError(what + ": expected " + shape_str(a) + ", got " + shape_str(b));
    }
}

} // namespace

// ---------------------------------------------------------------- linear

template <typename T>
LinearLayer<T>::LinearLayer(std::size_t in_dim, std::size_t out_dim)
    : LinearLayer(Tensor<T>({out_dim, in_dim}), Tensor<T>({out_dim})) {}

template <typename T>
LinearLayer<T>::LinearLayer(Tensor<T> weights, Tensor<T> bias)
    : weights_(std::move(weights)), bias_(std::move(bias)) {
    if (weights_.rank() != 2 || weights_.extent(0) == 0 || weights_.extent(1) == 0) {
        throw DimensionError("linear: weights must be a non-empty matrix, got " +
                             shape_str(weights_.shape()));
    }
    if (bias_.shape() != Shape{weights_.extent(0)}) {
        throw DimensionError("linear: bias " + shape_str(bias_.shape()) + " does not match " +
                             std::to_string(weights_.extent(0)) + " outputs");
    }
    weight_grad_ = Tensor<T>(weights_.shape());
    bias_grad_ = Tensor<T>(bias_.shape());
}

template <typename T>
Shape LinearLayer<T>::output_shape(const Shape& input) const {
    if (input.size() != 2 || input[0] != in_dim()) {
        throw DimensionError("linear: expected " + std::to_string(in_dim()) + " x B input, got " +
                             shape_str(input));
    }
    return {out_dim(), input[1]};
}

template <typename T>
Tensor<T> LinearLayer<T>::forward(const Tensor<T>& x, bool) {
    (void)output_shape(x.shape());
    input_ = x;
    return add_broadcast(matmul(weights_, x), bias_);
}

template <typename T>
Tensor<T> LinearLayer<T>::backward(const Tensor<T>& dzdy) {
    require_cache(input_.has_value(), "linear");
    const Tensor<T>& x = *input_;
    require_same_shape({out_dim(), x.extent(1)}, dzdy.shape(), "linear backward");
    weight_grad_ = matmul_nt(dzdy, x);
    const std::size_t batch = dzdy.extent(1);
    for (std::size_t o = 0; o < out_dim(); ++o) {
        T acc{};
        for (std::size_t b = 0; b < batch; ++b) {
            acc += dzdy[o * batch + b];
        }
        bias_grad_[o] = acc;
    }
    return matmul_tn(weights_, dzdy);
}

template <typename T>
std::vector<ParamRef<T>> LinearLayer<T>::parameters() {
    return {{"W", &weights_, &weight_grad_}, {"b", &bias_, &bias_grad_}};
}

template <typename T>
std::unique_ptr<Layer<T>> LinearLayer<T>::clone() const {
    auto copy = std::make_unique<LinearLayer<T>>(weights_, bias_);
    return copy;
}

// ---------------------------------------------------------------- conv

template <typename T>
ConvLayer<T>::ConvLayer(std::size_t kernel_rows, std::size_t kernel_cols, std::size_t in_maps,
                        std::size_t out_maps, Padding pad, std::size_t stride_rows,
                        std::size_t stride_cols)
    : kernels_({kernel_rows, kernel_cols, in_maps, out_maps}),
      bias_({out_maps}),
      kernel_grad_({kernel_rows, kernel_cols, in_maps, out_maps}),
      bias_grad_({out_maps}),
      pad_(pad),
      stride_rows_(stride_rows),
      stride_cols_(stride_cols) {
    if (kernel_rows == 0 || kernel_cols == 0 || in_maps == 0 || out_maps == 0) {
        throw DimensionError("conv: kernel extents and map counts must be at least 1");
    }
    if (stride_rows == 0 || stride_cols == 0) {
        throw DimensionError("conv: stride must be at least 1");
    }
}

template <typename T>
ConvGeometry ConvLayer<T>::geometry_for(std::size_t in_rows, std::size_t in_cols) const {
    return ConvGeometry{in_rows, in_cols, kernels_.extent(0), kernels_.extent(1),
                        pad_,    stride_rows_, stride_cols_};
}

template <typename T>
std::size_t ConvLayer<T>::fan_in() const {
    return kernels_.extent(0) * kernels_.extent(1) * kernels_.extent(2);
}

template <typename T>
Shape ConvLayer<T>::output_shape(const Shape& input) const {
    if (input.size() != 4 || input[2] != in_maps()) {
        throw DimensionError("conv: expected H x W x " + std::to_string(in_maps()) +
                             " x B input, got " + shape_str(input));
    }
    const ConvGeometry g = geometry_for(input[0], input[1]);
    return {g.out_rows(), g.out_cols(), out_maps(), input[3]};
}

template <typename T>
Tensor<T> ConvLayer<T>::forward(const Tensor<T>& x, bool) {
    const Shape out_shape = output_shape(x.shape());
    const ConvGeometry g = geometry_for(x.extent(0), x.extent(1));
    const std::size_t h = g.in_rows;
    const std::size_t w = g.in_cols;
    const std::size_t kh = g.kernel_rows;
    const std::size_t kw = g.kernel_cols;
    const std::size_t cin = in_maps();
    const std::size_t cout = out_maps();
    const std::size_t batch = x.extent(3);
    const std::size_t nr = next_pow2(g.padded_rows() + kh - 1);
    const std::size_t nc = next_pow2(g.padded_cols() + kw - 1);
    if (!plan_ || plan_->rows() != nr || plan_->cols() != nc) {
        plan_.emplace(nr, nc);
    }
    input_shape_ = x.shape();

    input_spectra_.assign(cin * batch, ComplexBuffer<T>(nr, nc));
    for (std::size_t i = 0; i < cin; ++i) {
        for (std::size_t b = 0; b < batch; ++b) {
            ComplexBuffer<T>& buf = input_spectra_[i * batch + b];
            for (std::size_t r = 0; r < h; ++r) {
                for (std::size_t c = 0; c < w; ++c) {
                    buf.real[(r + g.pad.top) * nc + c + g.pad.left] =
                        x[((r * w + c) * cin + i) * batch + b];
                }
            }
            plan_->forward(buf);
        }
    }
    kernel_spectra_.assign(cin * cout, ComplexBuffer<T>(nr, nc));
    for (std::size_t i = 0; i < cin; ++i) {
        for (std::size_t o = 0; o < cout; ++o) {
            ComplexBuffer<T>& buf = kernel_spectra_[i * cout + o];
            for (std::size_t p = 0; p < kh; ++p) {
                for (std::size_t q = 0; q < kw; ++q) {
                    buf.real[p * nc + q] = kernels_[((p * kw + q) * cin + i) * cout + o];
                }
            }
            plan_->forward(buf);
        }
    }

    const std::size_t oh = out_shape[0];
    const std::size_t ow = out_shape[1];
    Tensor<T> y(out_shape);
    ComplexBuffer<T> acc(nr, nc);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t o = 0; o < cout; ++o) {
            acc.clear();
            for (std::size_t i = 0; i < cin; ++i) {
                multiply_accumulate(acc, input_spectra_[i * batch + b],
                                    kernel_spectra_[i * cout + o], false);
            }
            plan_->inverse(acc);
            for (std::size_t r = 0; r < oh; ++r) {
                for (std::size_t c = 0; c < ow; ++c) {
                    const std::size_t src =
                        (kh - 1 + r * stride_rows_) * nc + (kw - 1 + c * stride_cols_);
                    y[((r * ow + c) * cout + o) * batch + b] = acc.real[src] + bias_[o];
                }
            }
        }
    }
    return y;
}

template <typename T>
Tensor<T> ConvLayer<T>::backward(const Tensor<T>& dzdy) {
    require_cache(plan_.has_value() && !input_spectra_.empty(), "conv");
    const Shape out_shape = output_shape(input_shape_);
    require_same_shape(out_shape, dzdy.shape(), "conv backward");
    const ConvGeometry g = geometry_for(input_shape_[0], input_shape_[1]);
    const std::size_t h = g.in_rows;
    const std::size_t w = g.in_cols;
    const std::size_t kh = g.kernel_rows;
    const std::size_t kw = g.kernel_cols;
    const std::size_t cin = in_maps();
    const std::size_t cout = out_maps();
    const std::size_t batch = input_shape_[3];
    const std::size_t oh = out_shape[0];
    const std::size_t ow = out_shape[1];
    const std::size_t nr = plan_->rows();
    const std::size_t nc = plan_->cols();

    std::vector<ComplexBuffer<T>> dy_spectra(cout * batch, ComplexBuffer<T>(nr, nc));
    for (std::size_t o = 0; o < cout; ++o) {
        T bias_acc{};
        for (std::size_t b = 0; b < batch; ++b) {
            ComplexBuffer<T>& buf = dy_spectra[o * batch + b];
            for (std::size_t r = 0; r < oh; ++r) {
                for (std::size_t c = 0; c < ow; ++c) {
                    const T v = dzdy[((r * ow + c) * cout + o) * batch + b];
                    buf.real[(r * stride_rows_) * nc + c * stride_cols_] = v;
                    bias_acc += v;
                }
            }
            plan_->forward(buf);
        }
        bias_grad_[o] = bias_acc;
    }

    ComplexBuffer<T> acc(nr, nc);
    for (std::size_t i = 0; i < cin; ++i) {
        for (std::size_t o = 0; o < cout; ++o) {
            acc.clear();
            for (std::size_t b = 0; b < batch; ++b) {
                multiply_accumulate(acc, input_spectra_[i * batch + b], dy_spectra[o * batch + b],
                                    true);
            }
            plan_->inverse(acc);
            for (std::size_t p = 0; p < kh; ++p) {
                for (std::size_t q = 0; q < kw; ++q) {
                    kernel_grad_[((p * kw + q) * cin + i) * cout + o] =
                        acc.real[(kh - 1 - p) * nc + (kw - 1 - q)];
                }
            }
        }
    }

    Tensor<T> dzdx(input_shape_);
    for (std::size_t i = 0; i < cin; ++i) {
        for (std::size_t b = 0; b < batch; ++b) {
            acc.clear();
            for (std::size_t o = 0; o < cout; ++o) {
                multiply_accumulate(acc, dy_spectra[o * batch + b], kernel_spectra_[i * cout + o],
                                    true);
            }
            plan_->inverse(acc);
            // Padded row a reads circular lag (a - kh + 1) mod nr.
            for (std::size_t r = 0; r < h; ++r) {
                const std::size_t sr = (r + g.pad.top + nr - (kh - 1)) % nr;
                for (std::size_t c = 0; c < w; ++c) {
                    const std::size_t sc = (c + g.pad.left + nc - (kw - 1)) % nc;
                    dzdx[((r * w + c) * cin + i) * batch + b] = acc.real[sr * nc + sc];
                }
            }
        }
    }
    return dzdx;
}

template <typename T>
std::vector<ParamRef<T>> ConvLayer<T>::parameters() {
    return {{"k", &kernels_, &kernel_grad_}, {"b", &bias_, &bias_grad_}};
}

template <typename T>
std::unique_ptr<Layer<T>> ConvLayer<T>::clone() const {
    auto copy = std::make_unique<ConvLayer<T>>(kernels_.extent(0), kernels_.extent(1), in_maps(),
                                               out_maps(), pad_, stride_rows_, stride_cols_);
    copy->kernels() = kernels_;
    copy->bias() = bias_;
    return copy;
}

// ---------------------------------------------------------------- max-pool

template <typename T>
MaxPoolLayer<T>::MaxPoolLayer(WindowSpec spec) : spec_(spec) {
    if (spec.rows == 0 || spec.cols == 0 || spec.stride_rows == 0 || spec.stride_cols == 0) {
        throw DimensionError("maxpool: window and stride extents must be at least 1");
    }
    if (spec.pad.top >= spec.rows || spec.pad.bottom >= spec.rows || spec.pad.left >= spec.cols ||
        spec.pad.right >= spec.cols) {
        throw DimensionError("maxpool: padding as large as the window admits all-padding windows");
    }
}

template <typename T>
Shape MaxPoolLayer<T>::output_shape(const Shape& input) const {
    if (input.size() != 4) {
        throw DimensionError("maxpool: expected H x W x C x N input, got " + shape_str(input));
    }
    const std::size_t oh = spec_.out_rows(input[0]);
    const std::size_t ow = spec_.out_cols(input[1]);
    // The last window must still overlap the input.
    if ((oh - 1) * spec_.stride_rows >= input[0] + spec_.pad.top ||
        (ow - 1) * spec_.stride_cols >= input[1] + spec_.pad.left) {
        throw DimensionError("maxpool: geometry produces an all-padding window for input " +
                             shape_str(input));
    }
    return {oh, ow, input[2], input[3]};
}

template <typename T>
Tensor<T> MaxPoolLayer<T>::forward(const Tensor<T>& x, bool) {
    const Shape out_shape = output_shape(x.shape());
    const PatchColumns<T> patches =
        im2col_pool(x, spec_, -std::numeric_limits<T>::infinity());
    const std::size_t window = patches.columns.extent(0);
    const std::size_t cols = patches.columns.extent(1);

    Tensor<T> y(out_shape);
    from_ = IndexTensor(out_shape);
    const T* colv = patches.columns.data().data();
    const std::int64_t* idx = patches.source_indices.data().data();
    for (std::size_t j = 0; j < cols; ++j) {
        y[j] = colv[j];
        from_[j] = idx[j];
    }
    for (std::size_t r = 1; r < window; ++r) {
        for (std::size_t j = 0; j < cols; ++j) {
            const T v = colv[r * cols + j];
            if (v > y[j]) {
                y[j] = v;
                from_[j] = idx[r * cols + j];
            }
        }
    }
    input_shape_ = x.shape();
    has_cache_ = true;
    return y;
}

template <typename T>
Tensor<T> MaxPoolLayer<T>::backward(const Tensor<T>& dzdy) {
    require_cache(has_cache_, "maxpool");
    require_same_shape(from_.shape(), dzdy.shape(), "maxpool backward");
    return scatter_accumulate(input_shape_, from_, dzdy);
}

template <typename T>
std::unique_ptr<Layer<T>> MaxPoolLayer<T>::clone() const {
    return std::make_unique<MaxPoolLayer<T>>(spec_);
}

// ---------------------------------------------------------------- activations

template <typename T>
T sigmoid(T x) {
    if (x >= T{}) {
        return T{1} / (T{1} + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T{1} + e);
}

template <typename T>
Tensor<T> relu_forward(const Tensor<T>& x) {
    return map(x, [](T v) { return v > T{} ? v : T{}; });
}

template <typename T>
Tensor<T> relu_backward(const Tensor<T>& x, const Tensor<T>& dzdy) {
    require_same_shape(x.shape(), dzdy.shape(), "relu backward");
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = x[i] > T{} ? dzdy[i] : T{};
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid_forward(const Tensor<T>& x) {
    return map(x, [](T v) { return sigmoid(v); });
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& y, const Tensor<T>& dzdy) {
    require_same_shape(y.shape(), dzdy.shape(), "sigmoid backward");
    Tensor<T> out(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
        out[i] = dzdy[i] * y[i] * (T{1} - y[i]);
    }
    return out;
}

template <typename T>
Tensor<T> tanh_forward(const Tensor<T>& x) {
    return map(x, [](T v) { return std::tanh(v); });
}

template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& y, const Tensor<T>& dzdy) {
    require_same_shape(y.shape(), dzdy.shape(), "tanh backward");
    Tensor<T> out(y.shape());
    for (std::size_t i = 0; i < y.size(); ++i) {
        out[i] = dzdy[i] * (T{1} - y[i] * y[i]);
    }
    return out;
}

template <typename T>
Tensor<T> ActivationLayer<T>::forward(const Tensor<T>& x, bool) {
    switch (fn_) {
    case Activation::relu:
        cache_ = x;
        return relu_forward(x);
    case Activation::sigmoid:
        cache_ = sigmoid_forward(x);
        return *cache_;
    case Activation::tanh:
        cache_ = tanh_forward(x);
        return *cache_;
    }
    throw StateError("unknown activation");
}

template <typename T>
Tensor<T> ActivationLayer<T>::backward(const Tensor<T>& dzdy) {
    require_cache(cache_.has_value(), kind());
    switch (fn_) {
    case Activation::relu:
        return relu_backward(*cache_, dzdy);
    case Activation::sigmoid:
        return sigmoid_backward(*cache_, dzdy);
    case Activation::tanh:
        return tanh_backward(*cache_, dzdy);
    }
    throw StateError("unknown activation");
}

template <typename T>
std::unique_ptr<Layer<T>> ActivationLayer<T>::clone() const {
    return std::make_unique<ActivationLayer<T>>(fn_);
}

// ---------------------------------------------------------------- flatten

template <typename T>
Shape FlattenLayer<T>::output_shape(const Shape& input) const {
    if (input.size() < 2) {
        throw DimensionError("flatten: expected at least rank 2, got " + shape_str(input));
    }
    const std::size_t batch = input.back();
    return {element_count(input) / (batch == 0 ? 1 : batch), batch};
}

template <typename T>
Tensor<T> FlattenLayer<T>::forward(const Tensor<T>& x, bool) {
    input_shape_ = x.shape();
    return x.reshaped(output_shape(x.shape()));
}

template <typename T>
Tensor<T> FlattenLayer<T>::backward(const Tensor<T>& dzdy) {
    require_cache(!input_shape_.empty(), "flatten");
    return dzdy.reshaped(input_shape_);
}

template <typename T>
std::unique_ptr<Layer<T>> FlattenLayer<T>::clone() const {
    return std::make_unique<FlattenLayer<T>>();
}

// ---------------------------------------------------------------- loss

template <typename T>
std::size_t argmax_column(const Tensor<T>& m, std::size_t col) {
    const std::size_t k = m.extent(0);
    const std::size_t batch = m.extent(1);
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
        if (m[c * batch + col] > m[best * batch + col]) {
            best = c;
        }
    }
    return best;
}

template <typename T>
T SoftmaxLogLoss<T>::forward(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
    if (logits.rank() != 2 || logits.extent(1) != labels.size() || labels.empty()) {
        throw DimensionError("softmax log-loss: logits " + shape_str(logits.shape()) + " for " +
                             std::to_string(labels.size()) + " labels");
    }
    const std::size_t k = logits.extent(0);
    const std::size_t batch = logits.extent(1);
    for (std::int32_t label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= k) {
            throw IndexError("softmax log-loss: label " + std::to_string(label) +
                             " outside [0, " + std::to_string(k) + ")");
        }
    }
    probs_ = Tensor<T>(logits.shape());
    labels_.assign(labels.begin(), labels.end());
    T total{};
    for (std::size_t b = 0; b < batch; ++b) {
        T peak = logits[b];
        for (std::size_t c = 1; c < k; ++c) {
            peak = std::max(peak, logits[c * batch + b]);
        }
        T sum{};
        for (std::size_t c = 0; c < k; ++c) {
            const T e = std::exp(logits[c * batch + b] - peak);
            probs_[c * batch + b] = e;
            sum += e;
        }
        for (std::size_t c = 0; c < k; ++c) {
            probs_[c * batch + b] /= sum;
        }
        const auto label = static_cast<std::size_t>(labels[b]);
        total -= logits[label * batch + b] - peak - std::log(sum);
    }
    return total / static_cast<T>(batch);
}

template <typename T>
Tensor<T> SoftmaxLogLoss<T>::backward() const {
    if (labels_.empty()) {
        throw StateError("softmax log-loss: backward called before forward");
    }
    const std::size_t batch = probs_.extent(1);
    Tensor<T> grad = probs_;
    for (std::size_t b = 0; b < batch; ++b) {
        grad[static_cast<std::size_t>(labels_[b]) * batch + b] -= T{1};
    }
    const T scale = T{1} / static_cast<T>(batch);
    for (T& v : grad.data()) {
        v *= scale;
    }
    return grad;
}

template <typename T>
std::size_t SoftmaxLogLoss<T>::errors() const {
    std::size_t wrong = 0;
    for (std::size_t b = 0; b < labels_.size(); ++b) {
        if (argmax_column(probs_, b) != static_cast<std::size_t>(labels_[b])) {
            ++wrong;
        }
    }
    return wrong;
}

#define LEAFNET_INSTANTIATE_LAYERS(T)                                          \
    template class LinearLayer<T>;                                             \
    template class ConvLayer<T>;                                               \
    template class MaxPoolLayer<T>;                                            \
    template class ActivationLayer<T>;                                         \
    template class FlattenLayer<T>;                                            \
    template class SoftmaxLogLoss<T>;                                          \
    template T sigmoid(T);                                                     \
    template Tensor<T> relu_forward(const Tensor<T>&);                         \
    template Tensor<T> relu_backward(const Tensor<T>&, const Tensor<T>&);      \
    template Tensor<T> sigmoid_forward(const Tensor<T>&);                      \
    template Tensor<T> sigmoid_backward(const Tensor<T>&, const Tensor<T>&);   \
    template Tensor<T> tanh_forward(const Tensor<T>&);                         \
    template Tensor<T> tanh_backward(const Tensor<T>&, const Tensor<T>&);      \
    template std::size_t argmax_column(const Tensor<T>&, std::size_t);

LEAFNET_INSTANTIATE_LAYERS(float)
LEAFNET_INSTANTIATE_LAYERS(double)

} // namespace leafnet
