#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "leafnet/error.hpp"

namespace leafnet {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

inline std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

/// Dense row-major N-dimensional array. The last axis is contiguous.
///
/// Mini-batches of images use the H x W x C x N layout, so a batch item is
/// the fastest-varying index and flattening to (H*W*C) x N is a reshape.
template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;

    explicit Tensor(Shape shape, T fill = T{})
        : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

    Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (element_count(shape_) != data_.size()) {
            throw DimensionError("tensor shape " + shape_str(shape_) + " needs " +
                                 std::to_string(element_count(shape_)) + " elements, got " +
                                 std::to_string(data_.size()));
        }
    }

    /// 2-D tensor from nested rows.
    static Tensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
        const std::size_t r = rows.size();
        const std::size_t c = r == 0 ? 0 : rows.begin()->size();
        std::vector<T> data;
        data.reserve(r * c);
        for (const auto& row : rows) {
            if (row.size() != c) {
                throw DimensionError("ragged rows in Tensor::matrix");
            }
            data.insert(data.end(), row.begin(), row.end());
        }
        return Tensor({r, c}, std::move(data));
    }

    static Tensor vector(std::initializer_list<T> values) {
        return Tensor({values.size()}, std::vector<T>(values));
    }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::size_t extent(std::size_t axis) const {
        if (axis >= shape_.size()) {
            throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                                 shape_str(shape_));
        }
        return shape_[axis];
    }

    std::span<T> data() { return data_; }
    std::span<const T> data() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    T& operator[](std::size_t flat) { return data_[flat]; }
    const T& operator[](std::size_t flat) const { return data_[flat]; }

    std::size_t offset(std::span<const std::size_t> index) const {
        if (index.size() != shape_.size()) {
            throw DimensionError("index rank " + std::to_string(index.size()) +
                                 " does not match shape " + shape_str(shape_));
        }
        std::size_t flat = 0;
        for (std::size_t a = 0; a < shape_.size(); ++a) {
            if (index[a] >= shape_[a]) {
                throw IndexError("index " + std::to_string(index[a]) + " out of range on axis " +
                                 std::to_string(a) + " of shape " + shape_str(shape_));
            }
            flat = flat * shape_[a] + index[a];
        }
        return flat;
    }

    std::size_t offset(std::initializer_list<std::size_t> index) const {
        return offset(std::span<const std::size_t>(index.begin(), index.size()));
    }

    /// Inverse of offset().
    std::vector<std::size_t> unravel(std::size_t flat) const {
        std::vector<std::size_t> index(shape_.size());
        for (std::size_t a = shape_.size(); a-- > 0;) {
            index[a] = flat % shape_[a];
            flat /= shape_[a];
        }
        return index;
    }

    T& at(std::initializer_list<std::size_t> index) { return data_[offset(index)]; }
    const T& at(std::initializer_list<std::size_t> index) const { return data_[offset(index)]; }

    Tensor reshaped(Shape shape) const& {
        Tensor out = *this;
        out.reshape(std::move(shape));
        return out;
    }

    Tensor reshaped(Shape shape) && {
        reshape(std::move(shape));
        return std::move(*this);
    }

    void reshape(Shape shape) {
        if (element_count(shape) != data_.size()) {
            throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
        }
        shape_ = std::move(shape);
    }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(data_.size());
        std::transform(data_.begin(), data_.end(), out.begin(),
                       [](T v) { return static_cast<U>(v); });
        return Tensor<U>(shape_, std::move(out));
    }

    friend bool operator==(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.data_ == b.data_;
    }

private:
    Shape shape_;
    std::vector<T> data_;
};

using IndexTensor = Tensor<std::int64_t>;

inline constexpr std::int64_t kPaddingIndex = -1;

/// Bytewise comparison, distinguishing -0.0 from 0.0 and matching NaN payloads.
template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
    return a.shape() == b.shape() &&
           std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(T)) == 0;
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
        throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " +
                             shape_str(b.shape()));
    }
    const std::size_t m = a.extent(0);
    const std::size_t k = a.extent(1);
    const std::size_t n = b.extent(1);
    Tensor<T> c({m, n});
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* pc = c.data().data();
    // i-k-j order: each output element accumulates over k in increasing order.
    for (std::size_t i = 0; i < m; ++i) {
        T* crow = pc + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const T aik = pa[i * k + kk];
            const T* brow = pb + kk * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += aik * brow[j];
            }
        }
    }
    return c;
}

/// a^T * b without materializing the transpose.
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(0) != b.extent(0)) {
        throw DimensionError("matmul_tn: cannot multiply transpose of " + shape_str(a.shape()) +
                             " by " + shape_str(b.shape()));
    }
    const std::size_t k = a.extent(0);
    const std::size_t m = a.extent(1);
    const std::size_t n = b.extent(1);
    Tensor<T> c({m, n});
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* pc = c.data().data();
    for (std::size_t kk = 0; kk < k; ++kk) {
        const T* brow = pb + kk * n;
        for (std::size_t i = 0; i < m; ++i) {
            const T aki = pa[kk * m + i];
            T* crow = pc + i * n;
            for (std::size_t j = 0; j < n; ++j) {
                crow[j] += aki * brow[j];
            }
        }
    }
    return c;
}

/// a * b^T without materializing the transpose.
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(1)) {
        throw DimensionError("matmul_nt: cannot multiply " + shape_str(a.shape()) +
                             " by transpose of " + shape_str(b.shape()));
    }
    const std::size_t m = a.extent(0);
    const std::size_t k = a.extent(1);
    const std::size_t n = b.extent(0);
    Tensor<T> c({m, n});
    const T* pa = a.data().data();
    const T* pb = b.data().data();
    T* pc = c.data().data();
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = pa + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const T* brow = pb + j * k;
            T acc{};
            for (std::size_t kk = 0; kk < k; ++kk) {
                acc += arow[kk] * brow[kk];
            }
            pc[i * n + j] = acc;
        }
    }
    return c;
}

/// Axis permutation: out.shape[a] = x.shape[axes[a]].
template <typename T>
Tensor<T> permute(const Tensor<T>& x, std::span<const std::size_t> axes) {
    const std::size_t r = x.rank();
    if (axes.size() != r) {
        throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " +
                             shape_str(x.shape()));
    }
    std::vector<bool> seen(r, false);
    Shape out_shape(r);
    for (std::size_t a = 0; a < r; ++a) {
        if (axes[a] >= r || seen[axes[a]]) {
            throw DimensionError("permute: invalid axis list for shape " + shape_str(x.shape()));
        }
        seen[axes[a]] = true;
        out_shape[a] = x.shape()[axes[a]];
    }
    // Source strides, reordered to follow the output axes.
    std::vector<std::size_t> src_stride(r, 1);
    for (std::size_t a = r; a-- > 1;) {
        src_stride[a - 1] = src_stride[a] * x.shape()[a];
    }
    std::vector<std::size_t> stride(r);
    for (std::size_t a = 0; a < r; ++a) {
        stride[a] = src_stride[axes[a]];
    }
    Tensor<T> out(out_shape);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < out.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t a = 0; a < r; ++a) {
            src += idx[a] * stride[a];
        }
        out[flat] = x[src];
        for (std::size_t a = r; a-- > 0;) {
            if (++idx[a] < out_shape[a]) {
                break;
            }
            idx[a] = 0;
        }
    }
    return out;
}

/// Reverses all axes (plain matrix transpose for rank 2).
template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
    std::vector<std::size_t> axes(x.rank());
    for (std::size_t a = 0; a < axes.size(); ++a) {
        axes[a] = axes.size() - 1 - a;
    }
    return permute(x, axes);
}

template <typename T, typename F>
Tensor<T> map(const Tensor<T>& x, F&& f) {
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = f(x[i]);
    }
    return out;
}

/// x + bias with bias broadcast along its extent-1 axes. A lower-rank bias is
/// aligned to the leading axes of x (trailing extent-1 axes are implied), so a
/// length-`out` bias adds to every column of an out x B matrix.
template <typename T>
Tensor<T> add_broadcast(const Tensor<T>& x, const Tensor<T>& bias) {
    if (bias.rank() > x.rank()) {
        throw DimensionError("add_broadcast: bias " + shape_str(bias.shape()) +
                             " has higher rank than " + shape_str(x.shape()));
    }
    Shape b_shape = bias.shape();
    b_shape.resize(x.rank(), 1);
    for (std::size_t a = 0; a < x.rank(); ++a) {
        if (b_shape[a] != x.shape()[a] && b_shape[a] != 1) {
            throw DimensionError("add_broadcast: cannot broadcast " + shape_str(bias.shape()) +
                                 " over " + shape_str(x.shape()));
        }
    }
    const std::size_t r = x.rank();
    std::vector<std::size_t> b_stride(r, 0);
    std::size_t s = 1;
    for (std::size_t a = r; a-- > 0;) {
        b_stride[a] = b_shape[a] == 1 ? 0 : s;
        s *= b_shape[a];
    }
    Tensor<T> out(x.shape());
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < x.size(); ++flat) {
        std::size_t src = 0;
        for (std::size_t a = 0; a < r; ++a) {
            src += idx[a] * b_stride[a];
        }
        out[flat] = x[flat] + bias[src];
        for (std::size_t a = r; a-- > 0;) {
            if (++idx[a] < x.shape()[a]) {
                break;
            }
            idx[a] = 0;
        }
    }
    return out;
}

/// In-place y += alpha * x.
template <typename T>
void axpy(T alpha, const Tensor<T>& x, Tensor<T>& y) {
    if (x.shape() != y.shape()) {
        throw DimensionError("axpy: shape " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        y[i] += alpha * x[i];
    }
}

template <typename T>
T max_abs(const Tensor<T>& x) {
    T m{};
    for (T v : x.data()) {
        m = std::max(m, v < T{} ? -v : v);
    }
    return m;
}

} // namespace leafnet
