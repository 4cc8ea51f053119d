#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>

#include "leafnet/tensor.hpp"

namespace leafnet {

struct Padding {
    std::size_t top = 0;
    std::size_t bottom = 0;
    std::size_t left = 0;
    std::size_t right = 0;

    static Padding uniform(std::size_t p) { return {p, p, p, p}; }
    friend bool operator==(const Padding&, const Padding&) = default;
};

/// Number of window positions along one axis:
/// floor((n + pad_lo + pad_hi - window) / stride) + 1.
inline std::size_t sliding_extent(std::size_t n, std::size_t pad_lo, std::size_t pad_hi,
                                  std::size_t window, std::size_t stride) {
    if (window == 0 || stride == 0) {
        throw DimensionError("window and stride must be at least 1");
    }
    const std::size_t padded = n + pad_lo + pad_hi;
    if (n == 0 || padded < window) {
        throw DimensionError("window of " + std::to_string(window) +
                             " does not fit padded extent " + std::to_string(padded));
    }
    return (padded - window) / stride + 1;
}

/// Sliding-window geometry shared by pooling and patch extraction.
struct WindowSpec {
    std::size_t rows = 1;
    std::size_t cols = 1;
    std::size_t stride_rows = 1;
    std::size_t stride_cols = 1;
    Padding pad{};

    std::size_t out_rows(std::size_t in_rows) const {
        return sliding_extent(in_rows, pad.top, pad.bottom, rows, stride_rows);
    }
    std::size_t out_cols(std::size_t in_cols) const {
        return sliding_extent(in_cols, pad.left, pad.right, cols, stride_cols);
    }
};

template <typename T>
struct PatchColumns {
    /// (rows*cols) x L, one window per column; L = out_rows*out_cols*C*N in
    /// the row-major order of an out_rows x out_cols x C x N tensor.
    Tensor<T> columns;
    /// Same shape as columns. Flat offset into the unpadded input, or
    /// kPaddingIndex for padding cells.
    IndexTensor source_indices;
    std::size_t out_rows = 0;
    std::size_t out_cols = 0;
};

/// Windows of an H x W x C x N tensor as columns. Padding cells take
/// `pad_value`; their source index is the sentinel.
template <typename T>
PatchColumns<T> im2col_pool(const Tensor<T>& x, const WindowSpec& spec, T pad_value = T{}) {
    if (x.rank() != 4) {
        throw DimensionError("im2col_pool expects H x W x C x N, got " + shape_str(x.shape()));
    }
    const std::size_t h = x.extent(0);
    const std::size_t w = x.extent(1);
    const std::size_t cn = x.extent(2) * x.extent(3);
    const std::size_t oh = spec.out_rows(h);
    const std::size_t ow = spec.out_cols(w);
    const std::size_t window = spec.rows * spec.cols;
    const std::size_t cols = oh * ow * cn;

    PatchColumns<T> out{Tensor<T>({window, cols}), IndexTensor({window, cols}), oh, ow};
    for (std::size_t u = 0; u < spec.rows; ++u) {
        for (std::size_t v = 0; v < spec.cols; ++v) {
            const std::size_t row = u * spec.cols + v;
            T* dst = out.columns.data().data() + row * cols;
            std::int64_t* idx = out.source_indices.data().data() + row * cols;
            for (std::size_t r = 0; r < oh; ++r) {
                const auto ir = static_cast<std::ptrdiff_t>(r * spec.stride_rows + u) -
                                static_cast<std::ptrdiff_t>(spec.pad.top);
                for (std::size_t c = 0; c < ow; ++c) {
                    const auto ic = static_cast<std::ptrdiff_t>(c * spec.stride_cols + v) -
                                    static_cast<std::ptrdiff_t>(spec.pad.left);
                    const std::size_t base = (r * ow + c) * cn;
                    const bool inside = ir >= 0 && ic >= 0 && static_cast<std::size_t>(ir) < h &&
                                        static_cast<std::size_t>(ic) < w;
                    if (!inside) {
                        for (std::size_t k = 0; k < cn; ++k) {
                            dst[base + k] = pad_value;
                            idx[base + k] = kPaddingIndex;
                        }
                        continue;
                    }
                    const std::size_t src =
                        (static_cast<std::size_t>(ir) * w + static_cast<std::size_t>(ic)) * cn;
                    for (std::size_t k = 0; k < cn; ++k) {
                        dst[base + k] = x[src + k];
                        idx[base + k] = static_cast<std::int64_t>(src + k);
                    }
                }
            }
        }
    }
    return out;
}

/// out[i] = sum of values[j] over every j with indices[j] == i. Sentinel
/// entries are dropped.
template <typename T>
Tensor<T> scatter_accumulate(const Shape& target_shape, const IndexTensor& indices,
                             const Tensor<T>& values) {
    if (indices.size() != values.size()) {
        throw DimensionError("scatter_accumulate: " + std::to_string(indices.size()) +
                             " indices for " + std::to_string(values.size()) + " values");
    }
    Tensor<T> out(target_shape);
    const auto n = static_cast<std::int64_t>(out.size());
    for (std::size_t j = 0; j < indices.size(); ++j) {
        const std::int64_t i = indices[j];
        if (i == kPaddingIndex) {
            continue;
        }
        if (i < 0 || i >= n) {
            throw IndexError("scatter_accumulate: index " + std::to_string(i) +
                             " outside target of " + std::to_string(n) + " elements");
        }
        out[static_cast<std::size_t>(i)] += values[j];
    }
    return out;
}

} // namespace leafnet
