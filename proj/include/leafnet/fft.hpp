#pragma once

#include <cstddef>
#include <vector>

#include "leafnet/patches.hpp"
#include "leafnet/tensor.hpp"

namespace leafnet {

/// Geometry of a single-channel 2-D convolution or correlation. The output
/// is the "valid" part over the zero-padded input, sampled every stride.
struct ConvGeometry {
    std::size_t in_rows = 0;
    std::size_t in_cols = 0;
    std::size_t kernel_rows = 1;
    std::size_t kernel_cols = 1;
    Padding pad{};
    std::size_t stride_rows = 1;
    std::size_t stride_cols = 1;

    std::size_t padded_rows() const { return in_rows + pad.top + pad.bottom; }
    std::size_t padded_cols() const { return in_cols + pad.left + pad.right; }
    std::size_t out_rows() const {
        return sliding_extent(in_rows, pad.top, pad.bottom, kernel_rows, stride_rows);
    }
    std::size_t out_cols() const {
        return sliding_extent(in_cols, pad.left, pad.right, kernel_cols, stride_cols);
    }
    /// Throws DimensionError unless both output extents are at least 1.
    void validate() const {
        (void)out_rows();
        (void)out_cols();
    }
};

std::size_t next_pow2(std::size_t n);

template <typename T>
struct ComplexBuffer {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> real;
    std::vector<T> imag;

    ComplexBuffer() = default;
    ComplexBuffer(std::size_t r, std::size_t c) : rows(r), cols(c), real(r * c), imag(r * c) {}

    void clear() {
        std::fill(real.begin(), real.end(), T{});
        std::fill(imag.begin(), imag.end(), T{});
    }
};

/// Radix-2 complex FFT of one power-of-two length, on split real/imag arrays.
template <typename T>
class FftPlan {
public:
    explicit FftPlan(std::size_t n);

    std::size_t size() const { return n_; }

    /// In-place transform of n elements spaced `stride` apart. The inverse is
    /// unnormalized.
    void transform(T* re, T* im, std::size_t stride, bool inverse) const;

private:
    std::size_t n_;
    std::vector<std::size_t> bitrev_;
    std::vector<T> cos_;
    std::vector<T> sin_;
};

/// 2-D transform over a fixed rows x cols grid (both powers of two).
template <typename T>
class Fft2d {
public:
    Fft2d(std::size_t rows, std::size_t cols);

    std::size_t rows() const { return rows_.size(); }
    std::size_t cols() const { return cols_.size(); }

    void forward(ComplexBuffer<T>& buf) const { run(buf, false); }
    /// Normalized by 1/(rows*cols).
    void inverse(ComplexBuffer<T>& buf) const;

private:
    void run(ComplexBuffer<T>& buf, bool inverse) const;

    FftPlan<T> rows_;
    FftPlan<T> cols_;
};

/// acc += a * b, or acc += a * conj(b).
template <typename T>
void multiply_accumulate(ComplexBuffer<T>& acc, const ComplexBuffer<T>& a,
                         const ComplexBuffer<T>& b, bool conj_b) {
    const T sign = conj_b ? T{-1} : T{1};
    const std::size_t n = acc.real.size();
    for (std::size_t i = 0; i < n; ++i) {
        const T br = b.real[i];
        const T bi = sign * b.imag[i];
        acc.real[i] += a.real[i] * br - a.imag[i] * bi;
        acc.imag[i] += a.real[i] * bi + a.imag[i] * br;
    }
}

/// Forward 2-D DFT. Both extents must be powers of two.
template <typename T>
ComplexBuffer<T> fft2(const Tensor<T>& x);

/// Forward 2-D DFT of x zero-padded to rows x cols (powers of two).
template <typename T>
ComplexBuffer<T> fft2(const Tensor<T>& x, std::size_t rows, std::size_t cols);

/// Real part of the normalized inverse 2-D DFT.
template <typename T>
Tensor<T> ifft2(const ComplexBuffer<T>& spectrum);

/// True (kernel-flipped) convolution of a 2-D x with a 2-D kernel through the
/// frequency domain. Transform sizes are the next powers of two at or above
/// padded extent + kernel extent - 1.
template <typename T>
Tensor<T> conv2_fft(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& geom);

/// Cross-correlation (no flip), computed as IFFT(F{x} * conj(F{k})).
template <typename T>
Tensor<T> corr2_fft(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& geom);

/// Spatial-domain reference for conv2_fft.
template <typename T>
Tensor<T> direct_conv2(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& geom);

/// Spatial-domain reference for corr2_fft.
template <typename T>
Tensor<T> direct_corr2(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& geom);

} // namespace leafnet
