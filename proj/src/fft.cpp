#include "leafnet/fft.hpp"

#include <cmath>
#include <numbers>
#include <utility>

namespace leafnet {

std::size_t next_pow2(std::size_t n) {
    std::size_t p = 1;
    while (p < n) {
        p <<= 1;
    }
    return p;
}

namespace {

bool is_pow2(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

void check_conv_args(const char* op, std::size_t x_rank, std::size_t k_rank,
                     const ConvGeometry& geom, const Shape& xs, const Shape& ks) {
    if (x_rank != 2 || k_rank != 2) {
        throw DimensionError(std::string(op) + " expects 2-D input and kernel, got " +
                             shape_str(xs) + " and " + shape_str(ks));
    }
    if (xs[0] != geom.in_rows || xs[1] != geom.in_cols || ks[0] != geom.kernel_rows ||
        ks[1] != geom.kernel_cols) {
        throw DimensionError(std::string(op) + ": input " + shape_str(xs) + " / kernel " +
                             shape_str(ks) + " disagree with geometry");
    }
    geom.validate();
}

template <typename T>
void embed_padded(ComplexBuffer<T>& buf, const Tensor<T>& x, std::size_t row_off,
                  std::size_t col_off) {
    buf.clear();
    const std::size_t h = x.extent(0);
    const std::size_t w = x.extent(1);
    for (std::size_t r = 0; r < h; ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            buf.real[(r + row_off) * buf.cols + c + col_off] = x[r * w + c];
        }
    }
}

// acc = a * b, or a * conj(b).
template <typename T>
void pointwise(ComplexBuffer<T>& a, const ComplexBuffer<T>& b, bool conj_b) {
    const T sign = conj_b ? T{-1} : T{1};
    for (std::size_t i = 0; i < a.real.size(); ++i) {
        const T ar = a.real[i];
        const T ai = a.imag[i];
        const T br = b.real[i];
        const T bi = sign * b.imag[i];
        a.real[i] = ar * br - ai * bi;
        a.imag[i] = ar * bi + ai * br;
    }
}

template <typename T>
Tensor<T> spectral(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& geom,
                   bool correlate) {
    const std::size_t hp = geom.padded_rows();
    const std::size_t wp = geom.padded_cols();
    const std::size_t nr = next_pow2(hp + geom.kernel_rows - 1);
    const std::size_t nc = next_pow2(wp + geom.kernel_cols - 1);
    const Fft2d<T> plan(nr, nc);

    ComplexBuffer<T> xs(nr, nc);
    embed_padded(xs, x, geom.pad.top, geom.pad.left);
    ComplexBuffer<T> ks(nr, nc);
    embed_padded(ks, k, 0, 0);
    plan.forward(xs);
    plan.forward(ks);
    pointwise(xs, ks, correlate);
    plan.inverse(xs);

    // Linear convolution's valid part starts at kernel extent - 1; circular
    // correlation's valid part starts at 0.
    const std::size_t r0 = correlate ? 0 : geom.kernel_rows - 1;
    const std::size_t c0 = correlate ? 0 : geom.kernel_cols - 1;
    const std::size_t oh = geom.out_rows();
    const std::size_t ow = geom.out_cols();
    Tensor<T> y({oh, ow});
    for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t c = 0; c < ow; ++c) {
            y[r * ow + c] = xs.real[(r0 + r * geom.stride_rows) * nc + c0 + c * geom.stride_cols];
        }
    }
    return y;
}

template <typename T>
Tensor<T> direct(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& geom, bool flip) {
    const std::size_t oh = geom.out_rows();
    const std::size_t ow = geom.out_cols();
    const std::size_t kh = geom.kernel_rows;
    const std::size_t kw = geom.kernel_cols;
    Tensor<T> y({oh, ow});
    for (std::size_t r = 0; r < oh; ++r) {
        for (std::size_t c = 0; c < ow; ++c) {
            T acc{};
            for (std::size_t u = 0; u < kh; ++u) {
                const auto ir = static_cast<std::ptrdiff_t>(r * geom.stride_rows + u) -
                                static_cast<std::ptrdiff_t>(geom.pad.top);
                if (ir < 0 || static_cast<std::size_t>(ir) >= geom.in_rows) {
                    continue;
                }
                for (std::size_t v = 0; v < kw; ++v) {
                    const auto ic = static_cast<std::ptrdiff_t>(c * geom.stride_cols + v) -
                                    static_cast<std::ptrdiff_t>(geom.pad.left);
                    if (ic < 0 || static_cast<std::size_t>(ic) >= geom.in_cols) {
                        continue;
                    }
                    const T kv = flip ? k[(kh - 1 - u) * kw + (kw - 1 - v)] : k[u * kw + v];
                    acc += x[static_cast<std::size_t>(ir) * geom.in_cols +
                             static_cast<std::size_t>(ic)] *
                           kv;
                }
            }
            y[r * ow + c] = acc;
        }
    }
    return y;
}

} // namespace

template <typename T>
FftPlan<T>::FftPlan(std::size_t n) : n_(n), bitrev_(n), cos_(n / 2), sin_(n / 2) {
    if (!is_pow2(n)) {
        throw DimensionError("FFT length " + std::to_string(n) + " is not a power of two");
    }
    std::size_t bits = 0;
    while ((std::size_t{1} << bits) < n) {
        ++bits;
    }
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < bits; ++b) {
            r |= ((i >> b) & 1U) << (bits - 1 - b);
        }
        bitrev_[i] = r;
    }
    for (std::size_t k = 0; k < n / 2; ++k) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
        cos_[k] = static_cast<T>(std::cos(angle));
        sin_[k] = static_cast<T>(std::sin(angle));
    }
}

template <typename T>
void FftPlan<T>::transform(T* re, T* im, std::size_t stride, bool inverse) const {
    for (std::size_t i = 0; i < n_; ++i) {
        const std::size_t j = bitrev_[i];
        if (i < j) {
            std::swap(re[i * stride], re[j * stride]);
            std::swap(im[i * stride], im[j * stride]);
        }
    }
    const T sign = inverse ? T{1} : T{-1};
    for (std::size_t len = 2; len <= n_; len <<= 1) {
        const std::size_t half = len / 2;
        const std::size_t step = n_ / len;
        for (std::size_t start = 0; start < n_; start += len) {
            for (std::size_t j = 0; j < half; ++j) {
                const T wr = cos_[j * step];
                const T wi = sign * sin_[j * step];
                const std::size_t a = (start + j) * stride;
                const std::size_t b = (start + j + half) * stride;
                const T tr = re[b] * wr - im[b] * wi;
                const T ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
    }
}

template <typename T>
Fft2d<T>::Fft2d(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols) {}

template <typename T>
void Fft2d<T>::run(ComplexBuffer<T>& buf, bool inverse) const {
    const std::size_t r = rows_.size();
    const std::size_t c = cols_.size();
    if (buf.rows != r || buf.cols != c) {
        throw DimensionError("FFT buffer " + std::to_string(buf.rows) + "x" +
                             std::to_string(buf.cols) + " does not match plan " +
                             std::to_string(r) + "x" + std::to_string(c));
    }
    for (std::size_t i = 0; i < r; ++i) {
        cols_.transform(buf.real.data() + i * c, buf.imag.data() + i * c, 1, inverse);
    }
    for (std::size_t j = 0; j < c; ++j) {
        rows_.transform(buf.real.data() + j, buf.imag.data() + j, c, inverse);
    }
}

template <typename T>
void Fft2d<T>::inverse(ComplexBuffer<T>& buf) const {
    run(buf, true);
    const T scale = T{1} / static_cast<T>(buf.rows * buf.cols);
    for (std::size_t i = 0; i < buf.real.size(); ++i) {
        buf.real[i] *= scale;
        buf.imag[i] *= scale;
    }
}

template <typename T>
ComplexBuffer<T> fft2(const Tensor<T>& x) {
    if (x.rank() != 2 || x.size() == 0) {
        throw DimensionError("fft2 expects a non-empty 2-D tensor, got " + shape_str(x.shape()));
    }
    return fft2(x, x.extent(0), x.extent(1));
}

template <typename T>
ComplexBuffer<T> fft2(const Tensor<T>& x, std::size_t rows, std::size_t cols) {
    if (x.rank() != 2 || x.size() == 0) {
        throw DimensionError("fft2 expects a non-empty 2-D tensor, got " + shape_str(x.shape()));
    }
    if (!is_pow2(rows) || !is_pow2(cols) || rows < x.extent(0) || cols < x.extent(1)) {
        throw DimensionError("fft2: transform size " + std::to_string(rows) + "x" +
                             std::to_string(cols) + " invalid for input " + shape_str(x.shape()));
    }
    ComplexBuffer<T> buf(rows, cols);
    embed_padded(buf, x, 0, 0);
    Fft2d<T>(rows, cols).forward(buf);
    return buf;
}

template <typename T>
Tensor<T> ifft2(const ComplexBuffer<T>& spectrum) {
    if (spectrum.rows == 0 || spectrum.cols == 0) {
        throw DimensionError("ifft2 of an empty spectrum");
    }
    ComplexBuffer<T> buf = spectrum;
    Fft2d<T>(buf.rows, buf.cols).inverse(buf);
    return Tensor<T>({buf.rows, buf.cols}, std::move(buf.real));
}

template <typename T>
Tensor<T> conv2_fft(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& geom) {
    check_conv_args("conv2_fft", x.rank(), k.rank(), geom, x.shape(), k.shape());
    return spectral(x, k, geom, false);
}

template <typename T>
Tensor<T> corr2_fft(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& geom) {
    check_conv_args("corr2_fft", x.rank(), k.rank(), geom, x.shape(), k.shape());
    return spectral(x, k, geom, true);
}

template <typename T>
Tensor<T> direct_conv2(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& geom) {
    check_conv_args("direct_conv2", x.rank(), k.rank(), geom, x.shape(), k.shape());
    return direct(x, k, geom, true);
}

template <typename T>
Tensor<T> direct_corr2(const Tensor<T>& x, const Tensor<T>& k, const ConvGeometry& geom) {
    check_conv_args("direct_corr2", x.rank(), k.rank(), geom, x.shape(), k.shape());
    return direct(x, k, geom, false);
}

#define LEAFNET_INSTANTIATE_FFT(T)                                                         \
    template class FftPlan<T>;                                                             \
    template class Fft2d<T>;                                                               \
    template ComplexBuffer<T> fft2(const Tensor<T>&);                                      \
    template ComplexBuffer<T> fft2(const Tensor<T>&, std::size_t, std::size_t);            \
    template Tensor<T> ifft2(const ComplexBuffer<T>&);                                     \
    template Tensor<T> conv2_fft(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&); \
    template Tensor<T> corr2_fft(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&); \
    template Tensor<T> direct_conv2(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&); \
    template Tensor<T> direct_corr2(const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);

LEAFNET_INSTANTIATE_FFT(float)
LEAFNET_INSTANTIATE_FFT(double)

} // namespace leafnet
