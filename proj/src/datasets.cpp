#include "leafnet/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

namespace leafnet {

template <typename T>
Shape LabeledDataset<T>::item_shape(std::size_t batch) const {
    Shape s = inputs.shape();
    s.back() = batch;
    return s;
}

template <typename T>
void LabeledDataset<T>::validate() const {
    if (inputs.rank() != 4 || inputs.extent(3) != labels.size()) {
        throw DataError("dataset inputs " + shape_str(inputs.shape()) + " do not match " +
                        std::to_string(labels.size()) + " labels");
    }
    for (std::int32_t l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= classes) {
            throw DataError("label " + std::to_string(l) + " outside [0, " +
                            std::to_string(classes) + ")");
        }
    }
}

// ------------------------------------------------------------- IDX

namespace {

std::uint32_t read_be32(std::span<const std::uint8_t> b, std::size_t at) {
    return (static_cast<std::uint32_t>(b[at]) << 24) | (static_cast<std::uint32_t>(b[at + 1]) << 16) |
           (static_cast<std::uint32_t>(b[at + 2]) << 8) | static_cast<std::uint32_t>(b[at + 3]);
}

void write_be32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

std::string hex32(std::uint32_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s = "0x";
    for (int shift = 28; shift >= 0; shift -= 4) {
        s += digits[(v >> shift) & 0xF];
    }
    return s;
}

} // namespace

IdxArray parse_idx(std::span<const std::uint8_t> bytes, std::uint32_t expected_magic,
                   const std::string& source) {
    if (bytes.size() < 4) {
        throw ParseError(source + ": truncated IDX header (expected at least 4 bytes, got " +
                         std::to_string(bytes.size()) + ")");
    }
    IdxArray out;
    out.magic = read_be32(bytes, 0);
    if (out.magic != expected_magic) {
        throw ParseError(source + ": bad IDX magic " + hex32(out.magic) + ", expected " +
                         hex32(expected_magic));
    }
    const std::size_t rank = out.magic & 0xFF;
    const std::size_t header = 4 + 4 * rank;
    if (bytes.size() < header) {
        throw ParseError(source + ": truncated IDX header (expected " + std::to_string(header) +
                         " bytes, got " + std::to_string(bytes.size()) + ")");
    }
    std::size_t payload = 1;
    for (std::size_t a = 0; a < rank; ++a) {
        out.dims.push_back(read_be32(bytes, 4 + 4 * a));
        payload *= out.dims.back();
    }
    if (bytes.size() != header + payload) {
        throw ParseError(source + ": IDX payload size mismatch (expected " +
                         std::to_string(header + payload) + " bytes, got " +
                         std::to_string(bytes.size()) + ")");
    }
    out.data.assign(bytes.begin() + static_cast<std::ptrdiff_t>(header), bytes.end());
    return out;
}

std::vector<std::uint8_t> encode_idx(const IdxArray& array) {
    std::vector<std::uint8_t> out;
    out.reserve(4 + 4 * array.dims.size() + array.data.size());
    write_be32(out, array.magic);
    for (std::uint32_t d : array.dims) {
        write_be32(out, d);
    }
    out.insert(out.end(), array.data.begin(), array.data.end());
    return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError("cannot open " + path.string());
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

template <typename T>
LabeledDataset<T> mnist_from_idx(const IdxArray& images, const IdxArray& labels) {
    if (images.dims.size() != 3 || labels.dims.size() != 1) {
        throw ParseError("MNIST: expected rank-3 images and rank-1 labels");
    }
    const std::size_t n = images.dims[0];
    const std::size_t h = images.dims[1];
    const std::size_t w = images.dims[2];
    if (labels.dims[0] != n) {
        throw ParseError("MNIST: " + std::to_string(n) + " images but " +
                         std::to_string(labels.dims[0]) + " labels");
    }
    LabeledDataset<T> out;
    out.inputs = Tensor<T>({h, w, 1, n});
    out.classes = 10;
    out.normalization.scheme = "none";
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < h * w; ++p) {
            out.inputs[p * n + i] = static_cast<T>(images.data[i * h * w + p]) / T{255};
        }
    }
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        out.labels[i] = labels.data[i];
    }
    out.validate();
    return out;
}

template <typename T>
DatasetSplit<T> load_mnist(const std::filesystem::path& dir) {
    auto load = [&](const char* images, const char* labels) {
        const auto img_path = dir / images;
        const auto lbl_path = dir / labels;
        return mnist_from_idx<T>(
            parse_idx(read_file_bytes(img_path), kIdxImagesMagic, img_path.string()),
            parse_idx(read_file_bytes(lbl_path), kIdxLabelsMagic, lbl_path.string()));
    };
    DatasetSplit<T> split{load("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
                          load("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")};
    Normalization norm = channel_statistics(split.train, false);
    norm.scheme = "scale01-center";
    apply_normalization(split.train, norm);
    apply_normalization(split.test, norm);
    return split;
}

// ------------------------------------------------------------- CIFAR-10

template <typename T>
LabeledDataset<T> parse_cifar10(std::span<const std::uint8_t> bytes, const std::string& source) {
    if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
        throw ParseError(source + ": " + std::to_string(bytes.size()) +
                         " bytes is not a whole number of " + std::to_string(kCifarRecordBytes) +
                         "-byte records");
    }
    const std::size_t n = bytes.size() / kCifarRecordBytes;
    constexpr std::size_t plane = 32 * 32;
    LabeledDataset<T> out;
    out.inputs = Tensor<T>({32, 32, 3, n});
    out.classes = 10;
    out.normalization.scheme = "none";
    out.labels.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint8_t* rec = bytes.data() + i * kCifarRecordBytes;
        out.labels[i] = rec[0];
        for (std::size_t ch = 0; ch < 3; ++ch) {
            for (std::size_t p = 0; p < plane; ++p) {
                out.inputs[(p * 3 + ch) * n + i] = static_cast<T>(rec[1 + ch * plane + p]) / T{255};
            }
        }
    }
    out.validate();
    return out;
}

namespace {

template <typename T>
LabeledDataset<T> concat(std::vector<LabeledDataset<T>> parts) {
    if (parts.size() == 1) {
        return std::move(parts.front());
    }
    std::size_t total = 0;
    for (const auto& p : parts) {
        total += p.size();
    }
    LabeledDataset<T> out;
    Shape shape = parts.front().inputs.shape();
    shape.back() = total;
    out.inputs = Tensor<T>(shape);
    out.classes = parts.front().classes;
    out.normalization = parts.front().normalization;
    const std::size_t features = element_count(shape) / total;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t n = p.size();
        for (std::size_t f = 0; f < features; ++f) {
            std::copy_n(p.inputs.data().data() + f * n, n, out.inputs.data().data() + f * total + offset);
        }
        out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
        offset += n;
    }
    return out;
}

} // namespace

template <typename T>
DatasetSplit<T> load_cifar10(const std::filesystem::path& dir) {
    std::vector<LabeledDataset<T>> parts;
    for (int i = 1; i <= 5; ++i) {
        const auto path = dir / ("data_batch_" + std::to_string(i) + ".bin");
        parts.push_back(parse_cifar10<T>(read_file_bytes(path), path.string()));
    }
    const auto test_path = dir / "test_batch.bin";
    DatasetSplit<T> split{concat(std::move(parts)),
                          parse_cifar10<T>(read_file_bytes(test_path), test_path.string())};
    Normalization norm = channel_statistics(split.train, true);
    norm.scheme = "channel-standardize";
    apply_normalization(split.train, norm);
    apply_normalization(split.test, norm);
    return split;
}

// ------------------------------------------------------------- utilities

template <typename T>
Normalization channel_statistics(const LabeledDataset<T>& data, bool standardize) {
    const Shape& s = data.inputs.shape();
    const std::size_t channels = s[2];
    const std::size_t n = s[3];
    const std::size_t pixels = s[0] * s[1];
    Normalization norm;
    norm.source = "train";
    norm.mean.assign(channels, 0.0);
    for (std::size_t p = 0; p < pixels; ++p) {
        for (std::size_t c = 0; c < channels; ++c) {
            const T* row = data.inputs.data().data() + (p * channels + c) * n;
            for (std::size_t i = 0; i < n; ++i) {
                norm.mean[c] += static_cast<double>(row[i]);
            }
        }
    }
    const double count = static_cast<double>(pixels * n);
    for (double& m : norm.mean) {
        m /= count;
    }
    if (standardize) {
        norm.stddev.assign(channels, 0.0);
        for (std::size_t p = 0; p < pixels; ++p) {
            for (std::size_t c = 0; c < channels; ++c) {
                const T* row = data.inputs.data().data() + (p * channels + c) * n;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = static_cast<double>(row[i]) - norm.mean[c];
                    norm.stddev[c] += d * d;
                }
            }
        }
        for (double& sd : norm.stddev) {
            sd = std::sqrt(sd / count);
            if (sd == 0.0) {
                sd = 1.0;
            }
        }
    }
    return norm;
}

template <typename T>
void apply_normalization(LabeledDataset<T>& data, const Normalization& norm) {
    const Shape& s = data.inputs.shape();
    const std::size_t channels = s[2];
    const std::size_t n = s[3];
    if (norm.mean.size() != channels || (!norm.stddev.empty() && norm.stddev.size() != channels)) {
        throw DataError("normalization record does not match " + std::to_string(channels) +
                        " channels");
    }
    for (std::size_t p = 0; p < s[0] * s[1]; ++p) {
        for (std::size_t c = 0; c < channels; ++c) {
            T* row = data.inputs.data().data() + (p * channels + c) * n;
            const auto mean = static_cast<T>(norm.mean[c]);
            const T scale = norm.stddev.empty() ? T{1} : static_cast<T>(1.0 / norm.stddev[c]);
            for (std::size_t i = 0; i < n; ++i) {
                row[i] = (row[i] - mean) * scale;
            }
        }
    }
    data.normalization = norm;
}

template <typename T>
Batch<T> gather(const LabeledDataset<T>& data, std::span<const std::size_t> indices) {
    const std::size_t n = data.size();
    const std::size_t b = indices.size();
    const std::size_t features = data.inputs.size() / (n == 0 ? 1 : n);
    Batch<T> out{Tensor<T>(data.item_shape(b)), std::vector<std::int32_t>(b)};
    for (std::size_t j = 0; j < b; ++j) {
        if (indices[j] >= n) {
            throw IndexError("gather: item " + std::to_string(indices[j]) + " of " +
                             std::to_string(n));
        }
        out.labels[j] = data.labels[indices[j]];
    }
    const T* src = data.inputs.data().data();
    T* dst = out.inputs.data().data();
    for (std::size_t f = 0; f < features; ++f) {
        for (std::size_t j = 0; j < b; ++j) {
            dst[f * b + j] = src[f * n + indices[j]];
        }
    }
    return out;
}

template <typename T>
LabeledDataset<T> subset(const LabeledDataset<T>& data, std::size_t n, SeededRng& rng) {
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));
    order.resize(std::min(n, order.size()));
    Batch<T> picked = gather(data, order);
    LabeledDataset<T> out;
    out.inputs = std::move(picked.inputs);
    out.labels = std::move(picked.labels);
    out.classes = data.classes;
    out.normalization = data.normalization;
    return out;
}

BatchPlan::BatchPlan(std::size_t items, std::size_t batch_size, SeededRng& rng)
    : order_(items), batch_size_(batch_size) {
    if (batch_size == 0) {
        throw ConfigError("batch size must be at least 1");
    }
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order_));
}

std::size_t BatchPlan::batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

std::span<const std::size_t> BatchPlan::batch(std::size_t i) const {
    const std::size_t start = i * batch_size_;
    const std::size_t len = std::min(batch_size_, order_.size() - start);
    return std::span<const std::size_t>(order_).subspan(start, len);
}

#define LEAFNET_INSTANTIATE_DATASETS(T)                                                      \
    template struct LabeledDataset<T>;                                                       \
    template LabeledDataset<T> mnist_from_idx(const IdxArray&, const IdxArray&);             \
    template DatasetSplit<T> load_mnist(const std::filesystem::path&);                       \
    template LabeledDataset<T> parse_cifar10(std::span<const std::uint8_t>, const std::string&); \
    template DatasetSplit<T> load_cifar10(const std::filesystem::path&);                     \
    template void apply_normalization(LabeledDataset<T>&, const Normalization&);             \
    template Normalization channel_statistics(const LabeledDataset<T>&, bool);               \
    template Batch<T> gather(const LabeledDataset<T>&, std::span<const std::size_t>);        \
    template LabeledDataset<T> subset(const LabeledDataset<T>&, std::size_t, SeededRng&);

LEAFNET_INSTANTIATE_DATASETS(float)
LEAFNET_INSTANTIATE_DATASETS(double)

} // namespace leafnet
