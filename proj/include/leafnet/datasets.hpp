#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "leafnet/rng.hpp"
#include "leafnet/tensor.hpp"

namespace leafnet {

/// Which statistics were applied to a dataset and where they came from.
struct Normalization {
    std::string scheme;         // "none", "scale01-center", "channel-standardize"
    std::string source = "none"; // split the statistics were computed on
    std::vector<double> mean;   // per channel
    std::vector<double> stddev; // per channel; empty when not scaled
};

/// Images as H x W x C x N plus one integer label per item.
template <typename T>
struct LabeledDataset {
    Tensor<T> inputs;
    std::vector<std::int32_t> labels;
    std::size_t classes = 0;
    Normalization normalization;

    std::size_t size() const { return labels.size(); }
    /// Shape of a single item batch, with N replaced by `batch`.
    Shape item_shape(std::size_t batch) const;
    /// Throws DataError unless N and labels agree and every label is in range.
    void validate() const;
};

template <typename T>
struct DatasetSplit {
    LabeledDataset<T> train;
    LabeledDataset<T> test;
};

template <typename T>
struct Batch {
    Tensor<T> inputs;
    std::vector<std::int32_t> labels;
};

// ------------------------------------------------------------- IDX files

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Unsigned-byte IDX array: big-endian magic, big-endian u32 extents, payload.
struct IdxArray {
    std::uint32_t magic = 0;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> data;
};

IdxArray parse_idx(std::span<const std::uint8_t> bytes, std::uint32_t expected_magic,
                   const std::string& source);
std::vector<std::uint8_t> encode_idx(const IdxArray& array);
std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);

/// Images scaled to [0, 1], no centering. Counts must agree.
template <typename T>
LabeledDataset<T> mnist_from_idx(const IdxArray& images, const IdxArray& labels);

/// Reads train-images-idx3-ubyte, train-labels-idx1-ubyte, t10k-images-idx3-ubyte
/// and t10k-labels-idx1-ubyte from `dir`, scales to [0, 1] and subtracts the
/// training-set mean from both splits.
template <typename T>
DatasetSplit<T> load_mnist(const std::filesystem::path& dir);

// ------------------------------------------------------------- CIFAR-10

inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;

/// 3073-byte records: label, then R, G and B planes, each 32x32 row-major.
/// Pixels scaled to [0, 1].
template <typename T>
LabeledDataset<T> parse_cifar10(std::span<const std::uint8_t> bytes, const std::string& source);

/// data_batch_1..5.bin and test_batch.bin, standardized per channel with
/// training statistics.
template <typename T>
DatasetSplit<T> load_cifar10(const std::filesystem::path& dir);

// ------------------------------------------------------------- utilities

/// Subtracts `mean` (and divides by `stddev` when present) per channel, in place.
template <typename T>
void apply_normalization(LabeledDataset<T>& data, const Normalization& norm);

/// Per-channel mean (and stddev when `standardize`) of a dataset.
template <typename T>
Normalization channel_statistics(const LabeledDataset<T>& data, bool standardize);

/// Items at `indices`, in that order.
template <typename T>
Batch<T> gather(const LabeledDataset<T>& data, std::span<const std::size_t> indices);

/// The first n items after a seeded shuffle; the whole set if n >= size.
template <typename T>
LabeledDataset<T> subset(const LabeledDataset<T>& data, std::size_t n, SeededRng& rng);

/// A seeded permutation cut into batches. The last partial batch is kept.
class BatchPlan {
public:
    BatchPlan(std::size_t items, std::size_t batch_size, SeededRng& rng);

    std::size_t batches() const;
    std::span<const std::size_t> batch(std::size_t i) const;

private:
    std::vector<std::size_t> order_;
    std::size_t batch_size_;
};

/// Walks one epoch of a dataset in seeded shuffled order.
template <typename T>
class BatchIterator {
public:
    BatchIterator(const LabeledDataset<T>& data, std::size_t batch_size, SeededRng& rng)
        : data_(&data), plan_(data.size(), batch_size, rng) {}

    bool done() const { return next_ >= plan_.batches(); }
    Batch<T> next() { return gather(*data_, plan_.batch(next_++)); }

private:
    const LabeledDataset<T>* data_;
    BatchPlan plan_;
    std::size_t next_ = 0;
};

} // namespace leafnet
