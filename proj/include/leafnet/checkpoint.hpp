#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "leafnet/network.hpp"
#include "leafnet/optim.hpp"
#include "leafnet/rng.hpp"

namespace leafnet {

/// Binary checkpoint layout (all integers little-endian):
///
///   magic        8 bytes  "LEAFCKPT"
///   version      u32      kCheckpointVersion
///   scalar size  u32      4 or 8
///   counters     u64 count, then per entry: u64 name length, name, u64 value
///   scalars      u64 count, then per entry: u64 name length, name, f64 bits
///   tensors      u64 count, then per entry: u64 name length, name, u64 rank,
///                rank x u64 extents, element bits in row-major order
///
/// Entries keep insertion order, so encoding is deterministic and
/// save -> load -> save reproduces the same bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
    std::vector<std::pair<std::string, std::uint64_t>> counters;
    std::vector<std::pair<std::string, double>> scalars;
    std::vector<std::pair<std::string, Tensor<T>>> tensors;

    std::optional<std::uint64_t> counter(const std::string& name) const;
    std::optional<double> scalar(const std::string& name) const;
    const Tensor<T>* tensor(const std::string& name) const;
};

template <typename T>
std::vector<std::uint8_t> encode_checkpoint(const Checkpoint<T>& ckpt);

/// Throws CheckpointVersionError (bad magic, version or precision),
/// CheckpointTruncatedError (short read) or CheckpointError.
template <typename T>
Checkpoint<T> decode_checkpoint(std::span<const std::uint8_t> bytes);

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

/// Scalar width recorded in a checkpoint file (4 or 8).
std::uint32_t checkpoint_scalar_size(const std::filesystem::path& path);

/// Parameters, optimizer accumulators, step counters, learning rate and RNG
/// state. Parameter tensors are stored as "param.<name>".
template <typename T>
Checkpoint<T> capture_training_state(std::span<const ParamRef<T>> params,
                                     const Optimizer<T>& optimizer, const SeededRng& rng,
                                     std::uint64_t step);

template <typename T>
Checkpoint<T> capture_training_state(SequentialModel<T>& model, const Optimizer<T>& optimizer,
                                     const SeededRng& rng, std::uint64_t step) {
    const std::vector<ParamRef<T>> params = model.parameters();
    return capture_training_state(std::span<const ParamRef<T>>(params), optimizer, rng, step);
}

/// Inverse of capture_training_state. Throws CheckpointShapeError naming the
/// first tensor that is missing or has the wrong shape; nothing is modified
/// in that case.
template <typename T>
void restore_training_state(const Checkpoint<T>& ckpt, std::span<const ParamRef<T>> params,
                            Optimizer<T>& optimizer, SeededRng& rng, std::uint64_t& step);

template <typename T>
void restore_training_state(const Checkpoint<T>& ckpt, SequentialModel<T>& model,
                            Optimizer<T>& optimizer, SeededRng& rng, std::uint64_t& step) {
    const std::vector<ParamRef<T>> params = model.parameters();
    restore_training_state(ckpt, std::span<const ParamRef<T>>(params), optimizer, rng, step);
}

/// Parameters only.
template <typename T>
void restore_parameters(const Checkpoint<T>& ckpt, std::span<const ParamRef<T>> params);

} // namespace leafnet
