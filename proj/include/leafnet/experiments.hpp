#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "leafnet/gradcheck.hpp"
#include "leafnet/network.hpp"

namespace leafnet {

/// Flatten, then linear layers of the given widths with relu between them.
template <typename T>
SequentialModel<T> make_mlp(const Shape& item_shape, const std::vector<std::size_t>& hidden,
                            std::size_t classes);

/// CIFAR-10 network for 32x32x3 inputs:
///   conv 5x5x32 pad 2, relu, maxpool 3 stride 2 (pad bottom/right 1)   -> 16x16
///   conv 5x5x32 pad 2, relu, maxpool                                   ->  8x8
///   conv 5x5x64 pad 2, relu, maxpool                                   ->  4x4
///   conv 4x4x64, relu                                                  ->  1x1
///   flatten, linear 64 -> 10
template <typename T>
SequentialModel<T> make_cifar_cnn(std::size_t classes = 10);

/// Reduced architectures used by the gradient-check command. `corrupt` names
/// a layer kind ("linear", "conv") whose first instance gets sign-flipped
/// parameter gradients; empty for none.
struct GradCheckCase {
    SequentialModel<double> model;
    Tensor<double> inputs;
    std::vector<std::int32_t> labels;
};

GradCheckCase small_mlp_case(std::uint64_t seed, const std::string& corrupt = "");
GradCheckCase small_cnn_case(std::uint64_t seed, const std::string& corrupt = "");

/// LSTM check on vocab 5, hidden 4, T = 5, batch 2. `corrupt` names an LSTM
/// parameter (e.g. "W_fh") whose gradient is negated.
GradCheckReport lstm_grad_check(std::uint64_t seed, const GradCheckOptions& options,
                                const std::string& corrupt = "");

/// Q-network check: 4 -> 8 -> 2 on a batch of 5 transitions.
GradCheckReport qnet_grad_check(std::uint64_t seed, const GradCheckOptions& options,
                                const std::string& corrupt = "");

/// Wraps the first layer of kind `kind` in a SignFlippedLayer. Throws
/// ConfigError when the model has no such layer.
void corrupt_layer(SequentialModel<double>& model, const std::string& kind);

} // namespace leafnet
