#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "leafnet/layers.hpp"
#include "leafnet/network.hpp"

namespace leafnet {

struct GradCheckOptions {
    std::size_t coords_per_tensor = 5;
    double step = 1e-5;
    double tolerance = 1e-4;
    std::uint64_t seed = 0;
};

/// One tensor under test: its values and the analytic gradient computed for
/// them. `group` is the reporting unit (usually a layer).
struct GradTarget {
    std::string group;
    std::string name;
    Tensor<double>* value = nullptr;
    const Tensor<double>* grad = nullptr;
};

struct GradCheckEntry {
    std::string group;
    double max_rel_error = 0.0;
    std::size_t coords = 0;
    std::string worst; // "<tensor>[<flat index>]"
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;

    bool passed() const;
    double max_error() const;
    /// Groups above tolerance.
    std::vector<std::string> failures() const;
};

/// Central-difference check of sampled coordinates:
///   rel = |analytic - numeric| / max(|analytic|, |numeric|, 1e-12)
/// `loss` must evaluate the objective at the current values without touching
/// the analytic gradients.
GradCheckReport check_gradients(std::span<const GradTarget> targets,
                                const std::function<double()>& loss,
                                const GradCheckOptions& options);

/// Gradient check of a classification model under softmax log-loss. Covers
/// every parameter tensor (grouped by layer) and the input gradient (group
/// "input").
GradCheckReport grad_check(SequentialModel<double>& model, const Tensor<double>& inputs,
                           std::span<const std::int32_t> labels, const GradCheckOptions& options);

/// Fault-injection wrapper: delegates to a layer but negates its parameter
/// gradients after backward. The input gradient is left intact.
template <typename T>
class SignFlippedLayer final : public Layer<T> {
public:
    explicit SignFlippedLayer(std::unique_ptr<Layer<T>> inner) : inner_(std::move(inner)) {}

    std::string kind() const override { return inner_->kind(); }
    Tensor<T> forward(const Tensor<T>& x, bool train = true) override {
        return inner_->forward(x, train);
    }
    Tensor<T> backward(const Tensor<T>& dzdy) override {
        Tensor<T> dx = inner_->backward(dzdy);
        for (ParamRef<T>& p : inner_->parameters()) {
            for (T& g : p.grad->data()) {
                g = -g;
            }
        }
        return dx;
    }
    std::vector<ParamRef<T>> parameters() override { return inner_->parameters(); }
    Shape output_shape(const Shape& input) const override { return inner_->output_shape(input); }
    std::unique_ptr<Layer<T>> clone() const override {
        return std::make_unique<SignFlippedLayer>(inner_->clone());
    }
    std::size_t fan_in() const override { return inner_->fan_in(); }

private:
    std::unique_ptr<Layer<T>> inner_;
};

} // namespace leafnet
