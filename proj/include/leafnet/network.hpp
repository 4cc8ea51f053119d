#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "leafnet/datasets.hpp"
#include "leafnet/layers.hpp"
#include "leafnet/optim.hpp"
#include "leafnet/rng.hpp"

namespace leafnet {

/// Ordered stack of layers applied front to back.
template <typename T>
class SequentialModel {
public:
    SequentialModel() = default;
    SequentialModel(const SequentialModel& other);
    SequentialModel& operator=(const SequentialModel& other);
    SequentialModel(SequentialModel&&) noexcept = default;
    SequentialModel& operator=(SequentialModel&&) noexcept = default;

    void add(std::unique_ptr<Layer<T>> layer) { layers_.push_back(std::move(layer)); }

    template <typename L, typename... Args>
    L& emplace(Args&&... args) {
        auto layer = std::make_unique<L>(std::forward<Args>(args)...);
        L& ref = *layer;
        layers_.push_back(std::move(layer));
        return ref;
    }

    std::size_t size() const { return layers_.size(); }
    Layer<T>& layer(std::size_t i) { return *layers_.at(i); }
    const Layer<T>& layer(std::size_t i) const { return *layers_.at(i); }
    /// Swaps in a different layer at position i (used for fault injection).
    void replace(std::size_t i, std::unique_ptr<Layer<T>> layer) { layers_.at(i) = std::move(layer); }

    /// Output shape for a probe input shape. Throws DimensionError naming the
    /// first layer that cannot consume its input.
    Shape validate(const Shape& input) const;

    Tensor<T> forward(const Tensor<T>& x, bool train = true);
    /// Returns dz/d(input). Every parameterized layer holds fresh gradients
    /// afterwards.
    Tensor<T> backward(const Tensor<T>& dzdy);

    /// All trainable tensors, named "<layer index>.<kind>.<param>".
    std::vector<ParamRef<T>> parameters();

    /// Scaled Gaussian weights, zero biases: std = sqrt(2 / fan_in) when the
    /// next layer is a relu, sqrt(1 / fan_in) otherwise.
    void initialize(SeededRng& rng);

private:
    std::vector<std::unique_ptr<Layer<T>>> layers_;
};

struct TrainConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 64;
    OptimizerKind optimizer = OptimizerKind::sgd;
    OptimHyper hyper{};
    std::optional<SelectiveSgdConfig> selective_sgd;
    std::uint64_t seed = 0;
    std::size_t eval_every = 1;
    std::size_t eval_batch_size = 1000;
    /// Consecutive non-finite evaluations before training aborts.
    std::size_t divergence_patience = 3;

    void validate() const;
};

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double train_err = 0.0;
    double test_loss = 0.0;
    double test_err = 0.0;
    double seconds = 0.0;
};

using Metrics = std::vector<EpochMetrics>;

struct Evaluation {
    double loss = 0.0;
    double error_rate = 0.0;
};

/// Classification training loop around a SequentialModel with softmax
/// log-loss. The mini-batch at global step s is a pure function of
/// (seed, s): epoch e = s / batches_per_epoch is shuffled with an RNG
/// derived from (seed, e). Resuming from a checkpoint therefore replays the
/// same batches as an uninterrupted run.
template <typename T>
class Trainer {
public:
    Trainer(SequentialModel<T>& model, TrainConfig config);

    /// One forward/backward/optimizer update. Returns the mini-batch loss. A
    /// non-finite loss or gradient skips the update and returns NaN.
    double train_step(const Batch<T>& batch);

    /// `count` further steps over `data`, continuing the global step counter.
    /// Returns (summed per-item loss, summed errors, items seen).
    struct StepTotals {
        double loss_sum = 0.0;
        std::size_t errors = 0;
        std::size_t items = 0;
    };
    StepTotals run_steps(const LabeledDataset<T>& data, std::size_t count);

    Evaluation evaluate(const LabeledDataset<T>& data);

    /// Full training run; one Metrics record per evaluation.
    Metrics fit(const LabeledDataset<T>& train, const LabeledDataset<T>& test,
                const std::function<void(const EpochMetrics&)>& on_eval = {});

    /// Selective-SGD over `data`, restricted to rates <= max_rate. Leaves the
    /// model and optimizer bit-identical to their state on entry, then sets
    /// the chosen rate.
    SearchResult select_learning_rate(const LabeledDataset<T>& data,
                                      double max_rate = std::numeric_limits<double>::infinity());

    std::size_t batches_per_epoch(const LabeledDataset<T>& data) const;

    SequentialModel<T>& model() { return *model_; }
    Optimizer<T>& optimizer() { return optimizer_; }
    SeededRng& rng() { return rng_; }
    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t s) { step_ = s; }
    const TrainConfig& config() const { return config_; }
    std::size_t skipped_steps() const { return skipped_; }

private:
    SequentialModel<T>* model_;
    TrainConfig config_;
    Optimizer<T> optimizer_;
    SoftmaxLogLoss<T> loss_;
    SeededRng rng_;
    std::uint64_t step_ = 0;
    std::size_t skipped_ = 0;
    // Permutation cache for the epoch currently being stepped through.
    std::optional<std::pair<std::uint64_t, BatchPlan>> plan_;
};

} // namespace leafnet
