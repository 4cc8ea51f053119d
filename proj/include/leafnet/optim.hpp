#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "leafnet/layers.hpp"
#include "leafnet/tensor.hpp"

namespace leafnet {

enum class OptimizerKind { sgd, adagrad, rmsprop, adam };

std::string optimizer_name(OptimizerKind kind);
OptimizerKind parse_optimizer(const std::string& name);

struct OptimHyper {
    double learning_rate = 0.01;
    double momentum = 0.0;     // sgd
    double rho = 0.9;          // rmsprop decay
    double beta1 = 0.9;        // adam
    double beta2 = 0.999;      // adam
    double epsilon = 1e-8;     // adagrad, rmsprop, adam
    double weight_decay = 0.0; // L2, added to the gradient before the update

    /// Throws ConfigError for out-of-range fields.
    void validate() const;
};

// Single-tensor update rules. Each applies weight decay to a copy of the
// gradient first.

/// v = momentum * v - lr * g;  w += v
template <typename T>
void sgd_step(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& velocity, const OptimHyper& hyper);

/// G += g^2;  w -= lr * g / (sqrt(G) + eps)
template <typename T>
void adagrad_step(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& sum_sq, const OptimHyper& hyper);

/// E = rho * E + (1 - rho) * g^2;  w -= lr * g / (sqrt(E) + eps)
template <typename T>
void rmsprop_step(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& mean_sq, const OptimHyper& hyper);

/// Bias-corrected Adam. `t` is the step count after this update (>= 1).
template <typename T>
void adam_step(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v, std::uint64_t t,
               const OptimHyper& hyper);

template <typename T>
struct OptimizerState {
    std::uint64_t steps = 0;
    std::vector<Tensor<T>> first;  // velocity / G / E / m
    std::vector<Tensor<T>> second; // adam v only
};

/// One optimizer over an ordered parameter list. Accumulators are created
/// lazily on the first step and matched to parameters by position.
template <typename T>
class Optimizer {
public:
    Optimizer(OptimizerKind kind, OptimHyper hyper);

    /// Throws NumericError naming the parameter if any gradient is non-finite;
    /// no parameter is modified in that case.
    void step(std::span<const ParamRef<T>> params);

    OptimizerKind kind() const { return kind_; }
    const OptimHyper& hyper() const { return hyper_; }
    double learning_rate() const { return hyper_.learning_rate; }
    void set_learning_rate(double lr);
    std::uint64_t steps() const { return state_.steps; }

    const OptimizerState<T>& state() const { return state_; }
    void set_state(OptimizerState<T> state) { state_ = std::move(state); }
    void reset() { state_ = {}; }

private:
    OptimizerKind kind_;
    OptimHyper hyper_;
    OptimizerState<T> state_;
};

struct SelectiveSgdConfig {
    std::vector<double> candidate_rates{1e-1, 1e-2, 1e-3, 1e-4, 1e-5};
    std::size_t trial_iterations = 50;
    /// Re-run the search every this many epochs; 0 disables.
    std::size_t reselect_every = 0;
    /// EMA weight of the newest loss in the trial score.
    double smoothing = 0.1;

    void validate() const;
};

/// The model side of a learning-rate search.
class TrialRunner {
public:
    virtual ~TrialRunner() = default;
    /// Put model and optimizer state back to the pre-search snapshot.
    virtual void restore() = 0;
    /// One training step at `rate`; returns the mini-batch loss. Iteration i
    /// of every trial must see the same data.
    virtual double trial_step(double rate, std::size_t iteration) = 0;
};

/// Trial runner over a parameter list: snapshots values and optimizer state
/// at construction, and `step(iteration)` performs one training step at the
/// optimizer's current rate.
template <typename T>
class ParameterTrials final : public TrialRunner {
public:
    ParameterTrials(std::vector<ParamRef<T>> params, Optimizer<T>& optimizer,
                    std::function<double(std::size_t)> step)
        : params_(std::move(params)), optimizer_(optimizer), state_(optimizer.state()),
          rate_(optimizer.learning_rate()), step_(std::move(step)) {
        for (const ParamRef<T>& p : params_) {
            snapshot_.push_back(*p.value);
        }
    }

    void restore() override {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            *params_[i].value = snapshot_[i];
        }
        optimizer_.set_state(state_);
        optimizer_.set_learning_rate(rate_);
    }

    double trial_step(double rate, std::size_t iteration) override {
        optimizer_.set_learning_rate(rate);
        return step_(iteration);
    }

private:
    std::vector<ParamRef<T>> params_;
    std::vector<Tensor<T>> snapshot_;
    Optimizer<T>& optimizer_;
    OptimizerState<T> state_;
    double rate_;
    std::function<double(std::size_t)> step_;
};

struct SearchResult {
    double rate = 0.0;
    std::vector<double> candidates;
    std::vector<double> scores; // smoothed final loss; +inf when diverged
};

/// Runs a short trial from the snapshot for each candidate at or below
/// `max_rate` and keeps the lowest smoothed final loss; exact ties go to the
/// larger rate. The runner is restored after the last trial.
SearchResult selective_sgd_search(TrialRunner& runner, const SelectiveSgdConfig& config,
                                  double max_rate = std::numeric_limits<double>::infinity());

} // namespace leafnet
