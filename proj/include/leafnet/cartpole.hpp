#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "leafnet/gradcheck.hpp"
#include "leafnet/network.hpp"
#include "leafnet/optim.hpp"
#include "leafnet/rng.hpp"

namespace leafnet {

struct CartPoleState {
    double x = 0.0;          // m
    double x_dot = 0.0;      // m/s
    double theta = 0.0;      // rad, 0 = upright
    double theta_dot = 0.0;  // rad/s
};

struct CartPoleParams {
    double gravity = 9.8;
    double cart_mass = 1.0;
    double pole_mass = 0.1;
    double half_length = 0.5;
    double force = 10.0;
    double tau = 0.02;
    double x_limit = 2.4;
    double theta_limit = 12.0 * 2.0 * 3.14159265358979323846 / 360.0;
};

inline constexpr int kPushLeft = 0;
inline constexpr int kPushRight = 1;
inline constexpr std::size_t kCartPoleActions = 2;

struct EnvStep {
    CartPoleState state;
    double reward = 0.0;
    bool terminal = false;
};

bool cartpole_terminal(const CartPoleState& s, const CartPoleParams& p = {});

/// Each component uniform in [-0.05, 0.05].
CartPoleState cartpole_reset(SeededRng& rng);

/// One explicit Euler step. Reward is 1 unless the new state is terminal.
/// Throws StateError when `s` is already terminal and ConfigError on a bad
/// action.
EnvStep cartpole_step(const CartPoleState& s, int act, const CartPoleParams& p = {});

struct Transition {
    CartPoleState state_old;
    int act = 0;
    double reward = 0.0;
    CartPoleState state_new;
    bool terminal = false;
};

/// reward + gamma * max(q_new), or reward alone for terminal transitions.
double q_target(const Transition& t, std::span<const double> q_new, double gamma);

/// Uniform action with probability epsilon, otherwise the first argmax.
/// Always consumes one uniform draw so the stream does not depend on epsilon.
int epsilon_greedy(std::span<const double> q, double epsilon, SeededRng& rng);

/// 4 x B state matrix.
template <typename T>
Tensor<T> state_batch(std::span<const CartPoleState> states);

/// Mean squared error on the taken actions only:
///   loss = mean_b (Q[a_b, b] - y_b)^2,  dQ[a_b, b] = 2 (Q[a_b, b] - y_b) / B
/// with every other entry of dQ exactly 0.
template <typename T>
struct MaskedLoss {
    double loss = 0.0;
    Tensor<T> grad;
};

template <typename T>
MaskedLoss<T> masked_squared_loss(const Tensor<T>& q, std::span<const int> actions,
                                  std::span<const double> targets);

/// One Q-learning update on a batch. Targets come from the current network
/// and are held constant. Throws NumericError on a non-finite loss.
template <typename T>
double q_train_step(SequentialModel<T>& model, std::span<const Transition> batch, double gamma,
                    Optimizer<T>& optimizer);

/// 4 -> hidden... -> 2 with relu between linear layers.
template <typename T>
SequentialModel<T> make_qnet(std::span<const std::size_t> hidden);

/// Gradient check of the masked loss with fixed targets; groups are layers.
GradCheckReport grad_check_qnet(SequentialModel<double>& model, std::span<const Transition> batch,
                                std::span<const double> targets, const GradCheckOptions& options);

struct ReplayConfig {
    std::size_t capacity = 10000;
    std::size_t batch_size = 32;
};

struct QNetConfig {
    double gamma = 0.99;
    double epsilon_start = 1.0;
    double epsilon_end = 0.05;
    double epsilon_decay = 0.995;  // per episode
    std::vector<std::size_t> hidden = {64};
    std::optional<ReplayConfig> replay = ReplayConfig{};
    std::size_t max_episodes = 2000;
    std::size_t max_steps = 200;   // episode cap; truncation is not terminal
    double success_threshold = 195.0;
    std::size_t eval_episodes = 100;
    std::size_t eval_every = 10;   // 0 disables evaluation and early stopping
    OptimizerKind optimizer = OptimizerKind::adam;
    OptimHyper hyper = [] {
        OptimHyper h;
        h.learning_rate = 1e-3;
        return h;
    }();

    void validate() const;
};

struct EpisodeRecord {
    std::size_t episode = 0;
    std::size_t steps = 0;
    double total_reward = 0.0;
    double epsilon = 0.0;
    double mean_loss = 0.0;  // NaN when no update ran
};

struct QNetEvaluation {
    std::size_t after_episode = 0;
    double mean_length = 0.0;
};

template <typename T>
struct QNetRun {
    SequentialModel<T> model;
    std::vector<EpisodeRecord> episodes;
    std::vector<QNetEvaluation> evaluations;
    std::optional<std::size_t> solved_at;  // episode count at first passing evaluation
    std::uint64_t gradient_steps = 0;
};

/// Mean greedy episode length over `episodes` runs from fresh resets.
template <typename T>
double evaluate_policy(SequentialModel<T>& model, std::size_t episodes, std::size_t max_steps,
                       SeededRng& rng, std::vector<std::size_t>* lengths = nullptr);

template <typename T>
QNetRun<T> run_qnet_training(const QNetConfig& config, std::uint64_t seed,
                             const std::function<void(const EpisodeRecord&)>& on_episode = {});

} // namespace leafnet
