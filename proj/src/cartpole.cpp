#include "leafnet/cartpole.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace leafnet {

bool cartpole_terminal(const CartPoleState& s, const CartPoleParams& p) {
    return s.x < -p.x_limit || s.x > p.x_limit || s.theta < -p.theta_limit ||
           s.theta > p.theta_limit || !std::isfinite(s.x) || !std::isfinite(s.theta);
}

CartPoleState cartpole_reset(SeededRng& rng) {
    CartPoleState s;
    s.x = rng.uniform(-0.05, 0.05);
    s.x_dot = rng.uniform(-0.05, 0.05);
    s.theta = rng.uniform(-0.05, 0.05);
    s.theta_dot = rng.uniform(-0.05, 0.05);
    return s;
}

EnvStep cartpole_step(const CartPoleState& s, int act, const CartPoleParams& p) {
    if (act != kPushLeft && act != kPushRight) {
        throw ConfigError("cart-pole action must be 0 or 1, got " + std::to_string(act));
    }
    if (cartpole_terminal(s, p)) {
        throw StateError("cart-pole step called on a terminal state");
    }
    const double force = act == kPushRight ? p.force : -p.force;
    const double total_mass = p.cart_mass + p.pole_mass;
    const double pole_moment = p.pole_mass * p.half_length;
    const double cos_t = std::cos(s.theta);
    const double sin_t = std::sin(s.theta);
    const double temp = (force + pole_moment * s.theta_dot * s.theta_dot * sin_t) / total_mass;
    const double theta_acc =
        (p.gravity * sin_t - cos_t * temp) /
        (p.half_length * (4.0 / 3.0 - p.pole_mass * cos_t * cos_t / total_mass));
    const double x_acc = temp - pole_moment * theta_acc * cos_t / total_mass;

    EnvStep out;
    out.state.x = s.x + p.tau * s.x_dot;
    out.state.x_dot = s.x_dot + p.tau * x_acc;
    out.state.theta = s.theta + p.tau * s.theta_dot;
    out.state.theta_dot = s.theta_dot + p.tau * theta_acc;
    out.terminal = cartpole_terminal(out.state, p);
    out.reward = out.terminal ? 0.0 : 1.0;
    return out;
}

double q_target(const Transition& t, std::span<const double> q_new, double gamma) {
    if (t.terminal) {
        return t.reward;
    }
    if (q_new.empty()) {
        throw DimensionError("q_target needs at least one action value");
    }
    return t.reward + gamma * *std::max_element(q_new.begin(), q_new.end());
}

int epsilon_greedy(std::span<const double> q, double epsilon, SeededRng& rng) {
    if (q.empty()) {
        throw DimensionError("epsilon_greedy needs at least one action value");
    }
    if (rng.uniform() < epsilon) {
        return static_cast<int>(rng.below(q.size()));
    }
    return static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
}

template <typename T>
Tensor<T> state_batch(std::span<const CartPoleState> states) {
    const std::size_t B = states.size();
    Tensor<T> x({4, B});
    for (std::size_t b = 0; b < B; ++b) {
        x[0 * B + b] = static_cast<T>(states[b].x);
        x[1 * B + b] = static_cast<T>(states[b].x_dot);
        x[2 * B + b] = static_cast<T>(states[b].theta);
        x[3 * B + b] = static_cast<T>(states[b].theta_dot);
    }
    return x;
}

template <typename T>
MaskedLoss<T> masked_squared_loss(const Tensor<T>& q, std::span<const int> actions,
                                  std::span<const double> targets) {
    if (q.rank() != 2 || q.extent(1) != actions.size() || actions.size() != targets.size()) {
        throw DimensionError("masked loss: Q " + shape_str(q.shape()) + " with " +
                             std::to_string(actions.size()) + " actions and " +
                             std::to_string(targets.size()) + " targets");
    }
    const std::size_t A = q.extent(0);
    const std::size_t B = q.extent(1);
    if (B == 0) {
        throw DimensionError("masked loss needs a non-empty batch");
    }
    MaskedLoss<T> out;
    out.grad = Tensor<T>(q.shape());
    for (std::size_t b = 0; b < B; ++b) {
        const auto a = static_cast<std::size_t>(actions[b]);
        if (actions[b] < 0 || a >= A) {
            throw IndexError("action " + std::to_string(actions[b]) + " outside [0, " +
                             std::to_string(A) + ")");
        }
        const double diff = static_cast<double>(q[a * B + b]) - targets[b];
        out.loss += diff * diff;
        out.grad[a * B + b] = static_cast<T>(2.0 * diff / static_cast<double>(B));
    }
    out.loss /= static_cast<double>(B);
    return out;
}

namespace {

template <typename T>
std::vector<double> column(const Tensor<T>& q, std::size_t b) {
    const std::size_t A = q.extent(0);
    const std::size_t B = q.extent(1);
    std::vector<double> out(A);
    for (std::size_t a = 0; a < A; ++a) {
        out[a] = static_cast<double>(q[a * B + b]);
    }
    return out;
}

template <typename T>
std::vector<double> batch_targets(SequentialModel<T>& model, std::span<const Transition> batch,
                                  double gamma) {
    std::vector<CartPoleState> next(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        next[b] = batch[b].state_new;
    }
    const Tensor<T> q_next = model.forward(state_batch<T>(next), false);
    std::vector<double> targets(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        targets[b] = q_target(batch[b], column(q_next, b), gamma);
    }
    return targets;
}

} // namespace

template <typename T>
double q_train_step(SequentialModel<T>& model, std::span<const Transition> batch, double gamma,
                    Optimizer<T>& optimizer) {
    if (batch.empty()) {
        throw DimensionError("Q-learning step needs a non-empty batch");
    }
    const std::vector<double> targets = batch_targets(model, batch, gamma);
    std::vector<CartPoleState> old(batch.size());
    std::vector<int> actions(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        old[b] = batch[b].state_old;
        actions[b] = batch[b].act;
    }
    const Tensor<T> q = model.forward(state_batch<T>(old), true);
    const MaskedLoss<T> loss = masked_squared_loss(q, actions, targets);
    if (!std::isfinite(loss.loss)) {
        throw NumericError("Q-learning loss is not finite");
    }
    model.backward(loss.grad);
    optimizer.step(model.parameters());
    return loss.loss;
}

template <typename T>
SequentialModel<T> make_qnet(std::span<const std::size_t> hidden) {
    SequentialModel<T> model;
    std::size_t in = 4;
    for (std::size_t width : hidden) {
        model.template emplace<LinearLayer<T>>(in, width);
        model.template emplace<ActivationLayer<T>>(Activation::relu);
        in = width;
    }
    model.template emplace<LinearLayer<T>>(in, kCartPoleActions);
    return model;
}

GradCheckReport grad_check_qnet(SequentialModel<double>& model, std::span<const Transition> batch,
                                std::span<const double> targets, const GradCheckOptions& options) {
    std::vector<CartPoleState> old(batch.size());
    std::vector<int> actions(batch.size());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        old[b] = batch[b].state_old;
        actions[b] = batch[b].act;
    }
    Tensor<double> x = state_batch<double>(old);
    const MaskedLoss<double> loss =
        masked_squared_loss(model.forward(x, true), actions, targets);
    const Tensor<double> input_grad = model.backward(loss.grad);

    std::vector<ParamRef<double>> params = model.parameters();
    std::vector<Tensor<double>> analytic;
    analytic.reserve(params.size() + 1);
    for (const ParamRef<double>& p : params) {
        analytic.push_back(*p.grad);
    }
    analytic.push_back(input_grad);
    std::vector<GradTarget> gt;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string& name = params[i].name;
        gt.push_back({name.substr(0, name.rfind('.')), name, params[i].value, &analytic[i]});
    }
    gt.push_back({"input", "input", &x, &analytic.back()});
    return check_gradients(
        gt, [&] { return masked_squared_loss(model.forward(x, true), actions, targets).loss; },
        options);
}

void QNetConfig::validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) {
        throw ConfigError("gamma must be in [0, 1)");
    }
    for (double e : {epsilon_start, epsilon_end}) {
        if (!(e >= 0.0 && e <= 1.0)) {
            throw ConfigError("epsilon must be in [0, 1]");
        }
    }
    if (!(epsilon_decay > 0.0 && epsilon_decay <= 1.0)) {
        throw ConfigError("epsilon decay must be in (0, 1]");
    }
    if (replay && (replay->capacity == 0 || replay->batch_size == 0 ||
                   replay->batch_size > replay->capacity)) {
        throw ConfigError("replay needs 0 < batch size <= capacity");
    }
    if (max_steps == 0) {
        throw ConfigError("episode step cap must be at least 1");
    }
    hyper.validate();
}

template <typename T>
double evaluate_policy(SequentialModel<T>& model, std::size_t episodes, std::size_t max_steps,
                       SeededRng& rng, std::vector<std::size_t>* lengths) {
    if (episodes == 0) {
        return 0.0;
    }
    double total = 0.0;
    for (std::size_t e = 0; e < episodes; ++e) {
        CartPoleState s = cartpole_reset(rng);
        std::size_t steps = 0;
        while (steps < max_steps) {
            const CartPoleState one[1] = {s};
            const std::vector<double> q = column(model.forward(state_batch<T>(one), false), 0);
            const int act = static_cast<int>(std::max_element(q.begin(), q.end()) - q.begin());
            const EnvStep next = cartpole_step(s, act);
            ++steps;
            if (next.terminal) {
                break;
            }
            s = next.state;
        }
        if (lengths != nullptr) {
            lengths->push_back(steps);
        }
        total += static_cast<double>(steps);
    }
    return total / static_cast<double>(episodes);
}

template <typename T>
QNetRun<T> run_qnet_training(const QNetConfig& config, std::uint64_t seed,
                             const std::function<void(const EpisodeRecord&)>& on_episode) {
    config.validate();
    QNetRun<T> run{make_qnet<T>(config.hidden), {}, {}, std::nullopt, 0};
    SeededRng init = SeededRng::derive(seed, 1);
    run.model.initialize(init);
    SeededRng env_rng = SeededRng::derive(seed, 2);
    SeededRng act_rng = SeededRng::derive(seed, 3);
    SeededRng replay_rng = SeededRng::derive(seed, 4);
    SeededRng eval_rng = SeededRng::derive(seed, 5);
    Optimizer<T> optimizer(config.optimizer, config.hyper);

    std::deque<Transition> replay;
    std::vector<Transition> batch;
    double epsilon = config.epsilon_start;

    for (std::size_t episode = 1; episode <= config.max_episodes; ++episode) {
        CartPoleState s = cartpole_reset(env_rng);
        EpisodeRecord rec;
        rec.episode = episode;
        rec.epsilon = epsilon;
        double loss_sum = 0.0;
        std::size_t updates = 0;
        while (rec.steps < config.max_steps) {
            const CartPoleState one[1] = {s};
            const std::vector<double> q =
                column(run.model.forward(state_batch<T>(one), false), 0);
            const int act = epsilon_greedy(q, epsilon, act_rng);
            const EnvStep next = cartpole_step(s, act);
            ++rec.steps;
            rec.total_reward += next.reward;
            const Transition tr{s, act, next.reward, next.state, next.terminal};

            batch.clear();
            if (config.replay) {
                replay.push_back(tr);
                if (replay.size() > config.replay->capacity) {
                    replay.pop_front();
                }
                if (replay.size() >= config.replay->batch_size) {
                    for (std::size_t k = 0; k < config.replay->batch_size; ++k) {
                        batch.push_back(replay[replay_rng.below(replay.size())]);
                    }
                }
            } else {
                batch.push_back(tr);
            }
            if (!batch.empty()) {
                try {
                    loss_sum += q_train_step(run.model, std::span<const Transition>(batch),
                                             config.gamma, optimizer);
                } catch (const NumericError& e) {
                    throw NumericError("episode " + std::to_string(episode) + ": " + e.what());
                }
                ++updates;
                ++run.gradient_steps;
            }
            if (next.terminal) {
                break;
            }
            s = next.state;
        }
        rec.mean_loss = updates > 0 ? loss_sum / static_cast<double>(updates)
                                    : std::numeric_limits<double>::quiet_NaN();
        run.episodes.push_back(rec);
        if (on_episode) {
            on_episode(rec);
        }
        epsilon = std::max(config.epsilon_end, epsilon * config.epsilon_decay);

        if (config.eval_every > 0 && episode % config.eval_every == 0) {
            const double mean =
                evaluate_policy(run.model, config.eval_episodes, config.max_steps, eval_rng);
            run.evaluations.push_back({episode, mean});
            if (mean >= config.success_threshold) {
                run.solved_at = episode;
                break;
            }
        }
    }
    return run;
}

#define LEAFNET_INSTANTIATE_CARTPOLE(T)                                                         \
    template Tensor<T> state_batch(std::span<const CartPoleState>);                             \
    template MaskedLoss<T> masked_squared_loss(const Tensor<T>&, std::span<const int>,          \
                                               std::span<const double>);                        \
    template double q_train_step(SequentialModel<T>&, std::span<const Transition>, double,      \
                                 Optimizer<T>&);                                                \
    template SequentialModel<T> make_qnet(std::span<const std::size_t>);                        \
    template double evaluate_policy(SequentialModel<T>&, std::size_t, std::size_t, SeededRng&,  \
                                    std::vector<std::size_t>*);                                 \
    template QNetRun<T> run_qnet_training(const QNetConfig&, std::uint64_t,                     \
                                          const std::function<void(const EpisodeRecord&)>&);

LEAFNET_INSTANTIATE_CARTPOLE(float)
LEAFNET_INSTANTIATE_CARTPOLE(double)

} // namespace leafnet
