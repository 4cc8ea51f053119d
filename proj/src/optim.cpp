#include "leafnet/optim.hpp"

#include <algorithm>
#include <cmath>

namespace leafnet {

std::string optimizer_name(OptimizerKind kind) {
    switch (kind) {
    case OptimizerKind::sgd:
        return "sgd";
    case OptimizerKind::adagrad:
        return "adagrad";
    case OptimizerKind::rmsprop:
        return "rmsprop";
    case OptimizerKind::adam:
        return "adam";
    }
    return "unknown";
}

OptimizerKind parse_optimizer(const std::string& name) {
    for (auto kind : {OptimizerKind::sgd, OptimizerKind::adagrad, OptimizerKind::rmsprop,
                      OptimizerKind::adam}) {
        if (optimizer_name(kind) == name) {
            return kind;
        }
    }
    throw ConfigError("unknown optimizer '" + name + "' (expected sgd, adagrad, rmsprop, adam)");
}

void OptimHyper::validate() const {
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning rate must be positive and finite");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
        throw ConfigError("momentum must lie in [0, 1)");
    }
    if (!(rho > 0.0 && rho < 1.0)) {
        throw ConfigError("rmsprop decay must lie in (0, 1)");
    }
    if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in (0, 1)");
    }
    if (!(epsilon > 0.0)) {
        throw ConfigError("epsilon must be positive");
    }
    if (!(weight_decay >= 0.0)) {
        throw ConfigError("weight decay must be non-negative");
    }
}

namespace {

template <typename T>
Tensor<T> decayed(const Tensor<T>& w, const Tensor<T>& g, const OptimHyper& hyper) {
    if (w.shape() != g.shape()) {
        throw DimensionError("optimizer: parameter " + shape_str(w.shape()) + " vs gradient " +
                             shape_str(g.shape()));
    }
    Tensor<T> out = g;
    if (hyper.weight_decay != 0.0) {
        const auto wd = static_cast<T>(hyper.weight_decay);
        for (std::size_t i = 0; i < out.size(); ++i) {
            out[i] += wd * w[i];
        }
    }
    return out;
}

template <typename T>
void ensure_slot(Tensor<T>& slot, const Shape& shape) {
    if (slot.shape() != shape) {
        if (!slot.empty()) {
            throw DimensionError("optimizer: accumulator " + shape_str(slot.shape()) +
                                 " does not match parameter " + shape_str(shape));
        }
        slot = Tensor<T>(shape);
    }
}

} // namespace

template <typename T>
void sgd_step(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& velocity, const OptimHyper& hyper) {
    const Tensor<T> grad = decayed(w, g, hyper);
    const auto lr = static_cast<T>(hyper.learning_rate);
    if (hyper.momentum == 0.0) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] -= lr * grad[i];
        }
        return;
    }
    ensure_slot(velocity, w.shape());
    const auto mu = static_cast<T>(hyper.momentum);
    for (std::size_t i = 0; i < w.size(); ++i) {
        velocity[i] = mu * velocity[i] - lr * grad[i];
        w[i] += velocity[i];
    }
}

template <typename T>
void adagrad_step(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& sum_sq, const OptimHyper& hyper) {
    const Tensor<T> grad = decayed(w, g, hyper);
    ensure_slot(sum_sq, w.shape());
    const auto lr = static_cast<T>(hyper.learning_rate);
    const auto eps = static_cast<T>(hyper.epsilon);
    for (std::size_t i = 0; i < w.size(); ++i) {
        sum_sq[i] += grad[i] * grad[i];
        w[i] -= lr * grad[i] / (std::sqrt(sum_sq[i]) + eps);
    }
}

template <typename T>
void rmsprop_step(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& mean_sq, const OptimHyper& hyper) {
    const Tensor<T> grad = decayed(w, g, hyper);
    ensure_slot(mean_sq, w.shape());
    const auto lr = static_cast<T>(hyper.learning_rate);
    const auto eps = static_cast<T>(hyper.epsilon);
    const auto rho = static_cast<T>(hyper.rho);
    for (std::size_t i = 0; i < w.size(); ++i) {
        mean_sq[i] = rho * mean_sq[i] + (T{1} - rho) * grad[i] * grad[i];
        w[i] -= lr * grad[i] / (std::sqrt(mean_sq[i]) + eps);
    }
}

template <typename T>
void adam_step(Tensor<T>& w, const Tensor<T>& g, Tensor<T>& m, Tensor<T>& v, std::uint64_t t,
               const OptimHyper& hyper) {
    if (t == 0) {
        throw StateError("adam: step counter must be at least 1 after increment");
    }
    const Tensor<T> grad = decayed(w, g, hyper);
    ensure_slot(m, w.shape());
    ensure_slot(v, w.shape());
    const auto b1 = static_cast<T>(hyper.beta1);
    const auto b2 = static_cast<T>(hyper.beta2);
    const auto lr = static_cast<T>(hyper.learning_rate);
    const auto eps = static_cast<T>(hyper.epsilon);
    const auto c1 = static_cast<T>(1.0 - std::pow(hyper.beta1, static_cast<double>(t)));
    const auto c2 = static_cast<T>(1.0 - std::pow(hyper.beta2, static_cast<double>(t)));
    for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = b1 * m[i] + (T{1} - b1) * grad[i];
        v[i] = b2 * v[i] + (T{1} - b2) * grad[i] * grad[i];
        const T m_hat = m[i] / c1;
        const T v_hat = v[i] / c2;
        w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

template <typename T>
Optimizer<T>::Optimizer(OptimizerKind kind, OptimHyper hyper) : kind_(kind), hyper_(hyper) {
    hyper_.validate();
}

template <typename T>
void Optimizer<T>::set_learning_rate(double lr) {
    OptimHyper h = hyper_;
    h.learning_rate = lr;
    h.validate();
    hyper_ = h;
}

template <typename T>
void Optimizer<T>::step(std::span<const ParamRef<T>> params) {
    for (const ParamRef<T>& p : params) {
        for (T v : p.grad->data()) {
            if (!std::isfinite(v)) {
                throw NumericError("non-finite gradient in parameter '" + p.name + "'");
            }
        }
    }
    if (state_.first.empty()) {
        state_.first.resize(params.size());
        state_.second.resize(params.size());
    }
    if (state_.first.size() != params.size()) {
        throw DimensionError("optimizer: state holds " + std::to_string(state_.first.size()) +
                             " parameters, step given " + std::to_string(params.size()));
    }
    ++state_.steps;
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor<T>& w = *params[i].value;
        const Tensor<T>& g = *params[i].grad;
        switch (kind_) {
        case OptimizerKind::sgd:
            sgd_step(w, g, state_.first[i], hyper_);
            break;
        case OptimizerKind::adagrad:
            adagrad_step(w, g, state_.first[i], hyper_);
            break;
        case OptimizerKind::rmsprop:
            rmsprop_step(w, g, state_.first[i], hyper_);
            break;
        case OptimizerKind::adam:
            adam_step(w, g, state_.first[i], state_.second[i], state_.steps, hyper_);
            break;
        }
    }
}

void SelectiveSgdConfig::validate() const {
    if (candidate_rates.empty()) {
        throw ConfigError("selective SGD needs at least one candidate rate");
    }
    for (double r : candidate_rates) {
        if (!(r > 0.0) || !std::isfinite(r)) {
            throw ConfigError("selective SGD candidate rates must be positive and finite");
        }
    }
    if (trial_iterations == 0) {
        throw ConfigError("selective SGD needs at least one trial iteration");
    }
    if (!(smoothing > 0.0 && smoothing <= 1.0)) {
        throw ConfigError("selective SGD smoothing must lie in (0, 1]");
    }
}

SearchResult selective_sgd_search(TrialRunner& runner, const SelectiveSgdConfig& config,
                                  double max_rate) {
    config.validate();
    SearchResult result;
    for (double rate : config.candidate_rates) {
        if (rate <= max_rate) {
            result.candidates.push_back(rate);
        }
    }
    if (result.candidates.empty()) {
        throw ConfigError("selective SGD: no candidate rate at or below " + std::to_string(max_rate));
    }

    const double inf = std::numeric_limits<double>::infinity();
    for (double rate : result.candidates) {
        runner.restore();
        double smoothed = 0.0;
        for (std::size_t it = 0; it < config.trial_iterations; ++it) {
            double loss = inf;
            try {
                loss = runner.trial_step(rate, it);
            } catch (const NumericError&) {
                loss = inf;
            }
            if (!std::isfinite(loss)) {
                smoothed = inf;
                break;
            }
            smoothed = it == 0 ? loss : (1.0 - config.smoothing) * smoothed + config.smoothing * loss;
        }
        result.scores.push_back(smoothed);
    }
    runner.restore();

    std::size_t best = result.candidates.size();
    for (std::size_t i = 0; i < result.candidates.size(); ++i) {
        if (!std::isfinite(result.scores[i])) {
            continue;
        }
        if (best == result.candidates.size() || result.scores[i] < result.scores[best] ||
            (result.scores[i] == result.scores[best] &&
             result.candidates[i] > result.candidates[best])) {
            best = i;
        }
    }
    if (best == result.candidates.size()) {
        throw SearchError("selective SGD: every candidate rate diverged; try smaller candidates");
    }
    result.rate = result.candidates[best];
    return result;
}

#define LEAFNET_INSTANTIATE_OPTIM(T)                                                          \
    template void sgd_step(Tensor<T>&, const Tensor<T>&, Tensor<T>&, const OptimHyper&);      \
    template void adagrad_step(Tensor<T>&, const Tensor<T>&, Tensor<T>&, const OptimHyper&);  \
    template void rmsprop_step(Tensor<T>&, const Tensor<T>&, Tensor<T>&, const OptimHyper&);  \
    template void adam_step(Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&,             \
                            std::uint64_t, const OptimHyper&);                                \
    template class Optimizer<T>;

LEAFNET_INSTANTIATE_OPTIM(float)
LEAFNET_INSTANTIATE_OPTIM(double)

} // namespace leafnet
