#include "leafnet/network.hpp"

#include <chrono>
#include <cmath>

namespace leafnet {

template <typename T>
SequentialModel<T>::SequentialModel(const SequentialModel& other) {
    layers_.reserve(other.layers_.size());
    for (const auto& l : other.layers_) {
        layers_.push_back(l->clone());
    }
}

template <typename T>
SequentialModel<T>& SequentialModel<T>::operator=(const SequentialModel& other) {
    if (this != &other) {
        SequentialModel copy(other);
        layers_ = std::move(copy.layers_);
    }
    return *this;
}

template <typename T>
Shape SequentialModel<T>::validate(const Shape& input) const {
    Shape shape = input;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            shape = layers_[i]->output_shape(shape);
        } catch (const DimensionError& e) {
            throw DimensionError("layer " + std::to_string(i) + " (" + layers_[i]->kind() +
                                 "): " + e.what());
        }
    }
    return shape;
}

template <typename T>
Tensor<T> SequentialModel<T>::forward(const Tensor<T>& x, bool train) {
    Tensor<T> out = x;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        try {
            out = layers_[i]->forward(out, train);
        } catch (const DimensionError& e) {
            throw DimensionError("layer " + std::to_string(i) + " (" + layers_[i]->kind() +
                                 "): " + e.what());
        }
    }
    return out;
}

template <typename T>
Tensor<T> SequentialModel<T>::backward(const Tensor<T>& dzdy) {
    Tensor<T> grad = dzdy;
    for (std::size_t i = layers_.size(); i-- > 0;) {
        try {
            grad = layers_[i]->backward(grad);
        } catch (const DimensionError& e) {
            throw DimensionError("layer " + std::to_string(i) + " (" + layers_[i]->kind() +
                                 "): " + e.what());
        }
    }
    return grad;
}

template <typename T>
std::vector<ParamRef<T>> SequentialModel<T>::parameters() {
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        for (ParamRef<T>& p : layers_[i]->parameters()) {
            p.name = std::to_string(i) + "." + layers_[i]->kind() + "." + p.name;
            out.push_back(std::move(p));
        }
    }
    return out;
}

template <typename T>
void SequentialModel<T>::initialize(SeededRng& rng) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const std::size_t fan_in = layers_[i]->fan_in();
        if (fan_in == 0) {
            continue;
        }
        const bool feeds_relu = i + 1 < layers_.size() && layers_[i + 1]->kind() == "relu";
        const double stddev = std::sqrt((feeds_relu ? 2.0 : 1.0) / static_cast<double>(fan_in));
        for (ParamRef<T>& p : layers_[i]->parameters()) {
            if (p.name == "b") {
                p.value->fill(T{});
                continue;
            }
            for (T& v : p.value->data()) {
                v = static_cast<T>(rng.normal(0.0, stddev));
            }
        }
    }
}

void TrainConfig::validate() const {
    if (batch_size == 0) {
        throw ConfigError("batch size must be at least 1");
    }
    if (eval_every == 0 || eval_batch_size == 0) {
        throw ConfigError("evaluation interval and batch size must be at least 1");
    }
    if (divergence_patience == 0) {
        throw ConfigError("divergence patience must be at least 1");
    }
    hyper.validate();
    if (selective_sgd) {
        selective_sgd->validate();
    }
}

template <typename T>
Trainer<T>::Trainer(SequentialModel<T>& model, TrainConfig config)
    : model_(&model),
      config_(std::move(config)),
      optimizer_(config_.optimizer, config_.hyper),
      rng_(config_.seed) {
    config_.validate();
}

template <typename T>
double Trainer<T>::train_step(const Batch<T>& batch) {
    ++step_;
    const Tensor<T> out = model_->forward(batch.inputs, true);
    const T loss = loss_.forward(out, batch.labels);
    if (!std::isfinite(loss)) {
        ++skipped_;
        return std::numeric_limits<double>::quiet_NaN();
    }
    model_->backward(loss_.backward());
    const std::vector<ParamRef<T>> params = model_->parameters();
    try {
        optimizer_.step(params);
    } catch (const NumericError&) {
        ++skipped_;
        return std::numeric_limits<double>::quiet_NaN();
    }
    return static_cast<double>(loss);
}

template <typename T>
std::size_t Trainer<T>::batches_per_epoch(const LabeledDataset<T>& data) const {
    return (data.size() + config_.batch_size - 1) / config_.batch_size;
}

template <typename T>
typename Trainer<T>::StepTotals Trainer<T>::run_steps(const LabeledDataset<T>& data,
                                                      std::size_t count) {
    if (data.size() == 0) {
        throw DataError("training set is empty");
    }
    const std::size_t per_epoch = batches_per_epoch(data);
    StepTotals totals;
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t epoch = step_ / per_epoch;
        const std::size_t pos = static_cast<std::size_t>(step_ % per_epoch);
        if (!plan_ || plan_->first != epoch || plan_->second.batches() != per_epoch) {
            SeededRng order = SeededRng::derive(config_.seed, epoch);
            plan_.emplace(epoch, BatchPlan(data.size(), config_.batch_size, order));
        }
        const Batch<T> batch = gather(data, plan_->second.batch(pos));
        const double loss = train_step(batch);
        totals.loss_sum += loss * static_cast<double>(batch.labels.size());
        totals.errors += std::isfinite(loss) ? loss_.errors() : batch.labels.size();
        totals.items += batch.labels.size();
    }
    return totals;
}

template <typename T>
Evaluation Trainer<T>::evaluate(const LabeledDataset<T>& data) {
    if (data.size() == 0) {
        throw DataError("evaluation set is empty");
    }
    SoftmaxLogLoss<T> loss;
    double loss_sum = 0.0;
    std::size_t errors = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < data.size(); start += config_.eval_batch_size) {
        const std::size_t end = std::min(data.size(), start + config_.eval_batch_size);
        idx.resize(end - start);
        for (std::size_t i = start; i < end; ++i) {
            idx[i - start] = i;
        }
        const Batch<T> batch = gather(data, idx);
        const T l = loss.forward(model_->forward(batch.inputs, false), batch.labels);
        loss_sum += static_cast<double>(l) * static_cast<double>(idx.size());
        errors += loss.errors();
    }
    const auto n = static_cast<double>(data.size());
    return {loss_sum / n, static_cast<double>(errors) / n};
}

template <typename T>
SearchResult Trainer<T>::select_learning_rate(const LabeledDataset<T>& data, double max_rate) {
    const SelectiveSgdConfig search = config_.selective_sgd.value_or(SelectiveSgdConfig{});
    if (data.size() == 0) {
        throw DataError("selective SGD: training set is empty");
    }
    SeededRng order = SeededRng::derive(config_.seed, rng_.next_u64());
    const BatchPlan plan(data.size(), config_.batch_size, order);
    const std::uint64_t saved_step = step_;
    const std::size_t saved_skipped = skipped_;

    ParameterTrials<T> runner(model_->parameters(), optimizer_, [&](std::size_t it) {
        return train_step(gather(data, plan.batch(it % plan.batches())));
    });
    SearchResult result = selective_sgd_search(runner, search, max_rate);
    step_ = saved_step;
    skipped_ = saved_skipped;
    optimizer_.set_learning_rate(result.rate);
    return result;
}

template <typename T>
Metrics Trainer<T>::fit(const LabeledDataset<T>& train, const LabeledDataset<T>& test,
                        const std::function<void(const EpochMetrics&)>& on_eval) {
    Metrics metrics;
    if (config_.epochs == 0) {
        return metrics;
    }
    if (train.size() == 0 || test.size() == 0) {
        throw DataError("training and test sets must be non-empty");
    }
    const auto& search = config_.selective_sgd;
    if (search) {
        select_learning_rate(train);
    }
    const std::size_t per_epoch = batches_per_epoch(train);
    std::size_t bad_evals = 0;
    StepTotals running;
    auto clock_start = std::chrono::steady_clock::now();
    for (std::size_t epoch = 1; epoch <= config_.epochs; ++epoch) {
        if (search && search->reselect_every > 0 && epoch > 1 &&
            (epoch - 1) % search->reselect_every == 0) {
            select_learning_rate(train, optimizer_.learning_rate());
        }
        const StepTotals totals = run_steps(train, per_epoch);
        running.loss_sum += totals.loss_sum;
        running.errors += totals.errors;
        running.items += totals.items;
        if (epoch % config_.eval_every != 0 && epoch != config_.epochs) {
            continue;
        }
        const Evaluation test_eval = evaluate(test);
        const auto now = std::chrono::steady_clock::now();
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = running.loss_sum / static_cast<double>(running.items);
        m.train_err = static_cast<double>(running.errors) / static_cast<double>(running.items);
        m.test_loss = test_eval.loss;
        m.test_err = test_eval.error_rate;
        m.seconds = std::chrono::duration<double>(now - clock_start).count();
        running = {};
        clock_start = now;
        metrics.push_back(m);
        if (on_eval) {
            on_eval(m);
        }
        if (!std::isfinite(m.train_loss) || !std::isfinite(m.test_loss)) {
            if (++bad_evals >= config_.divergence_patience) {
                throw DivergenceError("training diverged: non-finite loss for " +
                                      std::to_string(bad_evals) +
                                      " consecutive evaluations (epoch " + std::to_string(epoch) +
                                      ")");
            }
        } else {
            bad_evals = 0;
        }
    }
    return metrics;
}

template class SequentialModel<float>;
template class SequentialModel<double>;
template class Trainer<float>;
template class Trainer<double>;

} // namespace leafnet
