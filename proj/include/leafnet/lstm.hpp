#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "leafnet/layers.hpp"
#include "leafnet/network.hpp"
#include "leafnet/optim.hpp"
#include "leafnet/rng.hpp"
#include "leafnet/tensor.hpp"

namespace leafnet {

/// Single-layer LSTM with a softmax output projection. Inputs are symbol
/// indices, so x_t is a one-hot column and W_*x · x_t is a column gather.
///
///   i_t = sigmoid(W_ih h_{t-1} + W_ix x_t + b_i)
///   o_t = sigmoid(W_oh h_{t-1} + W_ox x_t + b_o)
///   f_t = sigmoid(W_fh h_{t-1} + W_fx x_t + b_f)
///   g_t = tanh   (W_gh h_{t-1} + W_gx x_t + b_g)
///   c_t = f_t * c_{t-1} + i_t * g_t
///   h_t = o_t * tanh(c_t)
///   z_t = logloss(softmax(W_y h_t + b_y), target_t)      z = sum_t z_t
template <typename T>
struct LstmParams {
    Tensor<T> W_ih, W_ix, W_oh, W_ox, W_fh, W_fx, W_gh, W_gx;
    Tensor<T> b_i, b_o, b_f, b_g;
    Tensor<T> W_y, b_y;

    static LstmParams zeros(std::size_t hidden, std::size_t input, std::size_t vocab);

    std::size_t hidden() const { return b_i.size(); }
    std::size_t input() const { return W_ix.shape().empty() ? 0 : W_ix.extent(1); }
    std::size_t vocab() const { return b_y.size(); }

    /// Fixed order, used for checkpoints and optimizer state.
    std::vector<std::pair<std::string, Tensor<T>*>> named();
    std::vector<std::pair<std::string, const Tensor<T>*>> named() const;

    /// Gaussian weights with std 1/sqrt(fan_in); biases 0 except the forget
    /// gate, which starts at 1.
    void initialize(SeededRng& rng);
    void check() const;
};

/// Pairs each parameter with its gradient slot.
template <typename T>
std::vector<ParamRef<T>> lstm_parameter_refs(LstmParams<T>& params, LstmParams<T>& grads);

/// Per-step activations, each stored as hidden x batch (probabilities as
/// vocab x batch). Index 0 of c and h holds the initial state.
template <typename T>
struct LstmCache {
    std::size_t steps = 0;
    std::size_t batch = 0;
    std::vector<std::vector<std::int32_t>> inputs;
    std::vector<std::vector<std::int32_t>> targets;
    std::vector<Tensor<T>> i, o, f, g, c, h, tanh_c, probs;
};

template <typename T>
struct LstmForwardResult {
    double loss = 0.0;                // sum over steps of the batch-mean loss
    std::vector<double> step_losses;  // z_t
    std::size_t correct = 0;          // argmax hits over all steps and items
    LstmCache<T> cache;
};

/// `inputs[t][b]` and `targets[t][b]` are symbol indices. h0 and c0 are
/// hidden x batch; pass empty tensors for zeros.
template <typename T>
LstmForwardResult<T> lstm_forward(const LstmParams<T>& params,
                                  std::span<const std::vector<std::int32_t>> inputs,
                                  std::span<const std::vector<std::int32_t>> targets,
                                  const Tensor<T>& h0 = {}, const Tensor<T>& c0 = {});

template <typename T>
struct LstmGradients {
    LstmParams<T> params;
    Tensor<T> dh0;
    Tensor<T> dc0;
};

template <typename T>
LstmGradients<T> lstm_backward(const LstmParams<T>& params, const LstmCache<T>& cache);

/// Elementwise clip of every gradient to [-limit, limit].
template <typename T>
void clip_gradients(LstmParams<T>& grads, T limit);

/// Distinct code points of a UTF-8 corpus, sorted ascending.
class CharVocab {
public:
    CharVocab() = default;
    explicit CharVocab(std::vector<char32_t> symbols);

    std::size_t size() const { return symbols_.size(); }
    const std::vector<char32_t>& symbols() const { return symbols_; }
    std::int32_t index(char32_t c) const;
    bool contains(char32_t c) const { return lookup_.count(c) != 0; }
    std::vector<std::int32_t> encode(std::string_view utf8) const;
    std::string decode(std::span<const std::int32_t> ids) const;

private:
    std::vector<char32_t> symbols_;
    std::map<char32_t, std::int32_t> lookup_;
};

std::vector<char32_t> utf8_decode(std::string_view text);
std::string utf8_encode(std::span<const char32_t> code_points);

/// Corpus split into windows of `seq_len` inputs with next-symbol targets.
/// Window w covers ids[w*L, w*L+L) and predicts ids[w*L+1, w*L+L+1); a tail
/// too short for a full window is dropped.
struct CharDataset {
    CharVocab vocab;
    std::vector<std::int32_t> ids;
    std::size_t seq_len = 0;
    std::vector<std::size_t> windows;  // start offsets into ids

    std::size_t size() const { return windows.size(); }
};

CharDataset char_dataset(std::string_view text, std::size_t seq_len);

/// Splits windows into (train, held-out) with the last `fraction` of windows,
/// in corpus order, held out.
std::pair<CharDataset, CharDataset> split_char_dataset(const CharDataset& data, double fraction);

/// Assembles time-major inputs/targets for a set of windows.
void gather_windows(const CharDataset& data, std::span<const std::size_t> which,
                    std::vector<std::vector<std::int32_t>>& inputs,
                    std::vector<std::vector<std::int32_t>>& targets);

/// Accuracy of guessing by training-set symbol frequencies: sum_c p_train(c) *
/// p_test(c) for the stochastic guess and max_c p_train(c)-guess hit rate for
/// the majority guess.
struct UnigramBaseline {
    double sampled_accuracy = 0.0;
    double majority_accuracy = 0.0;
};
UnigramBaseline unigram_baseline(const CharDataset& train, const CharDataset& test);

/// Primes with `prime` (which must be non-empty and in-vocabulary), then
/// draws `length` symbols from softmax(logits / temperature). Temperatures at
/// or below 1e-6 pick the argmax. Returns prime followed by the sample.
template <typename T>
std::string lstm_sample(const LstmParams<T>& params, const CharVocab& vocab,
                        std::string_view prime, std::size_t length, double temperature,
                        SeededRng& rng);

struct LstmTrainConfig {
    std::size_t hidden = 30;
    std::size_t seq_len = 50;
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    OptimizerKind optimizer = OptimizerKind::rmsprop;
    OptimHyper hyper = [] {
        OptimHyper h;
        h.learning_rate = 1e-2;
        return h;
    }();
    std::optional<SelectiveSgdConfig> selective_sgd;
    double clip = 5.0;  // <= 0 disables
    std::uint64_t seed = 0;

    void validate() const;
};

template <typename T>
class LstmTrainer {
public:
    LstmTrainer(std::size_t vocab, LstmTrainConfig config);

    /// One optimizer step on a batch of windows; returns the per-symbol mean
    /// loss, or NaN when the step was skipped as non-finite.
    double train_step(const CharDataset& data, std::span<const std::size_t> which);

    /// Per-symbol loss and error rate over all windows.
    Evaluation evaluate(const CharDataset& data) const;

    Metrics fit(const CharDataset& train, const CharDataset& test,
                const std::function<void(const EpochMetrics&)>& on_eval = {});

    SearchResult select_learning_rate(const CharDataset& data,
                                      double max_rate = std::numeric_limits<double>::infinity());

    LstmParams<T>& params() { return params_; }
    const LstmParams<T>& params() const { return params_; }
    std::vector<ParamRef<T>> parameter_refs() { return lstm_parameter_refs(params_, grads_); }
    Optimizer<T>& optimizer() { return optimizer_; }
    SeededRng& rng() { return rng_; }
    std::uint64_t step() const { return step_; }
    void set_step(std::uint64_t s) { step_ = s; }
    const LstmTrainConfig& config() const { return config_; }

private:
    LstmTrainConfig config_;
    LstmParams<T> params_;
    LstmParams<T> grads_;
    Optimizer<T> optimizer_;
    SeededRng rng_;
    std::uint64_t step_ = 0;
    std::size_t last_correct_ = 0;
};

} // namespace leafnet
