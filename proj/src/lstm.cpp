#include "leafnet/lstm.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "leafnet/datasets.hpp"

namespace leafnet {

namespace {

// Gate pre-activation: W_h h + W_x[:, x_b] + bias, hidden x batch.
template <typename T>
Tensor<T> gate_input(const Tensor<T>& W_h, const Tensor<T>& W_x, const Tensor<T>& bias,
                     const Tensor<T>& h_prev, std::span<const std::int32_t> x) {
    Tensor<T> a = matmul(W_h, h_prev);
    const std::size_t H = a.extent(0);
    const std::size_t B = a.extent(1);
    const std::size_t I = W_x.extent(1);
    for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t b = 0; b < B; ++b) {
            a[r * B + b] += W_x[r * I + static_cast<std::size_t>(x[b])] + bias[r];
        }
    }
    return a;
}

// dW_x[:, x_b] += da[:, b]; db += rowsum(da); dW_h += da h_prev^T.
template <typename T>
void accumulate_gate(const Tensor<T>& da, const Tensor<T>& h_prev, std::span<const std::int32_t> x,
                     Tensor<T>& dW_h, Tensor<T>& dW_x, Tensor<T>& db) {
    axpy(T{1}, matmul_nt(da, h_prev), dW_h);
    const std::size_t H = da.extent(0);
    const std::size_t B = da.extent(1);
    const std::size_t I = dW_x.extent(1);
    for (std::size_t r = 0; r < H; ++r) {
        for (std::size_t b = 0; b < B; ++b) {
            const T v = da[r * B + b];
            dW_x[r * I + static_cast<std::size_t>(x[b])] += v;
            db[r] += v;
        }
    }
}

void check_indices(std::span<const std::int32_t> ids, std::size_t limit, const char* what,
                   std::size_t step) {
    for (std::int32_t v : ids) {
        if (v < 0 || static_cast<std::size_t>(v) >= limit) {
            throw IndexError(std::string(what) + " index " + std::to_string(v) + " at step " +
                             std::to_string(step) + " outside [0, " + std::to_string(limit) + ")");
        }
    }
}

} // namespace

template <typename T>
LstmParams<T> LstmParams<T>::zeros(std::size_t hidden, std::size_t input, std::size_t vocab) {
    if (hidden == 0 || input == 0 || vocab == 0) {
        throw DimensionError("LSTM sizes must be positive (hidden " + std::to_string(hidden) +
                             ", input " + std::to_string(input) + ", vocab " +
                             std::to_string(vocab) + ")");
    }
    LstmParams p;
    for (Tensor<T>* w : {&p.W_ih, &p.W_oh, &p.W_fh, &p.W_gh}) {
        *w = Tensor<T>({hidden, hidden});
    }
    for (Tensor<T>* w : {&p.W_ix, &p.W_ox, &p.W_fx, &p.W_gx}) {
        *w = Tensor<T>({hidden, input});
    }
    for (Tensor<T>* b : {&p.b_i, &p.b_o, &p.b_f, &p.b_g}) {
        *b = Tensor<T>({hidden});
    }
    p.W_y = Tensor<T>({vocab, hidden});
    p.b_y = Tensor<T>({vocab});
    return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> LstmParams<T>::named() {
    return {{"W_ih", &W_ih}, {"W_ix", &W_ix}, {"W_oh", &W_oh}, {"W_ox", &W_ox},
            {"W_fh", &W_fh}, {"W_fx", &W_fx}, {"W_gh", &W_gh}, {"W_gx", &W_gx},
            {"b_i", &b_i},   {"b_o", &b_o},   {"b_f", &b_f},   {"b_g", &b_g},
            {"W_y", &W_y},   {"b_y", &b_y}};
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> LstmParams<T>::named() const {
    std::vector<std::pair<std::string, const Tensor<T>*>> out;
    for (const auto& [name, t] : const_cast<LstmParams*>(this)->named()) {
        out.emplace_back(name, t);
    }
    return out;
}

template <typename T>
void LstmParams<T>::initialize(SeededRng& rng) {
    const double sd_h = 1.0 / std::sqrt(static_cast<double>(hidden()));
    const double sd_x = 1.0 / std::sqrt(static_cast<double>(input()));
    for (Tensor<T>* w : {&W_ih, &W_oh, &W_fh, &W_gh, &W_y}) {
        for (T& v : w->data()) {
            v = static_cast<T>(rng.normal(0.0, sd_h));
        }
    }
    // One-hot inputs touch a single column, so fan-in is 1 per step; the
    // 1/sqrt(input) scale keeps gate inputs small at start.
    for (Tensor<T>* w : {&W_ix, &W_ox, &W_fx, &W_gx}) {
        for (T& v : w->data()) {
            v = static_cast<T>(rng.normal(0.0, sd_x));
        }
    }
    for (Tensor<T>* b : {&b_i, &b_o, &b_g, &b_y}) {
        b->fill(T{});
    }
    b_f.fill(T{1});
}

template <typename T>
void LstmParams<T>::check() const {
    const std::size_t H = hidden();
    const std::size_t I = input();
    for (const Tensor<T>* w : {&W_ih, &W_oh, &W_fh, &W_gh}) {
        if (w->shape() != Shape{H, H}) {
            throw DimensionError("LSTM recurrent weight has shape " + shape_str(w->shape()) +
                                 ", expected " + shape_str({H, H}));
        }
    }
    for (const Tensor<T>* w : {&W_ix, &W_ox, &W_fx, &W_gx}) {
        if (w->shape() != Shape{H, I}) {
            throw DimensionError("LSTM input weight has shape " + shape_str(w->shape()) +
                                 ", expected " + shape_str({H, I}));
        }
    }
    for (const Tensor<T>* b : {&b_o, &b_f, &b_g}) {
        if (b->shape() != Shape{H}) {
            throw DimensionError("LSTM gate bias has shape " + shape_str(b->shape()));
        }
    }
    if (W_y.shape() != Shape{vocab(), H}) {
        throw DimensionError("LSTM output weight has shape " + shape_str(W_y.shape()) +
                             ", expected " + shape_str({vocab(), H}));
    }
}

template <typename T>
std::vector<ParamRef<T>> lstm_parameter_refs(LstmParams<T>& params, LstmParams<T>& grads) {
    auto values = params.named();
    auto slots = grads.named();
    std::vector<ParamRef<T>> out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        out.push_back({"lstm." + values[i].first, values[i].second, slots[i].second});
    }
    return out;
}

template <typename T>
LstmForwardResult<T> lstm_forward(const LstmParams<T>& params,
                                  std::span<const std::vector<std::int32_t>> inputs,
                                  std::span<const std::vector<std::int32_t>> targets,
                                  const Tensor<T>& h0, const Tensor<T>& c0) {
    params.check();
    if (inputs.empty()) {
        throw DimensionError("LSTM forward needs a non-empty sequence");
    }
    if (targets.size() != inputs.size()) {
        throw DimensionError("LSTM forward: " + std::to_string(inputs.size()) + " input steps but " +
                             std::to_string(targets.size()) + " target steps");
    }
    const std::size_t T_steps = inputs.size();
    const std::size_t B = inputs[0].size();
    const std::size_t H = params.hidden();
    if (B == 0) {
        throw DimensionError("LSTM forward needs at least one sequence");
    }

    LstmForwardResult<T> result;
    LstmCache<T>& cache = result.cache;
    cache.steps = T_steps;
    cache.batch = B;
    cache.inputs.assign(inputs.begin(), inputs.end());
    cache.targets.assign(targets.begin(), targets.end());
    for (auto* v : {&cache.i, &cache.o, &cache.f, &cache.g, &cache.tanh_c, &cache.probs}) {
        v->reserve(T_steps);
    }
    cache.c.reserve(T_steps + 1);
    cache.h.reserve(T_steps + 1);
    for (const auto& [given, slot] : {std::pair{&h0, &cache.h}, std::pair{&c0, &cache.c}}) {
        if (given->empty()) {
            slot->emplace_back(Shape{H, B});
        } else if (given->shape() != Shape{H, B}) {
            throw DimensionError("LSTM initial state has shape " + shape_str(given->shape()) +
                                 ", expected " + shape_str({H, B}));
        } else {
            slot->push_back(*given);
        }
    }

    SoftmaxLogLoss<T> loss;
    for (std::size_t t = 0; t < T_steps; ++t) {
        if (inputs[t].size() != B || targets[t].size() != B) {
            throw DimensionError("LSTM step " + std::to_string(t) + " has " +
                                 std::to_string(inputs[t].size()) + " inputs and " +
                                 std::to_string(targets[t].size()) + " targets, expected " +
                                 std::to_string(B));
        }
        check_indices(inputs[t], params.input(), "input", t);
        const Tensor<T>& h_prev = cache.h.back();
        const Tensor<T>& c_prev = cache.c.back();
        Tensor<T> i = sigmoid_forward(gate_input(params.W_ih, params.W_ix, params.b_i, h_prev, inputs[t]));
        Tensor<T> o = sigmoid_forward(gate_input(params.W_oh, params.W_ox, params.b_o, h_prev, inputs[t]));
        Tensor<T> f = sigmoid_forward(gate_input(params.W_fh, params.W_fx, params.b_f, h_prev, inputs[t]));
        Tensor<T> g = tanh_forward(gate_input(params.W_gh, params.W_gx, params.b_g, h_prev, inputs[t]));
        Tensor<T> c({H, B});
        Tensor<T> tc({H, B});
        Tensor<T> h({H, B});
        for (std::size_t k = 0; k < H * B; ++k) {
            c[k] = f[k] * c_prev[k] + i[k] * g[k];
            tc[k] = std::tanh(c[k]);
            h[k] = o[k] * tc[k];
        }
        const Tensor<T> logits = add_broadcast(matmul(params.W_y, h), params.b_y);
        const T z = loss.forward(logits, targets[t]);
        result.step_losses.push_back(static_cast<double>(z));
        result.loss += static_cast<double>(z);
        result.correct += B - loss.errors();

        cache.i.push_back(std::move(i));
        cache.o.push_back(std::move(o));
        cache.f.push_back(std::move(f));
        cache.g.push_back(std::move(g));
        cache.c.push_back(std::move(c));
        cache.tanh_c.push_back(std::move(tc));
        cache.h.push_back(std::move(h));
        cache.probs.push_back(loss.probabilities());
    }
    return result;
}

template <typename T>
LstmGradients<T> lstm_backward(const LstmParams<T>& params, const LstmCache<T>& cache) {
    if (cache.steps == 0 || cache.probs.size() != cache.steps) {
        throw StateError("LSTM backward called without a forward cache");
    }
    const std::size_t H = params.hidden();
    const std::size_t B = cache.batch;
    const std::size_t V = params.vocab();
    const T inv_b = T{1} / static_cast<T>(B);

    LstmGradients<T> out;
    out.params = LstmParams<T>::zeros(H, params.input(), V);
    LstmParams<T>& d = out.params;
    Tensor<T> dh_next({H, B});
    Tensor<T> dc_next({H, B});

    for (std::size_t t = cache.steps; t-- > 0;) {
        // Output projection: dy = (p - onehot) / B.
        Tensor<T> dy = cache.probs[t];
        for (std::size_t b = 0; b < B; ++b) {
            dy[static_cast<std::size_t>(cache.targets[t][b]) * B + b] -= T{1};
        }
        for (T& v : dy.data()) {
            v *= inv_b;
        }
        const Tensor<T>& h = cache.h[t + 1];
        axpy(T{1}, matmul_nt(dy, h), d.W_y);
        for (std::size_t r = 0; r < V; ++r) {
            for (std::size_t b = 0; b < B; ++b) {
                d.b_y[r] += dy[r * B + b];
            }
        }
        Tensor<T> dh = matmul_tn(params.W_y, dy);
        axpy(T{1}, dh_next, dh);

        const Tensor<T>& i = cache.i[t];
        const Tensor<T>& o = cache.o[t];
        const Tensor<T>& f = cache.f[t];
        const Tensor<T>& g = cache.g[t];
        const Tensor<T>& tc = cache.tanh_c[t];
        const Tensor<T>& c_prev = cache.c[t];
        Tensor<T> da_i({H, B}), da_o({H, B}), da_f({H, B}), da_g({H, B});
        for (std::size_t k = 0; k < H * B; ++k) {
            // dc_t gathers the path through h_t and the carry from c_{t+1}.
            const T dc = dh[k] * o[k] * (T{1} - tc[k] * tc[k]) + dc_next[k];
            da_o[k] = dh[k] * tc[k] * o[k] * (T{1} - o[k]);
            da_i[k] = dc * g[k] * i[k] * (T{1} - i[k]);
            da_f[k] = dc * c_prev[k] * f[k] * (T{1} - f[k]);
            da_g[k] = dc * i[k] * (T{1} - g[k] * g[k]);
            dc_next[k] = dc * f[k];
        }
        const Tensor<T>& h_prev = cache.h[t];
        const auto& x = cache.inputs[t];
        accumulate_gate(da_i, h_prev, x, d.W_ih, d.W_ix, d.b_i);
        accumulate_gate(da_o, h_prev, x, d.W_oh, d.W_ox, d.b_o);
        accumulate_gate(da_f, h_prev, x, d.W_fh, d.W_fx, d.b_f);
        accumulate_gate(da_g, h_prev, x, d.W_gh, d.W_gx, d.b_g);
        dh_next = matmul_tn(params.W_ih, da_i);
        axpy(T{1}, matmul_tn(params.W_oh, da_o), dh_next);
        axpy(T{1}, matmul_tn(params.W_fh, da_f), dh_next);
        axpy(T{1}, matmul_tn(params.W_gh, da_g), dh_next);
    }
    out.dh0 = std::move(dh_next);
    out.dc0 = std::move(dc_next);
    return out;
}

template <typename T>
void clip_gradients(LstmParams<T>& grads, T limit) {
    for (auto& [name, t] : grads.named()) {
        for (T& v : t->data()) {
            v = std::clamp(v, -limit, limit);
        }
    }
}

CharVocab::CharVocab(std::vector<char32_t> symbols) : symbols_(std::move(symbols)) {
    for (std::size_t k = 0; k < symbols_.size(); ++k) {
        if (!lookup_.emplace(symbols_[k], static_cast<std::int32_t>(k)).second) {
            throw DataError("duplicate symbol in vocabulary");
        }
    }
}

std::int32_t CharVocab::index(char32_t c) const {
    const auto it = lookup_.find(c);
    if (it == lookup_.end()) {
        throw DataError("character U+" + std::to_string(static_cast<std::uint32_t>(c)) +
                        " is not in the vocabulary");
    }
    return it->second;
}

std::vector<std::int32_t> CharVocab::encode(std::string_view utf8) const {
    std::vector<std::int32_t> out;
    for (char32_t c : utf8_decode(utf8)) {
        out.push_back(index(c));
    }
    return out;
}

std::string CharVocab::decode(std::span<const std::int32_t> ids) const {
    std::vector<char32_t> cps;
    cps.reserve(ids.size());
    for (std::int32_t id : ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= symbols_.size()) {
            throw IndexError("symbol id " + std::to_string(id) + " outside vocabulary of " +
                             std::to_string(symbols_.size()));
        }
        cps.push_back(symbols_[static_cast<std::size_t>(id)]);
    }
    return utf8_encode(cps);
}

std::vector<char32_t> utf8_decode(std::string_view text) {
    std::vector<char32_t> out;
    out.reserve(text.size());
    std::size_t k = 0;
    while (k < text.size()) {
        const auto lead = static_cast<unsigned char>(text[k]);
        std::size_t len = 0;
        char32_t cp = 0;
        if (lead < 0x80) {
            len = 1;
            cp = lead;
        } else if ((lead & 0xE0) == 0xC0) {
            len = 2;
            cp = lead & 0x1F;
        } else if ((lead & 0xF0) == 0xE0) {
            len = 3;
            cp = lead & 0x0F;
        } else if ((lead & 0xF8) == 0xF0) {
            len = 4;
            cp = lead & 0x07;
        } else {
            throw DataError("invalid UTF-8 lead byte at offset " + std::to_string(k));
        }
        if (k + len > text.size()) {
            throw DataError("truncated UTF-8 sequence at offset " + std::to_string(k));
        }
        for (std::size_t j = 1; j < len; ++j) {
            const auto cont = static_cast<unsigned char>(text[k + j]);
            if ((cont & 0xC0) != 0x80) {
                throw DataError("invalid UTF-8 continuation byte at offset " +
                                std::to_string(k + j));
            }
            cp = (cp << 6) | (cont & 0x3F);
        }
        out.push_back(cp);
        k += len;
    }
    return out;
}

std::string utf8_encode(std::span<const char32_t> code_points) {
    std::string out;
    out.reserve(code_points.size());
    for (char32_t cp : code_points) {
        if (cp < 0x80) {
            out.push_back(static_cast<char>(cp));
        } else if (cp < 0x800) {
            out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else if (cp < 0x10000) {
            out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        } else {
            out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
            out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
        }
    }
    return out;
}

CharDataset char_dataset(std::string_view text, std::size_t seq_len) {
    if (seq_len == 0) {
        throw ConfigError("sequence length must be at least 1");
    }
    const std::vector<char32_t> cps = utf8_decode(text);
    if (cps.empty()) {
        throw DataError("corpus is empty");
    }
    std::vector<char32_t> symbols = cps;
    std::sort(symbols.begin(), symbols.end());
    symbols.erase(std::unique(symbols.begin(), symbols.end()), symbols.end());

    CharDataset data;
    data.vocab = CharVocab(std::move(symbols));
    data.seq_len = seq_len;
    data.ids.reserve(cps.size());
    for (char32_t c : cps) {
        data.ids.push_back(data.vocab.index(c));
    }
    for (std::size_t start = 0; start + seq_len < data.ids.size(); start += seq_len) {
        data.windows.push_back(start);
    }
    return data;
}

std::pair<CharDataset, CharDataset> split_char_dataset(const CharDataset& data, double fraction) {
    if (!(fraction >= 0.0 && fraction < 1.0)) {
        throw ConfigError("held-out fraction must be in [0, 1)");
    }
    const auto held = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(data.size())));
    CharDataset train = data;
    CharDataset test = data;
    train.windows.assign(data.windows.begin(), data.windows.end() - static_cast<std::ptrdiff_t>(held));
    test.windows.assign(data.windows.end() - static_cast<std::ptrdiff_t>(held), data.windows.end());
    return {std::move(train), std::move(test)};
}

void gather_windows(const CharDataset& data, std::span<const std::size_t> which,
                    std::vector<std::vector<std::int32_t>>& inputs,
                    std::vector<std::vector<std::int32_t>>& targets) {
    const std::size_t L = data.seq_len;
    inputs.assign(L, std::vector<std::int32_t>(which.size()));
    targets.assign(L, std::vector<std::int32_t>(which.size()));
    for (std::size_t b = 0; b < which.size(); ++b) {
        const std::size_t start = data.windows.at(which[b]);
        for (std::size_t t = 0; t < L; ++t) {
            inputs[t][b] = data.ids[start + t];
            targets[t][b] = data.ids[start + t + 1];
        }
    }
}

UnigramBaseline unigram_baseline(const CharDataset& train, const CharDataset& test) {
    const std::size_t V = train.vocab.size();
    std::vector<double> p_train(V, 0.0);
    std::vector<double> p_test(V, 0.0);
    double n_train = 0.0;
    double n_test = 0.0;
    for (std::size_t w : train.windows) {
        for (std::size_t t = 1; t <= train.seq_len; ++t) {
            p_train[static_cast<std::size_t>(train.ids[w + t])] += 1.0;
            n_train += 1.0;
        }
    }
    for (std::size_t w : test.windows) {
        for (std::size_t t = 1; t <= test.seq_len; ++t) {
            p_test[static_cast<std::size_t>(test.ids[w + t])] += 1.0;
            n_test += 1.0;
        }
    }
    if (n_train == 0.0 || n_test == 0.0) {
        throw DataError("unigram baseline needs non-empty train and test splits");
    }
    UnigramBaseline out;
    std::size_t majority = 0;
    for (std::size_t c = 0; c < V; ++c) {
        out.sampled_accuracy += (p_train[c] / n_train) * (p_test[c] / n_test);
        if (p_train[c] > p_train[majority]) {
            majority = c;
        }
    }
    out.majority_accuracy = p_test[majority] / n_test;
    return out;
}

template <typename T>
std::string lstm_sample(const LstmParams<T>& params, const CharVocab& vocab,
                        std::string_view prime, std::size_t length, double temperature,
                        SeededRng& rng) {
    const std::vector<std::int32_t> seed_ids = vocab.encode(prime);
    if (seed_ids.empty()) {
        throw ConfigError("sampling needs a non-empty prime string");
    }
    if (vocab.size() != params.vocab()) {
        throw DimensionError("vocabulary has " + std::to_string(vocab.size()) +
                             " symbols, model expects " + std::to_string(params.vocab()));
    }
    const std::size_t H = params.hidden();
    const std::size_t V = params.vocab();
    Tensor<T> h({H, 1});
    Tensor<T> c({H, 1});
    std::vector<std::int32_t> out = seed_ids;
    std::vector<double> logits(V);

    auto advance = [&](std::int32_t symbol) {
        const std::int32_t x[1] = {symbol};
        const Tensor<T> i = sigmoid_forward(gate_input(params.W_ih, params.W_ix, params.b_i, h, x));
        const Tensor<T> o = sigmoid_forward(gate_input(params.W_oh, params.W_ox, params.b_o, h, x));
        const Tensor<T> f = sigmoid_forward(gate_input(params.W_fh, params.W_fx, params.b_f, h, x));
        const Tensor<T> g = tanh_forward(gate_input(params.W_gh, params.W_gx, params.b_g, h, x));
        for (std::size_t k = 0; k < H; ++k) {
            c[k] = f[k] * c[k] + i[k] * g[k];
            h[k] = o[k] * std::tanh(c[k]);
        }
        const Tensor<T> y = add_broadcast(matmul(params.W_y, h), params.b_y);
        for (std::size_t v = 0; v < V; ++v) {
            logits[v] = static_cast<double>(y[v]);
        }
    };

    for (std::int32_t s : seed_ids) {
        advance(s);
    }
    for (std::size_t n = 0; n < length; ++n) {
        std::size_t pick = 0;
        if (temperature <= 1e-6) {
            pick = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) -
                                            logits.begin());
        } else {
            const double top = *std::max_element(logits.begin(), logits.end());
            std::vector<double> w(V);
            double total = 0.0;
            for (std::size_t v = 0; v < V; ++v) {
                w[v] = std::exp((logits[v] - top) / temperature);
                total += w[v];
            }
            double u = rng.uniform() * total;
            pick = V - 1;
            for (std::size_t v = 0; v < V; ++v) {
                if (u < w[v]) {
                    pick = v;
                    break;
                }
                u -= w[v];
            }
        }
        out.push_back(static_cast<std::int32_t>(pick));
        advance(static_cast<std::int32_t>(pick));
    }
    return vocab.decode(out);
}

void LstmTrainConfig::validate() const {
    if (hidden == 0 || seq_len == 0 || batch_size == 0) {
        throw ConfigError("LSTM hidden size, sequence length and batch size must be at least 1");
    }
    hyper.validate();
    if (selective_sgd) {
        selective_sgd->validate();
    }
}

template <typename T>
LstmTrainer<T>::LstmTrainer(std::size_t vocab, LstmTrainConfig config)
    : config_(std::move(config)),
      optimizer_(config_.optimizer, config_.hyper),
      rng_(config_.seed) {
    config_.validate();
    params_ = LstmParams<T>::zeros(config_.hidden, vocab, vocab);
    grads_ = LstmParams<T>::zeros(config_.hidden, vocab, vocab);
    params_.initialize(rng_);
}

template <typename T>
double LstmTrainer<T>::train_step(const CharDataset& data, std::span<const std::size_t> which) {
    ++step_;
    std::vector<std::vector<std::int32_t>> inputs;
    std::vector<std::vector<std::int32_t>> targets;
    gather_windows(data, which, inputs, targets);
    LstmForwardResult<T> fwd = lstm_forward(params_, std::span<const std::vector<std::int32_t>>(inputs),
                                            std::span<const std::vector<std::int32_t>>(targets));
    last_correct_ = fwd.correct;
    if (!std::isfinite(fwd.loss)) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    grads_ = std::move(lstm_backward(params_, fwd.cache).params);
    if (config_.clip > 0.0) {
        clip_gradients(grads_, static_cast<T>(config_.clip));
    }
    const std::vector<ParamRef<T>> refs = lstm_parameter_refs(params_, grads_);
    try {
        optimizer_.step(refs);
    } catch (const NumericError&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
    return fwd.loss / static_cast<double>(data.seq_len);
}

template <typename T>
Evaluation LstmTrainer<T>::evaluate(const CharDataset& data) const {
    if (data.size() == 0) {
        throw DataError("evaluation set is empty");
    }
    constexpr std::size_t kChunk = 256;
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> which;
    std::vector<std::vector<std::int32_t>> inputs;
    std::vector<std::vector<std::int32_t>> targets;
    for (std::size_t start = 0; start < data.size(); start += kChunk) {
        const std::size_t end = std::min(data.size(), start + kChunk);
        which.resize(end - start);
        std::iota(which.begin(), which.end(), start);
        gather_windows(data, which, inputs, targets);
        const LstmForwardResult<T> fwd =
            lstm_forward(params_, std::span<const std::vector<std::int32_t>>(inputs),
                         std::span<const std::vector<std::int32_t>>(targets));
        loss_sum += fwd.loss * static_cast<double>(which.size());
        correct += fwd.correct;
    }
    const double symbols = static_cast<double>(data.size() * data.seq_len);
    return {loss_sum / symbols, 1.0 - static_cast<double>(correct) / symbols};
}

template <typename T>
SearchResult LstmTrainer<T>::select_learning_rate(const CharDataset& data, double max_rate) {
    const SelectiveSgdConfig search = config_.selective_sgd.value_or(SelectiveSgdConfig{});
    if (data.size() == 0) {
        throw DataError("selective SGD: training set is empty");
    }
    SeededRng order = SeededRng::derive(config_.seed, rng_.next_u64());
    const BatchPlan plan(data.size(), config_.batch_size, order);
    const std::uint64_t saved_step = step_;
    ParameterTrials<T> runner(parameter_refs(), optimizer_, [&](std::size_t it) {
        return train_step(data, plan.batch(it % plan.batches()));
    });
    SearchResult result = selective_sgd_search(runner, search, max_rate);
    step_ = saved_step;
    optimizer_.set_learning_rate(result.rate);
    return result;
}

template <typename T>
Metrics LstmTrainer<T>::fit(const CharDataset& train, const CharDataset& test,
                            const std::function<void(const EpochMetrics&)>& on_eval) {
    Metrics metrics;
    if (config_.epochs == 0) {
        return metrics;
    }
    if (train.size() == 0 || test.size() == 0) {
        throw DataError("training and held-out splits must be non-empty");
    }
    const auto& search = config_.selective_sgd;
    if (search) {
        select_learning_rate(train);
    }
    const std::size_t per_epoch = (train.size() + config_.batch_size - 1) / config_.batch_size;
    std::size_t bad_evals = 0;
    std::optional<std::pair<std::uint64_t, BatchPlan>> plan;
    auto clock_start = std::chrono::steady_clock::now();
    for (std::size_t epoch = 1; epoch <= config_.epochs; ++epoch) {
        if (search && search->reselect_every > 0 && epoch > 1 &&
            (epoch - 1) % search->reselect_every == 0) {
            select_learning_rate(train, optimizer_.learning_rate());
        }
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t symbols = 0;
        for (std::size_t k = 0; k < per_epoch; ++k) {
            const std::uint64_t e = step_ / per_epoch;
            if (!plan || plan->first != e) {
                SeededRng order = SeededRng::derive(config_.seed, e);
                plan.emplace(e, BatchPlan(train.size(), config_.batch_size, order));
            }
            const auto batch = plan->second.batch(static_cast<std::size_t>(step_ % per_epoch));
            const double l = train_step(train, batch);
            const std::size_t n = batch.size() * train.seq_len;
            loss_sum += l * static_cast<double>(n);
            correct += std::isfinite(l) ? last_correct_ : 0;
            symbols += n;
        }
        const Evaluation held = evaluate(test);
        const auto now = std::chrono::steady_clock::now();
        EpochMetrics m;
        m.epoch = epoch;
        m.train_loss = loss_sum / static_cast<double>(symbols);
        m.train_err = 1.0 - static_cast<double>(correct) / static_cast<double>(symbols);
        m.test_loss = held.loss;
        m.test_err = held.error_rate;
        m.seconds = std::chrono::duration<double>(now - clock_start).count();
        clock_start = now;
        metrics.push_back(m);
        if (on_eval) {
            on_eval(m);
        }
        if (!std::isfinite(m.train_loss) || !std::isfinite(m.test_loss)) {
            if (++bad_evals >= 3) {
                throw DivergenceError("LSTM training diverged: non-finite loss for " +
                                      std::to_string(bad_evals) + " consecutive epochs");
            }
        } else {
            bad_evals = 0;
        }
    }
    return metrics;
}

#define LEAFNET_INSTANTIATE_LSTM(T)                                                             \
    template struct LstmParams<T>;                                                              \
    template std::vector<ParamRef<T>> lstm_parameter_refs(LstmParams<T>&, LstmParams<T>&);      \
    template LstmForwardResult<T> lstm_forward(const LstmParams<T>&,                            \
                                               std::span<const std::vector<std::int32_t>>,      \
                                               std::span<const std::vector<std::int32_t>>,      \
                                               const Tensor<T>&, const Tensor<T>&);             \
    template LstmGradients<T> lstm_backward(const LstmParams<T>&, const LstmCache<T>&);         \
    template void clip_gradients(LstmParams<T>&, T);                                            \
    template std::string lstm_sample(const LstmParams<T>&, const CharVocab&, std::string_view,  \
                                     std::size_t, double, SeededRng&);                          \
    template class LstmTrainer<T>;

LEAFNET_INSTANTIATE_LSTM(float)
LEAFNET_INSTANTIATE_LSTM(double)

} // namespace leafnet
