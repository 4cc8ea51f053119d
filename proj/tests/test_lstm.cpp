#include "doctest.h"

#include <cmath>

#include "leafnet/experiments.hpp"
#include "leafnet/lstm.hpp"
#include "support.hpp"

using namespace leafnet;
using namespace leafnet::test;

namespace {

using Seq = std::vector<std::vector<std::int32_t>>;

LstmParams<double> random_params(std::size_t hidden, std::size_t vocab, SeededRng& rng,
                                 double scale = 0.5) {
    auto p = LstmParams<double>::zeros(hidden, vocab, vocab);
    for (auto& [name, t] : p.named()) {
        for (double& v : t->data()) {
            v = rng.normal(0.0, scale);
        }
    }
    return p;
}

Seq random_ids(std::size_t steps, std::size_t batch, std::size_t vocab, SeededRng& rng) {
    Seq s(steps, std::vector<std::int32_t>(batch));
    for (auto& row : s) {
        for (auto& v : row) {
            v = static_cast<std::int32_t>(rng.below(vocab));
        }
    }
    return s;
}

double sig(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// Scalar re-derivation of the forward pass for batch size 1.
double straight_line_loss(const LstmParams<double>& p, const Seq& in, const Seq& tg) {
    const std::size_t H = p.hidden(), V = p.vocab();
    std::vector<double> h(H, 0.0), c(H, 0.0);
    double z = 0.0;
    for (std::size_t t = 0; t < in.size(); ++t) {
        const auto x = static_cast<std::size_t>(in[t][0]);
        std::vector<double> hn(H), cn(H);
        for (std::size_t k = 0; k < H; ++k) {
            double ai = p.b_i[k] + p.W_ix.at({k, x});
            double ao = p.b_o[k] + p.W_ox.at({k, x});
            double af = p.b_f[k] + p.W_fx.at({k, x});
            double ag = p.b_g[k] + p.W_gx.at({k, x});
            for (std::size_t j = 0; j < H; ++j) {
                ai += p.W_ih.at({k, j}) * h[j];
                ao += p.W_oh.at({k, j}) * h[j];
                af += p.W_fh.at({k, j}) * h[j];
                ag += p.W_gh.at({k, j}) * h[j];
            }
            cn[k] = sig(af) * c[k] + sig(ai) * std::tanh(ag);
            hn[k] = sig(ao) * std::tanh(cn[k]);
        }
        h = hn;
        c = cn;
        std::vector<double> logits(V);
        double top = -1e300;
        for (std::size_t v = 0; v < V; ++v) {
            logits[v] = p.b_y[v];
            for (std::size_t j = 0; j < H; ++j) {
                logits[v] += p.W_y.at({v, j}) * h[j];
            }
            top = std::max(top, logits[v]);
        }
        double norm = 0.0;
        for (double l : logits) {
            norm += std::exp(l - top);
        }
        z += -(logits[static_cast<std::size_t>(tg[t][0])] - top - std::log(norm));
    }
    return z;
}

} // namespace

TEST_CASE("zero parameters give the fixed point") {
    const auto p = LstmParams<double>::zeros(3, 4, 4);
    SeededRng rng(1);
    const auto in = random_ids(6, 2, 4, rng), tg = random_ids(6, 2, 4, rng);
    const auto r = lstm_forward(p, std::span<const std::vector<std::int32_t>>(in),
                                std::span<const std::vector<std::int32_t>>(tg));
    CHECK(r.loss == doctest::Approx(6 * std::log(4.0)).epsilon(1e-12));
    for (std::size_t t = 0; t < 6; ++t) {
        for (double v : r.cache.i[t].data()) {
            CHECK(v == 0.5);
        }
        CHECK(max_abs(r.cache.g[t]) == 0.0);
        CHECK(max_abs(r.cache.c[t + 1]) == 0.0);
        CHECK(max_abs(r.cache.h[t + 1]) == 0.0);
    }
}

TEST_CASE("saturated gates carry the cell state") {
    SeededRng rng(2);
    auto p = random_params(3, 5, rng, 0.1);
    p.b_f.fill(20.0);
    p.b_i.fill(-20.0);
    const auto in = random_ids(5, 2, 5, rng), tg = random_ids(5, 2, 5, rng);
    const auto c0 = random_tensor({3, 2}, rng);
    const auto r = lstm_forward(p, std::span<const std::vector<std::int32_t>>(in),
                                std::span<const std::vector<std::int32_t>>(tg), {}, c0);
    for (std::size_t t = 1; t <= 5; ++t) {
        for (std::size_t k = 0; k < c0.size(); ++k) {
            CHECK(std::abs(r.cache.c[t][k] - c0[k]) < 1e-3);
        }
    }
}

TEST_CASE("forward matches a straight-line reimplementation") {
    SeededRng rng(3);
    const auto p = random_params(3, 5, rng);
    const auto in = random_ids(4, 1, 5, rng), tg = random_ids(4, 1, 5, rng);
    const auto r = lstm_forward(p, std::span<const std::vector<std::int32_t>>(in),
                                std::span<const std::vector<std::int32_t>>(tg));
    CHECK(r.loss == doctest::Approx(straight_line_loss(p, in, tg)).epsilon(1e-12));
}

TEST_CASE("loss is the sum of the step losses") {
    SeededRng rng(4);
    const auto p = random_params(4, 6, rng);
    const auto in = random_ids(7, 3, 6, rng), tg = random_ids(7, 3, 6, rng);
    const auto r = lstm_forward(p, std::span<const std::vector<std::int32_t>>(in),
                                std::span<const std::vector<std::int32_t>>(tg));
    double sum = 0.0;
    for (std::size_t t = 0; t < 7; ++t) {
        double step = 0.0;
        for (std::size_t b = 0; b < 3; ++b) {
            step -= std::log(r.cache.probs[t].at({static_cast<std::size_t>(tg[t][b]), b}));
        }
        CHECK(r.step_losses[t] == doctest::Approx(step / 3.0).epsilon(1e-12));
        sum += r.step_losses[t];
    }
    CHECK(r.loss == sum);
}

TEST_CASE("gates stay in range") {
    SeededRng rng(5);
    const auto p = random_params(5, 7, rng, 4.0);
    const auto in = random_ids(10, 4, 7, rng), tg = random_ids(10, 4, 7, rng);
    const auto r = lstm_forward(p, std::span<const std::vector<std::int32_t>>(in),
                                std::span<const std::vector<std::int32_t>>(tg));
    for (std::size_t t = 0; t < 10; ++t) {
        for (const auto* gate : {&r.cache.i[t], &r.cache.o[t], &r.cache.f[t]}) {
            for (double v : gate->data()) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
        for (double v : r.cache.g[t].data()) {
            CHECK(std::abs(v) <= 1.0);
        }
    }
}

TEST_CASE("single step gradient equals the feedforward chain rule") {
    SeededRng rng(6);
    const auto p = random_params(3, 4, rng);
    const Seq in{{1, 3}}, tg{{2, 0}};
    const auto h0 = random_tensor({3, 2}, rng), c0 = random_tensor({3, 2}, rng);
    const auto r = lstm_forward(p, std::span<const std::vector<std::int32_t>>(in),
                                std::span<const std::vector<std::int32_t>>(tg), h0, c0);
    const auto g = lstm_backward(p, r.cache);
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t k = 0; k < 3; ++k) {
            double dh = 0.0;
            for (std::size_t v = 0; v < 4; ++v) {
                const double onehot = static_cast<std::int32_t>(v) == tg[0][b] ? 1.0 : 0.0;
                dh += p.W_y.at({v, k}) * (r.cache.probs[0].at({v, b}) - onehot) / 2.0;
            }
            const double tc = r.cache.tanh_c[0].at({k, b});
            const double dc = dh * r.cache.o[0].at({k, b}) * (1.0 - tc * tc);
            CHECK(g.dc0.at({k, b}) == doctest::Approx(dc * r.cache.f[0].at({k, b})).epsilon(1e-12));
        }
    }
}

TEST_CASE("balanced targets under zero parameters give zero gradients") {
    const auto p = LstmParams<double>::zeros(3, 4, 4);
    Seq in(3, std::vector<std::int32_t>{0, 1, 2, 3});
    Seq tg(3, std::vector<std::int32_t>{3, 2, 1, 0});
    const auto r = lstm_forward(p, std::span<const std::vector<std::int32_t>>(in),
                                std::span<const std::vector<std::int32_t>>(tg));
    auto g = lstm_backward(p, r.cache);
    for (auto& [name, t] : g.params.named()) {
        CAPTURE(name);
        CHECK(max_abs(*t) < 1e-15);
    }
}

TEST_CASE("BPTT gradients against finite differences") {
    GradCheckOptions options;
    options.coords_per_tensor = 10;
    for (std::uint64_t seed : {0u, 1u, 2u}) {
        CHECK(lstm_grad_check(seed, options, "").passed());
    }
    const auto bad = lstm_grad_check(0, options, "W_fh");
    CHECK_FALSE(bad.passed());
    CHECK(bad.failures() == std::vector<std::string>{"W_fh"});
}

TEST_CASE("clipping bounds every gradient") {
    SeededRng rng(7);
    auto g = random_params(3, 4, rng, 20.0);
    clip_gradients(g, 5.0);
    for (auto& [name, t] : g.named()) {
        CHECK(max_abs(*t) <= 5.0);
    }
}

TEST_CASE("vocabulary and windows") {
    const auto ab = char_dataset("ab", 1);
    CHECK(ab.vocab.size() == 2);
    REQUIRE(ab.size() == 1);
    Seq in, tg;
    const std::size_t first[] = {0};
    gather_windows(ab, first, in, tg);
    CHECK(in == Seq{{0}});
    CHECK(tg == Seq{{1}});

    const std::string text = "Ça va? Naïve café, ça va.\n";
    const auto data = char_dataset(text, 4);
    CHECK(data.vocab.decode(data.vocab.encode(text)) == text);
    CHECK(data.vocab.size() == 15);
    CHECK(data.size() == (utf8_decode(text).size() - 1) / 4);
    CHECK_THROWS_AS(data.vocab.encode("xyz"), DataError);
    CHECK(char_dataset("a", 1).size() == 0);
    CHECK_THROWS_AS(char_dataset("", 1), DataError);
}

TEST_CASE("held-out split keeps the tail") {
    const auto data = char_dataset(std::string(101, 'a') + "b", 10);
    const auto [train, test] = split_char_dataset(data, 0.2);
    CHECK(train.size() + test.size() == data.size());
    CHECK(test.size() == 2);
    CHECK(test.windows.front() > train.windows.back());
    const auto base = unigram_baseline(train, test);
    CHECK(base.majority_accuracy > 0.9);
}

TEST_CASE("greedy sampling ignores the RNG") {
    SeededRng rng(8);
    const auto data = char_dataset("the cat sat on the mat", 3);
    auto p = random_params(4, data.vocab.size(), rng);
    SeededRng a(1), b(99);
    const auto s1 = lstm_sample(p, data.vocab, "th", 30, 0.0, a);
    const auto s2 = lstm_sample(p, data.vocab, "th", 30, 0.0, b);
    CHECK(s1 == s2);
    CHECK(utf8_decode(s1).size() == 32);
    CHECK(s1.rfind("th", 0) == 0);
    SeededRng c(1), d(1);
    CHECK(lstm_sample(p, data.vocab, "t", 20, 1.0, c) == lstm_sample(p, data.vocab, "t", 20, 1.0, d));
}

TEST_CASE("trainer learns a periodic sequence") {
    std::string text;
    for (int i = 0; i < 200; ++i) {
        text += "abcd";
    }
    const auto data = char_dataset(text, 8);
    const auto [train, test] = split_char_dataset(data, 0.1);
    LstmTrainConfig config;
    config.hidden = 8;
    config.seq_len = 8;
    config.epochs = 15;
    config.batch_size = 8;
    config.hyper.learning_rate = 0.02;
    auto run = [&] {
        LstmTrainer<double> trainer(data.vocab.size(), config);
        return trainer.fit(train, test);
    };
    const auto m = run();
    CHECK(m.back().test_err < 0.2);
    CHECK(m.back().train_loss < m.front().train_loss);
    const auto again = run();
    CHECK(again.back().test_loss == m.back().test_loss);
}
