#include "doctest.h"

#include <cmath>
#include <numeric>

#include "leafnet/layers.hpp"
#include "support.hpp"

using namespace leafnet;
using namespace leafnet::test;

namespace {

/// Largest relative error between analytic and central-difference gradients
/// of z = sum(forward(x) .* w) over the input and every parameter.
double layer_gradient_error(Layer<double>& layer, Tensor<double> x, SeededRng& rng) {
    const auto y = layer.forward(x);
    const auto w = random_tensor(y.shape(), rng);
    const auto dx = layer.backward(w);
    std::vector<Tensor<double>> grads;
    for (const auto& p : layer.parameters()) {
        grads.push_back(*p.grad);
    }
    const auto loss = [&] { return dot(layer.forward(x), w); };
    double worst = max_rel_error(dx, numeric_gradient(x, loss));
    auto params = layer.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
        worst = std::max(worst, max_rel_error(grads[i], numeric_gradient(*params[i].value, loss)));
    }
    return worst;
}

/// Random values kept at least `gap` away from each other's ranks, so that
/// max-pool windows never tie and relu never sits on its kink.
Tensor<double> tie_free(Shape shape, SeededRng& rng) {
    Tensor<double> t(std::move(shape));
    std::vector<std::size_t> order(t.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[order[i]] = (static_cast<double>(i) - static_cast<double>(t.size()) / 2.0 + 0.5) * 0.1;
    }
    return t;
}

} // namespace

TEST_CASE("linear forward") {
    LinearLayer<double> eye(Tensor<double>::matrix({{1, 0}, {0, 1}}), Tensor<double>({2}));
    CHECK(eye.forward(Tensor<double>::matrix({{3}, {4}})) == Tensor<double>::matrix({{3}, {4}}));

    LinearLayer<double> l(Tensor<double>::matrix({{1, 2}, {3, 4}}), Tensor<double>::vector({1, 1}));
    CHECK(l.forward(Tensor<double>::matrix({{1}, {1}})) == Tensor<double>::matrix({{4}, {8}}));

    // columns are independent
    const auto batch = l.forward(Tensor<double>::matrix({{1, 0, 2}, {1, 1, -1}}));
    CHECK(batch == Tensor<double>::matrix({{4, 3, 1}, {8, 5, 3}}));
}

TEST_CASE("linear backward") {
    LinearLayer<double> scalar(Tensor<double>::matrix({{2}}), Tensor<double>::vector({0}));
    scalar.forward(Tensor<double>::matrix({{3}}));
    CHECK(scalar.backward(Tensor<double>::matrix({{1}})) == Tensor<double>::matrix({{2}}));
    CHECK(scalar.weight_grad() == Tensor<double>::matrix({{3}}));
    CHECK(scalar.bias_grad() == Tensor<double>::vector({1}));

    SeededRng rng(1);
    LinearLayer<double> l(random_tensor({3, 4}, rng), random_tensor({3}, rng));
    l.forward(random_tensor({4, 2}, rng));
    const auto dx = l.backward(Tensor<double>({3, 2}));
    CHECK(max_abs(dx) == 0.0);
    CHECK(max_abs(l.weight_grad()) == 0.0);
    CHECK(max_abs(l.bias_grad()) == 0.0);

    CHECK(layer_gradient_error(l, random_tensor({4, 2}, rng), rng) < 1e-6);
}

TEST_CASE("linear rejects a wrong input size") {
    LinearLayer<double> l(4, 3);
    CHECK_THROWS_AS(l.forward(Tensor<double>({5, 2})), DimensionError);
    CHECK_THROWS_AS(l.backward(Tensor<double>({3, 2})), StateError);
}

TEST_CASE("conv with a unit kernel is the identity") {
    SeededRng rng(2);
    ConvLayer<double> conv(1, 1, 1, 1);
    conv.kernels().fill(1.0);
    const auto x = random_tensor({5, 4, 1, 2}, rng);
    const auto y = conv.forward(x);
    for (std::size_t i = 0; i < x.size(); ++i) {
        CHECK(y[i] == doctest::Approx(x[i]).epsilon(1e-12));
    }
}

TEST_CASE("conv sums input maps") {
    SeededRng rng(3);
    ConvLayer<double> conv(3, 3, 2, 1, Padding::uniform(1));
    conv.kernels().fill(0.0);
    conv.kernels().at({1, 1, 0, 0}) = 1.0;
    conv.kernels().at({1, 1, 1, 0}) = 1.0;
    const auto x = random_tensor({4, 5, 2, 1}, rng);
    const auto y = conv.forward(x);
    REQUIRE(y.shape() == Shape{4, 5, 1, 1});
    for (std::size_t r = 0; r < 4; ++r) {
        for (std::size_t c = 0; c < 5; ++c) {
            CHECK(y.at({r, c, 0, 0}) ==
                  doctest::Approx(x.at({r, c, 0, 0}) + x.at({r, c, 1, 0})).epsilon(1e-12));
        }
    }
}

TEST_CASE("conv forward against direct convolution") {
    SeededRng rng(4);
    ConvLayer<double> conv(3, 2, 2, 3, Padding{1, 0, 1, 1}, 2, 1);
    conv.kernels() = random_tensor({3, 2, 2, 3}, rng);
    conv.bias() = random_tensor({3}, rng);
    const auto x = random_tensor({7, 6, 2, 2}, rng);
    const auto y = conv.forward(x);
    const ConvGeometry g = conv.geometry_for(7, 6);
    REQUIRE(y.shape() == Shape{g.out_rows(), g.out_cols(), 3, 2});
    for (std::size_t b = 0; b < 2; ++b) {
        for (std::size_t o = 0; o < 3; ++o) {
            Tensor<double> acc({g.out_rows(), g.out_cols()}, conv.bias()[o]);
            for (std::size_t i = 0; i < 2; ++i) {
                Tensor<double> xi({7, 6}), kio({3, 2});
                for (std::size_t r = 0; r < 7; ++r) {
                    for (std::size_t c = 0; c < 6; ++c) {
                        xi.at({r, c}) = x.at({r, c, i, b});
                    }
                }
                for (std::size_t r = 0; r < 3; ++r) {
                    for (std::size_t c = 0; c < 2; ++c) {
                        kio.at({r, c}) = conv.kernels().at({r, c, i, o});
                    }
                }
                axpy(1.0, direct_conv2(xi, kio, g), acc);
            }
            for (std::size_t r = 0; r < g.out_rows(); ++r) {
                for (std::size_t c = 0; c < g.out_cols(); ++c) {
                    CHECK(y.at({r, c, o, b}) == doctest::Approx(acc.at({r, c})).epsilon(1e-10));
                }
            }
        }
    }
}

TEST_CASE("conv backward with a delta kernel and unit upstream") {
    ConvLayer<double> conv(3, 3, 1, 1, Padding::uniform(1));
    conv.kernels().fill(0.0);
    conv.kernels().at({1, 1, 0, 0}) = 1.0;
    conv.forward(Tensor<double>({4, 4, 1, 1}, 0.5));
    const auto dx = conv.backward(Tensor<double>({4, 4, 1, 1}, 1.0));
    for (double v : dx.data()) {
        CHECK(v == doctest::Approx(1.0));
    }
    CHECK(conv.bias_grad()[0] == doctest::Approx(16.0));
}

TEST_CASE("conv bias gradient is the upstream sum per map") {
    SeededRng rng(5);
    ConvLayer<double> conv(2, 2, 2, 3);
    conv.kernels() = random_tensor({2, 2, 2, 3}, rng);
    const auto y = conv.forward(random_tensor({5, 5, 2, 2}, rng));
    const auto up = random_tensor(y.shape(), rng);
    conv.backward(up);
    for (std::size_t o = 0; o < 3; ++o) {
        double s = 0.0;
        for (std::size_t r = 0; r < 4; ++r) {
            for (std::size_t c = 0; c < 4; ++c) {
                for (std::size_t b = 0; b < 2; ++b) {
                    s += up.at({r, c, o, b});
                }
            }
        }
        CHECK(conv.bias_grad()[o] == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("conv gradients against finite differences") {
    SeededRng rng(6);
    ConvLayer<double> conv(3, 3, 2, 2, Padding::uniform(2), 2, 2);
    conv.kernels() = random_tensor({3, 3, 2, 2}, rng);
    conv.bias() = random_tensor({2}, rng);
    CHECK(layer_gradient_error(conv, random_tensor({6, 5, 2, 2}, rng), rng) < 1e-5);

    ConvLayer<double> uneven(2, 3, 1, 2, Padding{0, 1, 2, 0}, 1, 3);
    uneven.kernels() = random_tensor({2, 3, 1, 2}, rng);
    CHECK(layer_gradient_error(uneven, random_tensor({5, 7, 1, 1}, rng), rng) < 1e-5);
}

TEST_CASE("conv and pool output extents follow the window formula") {
    for (std::size_t h = 1; h <= 8; ++h) {
        for (std::size_t k = 1; k <= 4; ++k) {
            for (std::size_t p = 0; p <= 2; ++p) {
                for (std::size_t s = 1; s <= 3; ++s) {
                    ConvLayer<double> conv(k, k, 1, 1, Padding::uniform(p), s, s);
                    if (h + 2 * p < k) {
                        CHECK_THROWS_AS(conv.output_shape({h, h, 1, 1}), DimensionError);
                        continue;
                    }
                    const std::size_t expect = (h + 2 * p - k) / s + 1;
                    CHECK(conv.output_shape({h, h, 1, 1}) == Shape{expect, expect, 1, 1});
                    if (p < k) {
                        MaxPoolLayer<double> pool(WindowSpec{k, k, s, s, Padding::uniform(p)});
                        CHECK(pool.output_shape({h, h, 1, 1}) == Shape{expect, expect, 1, 1});
                    }
                    const auto y = conv.forward(Tensor<double>({h, h, 1, 1}, 1.0));
                    CHECK(y.shape() == Shape{expect, expect, 1, 1});
                }
            }
        }
    }
}

TEST_CASE("maxpool forward") {
    MaxPoolLayer<double> pool(WindowSpec{2, 2, 2, 2, {}});
    const auto y = pool.forward(Tensor<double>({2, 2, 1, 1}, {1, 2, 3, 4}));
    CHECK(y == Tensor<double>({1, 1, 1, 1}, {4}));

    MaxPoolLayer<double> overlap(WindowSpec{2, 2, 1, 1, {}});
    const auto flat = overlap.forward(Tensor<double>({3, 3, 1, 1}, 7.0));
    for (double v : flat.data()) {
        CHECK(v == 7.0);
    }
    // ties pick the first cell of each window in raster order
    const std::int64_t first[] = {0, 1, 3, 4};
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(overlap.source_indices()[i] == first[i]);
    }

    SeededRng rng(8);
    const auto x = random_tensor({3, 3, 1, 1}, rng);
    const auto m = overlap.forward(x);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 2; ++c) {
            double best = -1e300;
            for (std::size_t a = 0; a < 2; ++a) {
                for (std::size_t b = 0; b < 2; ++b) {
                    best = std::max(best, x.at({r + a, c + b, 0, 0}));
                }
            }
            CHECK(m.at({r, c, 0, 0}) == best);
        }
    }
}

TEST_CASE("maxpool rejects padding that admits empty windows") {
    CHECK_THROWS_AS(MaxPoolLayer<double>(WindowSpec{2, 2, 1, 1, Padding::uniform(2)}), DimensionError);
}

TEST_CASE("maxpool ignores padding even for negative inputs") {
    MaxPoolLayer<double> pool(WindowSpec{3, 3, 2, 2, Padding{0, 1, 0, 1}});
    const Tensor<double> x({4, 4, 1, 1}, -5.0);
    const auto y = pool.forward(x);
    for (double v : y.data()) {
        CHECK(v == -5.0);
    }
}

TEST_CASE("maxpool backward") {
    MaxPoolLayer<double> pool(WindowSpec{2, 2, 2, 2, {}});
    pool.forward(Tensor<double>({2, 4, 1, 1}, {1, 5, 2, 0, 3, 0, 9, 1}));
    const auto dx = pool.backward(Tensor<double>({1, 2, 1, 1}, {10, 20}));
    CHECK(dx == Tensor<double>({2, 4, 1, 1}, {0, 10, 0, 0, 0, 0, 20, 0}));

    // a global maximum inside four overlapping windows collects all four
    MaxPoolLayer<double> overlap(WindowSpec{2, 2, 1, 1, {}});
    Tensor<double> x({3, 3, 1, 1}, 0.0);
    x.at({1, 1, 0, 0}) = 1.0;
    overlap.forward(x);
    const auto g = overlap.backward(Tensor<double>({2, 2, 1, 1}, {1, 2, 3, 4}));
    CHECK(g.at({1, 1, 0, 0}) == 10.0);
    CHECK(std::accumulate(g.data().begin(), g.data().end(), 0.0) == 10.0);
}

TEST_CASE("maxpool gradient mass is conserved") {
    SeededRng rng(10);
    MaxPoolLayer<double> pool(WindowSpec{3, 3, 2, 2, Padding{0, 1, 0, 1}});
    const auto y = pool.forward(random_tensor({7, 6, 2, 3}, rng));
    const auto dx = pool.backward(Tensor<double>(y.shape(), 1.0));
    CHECK(std::accumulate(dx.data().begin(), dx.data().end(), 0.0) ==
          static_cast<double>(y.size()));
}

TEST_CASE("maxpool against finite differences") {
    SeededRng rng(11);
    MaxPoolLayer<double> pool(WindowSpec{3, 3, 2, 2, Padding{1, 1, 0, 1}});
    CHECK(layer_gradient_error(pool, tie_free({6, 7, 2, 2}, rng), rng) < 1e-5);
}

TEST_CASE("activations") {
    ActivationLayer<double> relu(Activation::relu);
    CHECK(relu.forward(Tensor<double>::vector({-1, 0, 2})) == Tensor<double>::vector({0, 0, 2}));
    CHECK(sigmoid(0.0) == 0.5);
    CHECK(std::tanh(0.0) == 0.0);
    CHECK(sigmoid(-800.0) == 0.0);
    CHECK(sigmoid(800.0) == 1.0);

    SeededRng rng(12);
    for (Activation a : {Activation::relu, Activation::sigmoid, Activation::tanh}) {
        ActivationLayer<double> layer(a);
        CAPTURE(activation_name(a));
        CHECK(layer_gradient_error(layer, tie_free({4, 5}, rng), rng) < 1e-6);
    }
}

TEST_CASE("flatten is a reshape") {
    SeededRng rng(13);
    FlattenLayer<double> flat;
    const auto x = random_tensor({2, 3, 4, 5}, rng);
    const auto y = flat.forward(x);
    CHECK(y.shape() == Shape{24, 5});
    CHECK(bitwise_equal(flat.backward(y), x));
}

TEST_CASE("softmax log-loss") {
    SoftmaxLogLoss<double> loss;
    const std::int32_t label[] = {3};
    CHECK(loss.forward(Tensor<double>({10, 1}), label) == doctest::Approx(std::log(10.0)));

    Tensor<double> sharp({10, 1});
    sharp[3] = 1000.0;
    CHECK(loss.forward(sharp, label) < 1e-12);
    CHECK(loss.errors() == 0);

    SeededRng rng(14);
    auto logits = random_tensor({5, 4}, rng, 3.0);
    const std::int32_t labels[] = {0, 4, 2, 2};
    loss.forward(logits, labels);
    const auto& p = loss.probabilities();
    for (std::size_t b = 0; b < 4; ++b) {
        double s = 0.0;
        for (std::size_t k = 0; k < 5; ++k) {
            s += p.at({k, b});
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
    const auto g = loss.backward();
    const auto numeric = numeric_gradient(logits, [&] { return loss.forward(logits, labels); });
    CHECK(max_rel_error(g, numeric) < 1e-6);
}

TEST_CASE("softmax log-loss errors and labels") {
    SoftmaxLogLoss<double> loss;
    const auto logits = Tensor<double>::matrix({{1, 0}, {1, 2}});
    const std::int32_t labels[] = {0, 0};
    loss.forward(logits, labels);
    // first column ties, resolved to class 0
    CHECK(loss.errors() == 1);
    const std::int32_t bad[] = {0, 5};
    CHECK_THROWS(loss.forward(logits, bad));
}
