#include "doctest.h"

#include "leafnet/experiments.hpp"
#include "leafnet/gradcheck.hpp"
#include "leafnet/network.hpp"
#include "support.hpp"

using namespace leafnet;
using namespace leafnet::test;

namespace {

TrainConfig small_config(std::size_t epochs = 3) {
    TrainConfig c;
    c.epochs = epochs;
    c.batch_size = 16;
    c.hyper.learning_rate = 0.05;
    c.hyper.momentum = 0.9;
    c.seed = 5;
    return c;
}

SequentialModel<double> small_mlp(std::uint64_t seed) {
    auto model = make_mlp<double>({6, 1, 1}, {12}, 3);
    SeededRng rng(seed);
    model.initialize(rng);
    return model;
}

} // namespace

TEST_CASE("empty model is the identity") {
    SequentialModel<double> model;
    SeededRng rng(1);
    const auto x = random_tensor({3, 2}, rng);
    CHECK(model.forward(x) == x);
    CHECK(model.backward(x) == x);
    CHECK(model.parameters().empty());
}

TEST_CASE("identity linear layer leaves input unchanged") {
    SequentialModel<double> model;
    model.emplace<LinearLayer<double>>(Tensor<double>::matrix({{1, 0}, {0, 1}}), Tensor<double>({2}));
    const auto x = Tensor<double>::matrix({{1, 2, 3}, {4, 5, 6}});
    CHECK(model.forward(x) == x);
}

TEST_CASE("validate reports the first layer that cannot consume its input") {
    auto model = make_mlp<double>({4, 3, 1}, {8}, 2);
    CHECK(model.validate({4, 3, 1, 1}) == Shape{2, 1});
    CHECK_THROWS_AS(model.validate({5, 3, 1, 1}), DimensionError);
    auto cnn = make_cifar_cnn<double>(10);
    CHECK(cnn.validate({32, 32, 3, 2}) == Shape{10, 2});
}

TEST_CASE("parameter names and initialization") {
    auto model = make_mlp<double>({4, 1, 1}, {8}, 2);
    SeededRng rng(2);
    model.initialize(rng);
    const auto params = model.parameters();
    REQUIRE(params.size() == 4);
    CHECK(params[0].name == "1.linear.W");
    CHECK(params[1].name == "1.linear.b");
    CHECK(params[2].name == "3.linear.W");
    CHECK(max_abs(*params[1].value) == 0.0);
    CHECK(max_abs(*params[0].value) > 0.0);
}

TEST_CASE("least squares toy converges to w = 2") {
    SequentialModel<double> model;
    model.emplace<LinearLayer<double>>(1, 1);
    OptimHyper h;
    h.learning_rate = 0.05;
    Optimizer<double> opt(OptimizerKind::sgd, h);
    const auto x = Tensor<double>::matrix({{-1.0, -0.5, 0.25, 0.5, 1.0, 1.5}});
    const auto target = map(x, [](double v) { return 2.0 * v; });
    const double n = 6.0;
    double loss = 0.0;
    for (int step = 0; step < 200; ++step) {
        const auto y = model.forward(x);
        Tensor<double> dy(y.shape());
        loss = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            const double r = y[i] - target[i];
            loss += r * r / n;
            dy[i] = 2.0 * r / n;
        }
        model.backward(dy);
        opt.step(model.parameters());
    }
    CHECK(loss < 1e-3);
    CHECK(model.parameters()[0].value->at({0, 0}) == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("training with zero epochs leaves the model untouched") {
    SeededRng rng(3);
    const auto train = blobs(64, 6, 3, rng);
    auto model = small_mlp(1);
    const auto before = *model.parameters()[0].value;
    Trainer<double> trainer(model, small_config(0));
    CHECK(trainer.fit(train, train).empty());
    CHECK(bitwise_equal(*model.parameters()[0].value, before));
}

TEST_CASE("training learns separable blobs and is deterministic") {
    SeededRng rng(4);
    const auto train = blobs(256, 6, 3, rng);
    const auto test = blobs(64, 6, 3, rng);
    auto run = [&] {
        auto model = small_mlp(7);
        Trainer<double> trainer(model, small_config(4));
        auto metrics = trainer.fit(train, test);
        return std::make_pair(metrics, *model.parameters()[0].value);
    };
    const auto [m1, w1] = run();
    const auto [m2, w2] = run();
    REQUIRE(m1.size() == 4);
    CHECK(m1.back().train_loss < m1.front().train_loss);
    CHECK(m1.back().test_err < 0.2);
    CHECK(bitwise_equal(w1, w2));
    for (std::size_t i = 0; i < m1.size(); ++i) {
        CHECK(m1[i].train_loss == m2[i].train_loss);
        CHECK(m1[i].test_loss == m2[i].test_loss);
        CHECK(m1[i].test_err == m2[i].test_err);
    }
}

TEST_CASE("single precision training is deterministic too") {
    SeededRng rng(4);
    const auto train = blobs<float>(128, 6, 3, rng);
    auto run = [&] {
        auto model = make_mlp<float>({6, 1, 1}, {12}, 3);
        SeededRng init(9);
        model.initialize(init);
        Trainer<float> trainer(model, small_config(2));
        trainer.fit(train, train);
        return *model.parameters()[0].value;
    };
    CHECK(bitwise_equal(run(), run()));
}

TEST_CASE("selective SGD inside the trainer restores the model") {
    SeededRng rng(6);
    const auto train = blobs(128, 6, 3, rng);
    auto model = small_mlp(2);
    const auto before = *model.parameters()[0].value;
    auto config = small_config(1);
    config.selective_sgd = SelectiveSgdConfig{};
    config.selective_sgd->trial_iterations = 10;
    Trainer<double> trainer(model, config);
    const auto result = trainer.select_learning_rate(train);
    CHECK(bitwise_equal(*model.parameters()[0].value, before));
    CHECK(trainer.optimizer().learning_rate() == result.rate);
    CHECK(trainer.step() == 0);
    CHECK(result.candidates.size() == 5);
}

TEST_CASE("diverging training aborts") {
    SeededRng rng(8);
    const auto train = blobs(64, 6, 3, rng);
    auto model = small_mlp(3);
    auto config = small_config(10);
    config.hyper.learning_rate = 1e30;
    config.hyper.momentum = 0.0;
    Trainer<double> trainer(model, config);
    CHECK_THROWS_AS(trainer.fit(train, train), DivergenceError);
}

TEST_CASE("gradient check on the experiment-shaped models") {
    GradCheckOptions options;
    options.coords_per_tensor = 5;
    for (std::uint64_t seed : {0u, 1u}) {
        auto mlp = small_mlp_case(seed, "");
        CHECK(grad_check(mlp.model, mlp.inputs, mlp.labels, options).passed());
        auto cnn = small_cnn_case(seed, "");
        CHECK(grad_check(cnn.model, cnn.inputs, cnn.labels, options).passed());
    }
}

TEST_CASE("gradient check of a linear-only model is tight") {
    SeededRng rng(10);
    SequentialModel<double> model;
    model.emplace<FlattenLayer<double>>();
    model.emplace<LinearLayer<double>>(6, 4);
    model.initialize(rng);
    const auto x = random_tensor({3, 2, 1, 5}, rng);
    const std::int32_t labels[] = {0, 1, 2, 3, 0};
    GradCheckOptions options;
    options.coords_per_tensor = 50;
    const auto report = grad_check(model, x, labels, options);
    CHECK(report.max_error() < 1e-7);
}

TEST_CASE("gradient check of a full-size MLP first layer") {
    SeededRng rng(11);
    auto model = make_mlp<double>({28, 28, 1}, {128, 128}, 10);
    model.initialize(rng);
    const auto x = random_tensor({28, 28, 1, 4}, rng);
    const std::int32_t labels[] = {3, 1, 4, 1};
    GradCheckOptions options;
    options.coords_per_tensor = 5;
    const auto report = grad_check(model, x, labels, options);
    CHECK(report.passed());
}

TEST_CASE("corrupted backward is flagged by layer") {
    auto c = small_mlp_case(0, "linear");
    const auto report = grad_check(c.model, c.inputs, c.labels, GradCheckOptions{});
    CHECK_FALSE(report.passed());
    const auto failures = report.failures();
    REQUIRE(!failures.empty());
    CHECK(failures.front().find("1.") == 0);
    CHECK_THROWS_AS(small_mlp_case(0, "conv"), ConfigError);
}
