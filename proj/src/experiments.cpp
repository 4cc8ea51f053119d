#include "leafnet/experiments.hpp"

#include "leafnet/cartpole.hpp"
#include "leafnet/lstm.hpp"

namespace leafnet {

template <typename T>
SequentialModel<T> make_mlp(const Shape& item_shape, const std::vector<std::size_t>& hidden,
                            std::size_t classes) {
    SequentialModel<T> model;
    model.template emplace<FlattenLayer<T>>();
    std::size_t in = element_count(item_shape);
    for (std::size_t width : hidden) {
        model.template emplace<LinearLayer<T>>(in, width);
        model.template emplace<ActivationLayer<T>>(Activation::relu);
        in = width;
    }
    model.template emplace<LinearLayer<T>>(in, classes);
    return model;
}

template <typename T>
SequentialModel<T> make_cifar_cnn(std::size_t classes) {
    const WindowSpec pool{3, 3, 2, 2, Padding{0, 1, 0, 1}};
    SequentialModel<T> model;
    model.template emplace<ConvLayer<T>>(5, 5, 3, 32, Padding::uniform(2));
    model.template emplace<ActivationLayer<T>>(Activation::relu);
    model.template emplace<MaxPoolLayer<T>>(pool);
    model.template emplace<ConvLayer<T>>(5, 5, 32, 32, Padding::uniform(2));
    model.template emplace<ActivationLayer<T>>(Activation::relu);
    model.template emplace<MaxPoolLayer<T>>(pool);
    model.template emplace<ConvLayer<T>>(5, 5, 32, 64, Padding::uniform(2));
    model.template emplace<ActivationLayer<T>>(Activation::relu);
    model.template emplace<MaxPoolLayer<T>>(pool);
    model.template emplace<ConvLayer<T>>(4, 4, 64, 64);
    model.template emplace<ActivationLayer<T>>(Activation::relu);
    model.template emplace<FlattenLayer<T>>();
    model.template emplace<LinearLayer<T>>(64, classes);
    return model;
}

void corrupt_layer(SequentialModel<double>& model, const std::string& kind) {
    for (std::size_t i = 0; i < model.size(); ++i) {
        if (model.layer(i).kind() == kind) {
            model.replace(i, std::make_unique<SignFlippedLayer<double>>(model.layer(i).clone()));
            return;
        }
    }
    throw ConfigError("model has no '" + kind + "' layer to corrupt");
}

namespace {

Tensor<double> random_tensor(Shape shape, SeededRng& rng) {
    Tensor<double> t(std::move(shape));
    for (double& v : t.data()) {
        v = rng.normal();
    }
    return t;
}

std::vector<std::int32_t> random_labels(std::size_t n, std::size_t classes, SeededRng& rng) {
    std::vector<std::int32_t> labels(n);
    for (auto& l : labels) {
        l = static_cast<std::int32_t>(rng.below(classes));
    }
    return labels;
}

} // namespace

GradCheckCase small_mlp_case(std::uint64_t seed, const std::string& corrupt) {
    SeededRng rng(seed);
    GradCheckCase c{make_mlp<double>({4, 3, 1}, {8, 8}, 4), {}, {}};
    c.model.initialize(rng);
    c.inputs = random_tensor({4, 3, 1, 3}, rng);
    c.labels = random_labels(3, 4, rng);
    if (!corrupt.empty()) {
        corrupt_layer(c.model, corrupt);
    }
    return c;
}

GradCheckCase small_cnn_case(std::uint64_t seed, const std::string& corrupt) {
    SeededRng rng(seed);
    const WindowSpec pool{3, 3, 2, 2, Padding{0, 1, 0, 1}};
    SequentialModel<double> model;
    model.emplace<ConvLayer<double>>(5, 5, 2, 3, Padding::uniform(2));
    model.emplace<ActivationLayer<double>>(Activation::relu);
    model.emplace<MaxPoolLayer<double>>(pool);
    model.emplace<ConvLayer<double>>(3, 3, 3, 4, Padding::uniform(1), 2, 2);
    model.emplace<ActivationLayer<double>>(Activation::relu);
    model.emplace<ConvLayer<double>>(2, 2, 4, 4);
    model.emplace<ActivationLayer<double>>(Activation::relu);
    model.emplace<FlattenLayer<double>>();
    model.emplace<LinearLayer<double>>(4, 3);
    GradCheckCase c{std::move(model), {}, {}};
    c.model.validate({8, 8, 2, 2});
    c.model.initialize(rng);
    c.inputs = random_tensor({8, 8, 2, 2}, rng);
    c.labels = random_labels(2, 3, rng);
    if (!corrupt.empty()) {
        corrupt_layer(c.model, corrupt);
    }
    return c;
}

GradCheckReport lstm_grad_check(std::uint64_t seed, const GradCheckOptions& options,
                                const std::string& corrupt) {
    constexpr std::size_t kVocab = 5, kHidden = 4, kSteps = 5, kBatch = 2;
    SeededRng rng(seed);
    LstmParams<double> params = LstmParams<double>::zeros(kHidden, kVocab, kVocab);
    for (auto& [name, t] : params.named()) {
        for (double& v : t->data()) {
            v = rng.normal(0.0, 0.5);
        }
    }
    std::vector<std::vector<std::int32_t>> inputs(kSteps, std::vector<std::int32_t>(kBatch));
    std::vector<std::vector<std::int32_t>> targets = inputs;
    for (std::size_t t = 0; t < kSteps; ++t) {
        for (std::size_t b = 0; b < kBatch; ++b) {
            inputs[t][b] = static_cast<std::int32_t>(rng.below(kVocab));
            targets[t][b] = static_cast<std::int32_t>(rng.below(kVocab));
        }
    }
    Tensor<double> h0 = random_tensor({kHidden, kBatch}, rng);
    Tensor<double> c0 = random_tensor({kHidden, kBatch}, rng);
    const std::span<const std::vector<std::int32_t>> in(inputs);
    const std::span<const std::vector<std::int32_t>> tg(targets);

    const LstmForwardResult<double> fwd = lstm_forward(params, in, tg, h0, c0);
    LstmGradients<double> grads = lstm_backward(params, fwd.cache);

    std::vector<GradTarget> gt;
    auto values = params.named();
    auto slots = grads.params.named();
    bool corrupted = corrupt.empty();
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i].first == corrupt) {
            for (double& g : slots[i].second->data()) {
                g = -g;
            }
            corrupted = true;
        }
        gt.push_back({values[i].first, values[i].first, values[i].second, slots[i].second});
    }
    if (!corrupted) {
        throw ConfigError("LSTM has no parameter '" + corrupt + "' to corrupt");
    }
    gt.push_back({"h0", "h0", &h0, &grads.dh0});
    gt.push_back({"c0", "c0", &c0, &grads.dc0});
    return check_gradients(gt, [&] { return lstm_forward(params, in, tg, h0, c0).loss; }, options);
}

GradCheckReport qnet_grad_check(std::uint64_t seed, const GradCheckOptions& options,
                                const std::string& corrupt) {
    constexpr std::size_t kBatch = 5;
    SeededRng rng(seed);
    const std::size_t hidden[] = {8};
    SequentialModel<double> model = make_qnet<double>(hidden);
    model.initialize(rng);
    if (!corrupt.empty()) {
        corrupt_layer(model, corrupt);
    }
    std::vector<Transition> batch(kBatch);
    std::vector<double> targets(kBatch);
    for (std::size_t b = 0; b < kBatch; ++b) {
        Transition& t = batch[b];
        t.state_old = {rng.normal(), rng.normal(), rng.normal(0.0, 0.1), rng.normal()};
        t.act = static_cast<int>(rng.below(kCartPoleActions));
        targets[b] = rng.normal();
    }
    return grad_check_qnet(model, batch, targets, options);
}

template SequentialModel<float> make_mlp(const Shape&, const std::vector<std::size_t>&, std::size_t);
template SequentialModel<double> make_mlp(const Shape&, const std::vector<std::size_t>&, std::size_t);
template SequentialModel<float> make_cifar_cnn(std::size_t);
template SequentialModel<double> make_cifar_cnn(std::size_t);

} // namespace leafnet
