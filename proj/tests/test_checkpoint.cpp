#include "doctest.h"

#include <filesystem>

#include "leafnet/checkpoint.hpp"
#include "leafnet/experiments.hpp"
#include "leafnet/network.hpp"
#include "support.hpp"

using namespace leafnet;
using namespace leafnet::test;

namespace {

Checkpoint<double> sample_checkpoint() {
    SeededRng rng(1);
    Checkpoint<double> c;
    c.counters = {{"train.step", 12}, {"rng.state", 0xDEADBEEFULL}};
    c.scalars = {{"optim.lr", 0.01}};
    c.tensors = {{"a", random_tensor({2, 3}, rng)}, {"b", random_tensor({4}, rng)}};
    return c;
}

std::filesystem::path temp_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("leafnet_test_" + name);
}

TrainConfig resume_config() {
    TrainConfig c;
    c.epochs = 1;
    c.batch_size = 8;
    c.optimizer = OptimizerKind::adam;
    c.hyper.learning_rate = 0.01;
    c.seed = 3;
    return c;
}

} // namespace

TEST_CASE("encode, decode, encode is byte identical") {
    const auto c = sample_checkpoint();
    const auto bytes = encode_checkpoint(c);
    const auto back = decode_checkpoint<double>(bytes);
    CHECK(encode_checkpoint(back) == bytes);
    CHECK(back.counter("train.step") == 12u);
    CHECK(back.scalar("optim.lr") == 0.01);
    CHECK(bitwise_equal(*back.tensor("a"), *c.tensor("a")));
    CHECK(back.tensor("missing") == nullptr);

    const auto path = temp_path("roundtrip.bin");
    save_checkpoint(c, path);
    CHECK(checkpoint_scalar_size(path) == 8);
    save_checkpoint(load_checkpoint<double>(path), path);
    CHECK(read_file_bytes(path) == bytes);
    std::filesystem::remove(path);
}

TEST_CASE("decode rejects damaged input") {
    const auto bytes = encode_checkpoint(sample_checkpoint());
    for (std::size_t cut : {std::size_t{4}, std::size_t{20}, bytes.size() - 1}) {
        CHECK_THROWS_AS(decode_checkpoint<double>(std::span(bytes).first(cut)),
                        CheckpointTruncatedError);
    }
    auto bad_version = bytes;
    bad_version[8] = 9;
    CHECK_THROWS_AS(decode_checkpoint<double>(bad_version), CheckpointVersionError);
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint<double>(bad_magic), CheckpointVersionError);
    CHECK_THROWS_AS(decode_checkpoint<float>(bytes), CheckpointVersionError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint<double>(trailing), CheckpointError);
}

TEST_CASE("loading into a different architecture names the tensor") {
    auto small = make_mlp<double>({4, 1, 1}, {8}, 2);
    auto wide = make_mlp<double>({4, 1, 1}, {9}, 2);
    SeededRng rng(2);
    small.initialize(rng);
    Optimizer<double> opt(OptimizerKind::sgd, OptimHyper{});
    const auto ckpt = capture_training_state(small, opt, rng, 0);
    const auto before = *wide.parameters()[0].value;
    std::uint64_t step = 0;
    try {
        restore_training_state(ckpt, wide, opt, rng, step);
        FAIL("expected a shape error");
    } catch (const CheckpointShapeError& e) {
        CHECK(std::string(e.what()).find("param.1.linear.W") != std::string::npos);
    }
    CHECK(bitwise_equal(*wide.parameters()[0].value, before));
}

TEST_CASE("resume reproduces the uninterrupted run bit for bit") {
    SeededRng data_rng(4);
    const auto data = blobs(40, 5, 3, data_rng);
    auto fresh = [] {
        auto m = make_mlp<double>({5, 1, 1}, {7}, 3);
        SeededRng init(6);
        m.initialize(init);
        return m;
    };

    // uninterrupted: 12 steps, crossing an epoch boundary (5 batches per epoch)
    auto straight = fresh();
    Trainer<double> t1(straight, resume_config());
    t1.run_steps(data, 12);

    auto first = fresh();
    Trainer<double> t2(first, resume_config());
    t2.run_steps(data, 7);
    const auto bytes = encode_checkpoint(capture_training_state(first, t2.optimizer(), t2.rng(), t2.step()));

    auto resumed = fresh();
    Trainer<double> t3(resumed, resume_config());
    std::uint64_t step = 0;
    restore_training_state(decode_checkpoint<double>(bytes), resumed, t3.optimizer(), t3.rng(), step);
    t3.set_step(step);
    CHECK(step == 7);
    t3.run_steps(data, 5);

    const auto a = straight.parameters();
    const auto b = resumed.parameters();
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(bitwise_equal(*a[i].value, *b[i].value));
    }
    CHECK(t1.optimizer().steps() == t3.optimizer().steps());
}

TEST_CASE("optimizer kind mismatch is rejected") {
    auto m = make_mlp<double>({2, 1, 1}, {}, 2);
    SeededRng rng(1);
    Optimizer<double> adam(OptimizerKind::adam, OptimHyper{});
    Optimizer<double> sgd(OptimizerKind::sgd, OptimHyper{});
    const auto ckpt = capture_training_state(m, adam, rng, 0);
    std::uint64_t step = 0;
    CHECK_THROWS_AS(restore_training_state(ckpt, m, sgd, rng, step), CheckpointShapeError);
}
