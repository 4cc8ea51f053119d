#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <fstream>

#include "leafnet/datasets.hpp"
#include "support.hpp"

using namespace leafnet;

namespace {

IdxArray synthetic_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols) {
    IdxArray a;
    a.magic = kIdxImagesMagic;
    a.dims = {n, rows, cols};
    for (std::uint32_t i = 0; i < n * rows * cols; ++i) {
        a.data.push_back(static_cast<std::uint8_t>((i * 37) % 256));
    }
    return a;
}

IdxArray synthetic_labels(std::uint32_t n) {
    IdxArray a;
    a.magic = kIdxLabelsMagic;
    a.dims = {n};
    for (std::uint32_t i = 0; i < n; ++i) {
        a.data.push_back(static_cast<std::uint8_t>(i % 10));
    }
    return a;
}

void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

} // namespace

TEST_CASE("IDX round trip and header layout") {
    const auto images = synthetic_images(3, 4, 5);
    const auto bytes = encode_idx(images);
    REQUIRE(bytes.size() == 4 + 3 * 4 + 60);
    // big-endian magic and first extent
    CHECK(bytes[2] == 0x08);
    CHECK(bytes[3] == 0x03);
    CHECK(bytes[7] == 3);
    const auto parsed = parse_idx(bytes, kIdxImagesMagic, "mem");
    CHECK(parsed.dims == images.dims);
    CHECK(encode_idx(parsed) == bytes);
}

TEST_CASE("IDX errors") {
    auto bytes = encode_idx(synthetic_images(2, 3, 3));
    bytes.pop_back();
    try {
        parse_idx(bytes, kIdxImagesMagic, "images");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("34") != std::string::npos);
        CHECK(msg.find("33") != std::string::npos);
    }
    CHECK_THROWS_AS(parse_idx(encode_idx(synthetic_labels(2)), kIdxImagesMagic, "x"), ParseError);
}

TEST_CASE("MNIST loader scales and centers with training statistics") {
    const auto dir = std::filesystem::temp_directory_path() / "leafnet_test_mnist";
    std::filesystem::create_directories(dir);
    write_bytes(dir / "train-images-idx3-ubyte", encode_idx(synthetic_images(6, 28, 28)));
    write_bytes(dir / "train-labels-idx1-ubyte", encode_idx(synthetic_labels(6)));
    write_bytes(dir / "t10k-images-idx3-ubyte", encode_idx(synthetic_images(2, 28, 28)));
    write_bytes(dir / "t10k-labels-idx1-ubyte", encode_idx(synthetic_labels(2)));
    const auto split = load_mnist<double>(dir);
    CHECK(split.train.size() == 6);
    CHECK(split.test.size() == 2);
    CHECK(split.train.inputs.shape() == Shape{28, 28, 1, 6});
    CHECK(split.train.labels[1] == 1);
    CHECK(split.test.normalization.source == "train");
    double mean = 0.0;
    for (double v : split.train.inputs.data()) {
        mean += v;
    }
    CHECK(std::abs(mean / static_cast<double>(split.train.inputs.size())) < 1e-9);
    // the test split uses the training mean, not its own
    CHECK(split.test.normalization.mean == split.train.normalization.mean);
    std::filesystem::remove_all(dir);

    CHECK_THROWS_AS(load_mnist<double>(dir), DataError);
}

TEST_CASE("CIFAR record decodes into planes") {
    std::vector<std::uint8_t> rec(kCifarRecordBytes);
    rec[0] = 7;
    for (std::size_t i = 0; i < 1024; ++i) {
        rec[1 + i] = 255;               // red plane
        rec[1 + 1024 + i] = 0;          // green plane
        rec[1 + 2048 + i] = i % 2 ? 51 : 0; // blue plane
    }
    const auto d = parse_cifar10<double>(rec, "mem");
    REQUIRE(d.size() == 1);
    CHECK(d.labels[0] == 7);
    CHECK(d.inputs.shape() == Shape{32, 32, 3, 1});
    CHECK(d.inputs.at({0, 0, 0, 0}) == 1.0);
    CHECK(d.inputs.at({5, 9, 1, 0}) == 0.0);
    CHECK(d.inputs.at({0, 1, 2, 0}) == doctest::Approx(0.2));
    CHECK(d.inputs.at({0, 2, 2, 0}) == 0.0);

    rec.push_back(1);
    CHECK_THROWS_AS(parse_cifar10<double>(rec, "mem"), ParseError);
}

TEST_CASE("channel standardization centers every channel") {
    SeededRng rng(1);
    LabeledDataset<double> d;
    d.inputs = leafnet::test::random_tensor({4, 4, 3, 10}, rng, 5.0);
    for (std::size_t i = 0; i < d.inputs.size(); ++i) {
        d.inputs[i] += static_cast<double>((i / 10) % 3);
    }
    d.labels.assign(10, 0);
    d.classes = 1;
    const auto norm = channel_statistics(d, true);
    apply_normalization(d, norm);
    for (std::size_t ch = 0; ch < 3; ++ch) {
        double s = 0.0;
        for (std::size_t r = 0; r < 4; ++r) {
            for (std::size_t c = 0; c < 4; ++c) {
                for (std::size_t n = 0; n < 10; ++n) {
                    s += d.inputs.at({r, c, ch, n});
                }
            }
        }
        CHECK(std::abs(s / 160.0) < 1e-5);
    }
}

TEST_CASE("batch plans cover the data exactly once") {
    SeededRng rng(2);
    const auto d = leafnet::test::blobs(23, 2, 4, rng);
    SeededRng a(9), b(9);
    BatchIterator<double> it(d, 5, a);
    std::vector<std::int32_t> seen;
    std::size_t batches = 0;
    while (!it.done()) {
        const auto batch = it.next();
        seen.insert(seen.end(), batch.labels.begin(), batch.labels.end());
        ++batches;
    }
    CHECK(batches == 5);
    auto expect = d.labels;
    std::sort(seen.begin(), seen.end());
    std::sort(expect.begin(), expect.end());
    CHECK(seen == expect);

    const BatchPlan p1(23, 5, b), whole(23, 100, rng);
    SeededRng c(9);
    const BatchPlan p2(23, 5, c);
    for (std::size_t i = 0; i < p1.batches(); ++i) {
        CHECK(std::equal(p1.batch(i).begin(), p1.batch(i).end(), p2.batch(i).begin()));
    }
    CHECK(whole.batches() == 1);
    CHECK(whole.batch(0).size() == 23);
    SeededRng r(1);
    CHECK_THROWS_AS(BatchPlan(10, 0, r), ConfigError);
}

TEST_CASE("subset draws after a seeded shuffle") {
    SeededRng rng(3);
    const auto d = leafnet::test::blobs(50, 2, 3, rng);
    SeededRng a(4), b(4);
    const auto s1 = subset(d, 10, a);
    const auto s2 = subset(d, 10, b);
    CHECK(s1.size() == 10);
    CHECK(s1.labels == s2.labels);
    CHECK(bitwise_equal(s1.inputs, s2.inputs));
    SeededRng c(4);
    CHECK(subset(d, 500, c).size() == 50);
}
