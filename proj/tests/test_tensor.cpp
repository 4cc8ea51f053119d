#include "doctest.h"

#include <map>

#include "leafnet/patches.hpp"
#include "support.hpp"

using namespace leafnet;
using leafnet::test::random_tensor;

TEST_CASE("matmul small products") {
    const auto eye = Tensor<double>::matrix({{1, 0}, {0, 1}});
    const auto col = Tensor<double>::matrix({{3}, {4}});
    CHECK(matmul(eye, col) == col);
    const auto a = Tensor<double>::matrix({{1, 2}, {3, 4}});
    const auto ones = Tensor<double>::matrix({{1}, {1}});
    CHECK(matmul(a, ones) == Tensor<double>::matrix({{3}, {7}}));
}

TEST_CASE("matmul against triple loop") {
    SeededRng rng(3);
    const auto a = random_tensor({5, 7}, rng);
    const auto b = random_tensor({7, 3}, rng);
    const auto c = matmul(a, b);
    REQUIRE(c.shape() == Shape{5, 3});
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < 7; ++k) {
                s += a.at({i, k}) * b.at({k, j});
            }
            CHECK(c.at({i, j}) == doctest::Approx(s).epsilon(1e-12));
        }
    }
    // transposed variants agree with explicit transposes
    const auto c1 = matmul_tn(transpose(a), b);
    const auto bt = transpose(b);
    const auto c2 = matmul_nt(a, bt);
    for (std::size_t i = 0; i < c.size(); ++i) {
        CHECK(c1[i] == doctest::Approx(c[i]).epsilon(1e-12));
        CHECK(c2[i] == doctest::Approx(c[i]).epsilon(1e-12));
    }
}

TEST_CASE("matmul is associative") {
    SeededRng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = random_tensor({4, 4}, rng);
        const auto b = random_tensor({4, 4}, rng);
        const auto c = random_tensor({4, 4}, rng);
        const auto left = matmul(matmul(a, b), c);
        const auto right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.size(); ++i) {
            CHECK(std::abs(left[i] - right[i]) < 1e-6);
        }
    }
}

TEST_CASE("matmul rejects mismatched inner extents") {
    CHECK_THROWS_AS(matmul(Tensor<double>({2, 3}), Tensor<double>({2, 3})), DimensionError);
}

TEST_CASE("map, broadcast, transpose") {
    const auto x = Tensor<double>::vector({1, 2});
    CHECK(map(x, [](double v) { return 2 * v; }) == Tensor<double>::vector({2, 4}));

    const Tensor<double> m({2, 2}, 5.0);
    const auto y = add_broadcast(m, Tensor<double>::vector({1}));
    for (double v : y.data()) {
        CHECK(v == 6.0);
    }

    SeededRng rng(1);
    const auto r = random_tensor({3, 5}, rng);
    CHECK(bitwise_equal(transpose(transpose(r)), r));
}

TEST_CASE("reshape round trip is bitwise") {
    SeededRng rng(2);
    const auto t = random_tensor({2, 3, 4, 5}, rng);
    const auto back = t.reshaped({6, 20}).reshaped({2, 3, 4, 5});
    CHECK(bitwise_equal(back, t));
    CHECK_THROWS_AS(t.reshaped({7, 7}), DimensionError);
}

TEST_CASE("permute moves axes") {
    SeededRng rng(4);
    const auto t = random_tensor({2, 3, 4}, rng);
    const std::size_t axes[] = {2, 0, 1};
    const auto p = permute(t, axes);
    REQUIRE(p.shape() == Shape{4, 2, 3});
    for (std::size_t i = 0; i < 2; ++i) {
        for (std::size_t j = 0; j < 3; ++j) {
            for (std::size_t k = 0; k < 4; ++k) {
                CHECK(p.at({k, i, j}) == t.at({i, j, k}));
            }
        }
    }
}

namespace {

Tensor<double> iota(Shape shape) {
    Tensor<double> t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) {
        t[i] = static_cast<double>(i);
    }
    return t;
}

} // namespace

TEST_CASE("im2col single window") {
    const auto x = iota({2, 2, 1, 1});
    const auto p = im2col_pool(x, WindowSpec{2, 2, 2, 2, {}});
    REQUIRE(p.columns.shape() == Shape{4, 1});
    CHECK(p.columns == Tensor<double>({4, 1}, {0, 1, 2, 3}));
}

TEST_CASE("im2col matches window enumeration") {
    const auto x = iota({3, 3, 1, 1});
    const auto p = im2col_pool(x, WindowSpec{2, 2, 1, 1, {}});
    REQUIRE(p.columns.shape() == Shape{4, 4});
    REQUIRE(p.out_rows == 2);
    REQUIRE(p.out_cols == 2);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t c = 0; c < 2; ++c) {
            const std::size_t col = r * 2 + c;
            for (std::size_t a = 0; a < 2; ++a) {
                for (std::size_t b = 0; b < 2; ++b) {
                    const auto expect = static_cast<std::int64_t>((r + a) * 3 + (c + b));
                    CHECK(p.source_indices.at({a * 2 + b, col}) == expect);
                    CHECK(p.columns.at({a * 2 + b, col}) == static_cast<double>(expect));
                }
            }
        }
    }
}

TEST_CASE("im2col padding cells carry the sentinel") {
    const auto x = iota({1, 1, 1, 1});
    // 3x3 window over a 1x1 input padded by 2: the corner window sees only padding
    const auto p = im2col_pool(x, WindowSpec{1, 1, 1, 1, Padding::uniform(2)}, -7.0);
    REQUIRE(p.columns.shape() == Shape{1, 25});
    std::size_t real = 0;
    for (std::size_t j = 0; j < 25; ++j) {
        if (p.source_indices[j] == kPaddingIndex) {
            CHECK(p.columns[j] == -7.0);
        } else {
            ++real;
        }
    }
    CHECK(real == 1);
    CHECK(p.source_indices[0] == kPaddingIndex);
}

TEST_CASE("scatter accumulate") {
    const IndexTensor dup({2}, {0, 0});
    CHECK(scatter_accumulate({2}, dup, Tensor<double>::vector({1, 2})) ==
          Tensor<double>::vector({3, 0}));
    const IndexTensor perm({3}, {2, 0, 1});
    CHECK(scatter_accumulate({3}, perm, Tensor<double>::vector({1, 2, 3})) ==
          Tensor<double>::vector({2, 3, 1}));
    CHECK_THROWS_AS(scatter_accumulate({2}, IndexTensor({1}, {5}), Tensor<double>::vector({1})),
                    IndexError);
}

TEST_CASE("scatter accumulate against a loop") {
    SeededRng rng(9);
    IndexTensor idx({40});
    for (auto& i : idx.data()) {
        i = rng.uniform() < 0.2 ? kPaddingIndex : static_cast<std::int64_t>(rng.below(7));
    }
    const auto values = random_tensor({40}, rng);
    std::vector<double> expect(7, 0.0);
    for (std::size_t j = 0; j < 40; ++j) {
        if (idx[j] != kPaddingIndex) {
            expect[static_cast<std::size_t>(idx[j])] += values[j];
        }
    }
    const auto got = scatter_accumulate({7}, idx, values);
    for (std::size_t i = 0; i < 7; ++i) {
        CHECK(got[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    }
}

TEST_CASE("im2col then scatter of ones counts window coverage") {
    for (std::size_t h = 1; h <= 6; ++h) {
        for (std::size_t stride = 1; stride <= 3; ++stride) {
            for (std::size_t pad = 0; pad <= 1; ++pad) {
                const WindowSpec spec{3, 2, stride, stride, Padding{pad, pad, 0, pad}};
                const Shape shape{h, 5, 2, 1};
                if (h + 2 * pad < 3) {
                    continue;
                }
                const auto p = im2col_pool(Tensor<double>(shape), spec);
                const Tensor<double> ones(p.columns.shape(), 1.0);
                const auto cover = scatter_accumulate(shape, p.source_indices, ones);
                // brute force: count windows containing each cell
                for (std::size_t r = 0; r < h; ++r) {
                    for (std::size_t c = 0; c < 5; ++c) {
                        double count = 0;
                        for (std::size_t wr = 0; wr < p.out_rows; ++wr) {
                            for (std::size_t wc = 0; wc < p.out_cols; ++wc) {
                                const auto r0 = static_cast<long>(wr * stride) - static_cast<long>(pad);
                                const auto c0 = static_cast<long>(wc * stride);
                                const auto rr = static_cast<long>(r), cc = static_cast<long>(c);
                                if (rr >= r0 && rr < r0 + 3 && cc >= c0 && cc < c0 + 2) {
                                    ++count;
                                }
                            }
                        }
                        CHECK(cover.at({r, c, 0, 0}) == count);
                        CHECK(cover.at({r, c, 1, 0}) == count);
                    }
                }
            }
        }
    }
}

TEST_CASE("sliding extent formula") {
    CHECK(sliding_extent(5, 0, 0, 3, 1) == 3);
    CHECK(sliding_extent(5, 1, 1, 3, 2) == 3);
    CHECK(sliding_extent(32, 0, 1, 3, 2) == 16);
    CHECK_THROWS_AS(sliding_extent(2, 0, 0, 3, 1), DimensionError);
}

TEST_CASE("rng streams are reproducible") {
    SeededRng a(42), b(42);
    for (int i = 0; i < 100; ++i) {
        CHECK(a.next_u64() == b.next_u64());
    }
    SeededRng d1 = SeededRng::derive(42, 1), d2 = SeededRng::derive(42, 2);
    CHECK(d1.next_u64() != d2.next_u64());
    std::map<std::size_t, int> hist;
    SeededRng r(5);
    for (int i = 0; i < 6000; ++i) {
        ++hist[r.below(3)];
    }
    for (const auto& [k, n] : hist) {
        CHECK(k < 3);
        CHECK(std::abs(n - 2000) < 150);
    }
}
