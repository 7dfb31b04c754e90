#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <limits>

#include "bimac/tensor.hpp"
#include "bimac/tensor_io.hpp"
#include "oracles.hpp"

using namespace bimac;

TEST_CASE("conv2d identity kernel returns the input") {
    Tensor x = oracle::random_tensor({3, 7, 6}, 11);
    Tensor w({3, 3, 3, 3});
    for (std::size_t o = 0; o < 3; ++o) w.at4(o, o, 1, 1) = 1.0;
    Tensor b({3});
    Tensor y = conv2d(x, w, b, 1);
    CHECK(oracle::max_abs_diff(x, y) == 0.0);
}

TEST_CASE("conv2d all-ones kernel shows the zero-padding pattern") {
    Tensor x({1, 5, 5}, 1.0);
    Tensor w({1, 1, 3, 3}, 1.0);
    Tensor b({1});
    Tensor y = conv2d(x, w, b, 1);
    CHECK(y.at3(0, 2, 2) == doctest::Approx(9.0));
    CHECK(y.at3(0, 0, 0) == doctest::Approx(4.0));
    CHECK(y.at3(0, 0, 2) == doctest::Approx(6.0));
    CHECK(y.at3(0, 4, 4) == doctest::Approx(4.0));
}

TEST_CASE("conv2d matches the six-loop oracle") {
    Tensor x = oracle::random_tensor({4, 9, 8}, 21);
    Tensor w = oracle::random_tensor({5, 4, 3, 3}, 22);
    Tensor b = oracle::random_tensor({5}, 23);
    Tensor y = conv2d(x, w, b, 1);
    Tensor ref = oracle::conv2d_naive(x, w, b, 1);
    CHECK(oracle::max_abs_diff(y, ref) < 1e-12);
}

TEST_CASE("conv2d is linear in the input") {
    Tensor x1 = oracle::random_tensor({2, 6, 6}, 31);
    Tensor x2 = oracle::random_tensor({2, 6, 6}, 32);
    Tensor w = oracle::random_tensor({3, 2, 3, 3}, 33);
    Tensor b({3});
    const double a = 1.7;
    Tensor lhs_in = x1;
    for (std::size_t i = 0; i < lhs_in.numel(); ++i) lhs_in[i] = a * x1[i] + x2[i];
    Tensor lhs = conv2d(lhs_in, w, b, 1);
    Tensor y1 = conv2d(x1, w, b, 1);
    Tensor y2 = conv2d(x2, w, b, 1);
    for (std::size_t i = 0; i < lhs.numel(); ++i)
        CHECK(lhs[i] == doctest::Approx(a * y1[i] + y2[i]).epsilon(1e-10));
}

TEST_CASE("conv2d rejects bad arguments") {
    Tensor x({2, 4, 4});
    Tensor w_even({1, 2, 2, 2});
    Tensor b({1});
    CHECK_THROWS_AS(conv2d(x, w_even, b, 0), ConfigError);
    Tensor w({1, 3, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w, b, 1), DimensionError);
    Tensor w_ok({1, 2, 3, 3});
    CHECK_THROWS_AS(conv2d(x, w_ok, b, 2), ConfigError);
    Tensor x_nan = x;
    x_nan[0] = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(conv2d(x_nan, w_ok, b, 1), NumericError);
}

TEST_CASE("conv2d_at covers full, empty, and sparse position sets") {
    Tensor x = oracle::random_tensor({3, 8, 8}, 41);
    Tensor w = oracle::random_tensor({2, 3, 3, 3}, 42);
    Tensor b = oracle::random_tensor({2}, 43);
    Tensor dense = conv2d(x, w, b, 1);

    SUBCASE("full coverage equals conv2d at every pixel") {
        std::vector<Position> all;
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j) all.push_back({i, j});
        auto result = conv2d_at(x, w, b, 1, all);
        REQUIRE(result.size() == 64);
        for (auto& [pos, vec] : result)
            for (std::size_t o = 0; o < 2; ++o)
                CHECK(vec[o] == dense.at3(o, pos.i, pos.j));
    }
    SUBCASE("empty position set gives an empty map") {
        CHECK(conv2d_at(x, w, b, 1, {}).empty());
    }
    SUBCASE("random subset matches the dense oracle") {
        std::mt19937_64 rng(44);
        std::vector<Position> some;
        for (int i = 0; i < 8; ++i)
            for (int j = 0; j < 8; ++j)
                if (rng() % 10 < 3) some.push_back({i, j});
        auto result = conv2d_at(x, w, b, 1, some);
        for (auto& [pos, vec] : result)
            for (std::size_t o = 0; o < 2; ++o)
                CHECK(std::fabs(vec[o] - dense.at3(o, pos.i, pos.j)) < 1e-12);
    }
    SUBCASE("out-of-range position is an index error") {
        CHECK_THROWS_AS(conv2d_at(x, w, b, 1, {{8, 0}}), IndexError);
        CHECK_THROWS_AS(conv2d_at(x, w, b, 1, {{0, -1}}), IndexError);
    }
}

TEST_CASE("masked_gap") {
    SUBCASE("constant field") {
        Tensor x({3, 4, 4}, 3.0);
        Tensor keep({1, 4, 4});
        keep[5] = 1.0;
        Tensor v = masked_gap(x, keep);
        for (std::size_t c = 0; c < 3; ++c) CHECK(v[c] == doctest::Approx(3.0));
    }
    SUBCASE("all-ones keep is the plain global average") {
        Tensor x = oracle::random_tensor({2, 5, 5}, 51);
        Tensor keep({1, 5, 5}, 1.0);
        Tensor v = masked_gap(x, keep);
        for (std::size_t c = 0; c < 2; ++c) {
            double acc = 0.0;
            for (std::size_t p = 0; p < 25; ++p) acc += x[c * 25 + p];
            CHECK(v[c] == doctest::Approx(acc / 25.0).epsilon(1e-12));
        }
    }
    SUBCASE("random mask matches the summation oracle") {
        Tensor x = oracle::random_tensor({4, 6, 6}, 52);
        Tensor keep({1, 6, 6});
        std::mt19937_64 rng(53);
        for (std::size_t p = 0; p < 36; ++p) keep[p] = rng() % 2 ? 1.0 : 0.0;
        Tensor v = masked_gap(x, keep);
        for (std::size_t c = 0; c < 4; ++c) {
            double acc = 0.0;
            std::size_t n = 0;
            for (std::size_t p = 0; p < 36; ++p)
                if (keep[p] == 1.0) {
                    acc += x[c * 36 + p];
                    ++n;
                }
            CHECK(std::fabs(v[c] - acc / static_cast<double>(n)) < 1e-12);
        }
    }
    SUBCASE("all-zero keep falls back to the full mean") {
        Tensor x = oracle::random_tensor({2, 3, 3}, 54);
        Tensor keep({1, 3, 3});
        Tensor v = masked_gap(x, keep);
        Tensor ones({1, 3, 3}, 1.0);
        Tensor full = masked_gap(x, ones);
        CHECK(oracle::max_abs_diff(v, full) == 0.0);
    }
}

TEST_CASE("linear, sigmoid, relu basics") {
    Tensor v = oracle::random_tensor({4}, 61);
    Tensor eye({4, 4});
    for (std::size_t i = 0; i < 4; ++i) eye.at2(i, i) = 1.0;
    Tensor zero({4});
    CHECK(oracle::max_abs_diff(linear(v, eye, zero), v) == 0.0);

    Tensor z({1});
    CHECK(sigmoid(z)[0] == doctest::Approx(0.5));
    Tensor t({2});
    t[0] = -2.5;
    t[1] = 2.5;
    Tensor r = relu(t);
    CHECK(r[0] == 0.0);
    CHECK(r[1] == 2.5);

    Tensor big = oracle::random_tensor({100}, 62, -50.0, 50.0);
    Tensor s = sigmoid(big);
    for (double q : s.data) {
        CHECK(q > 0.0);
        CHECK(q < 1.0);
    }
}

TEST_CASE("tensor binary format round trip") {
    const std::string path = std::filesystem::temp_directory_path() / "bimac_t.bmt";
    Tensor t = oracle::random_tensor({2, 3, 4}, 71);
    write_bmt(path, t);
    Tensor u = read_bmt(path);
    REQUIRE(u.shape == t.shape);
    for (std::size_t i = 0; i < t.numel(); ++i)
        CHECK(u[i] == doctest::Approx(t[i]).epsilon(1e-6)); // f32 payload
    std::filesystem::remove(path);
}

TEST_CASE("pgm export/import") {
    const std::string path = std::filesystem::temp_directory_path() / "bimac_t.pgm";
    Tensor t({4, 5});
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<double>(i) / 19.0;
    write_pgm(path, t, 0.0, 1.0);
    Tensor u = read_pgm(path);
    REQUIRE(u.shape == t.shape);
    for (std::size_t i = 0; i < t.numel(); ++i)
        CHECK(std::fabs(u[i] - t[i]) < 1.0 / 255.0 + 1e-9);
    std::filesystem::remove(path);
}
