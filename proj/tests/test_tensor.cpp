#include <catch2/catch_amalgamated.hpp>

#include "dasp/rng.hpp"
#include "dasp/tensor.hpp"
#include "support.hpp"

using namespace dasp;

TEST_CASE("matmul identity and zero cases", "[tensor]") {
    const Tensor m({2, 2}, {3, 4, 5, 6});
    CHECK(matmul(Tensor::identity(2), m).bit_equal(m));

    const Tensor a({1, 2}, {1, 2});
    const Tensor b({2, 1}, {0, 0});
    const Tensor prod = matmul(a, b);
    CHECK(prod.shape() == std::vector<std::size_t>{1, 1});
    CHECK(prod[0] == 0.0);
}

TEST_CASE("matmul matches a triple-loop oracle", "[tensor]") {
    Rng rng(42);
    const Tensor a = Tensor::gaussian({3, 4}, rng);
    const Tensor b = Tensor::gaussian({4, 2}, rng);
    const Tensor c = matmul(a, b);
    for (std::size_t i = 0; i < 3; ++i) {
        for (std::size_t j = 0; j < 2; ++j) {
            double want = 0.0;
            for (std::size_t k = 0; k < 4; ++k) want += a.at(i, k) * b.at(k, j);
            CHECK(std::abs(c.at(i, j) - want) < 1e-12);
        }
    }
}

TEST_CASE("matmul rejects mismatched shapes naming both", "[tensor]") {
    const Tensor a({2, 3});
    const Tensor b({2, 3});
    try {
        (void)matmul(a, b);
        FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[2x3]") != std::string::npos);
    }
}

TEST_CASE("softmax_rows symmetry, stability and formula", "[tensor]") {
    const Tensor z({1, 3}, {0, 0, 0});
    const Tensor sym = softmax_rows(z);
    for (std::size_t j = 0; j < 3; ++j) CHECK(sym.at(0, j) == Catch::Approx(1.0 / 3.0));

    const Tensor big({1, 2}, {1000.0, 0.0});
    const Tensor shifted = softmax_rows(big);
    CHECK(shifted.all_finite());
    CHECK(shifted.at(0, 0) == Catch::Approx(1.0));
    CHECK(shifted.at(0, 1) == Catch::Approx(0.0).margin(1e-300));

    const Tensor x({1, 3}, {1, 2, 3});
    const Tensor got = softmax_rows(x);
    const double denom = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
    for (std::size_t j = 0; j < 3; ++j) {
        CHECK(std::abs(got.at(0, j) - std::exp(1.0 + j) / denom) < 1e-12);
    }
}

TEST_CASE("softmax_rows rows sum to one across magnitudes", "[tensor]") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const Tensor x = Tensor::uniform({4, 6}, rng, -1e3, 1e3);
        const Tensor p = softmax_rows(x);
        for (std::size_t i = 0; i < p.rows(); ++i) {
            double s = 0.0;
            for (std::size_t j = 0; j < p.cols(); ++j) s += p.at(i, j);
            CHECK(std::abs(s - 1.0) <= 1e-12);
        }
    }
}

TEST_CASE("elementwise and reduction primitives", "[tensor]") {
    const Tensor a({2, 2}, {1, -2, 3, -4});
    CHECK(relu(a).bit_equal(Tensor({2, 2}, {1, 0, 3, 0})));
    CHECK(scale(a, 2.0).bit_equal(Tensor({2, 2}, {2, -4, 6, -8})));
    CHECK(sum_all(a)[0] == -2.0);

    const Tensor b({2, 2}, {10, 20, 30, 40});
    CHECK(mul(a, b).bit_equal(Tensor({2, 2}, {10, -40, 90, -160})));
    CHECK(batch_mean(b).bit_equal(Tensor({1, 2}, {20, 30})));

    const Tensor bias({2}, {100, 200});
    CHECK(add_rowvec(b, bias).bit_equal(Tensor({2, 2}, {110, 220, 130, 240})));

    const Tensor probs({1, 2}, {1e-20, 1.0});
    const Tensor lg = log_clamped(probs);
    CHECK(lg.at(0, 0) == Catch::Approx(std::log(1e-12)));
    CHECK(lg.at(0, 1) == 0.0);
}
