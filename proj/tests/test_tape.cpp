#include <catch2/catch_amalgamated.hpp>

#include "dasp/rng.hpp"
#include "dasp/tape.hpp"
#include "support.hpp"

using namespace dasp;
using dasp::test::fd_gradient;
using dasp::test::rel_err;

TEST_CASE("gradient of sum(x W) is the outer-product oracle", "[tape]") {
    Rng rng(3);
    const Tensor x = Tensor::gaussian({1, 4}, rng);
    Tensor w = Tensor::gaussian({4, 3}, rng);

    Tape tape;
    const auto wid = tape.param("w", w);
    const auto out = tape.sum_all(tape.matmul(tape.constant(x), wid));
    const GradientMap grads = tape.backward(out);

    // d sum(xW) / dW_ij = x_i for every column j.
    const Tensor& g = grads.at("w");
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j) CHECK(g.at(i, j) == Catch::Approx(x.at(0, i)));
}

TEST_CASE("constant outputs give zero gradients", "[tape]") {
    Tape tape;
    const auto w = tape.param("w", Tensor({2, 2}, {1, 2, 3, 4}));
    (void)w;
    const auto c = tape.constant(Tensor::scalar(5.0));
    const auto out = tape.scale(c, 2.0);
    const GradientMap grads = tape.backward(out);
    for (double v : grads.at("w").flat()) CHECK(v == 0.0);
}

TEST_CASE("backward rejects non-scalar outputs", "[tape]") {
    Tape tape;
    const auto w = tape.param("w", Tensor({2, 2}, {1, 2, 3, 4}));
    CHECK_THROWS_AS(tape.backward(w), ContractError);
}

TEST_CASE("two backward passes are bit-identical", "[tape]") {
    Rng rng(11);
    Tape tape;
    const auto w = tape.param("w", Tensor::gaussian({3, 3}, rng));
    const auto x = tape.constant(Tensor::gaussian({2, 3}, rng));
    const auto p = tape.softmax_rows(tape.matmul(x, w));
    const auto out = tape.sum_all(tape.mul(p, tape.log_clamped(p)));
    const GradientMap first = tape.backward(out);
    const GradientMap second = tape.backward(out);
    CHECK(first.at("w").bit_equal(second.at("w")));
}

namespace {

// A scalar that exercises every differentiable primitive at once.
double composite_forward(const Tensor& w1, const Tensor& b1, const Tensor& w2,
                         const Tensor& x) {
    const Tensor h = relu(add_rowvec(matmul(x, w1), b1));
    const Tensor p = softmax_rows(matmul(h, w2));
    const Tensor ent = mul(p, log_clamped(p));
    const Tensor marginal = batch_mean(p);
    const Tensor div = mul(marginal, log_clamped(marginal));
    return scale(add(sum_all(ent), sum_all(div)), 0.5)[0];
}

}  // namespace

TEST_CASE("analytic adjoints match central finite differences", "[tape]") {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        Tensor w1 = Tensor::gaussian({5, 6}, rng, 0.7);
        Tensor b1 = Tensor::gaussian({6}, rng, 0.3);
        Tensor w2 = Tensor::gaussian({6, 4}, rng, 0.7);
        const Tensor x = Tensor::gaussian({3, 5}, rng);

        Tape tape;
        const auto w1id = tape.param("w1", w1);
        const auto b1id = tape.param("b1", b1);
        const auto w2id = tape.param("w2", w2);
        const auto xid = tape.constant(x);
        const auto h = tape.relu(tape.add_rowvec(tape.matmul(xid, w1id), b1id));
        const auto p = tape.softmax_rows(tape.matmul(h, w2id));
        const auto ent = tape.mul(p, tape.log_clamped(p));
        const auto marginal = tape.batch_mean(p);
        const auto div = tape.mul(marginal, tape.log_clamped(marginal));
        const auto out = tape.scale(tape.add(tape.sum_all(ent), tape.sum_all(div)), 0.5);

        CHECK(tape.scalar_value(out) == Catch::Approx(composite_forward(w1, b1, w2, x)));

        const GradientMap grads = tape.backward(out);
        const auto check = [&](const char* name, Tensor& param) {
            const Tensor fd = fd_gradient([&] { return composite_forward(w1, b1, w2, x); },
                                          param);
            const Tensor& an = grads.at(name);
            for (std::size_t i = 0; i < fd.size(); ++i) {
                worst = std::max(worst, rel_err(an[i], fd[i]));
            }
        };
        check("w1", w1);
        check("b1", b1);
        check("w2", w2);
    }
    CHECK(worst <= 1e-4);
}

TEST_CASE("each primitive's adjoint survives a focused finite-difference check", "[tape]") {
    Rng rng(99);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = Tensor::gaussian({4, 4}, rng);
        Tensor b = Tensor::gaussian({4, 4}, rng);

        struct Case {
            const char* name;
            std::function<Tape::ValueId(Tape&, Tape::ValueId, Tape::ValueId)> build;
        };
        const std::vector<Case> cases = {
            {"matmul", [](Tape& t, auto x, auto y) { return t.sum_all(t.matmul(x, y)); }},
            {"add", [](Tape& t, auto x, auto y) { return t.sum_all(t.add(x, y)); }},
            {"mul", [](Tape& t, auto x, auto y) { return t.sum_all(t.mul(x, y)); }},
            {"relu",
             [](Tape& t, auto x, auto y) { return t.sum_all(t.mul(t.relu(x), y)); }},
            {"softmax",
             [](Tape& t, auto x, auto y) { return t.sum_all(t.mul(t.softmax_rows(x), y)); }},
            {"batch_mean",
             [](Tape& t, auto x, auto y) {
                 return t.sum_all(t.mul(t.batch_mean(x), t.batch_mean(y)));
             }},
            {"scale", [](Tape& t, auto x, auto) { return t.sum_all(t.scale(x, -1.7)); }},
        };
        for (const Case& c : cases) {
            Tape tape;
            const auto aid = tape.param("a", a);
            const auto bid = tape.constant(b);
            const auto out = c.build(tape, aid, bid);
            const GradientMap grads = tape.backward(out);
            const Tensor fd = fd_gradient(
                [&] {
                    Tape t2;
                    return t2.scalar_value(c.build(t2, t2.constant(a), t2.constant(b)));
                },
                a);
            for (std::size_t i = 0; i < fd.size(); ++i) {
                INFO(c.name << " entry " << i);
                CHECK(rel_err(grads.at("a")[i], fd[i]) <= 1e-4);
            }
        }
    }
}
