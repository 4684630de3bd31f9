#include <cmath>
#include <functional>

#include "doctest.h"

#include "msp/autograd.hpp"
#include "msp/rng.hpp"

using namespace msp;

TEST_SUITE_BEGIN("autograd");

namespace {

Tensor random_tensor(std::vector<int> shape, RandomSource& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = scale * rng.gaussian();
    return t;
}

// central finite differences of f against the analytic gradient of every leaf
void check_gradients(const std::vector<Var>& leaves, const std::function<Var()>& f,
                     double h = 1e-6, double tol = 1e-5) {
    for (Var leaf : leaves) leaf.zero_grad();
    Var loss = f();
    backward(loss);
    for (const Var& leaf : leaves) {
        Var l = leaf;
        for (int64_t i = 0; i < l.value().numel(); ++i) {
            double saved = l.value()[i];
            l.value_mut()[i] = saved + h;
            double hi = f().item();
            l.value_mut()[i] = saved - h;
            double lo = f().item();
            l.value_mut()[i] = saved;
            double fd = (hi - lo) / (2 * h);
            double an = l.grad()[i];
            CHECK(std::abs(fd - an) <= tol * std::max({1.0, std::abs(fd), std::abs(an)}));
        }
    }
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    RandomSource rng(11);
    Var a = Var::param(random_tensor({3, 4}, rng));
    Var b = Var::param(random_tensor({3, 4}, rng));
    check_gradients({a, b}, [&] {
        return sum_all(mul(silu(add(a, b)), sub(a, scale(b, 0.7))));
    });
}

TEST_CASE("matmul/transpose/softmax match finite differences") {
    RandomSource rng(12);
    Var a = Var::param(random_tensor({4, 3}, rng, 0.5));
    Var b = Var::param(random_tensor({3, 5}, rng, 0.5));
    check_gradients({a, b}, [&] {
        return mean_all(square(softmax_rows(matmul(a, b))));
    });
    Var c = Var::param(random_tensor({4, 6}, rng, 0.5));
    check_gradients({c}, [&] { return sum_all(mul(transpose2d(c), transpose2d(c))); });
}

TEST_CASE("softmax rows sum to one") {
    RandomSource rng(13);
    Var a    = Var::constant(random_tensor({7, 9}, rng, 3.0));
    Tensor y = softmax_rows(a).value();
    for (int i = 0; i < 7; ++i) {
        double s = 0.0;
        for (int j = 0; j < 9; ++j) s += y.at(i, j);
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("conv2d stride 1 and 2 match finite differences") {
    RandomSource rng(14);
    Var x = Var::param(random_tensor({2, 6, 6}, rng, 0.5));
    Var w = Var::param(random_tensor({3, 2, 3, 3}, rng, 0.5));
    Var b = Var::param(random_tensor({3}, rng, 0.5));
    check_gradients({x, w, b}, [&] { return mean_all(square(conv2d(x, w, b, 1, 1))); });
    check_gradients({x, w, b}, [&] { return mean_all(square(conv2d(x, w, b, 2, 1))); });
}

TEST_CASE("conv2d output shape") {
    Var x = Var::constant(Tensor({2, 8, 8}));
    Var w = Var::constant(Tensor({4, 2, 3, 3}));
    Var b = Var::constant(Tensor({4}));
    CHECK(conv2d(x, w, b, 1, 1).value().shape() == std::vector<int>{4, 8, 8});
    CHECK(conv2d(x, w, b, 2, 1).value().shape() == std::vector<int>{4, 4, 4});
}

TEST_CASE("upsample/bias/mask ops match finite differences") {
    RandomSource rng(15);
    Var x = Var::param(random_tensor({2, 3, 3}, rng));
    Var b = Var::param(random_tensor({2}, rng));
    Tensor m({6, 6});
    for (int64_t i = 0; i < m.numel(); ++i) m[i] = (i % 3) == 0 ? 1.0 : 0.0;
    check_gradients({x, b}, [&] {
        return sum_all(mul_mask_hw(add_channel_bias(upsample2x(x), b), m));
    });
}

TEST_CASE("gather/vconcat/mean_cols match finite differences") {
    RandomSource rng(16);
    Var table = Var::param(random_tensor({5, 4}, rng));
    Var row   = Var::param(random_tensor({1, 4}, rng));
    check_gradients({table, row}, [&] {
        Var seq = vconcat({gather_rows(table, {1}), row, gather_rows(table, {1})});
        return sum_all(square(mean_cols(transpose2d(seq), {0, 2})));
    });
}

TEST_CASE("reshape preserves values and gradients") {
    RandomSource rng(17);
    Var x = Var::param(random_tensor({2, 6}, rng));
    check_gradients({x}, [&] { return sum_all(square(reshape(x, {3, 4}))); });
}

TEST_CASE("NoGradGuard detaches results") {
    Var p = Var::param(Tensor::from({2}, {1.0, 2.0}));
    {
        NoGradGuard ng;
        Var y = scale(p, 3.0);
        CHECK(!y.requires_grad());
    }
    Var y = scale(p, 3.0);
    CHECK(y.requires_grad());
}

TEST_CASE("backward accumulates into shared leaves") {
    Var p = Var::param(Tensor::from({1}, {2.0}));
    Var y = add(mul(p, p), scale(p, 3.0));  // p^2 + 3p -> dy/dp = 2p + 3 = 7
    backward(y);
    CHECK(p.grad()[0] == doctest::Approx(7.0));
}

TEST_CASE("backward requires scalar loss") {
    Var p = Var::param(Tensor::from({2}, {1.0, 2.0}));
    CHECK_THROWS_AS(backward(scale(p, 1.0)), std::invalid_argument);
}

TEST_SUITE_END();
