// Tape-engine oracles: hand values for the forward rules, central finite
// differences for every backward rule, and the backward-linearity property.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lechpe/autodiff.hpp"
#include "lechpe/gradcheck.hpp"
#include "lechpe/rng.hpp"

using namespace lechpe;

namespace {

Matrix random_matrix(int rows, int cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Matrix m(rows, cols);
    for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
    return m;
}

// scalar probe <W, op(X)> so any matrix-valued op can be gradient-checked
ad::Var probe(const ad::Var& v, const Matrix& w) { return ad::weighted_sum(v, w); }

}  // namespace

TEST_CASE("matmul forward oracles") {
    auto eye = ad::constant(Matrix::from_rows({{1, 0}, {0, 1}}));
    auto v = ad::constant(Matrix::from_rows({{3}, {4}}));
    auto out = ad::matmul(eye, v);
    CHECK(out->value == v->value);

    auto a = ad::constant(Matrix::from_rows({{1, 2}}));
    auto b = ad::constant(Matrix::from_rows({{3}, {4}}));
    CHECK(ad::scalar_value(ad::matmul(a, b)) == 11.0);
}

TEST_CASE("matmul rejects mismatched shapes") {
    auto a = ad::constant(Matrix(2, 3, 1.0));
    auto b = ad::constant(Matrix(2, 2, 1.0));
    REQUIRE_THROWS_WITH(ad::matmul(a, b),
                        Catch::Matchers::ContainsSubstring("2x3") &&
                            Catch::Matchers::ContainsSubstring("2x2"));
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(7);
    const Matrix b = random_matrix(4, 2, rng);
    const Matrix w = random_matrix(3, 2, rng);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix point = random_matrix(3, 4, rng);
        auto lhs = finite_diff_check(
            "matmul_lhs",
            [&](const ad::Var& x) { return probe(ad::matmul(x, ad::constant(b)), w); }, point,
            1e-4, 1e-5);
        CHECK(lhs.passed);
        const Matrix a = random_matrix(3, 4, rng);
        auto rhs = finite_diff_check(
            "matmul_rhs",
            [&](const ad::Var& x) { return probe(ad::matmul(ad::constant(a), x), w); },
            random_matrix(4, 2, rng), 1e-4, 1e-5);
        CHECK(rhs.passed);
    }
}

TEST_CASE("relu forward and gradient") {
    auto out = ad::relu(ad::constant(Matrix::from_rows({{-1, 0, 2}})));
    CHECK(out->value == Matrix::from_rows({{0, 0, 2}}));

    auto negative = ad::relu(ad::constant(Matrix::from_rows({{-3, -0.5, -1e-9}})));
    CHECK(negative->value == Matrix(1, 3, 0.0));

    // check away from the kink
    Rng rng(11);
    for (int trial = 0; trial < 5; ++trial) {
        Matrix point = random_matrix(2, 5, rng);
        for (std::size_t i = 0; i < point.size(); ++i) {
            if (std::fabs(point.data()[i]) < 1e-3) point.data()[i] = 0.1;
        }
        const Matrix w = random_matrix(2, 5, rng);
        auto rep = finite_diff_check(
            "relu", [&](const ad::Var& x) { return probe(ad::relu(x), w); }, point, 1e-4, 1e-5);
        CHECK(rep.passed);
    }
}

TEST_CASE("softmax rows: symmetry, hand value, stochasticity") {
    auto half = ad::softmax_rows(ad::constant(Matrix::from_rows({{0, 0}})));
    CHECK(half->value(0, 0) == Catch::Approx(0.5).margin(1e-15));
    CHECK(half->value(0, 1) == Catch::Approx(0.5).margin(1e-15));

    auto twothirds = ad::softmax_rows(ad::constant(Matrix::from_rows({{std::log(2.0), 0}})));
    CHECK(twothirds->value(0, 0) == Catch::Approx(2.0 / 3.0).margin(1e-12));
    CHECK(twothirds->value(0, 1) == Catch::Approx(1.0 / 3.0).margin(1e-12));

    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        const Matrix logits = random_matrix(4, 9, rng, -30.0, 30.0);
        const Matrix probs = ad::softmax_rows(ad::constant(logits))->value;
        for (int i = 0; i < probs.rows(); ++i) {
            double s = 0;
            for (int j = 0; j < probs.cols(); ++j) {
                CHECK(probs(i, j) > 0.0);
                CHECK(probs(i, j) < 1.0);
                s += probs(i, j);
            }
            CHECK(std::fabs(s - 1.0) <= 1e-9);
        }
    }
}

TEST_CASE("softmax is invariant to constant logit shifts") {
    Rng rng(17);
    const Matrix logits = random_matrix(3, 7, rng, -5.0, 5.0);
    Matrix shifted = logits;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted.data()[i] += 123.456;
    const Matrix a = ad::softmax_rows(ad::constant(logits))->value;
    const Matrix b = ad::softmax_rows(ad::constant(shifted))->value;
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a.data()[i] == Catch::Approx(b.data()[i]).margin(1e-12));
    }
}

TEST_CASE("softmax gradient matches finite differences") {
    Rng rng(23);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix point = random_matrix(3, 6, rng, -2.0, 2.0);
        const Matrix w = random_matrix(3, 6, rng);
        auto rep = finite_diff_check(
            "softmax_rows", [&](const ad::Var& x) { return probe(ad::softmax_rows(x), w); },
            point, 1e-4, 1e-5);
        CHECK(rep.passed);
    }
}

TEST_CASE("soft-assignment chain ops pass finite differences") {
    Rng rng(29);
    for (int trial = 0; trial < 5; ++trial) {
        const Matrix centers = random_matrix(3, 4, rng);
        const Matrix w = random_matrix(5, 3, rng);
        auto vs_points = finite_diff_check(
            "pairwise_sqdist_points",
            [&](const ad::Var& x) {
                return probe(ad::pairwise_sqdist(x, ad::constant(centers)), w);
            },
            random_matrix(5, 4, rng), 1e-4, 1e-5);
        CHECK(vs_points.passed);

        const Matrix points = random_matrix(5, 4, rng);
        auto vs_centers = finite_diff_check(
            "pairwise_sqdist_centers",
            [&](const ad::Var& x) {
                return probe(ad::pairwise_sqdist(ad::constant(points), x), w);
            },
            random_matrix(3, 4, rng), 1e-4, 1e-5);
        CHECK(vs_centers.passed);

        auto kernel = finite_diff_check(
            "inv_one_plus", [&](const ad::Var& x) { return probe(ad::inv_one_plus(x), w); },
            random_matrix(5, 3, rng, 0.1, 4.0), 1e-4, 1e-5);
        CHECK(kernel.passed);

        auto norm = finite_diff_check(
            "normalize_rows", [&](const ad::Var& x) { return probe(ad::normalize_rows(x), w); },
            random_matrix(5, 3, rng, 0.2, 2.0), 1e-5, 1e-5);
        CHECK(norm.passed);
    }
}

TEST_CASE("finite_diff_check oracle trio") {
    // f(x) = sum x^2 has gradient 2x
    auto sum_sq = [](const ad::Var& x) {
        return ad::weighted_sum(ad::pairwise_sqdist(x, ad::constant(Matrix(1, 2, 0.0))),
                                Matrix(1, 1, 1.0));
    };
    auto rep = finite_diff_check("sum_of_squares", sum_sq, Matrix::from_rows({{1, 2}}), 1e-4, 1e-6);
    CHECK(rep.passed);
    CHECK(rep.max_relative_error < 1e-6);
    {
        auto leaf = ad::parameter(Matrix::from_rows({{1, 2}}));
        auto out = sum_sq(leaf);
        ad::backward(out);
        CHECK(leaf->grad(0, 0) == Catch::Approx(2.0).margin(1e-12));
        CHECK(leaf->grad(0, 1) == Catch::Approx(4.0).margin(1e-12));
    }

    // constant f: both gradients vanish
    auto constant_f = [](const ad::Var& x) { return ad::weighted_sum(x, Matrix(1, 2, 0.0)); };
    CHECK(finite_diff_check("constant", constant_f, Matrix::from_rows({{3, -1}}), 1e-4, 1e-8)
              .passed);

    // negative control: a node whose backward rule routes 3x the true gradient
    auto broken = [](const ad::Var& x) {
        Matrix doubled = x->value;
        for (std::size_t i = 0; i < doubled.size(); ++i) doubled.data()[i] *= 2.0;
        auto node = ad::make_node(
            std::move(doubled), {x},
            [x](const ad::DiffNode& self) {
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    x->grad.data()[i] += 3.0 * self.grad.data()[i];
            },
            "broken_double");
        return ad::weighted_sum(node, Matrix(1, 2, 1.0));
    };
    CHECK_FALSE(finite_diff_check("broken", broken, Matrix::from_rows({{1, 2}}), 1e-4, 1e-5)
                    .passed);
}

TEST_CASE("finite_diff_check rejects non-positive steps") {
    REQUIRE_THROWS_AS(finite_diff_check(
                          "bad", [](const ad::Var& x) { return ad::weighted_sum(x, Matrix(1, 1, 1.0)); },
                          Matrix(1, 1, 0.0), 0.0, 1e-5),
                      std::invalid_argument);
}

TEST_CASE("backward of a sum equals sum of backwards") {
    Rng rng(31);
    const Matrix point = random_matrix(2, 3, rng);
    const Matrix w1 = random_matrix(2, 3, rng);
    const Matrix w2 = random_matrix(2, 3, rng);

    auto build = [&](const Matrix& p) {
        auto leaf = ad::parameter(p);
        auto f = ad::weighted_sum(ad::relu(leaf), w1);
        auto g = ad::weighted_sum(ad::softmax_rows(leaf), w2);
        return std::make_tuple(leaf, f, g);
    };

    auto [leaf_sum, f_sum, g_sum] = build(point);
    ad::backward(ad::add(f_sum, g_sum));

    auto [leaf_f, f_only, g_unused_f] = build(point);
    ad::backward(f_only);
    auto [leaf_g, f_unused_g, g_only] = build(point);
    ad::backward(g_only);

    for (std::size_t i = 0; i < point.size(); ++i) {
        const double joint = leaf_sum->grad.data()[i];
        const double split = leaf_f->grad.data()[i] + leaf_g->grad.data()[i];
        const double denom = std::max({std::fabs(joint), std::fabs(split), 1.0});
        CHECK(std::fabs(joint - split) <= 1e-10 * denom);
    }
}

TEST_CASE("backward requires a scalar root") {
    auto leaf = ad::parameter(Matrix(2, 2, 1.0));
    REQUIRE_THROWS_AS(ad::backward(ad::relu(leaf)), std::invalid_argument);
}

TEST_CASE("operations refuse non-finite results") {
    Matrix bad(1, 2, 0.0);
    bad(0, 1) = std::numeric_limits<double>::infinity();
    REQUIRE_THROWS_AS(ad::constant(bad), std::runtime_error);
}
