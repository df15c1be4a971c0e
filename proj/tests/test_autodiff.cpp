#include <doctest.h>

#include <cmath>
#include <functional>

#include "finchat/autodiff.hpp"
#include "finchat/common.hpp"

using namespace finchat;

namespace {

Mat random_mat(Rng& rng, int rows, int cols, double scale = 1.0) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng_gauss(rng) * scale;
    return m;
}

// Central-difference check of d(sum of graph output)/d(leaf) for a graph
// builder over a single leaf tensor.
void check_leaf_gradient(const Mat& input, const std::function<Var(Tape&, Var)>& build,
                         double h = 1e-5, double tol = 1e-6) {
    Tape tape;
    const Var leaf = tape.leaf(input);
    const Var out = tape.sum_all(build(tape, leaf));
    tape.backward(out);
    const Mat analytic = tape.grad(leaf);

    Mat perturbed = input;
    for (Eigen::Index i = 0; i < input.size(); ++i) {
        const double saved = perturbed.data()[i];
        auto eval = [&](double v) {
            perturbed.data()[i] = v;
            Tape t2;
            const Var l2 = t2.leaf(perturbed, false);
            return t2.value(t2.sum_all(build(t2, l2)))(0, 0);
        };
        const double fd = (eval(saved + h) - eval(saved - h)) / (2.0 * h);
        perturbed.data()[i] = saved;
        const double rel =
            std::abs(analytic.data()[i] - fd) / std::max(1e-4, std::abs(analytic.data()[i]) + std::abs(fd));
        CHECK(rel < tol);
    }
}

}  // namespace

TEST_CASE("matmul forward and backward") {
    Tape tape;
    Mat a(2, 3), b(3, 2);
    a << 1, 2, 3, 4, 5, 6;
    b << 7, 8, 9, 10, 11, 12;
    const Var va = tape.leaf(a);
    const Var vb = tape.leaf(b);
    const Var c = tape.matmul(va, vb);
    CHECK(tape.value(c)(0, 0) == 58.0);
    CHECK(tape.value(c)(1, 1) == 154.0);

    tape.backward(tape.sum_all(c));
    // d(sum)/dA = ones * B^T
    CHECK(tape.grad(va)(0, 0) == doctest::Approx(15.0));
    CHECK(tape.grad(vb)(2, 1) == doctest::Approx(9.0));
}

TEST_CASE("matmul rejects shape mismatches") {
    Tape tape;
    const Var a = tape.leaf(Mat::Zero(2, 3));
    const Var b = tape.leaf(Mat::Zero(2, 3));
    CHECK_THROWS_AS(tape.matmul(a, b), Error);
}

TEST_CASE("elementwise and reduction ops match finite differences") {
    Rng rng = make_rng(41, "autodiff-test");
    const Mat x = random_mat(rng, 3, 4);

    check_leaf_gradient(x, [](Tape& t, Var v) { return t.gelu(v); });
    check_leaf_gradient(x, [](Tape& t, Var v) { return t.tanh_act(v); });
    check_leaf_gradient(x, [](Tape& t, Var v) { return t.softplus(v); });
    check_leaf_gradient(x, [](Tape& t, Var v) { return t.mul_scalar(v, -2.5); });
    check_leaf_gradient(x, [](Tape& t, Var v) { return t.mean_all(v); });
    check_leaf_gradient(x, [](Tape& t, Var v) { return t.mean_rows(v); });
    check_leaf_gradient(x, [](Tape& t, Var v) { return t.log_softmax_rows(v); });
}

TEST_CASE("structural ops match finite differences") {
    Rng rng = make_rng(42, "autodiff-test");
    const Mat x = random_mat(rng, 4, 6);

    check_leaf_gradient(x, [](Tape& t, Var v) { return t.slice_cols(v, 1, 3); });
    check_leaf_gradient(x, [](Tape& t, Var v) { return t.slice_rows(v, 1, 2); });
    check_leaf_gradient(x, [](Tape& t, Var v) { return t.reshape(v, 6, 4); });
    check_leaf_gradient(x, [](Tape& t, Var v) {
        return t.concat_cols({t.slice_cols(v, 0, 2), t.slice_cols(v, 2, 4)});
    });
    check_leaf_gradient(x, [](Tape& t, Var v) {
        return t.concat_rows({t.slice_rows(v, 2, 2), t.slice_rows(v, 0, 2)});
    });
    check_leaf_gradient(x, [](Tape& t, Var v) { return t.gather_rows(v, {3, 0, 0, 2}); });
    check_leaf_gradient(x, [](Tape& t, Var v) {
        return t.gather_entries(v, {{0, 0}, {3, 5}, {0, 0}, {2, 1}});
    });
}

TEST_CASE("composite ops match finite differences") {
    Rng rng = make_rng(43, "autodiff-test");
    const Mat x = random_mat(rng, 3, 4);
    const Mat w = random_mat(rng, 4, 4);

    const Mat row = random_mat(rng, 1, 4);
    check_leaf_gradient(x, [&](Tape& t, Var v) {
        return t.matmul(t.gelu(v), t.constant(w));
    });
    check_leaf_gradient(x, [&](Tape& t, Var v) {
        return t.add_rowvec(v, t.constant(row));
    });
    check_leaf_gradient(x, [](Tape& t, Var v) { return t.matmul_nt(v, v); }, 1e-5, 2e-6);
    check_leaf_gradient(x, [](Tape& t, Var v) { return t.add(t.sub(v, v), v); });
}

TEST_CASE("layer_norm matches finite differences for input, gain and bias") {
    Rng rng = make_rng(44, "autodiff-test");
    const Mat x = random_mat(rng, 3, 8);
    const Mat gain = random_mat(rng, 1, 8, 0.5);
    const Mat bias = random_mat(rng, 1, 8, 0.5);

    check_leaf_gradient(x, [&](Tape& t, Var v) {
        return t.layer_norm(v, t.constant(gain), t.constant(bias));
    });
    check_leaf_gradient(gain, [&](Tape& t, Var v) {
        return t.layer_norm(t.constant(x), v, t.constant(bias));
    });
    check_leaf_gradient(bias, [&](Tape& t, Var v) {
        return t.layer_norm(t.constant(x), t.constant(gain), v);
    });
}

TEST_CASE("causal_softmax rows sum to one over the visible set") {
    Rng rng = make_rng(45, "autodiff-test");
    Tape tape;
    const Var scores = tape.leaf(random_mat(rng, 5, 5));
    const Var attn = tape.causal_softmax(scores, 0, {});
    const Mat& a = tape.value(attn);
    for (int r = 0; r < 5; ++r) {
        double row_sum = 0.0;
        for (int c = 0; c < 5; ++c) {
            if (c > r) CHECK(a(r, c) == 0.0);
            row_sum += a(r, c);
        }
        CHECK(row_sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("causal_softmax with prefix memory and dead slots") {
    Rng rng = make_rng(46, "autodiff-test");
    Tape tape;
    const Var scores = tape.leaf(random_mat(rng, 5, 5));
    // 2 prefix slots, the first dead.
    const Var attn = tape.causal_softmax(scores, 2, {false, true});
    const Mat& a = tape.value(attn);
    for (int r = 2; r < 5; ++r) {
        CHECK(a(r, 0) == 0.0);   // dead prefix column is invisible
        CHECK(a(r, 1) > 0.0);    // live prefix column is visible
        for (int c = r + 1; c < 5; ++c) CHECK(a(r, c) == 0.0);
        CHECK(a.row(r).sum() == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("causal_softmax matches finite differences") {
    Rng rng = make_rng(47, "autodiff-test");
    const Mat scores = random_mat(rng, 4, 4);
    check_leaf_gradient(scores, [](Tape& t, Var v) {
        // Weight the attention rows so the gradient is not uniform.
        Mat w(4, 2);
        w << 1, -2, 3, 0.5, -1, 2, 0.25, 1;
        return t.matmul(t.causal_softmax(v, 0, {}), t.constant(w));
    });
}

TEST_CASE("backward requires a scalar and accumulates through shared nodes") {
    Tape tape;
    Mat x(1, 1);
    x << 3.0;
    const Var leaf = tape.leaf(x);
    const Var doubled = tape.add(leaf, leaf);  // y = 2x
    CHECK_THROWS_AS(tape.backward(tape.concat_cols({doubled, doubled})), Error);

    Tape tape2;
    const Var leaf2 = tape2.leaf(x);
    const Var y = tape2.add(leaf2, leaf2);
    tape2.backward(y);
    CHECK(tape2.grad(leaf2)(0, 0) == doctest::Approx(2.0));
}

TEST_CASE("gradients of constants are not propagated") {
    Tape tape;
    Mat x(2, 2);
    x << 1, 2, 3, 4;
    const Var c = tape.constant(x);
    const Var p = tape.leaf(x);
    const Var out = tape.sum_all(tape.matmul(c, p));
    tape.backward(out);
    CHECK(tape.grad(c).cwiseAbs().maxCoeff() == 0.0);
    CHECK(tape.grad(p).cwiseAbs().maxCoeff() > 0.0);
}
