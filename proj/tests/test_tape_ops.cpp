#include "doctest.h"

#include <cmath>
#include <cstring>
#include <functional>

#include "fewshot/gradcheck.hpp"
#include "fewshot/ops.hpp"
#include "fewshot/rng.hpp"

using namespace fewshot;

namespace {

using BuildFn = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

// Max relative error between autodiff and central finite differences over
// every input, with the op output contracted against fixed random weights
// so no gradient direction can cancel out. The finite-difference side does
// its reduction in plain arithmetic, independent of the tape.
double op_grad_error(std::vector<Matrix> inputs, const BuildFn& build,
                     std::uint64_t weight_seed = 99) {
    Matrix probe_out;
    {
        Tape t;
        std::vector<NodeId> leaves;
        for (const Matrix& m : inputs) leaves.push_back(t.constant(m));
        probe_out = t.value(build(t, leaves));
    }
    Rng wrng(weight_seed);
    const Matrix weights = wrng.uniform_matrix(probe_out.rows(), probe_out.cols(), -1.0, 1.0);

    const auto value_fn = [&]() {
        Tape t;
        std::vector<NodeId> leaves;
        for (const Matrix& m : inputs) leaves.push_back(t.constant(m));
        const Matrix& out = t.value(build(t, leaves));
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) s += out.raw()[i] * weights.raw()[i];
        return s;
    };

    Tape t;
    std::vector<NodeId> leaves;
    for (const Matrix& m : inputs) leaves.push_back(t.leaf(m));
    const NodeId out = build(t, leaves);
    const NodeId loss = sum_all(t, mul(t, out, t.constant(weights)));
    t.backward(loss);

    double worst = 0.0;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const Matrix numeric = finite_difference_gradient(value_fn, inputs[i]);
        worst = std::max(worst, relative_gradient_error(t.grad(leaves[i]), numeric));
    }
    return worst;
}

bool bytes_equal(const Matrix& a, const Matrix& b) {
    return a.same_shape(b) &&
           std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace

TEST_CASE("tape matmul values") {
    Tape t;
    SUBCASE("identity is neutral") {
        const Matrix x = Matrix::from_rows({{1.0, -2.0}, {0.5, 3.0}});
        const NodeId out = matmul(t, t.constant(Matrix::identity(2)), t.constant(x));
        CHECK(t.value(out) == x);
    }
    SUBCASE("hand arithmetic") {
        const NodeId a = t.constant(Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}}));
        const NodeId b = t.constant(Matrix::from_rows({{1.0}, {1.0}}));
        const Matrix& c = t.value(matmul(t, a, b));
        CHECK(c(0, 0) == 3.0);
        CHECK(c(1, 0) == 7.0);
    }
}

TEST_CASE("matmul gradient of sum vs finite differences") {
    // Plain-sum contraction, mirroring the d(sum)/d(inputs) oracle.
    Rng rng(7);
    std::vector<Matrix> inputs{rng.uniform_matrix(3, 4, -2.0, 2.0),
                               rng.uniform_matrix(4, 2, -2.0, 2.0)};
    const auto value_fn = [&]() {
        const Matrix c = matmul(inputs[0], inputs[1]);
        double s = 0.0;
        for (double v : c.raw()) s += v;
        return s;
    };
    Tape t;
    const NodeId a = t.leaf(inputs[0]);
    const NodeId b = t.leaf(inputs[1]);
    t.backward(sum_all(t, matmul(t, a, b)));
    CHECK(relative_gradient_error(t.grad(a), finite_difference_gradient(value_fn, inputs[0])) <
          1e-6);
    CHECK(relative_gradient_error(t.grad(b), finite_difference_gradient(value_fn, inputs[1])) <
          1e-6);
}

TEST_CASE("row_softmax values") {
    Tape t;
    SUBCASE("uniform row") {
        const Matrix& y = t.value(row_softmax(t, t.constant(Matrix::from_rows({{0.0, 0.0, 0.0}}))));
        for (int j = 0; j < 3; ++j) CHECK(y(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    }
    SUBCASE("two-logit analytic case at c = ln 3") {
        const double c = std::log(3.0);
        const Matrix& y =
            t.value(row_softmax(t, t.constant(Matrix::from_rows({{1.0, 1.0 + c}}))));
        CHECK(y(0, 0) == doctest::Approx(0.25).epsilon(1e-12));
        CHECK(y(0, 1) == doctest::Approx(0.75).epsilon(1e-12));
    }
}

TEST_CASE("row_softmax rows sum to one and are shift-invariant") {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix x = rng.uniform_matrix(3, 5, -2.0, 2.0);
        Tape t;
        const Matrix& y = t.value(row_softmax(t, t.constant(x)));
        for (int i = 0; i < y.rows(); ++i) {
            double s = 0.0;
            for (int j = 0; j < y.cols(); ++j) s += y(i, j);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
        }
        Matrix shifted = x;
        const double c = rng.uniform_range(-3.0, 3.0);
        for (double& v : shifted.raw()) v += c;
        const Matrix& y2 = t.value(row_softmax(t, t.constant(shifted)));
        CHECK(max_abs_diff(y, y2) < 1e-12);
    }
}

TEST_CASE("row_softmax gradient vs finite differences") {
    Rng rng(13);
    const double err = op_grad_error({rng.uniform_matrix(4, 4, -2.0, 2.0)},
                                     [](Tape& t, const std::vector<NodeId>& in) {
                                         return row_softmax(t, in[0]);
                                     });
    CHECK(err < 1e-6);
}

TEST_CASE("leaky_relu values") {
    Tape t;
    const NodeId out =
        leaky_relu(t, t.constant(Matrix::from_rows({{-1.0, 0.0, 2.0}})), 0.1);
    CHECK(t.value(out)(0, 0) == doctest::Approx(-0.1));
    CHECK(t.value(out)(0, 1) == 0.0);
    CHECK(t.value(out)(0, 2) == 2.0);

    const Matrix x = Matrix::from_rows({{-3.0, 0.5, 4.0}});
    CHECK(t.value(leaky_relu(t, t.constant(x), 1.0)) == x);

    CHECK_THROWS_AS(leaky_relu(t, t.constant(x), 0.0), ConfigError);
    CHECK_THROWS_AS(leaky_relu(t, t.constant(x), 1.5), ConfigError);
}

TEST_CASE("leaky_relu gradient vs finite differences") {
    // Entries pushed away from the kink so the central difference is valid.
    Rng rng(17);
    Matrix x = rng.uniform_matrix(3, 4, -2.0, 2.0);
    for (double& v : x.raw()) {
        if (std::fabs(v) < 0.1) v += v >= 0.0 ? 0.2 : -0.2;
    }
    const double err = op_grad_error({x}, [](Tape& t, const std::vector<NodeId>& in) {
        return leaky_relu(t, in[0], 0.01);
    });
    CHECK(err < 1e-6);
}

TEST_CASE("batch_norm values") {
    SUBCASE("constant column maps to zero pre-affine") {
        Tape t;
        BnLayerState state = BnLayerState::init(2);
        const Matrix x = Matrix::from_rows({{3.0, 1.0}, {3.0, 2.0}, {3.0, 3.0}});
        const NodeId out = batch_norm(t, t.constant(x), t.constant(Matrix(1, 2, 1.0)),
                                      t.constant(Matrix(1, 2, 0.0)), state, true);
        for (int i = 0; i < 3; ++i) CHECK(t.value(out)(i, 0) == 0.0);
    }
    SUBCASE("idempotence on normalized data within 1e-9") {
        // A column with mean 0 and biased variance 1-eps is BN's fixed
        // point: (x - 0)/sqrt(1-eps+eps) = x.
        Rng rng(31);
        Matrix x = rng.uniform_matrix(6, 3, -2.0, 2.0);
        for (int j = 0; j < x.cols(); ++j) {
            double mean = 0.0;
            for (int i = 0; i < x.rows(); ++i) mean += x(i, j);
            mean /= x.rows();
            double var = 0.0;
            for (int i = 0; i < x.rows(); ++i) var += (x(i, j) - mean) * (x(i, j) - mean);
            var /= x.rows();
            const double scale = std::sqrt((1.0 - kBnEpsilon) / var);
            for (int i = 0; i < x.rows(); ++i) x(i, j) = (x(i, j) - mean) * scale;
        }
        Tape t;
        BnLayerState state = BnLayerState::init(3);
        const NodeId gamma = t.constant(Matrix(1, 3, 1.0));
        const NodeId beta = t.constant(Matrix(1, 3, 0.0));
        const NodeId out = batch_norm(t, t.constant(x), gamma, beta, state, true);
        CHECK(max_abs_diff(t.value(out), x) < 1e-9);
    }
    SUBCASE("single-row train input is rejected") {
        Tape t;
        BnLayerState state = BnLayerState::init(2);
        CHECK_THROWS_AS(batch_norm(t, t.constant(Matrix(1, 2, 1.0)),
                                   t.constant(Matrix(1, 2, 1.0)), t.constant(Matrix(1, 2, 0.0)),
                                   state, true),
                        NumericError);
    }
    SUBCASE("running statistics update with momentum") {
        Tape t;
        BnLayerState state = BnLayerState::init(1);
        const Matrix x = Matrix::from_rows({{1.0}, {3.0}});  // mean 2, biased var 1
        batch_norm(t, t.constant(x), t.constant(Matrix(1, 1, 1.0)), t.constant(Matrix(1, 1, 0.0)),
                   state, true);
        CHECK(state.running_mean(0, 0) == doctest::Approx(0.9 * 0.0 + 0.1 * 2.0));
        CHECK(state.running_var(0, 0) == doctest::Approx(0.9 * 1.0 + 0.1 * 1.0));
    }
}

TEST_CASE("batch_norm gradient vs finite differences") {
    Rng rng(41);
    std::vector<Matrix> inputs{rng.uniform_matrix(6, 3, -2.0, 2.0),
                               rng.uniform_matrix(1, 3, 0.5, 1.5),
                               rng.uniform_matrix(1, 3, -0.5, 0.5)};
    SUBCASE("train mode") {
        const double err = op_grad_error(inputs, [](Tape& t, const std::vector<NodeId>& in) {
            BnLayerState state = BnLayerState::init(3);
            return batch_norm(t, in[0], in[1], in[2], state, true);
        });
        CHECK(err < 1e-5);
    }
    SUBCASE("eval mode") {
        const double err = op_grad_error(inputs, [](Tape& t, const std::vector<NodeId>& in) {
            BnLayerState state = BnLayerState::init(3);
            state.running_mean = Matrix::from_rows({{0.3, -0.2, 0.1}});
            state.running_var = Matrix::from_rows({{1.2, 0.8, 2.0}});
            return batch_norm(t, in[0], in[1], in[2], state, false);
        });
        CHECK(err < 1e-5);
    }
}

TEST_CASE("backward basics") {
    SUBCASE("root = sum of one leaf gives all-ones gradient") {
        Tape t;
        const NodeId x = t.leaf(Matrix(3, 2, 5.0));
        t.backward(sum_all(t, x));
        for (double g : t.grad(x).raw()) CHECK(g == 1.0);
    }
    SUBCASE("bilinear form: d<a,b> = (b, a)") {
        Tape t;
        const Matrix av = Matrix::from_rows({{1.0, -2.0, 3.0}});
        const Matrix bv = Matrix::from_rows({{0.5, 4.0, -1.0}});
        const NodeId a = t.leaf(av);
        const NodeId b = t.leaf(bv);
        t.backward(sum_all(t, mul(t, a, b)));
        CHECK(t.grad(a) == bv);
        CHECK(t.grad(b) == av);
    }
    SUBCASE("non-scalar root is rejected") {
        Tape t;
        const NodeId x = t.leaf(Matrix(2, 2, 1.0));
        CHECK_THROWS_AS(t.backward(x), ShapeError);
    }
    SUBCASE("backward is deterministic at the byte level") {
        const auto run = [](Matrix& ga, Matrix& gb) {
            Rng rng(55);
            const Matrix av = rng.uniform_matrix(4, 3, -2.0, 2.0);
            const Matrix bv = rng.uniform_matrix(3, 5, -2.0, 2.0);
            Tape t;
            const NodeId a = t.leaf(av);
            const NodeId b = t.leaf(bv);
            t.backward(mean_all(t, row_softmax(t, matmul(t, a, b))));
            ga = t.grad(a);
            gb = t.grad(b);
        };
        Matrix ga1, gb1, ga2, gb2;
        run(ga1, gb1);
        run(ga2, gb2);
        CHECK(bytes_equal(ga1, ga2));
        CHECK(bytes_equal(gb1, gb2));
    }
    SUBCASE("two backward sweeps over the same tape agree bitwise") {
        Rng rng(56);
        Tape t;
        const NodeId a = t.leaf(rng.uniform_matrix(4, 3, -2.0, 2.0));
        const NodeId b = t.leaf(rng.uniform_matrix(3, 5, -2.0, 2.0));
        const NodeId root = mean_all(t, row_softmax(t, matmul(t, a, b)));
        t.backward(root);
        const Matrix ga = t.grad(a);
        const Matrix gb = t.grad(b);
        t.backward(root);  // gradients reset, not accumulated across sweeps
        CHECK(bytes_equal(t.grad(a), ga));
        CHECK(bytes_equal(t.grad(b), gb));
    }
}

TEST_CASE("elementwise and scalar ops gradients") {
    Rng rng(61);
    const Matrix a = rng.uniform_matrix(3, 3, -2.0, 2.0);
    const Matrix b = rng.uniform_matrix(3, 3, -2.0, 2.0);

    CHECK(op_grad_error({a, b}, [](Tape& t, const std::vector<NodeId>& in) {
              return add(t, in[0], in[1]);
          }) < 1e-5);
    CHECK(op_grad_error({a, b}, [](Tape& t, const std::vector<NodeId>& in) {
              return sub(t, in[0], in[1]);
          }) < 1e-5);
    CHECK(op_grad_error({a, b}, [](Tape& t, const std::vector<NodeId>& in) {
              return mul(t, in[0], in[1]);
          }) < 1e-5);
    CHECK(op_grad_error({a}, [](Tape& t, const std::vector<NodeId>& in) {
              return mul_scalar(t, add_scalar(t, in[0], 0.7), -1.6);
          }) < 1e-5);
    CHECK(op_grad_error({a, Matrix(1, 1, 1.3)}, [](Tape& t, const std::vector<NodeId>& in) {
              return scale_by(t, in[0], in[1]);
          }) < 1e-5);
    CHECK(op_grad_error({a, rng.uniform_matrix(1, 3, -1.0, 1.0)},
                        [](Tape& t, const std::vector<NodeId>& in) {
                            return add_rowvec(t, in[0], in[1]);
                        }) < 1e-5);
}

TEST_CASE("exp log softplus gradients") {
    Rng rng(71);
    const Matrix a = rng.uniform_matrix(3, 4, -2.0, 2.0);
    const Matrix pos = rng.uniform_matrix(3, 4, 0.5, 2.0);

    CHECK(op_grad_error({a}, [](Tape& t, const std::vector<NodeId>& in) {
              return exp(t, in[0]);
          }) < 1e-5);
    CHECK(op_grad_error({pos}, [](Tape& t, const std::vector<NodeId>& in) {
              return log(t, in[0]);
          }) < 1e-5);
    CHECK(op_grad_error({a}, [](Tape& t, const std::vector<NodeId>& in) {
              return softplus(t, in[0]);
          }) < 1e-5);

    Tape t;
    CHECK_THROWS_AS(log(t, t.constant(Matrix(1, 1, -1.0))), NumericError);
    CHECK_THROWS_AS(log(t, t.constant(Matrix(1, 1, 0.0))), NumericError);
}

TEST_CASE("shape ops gradients") {
    Rng rng(81);
    const Matrix a = rng.uniform_matrix(4, 3, -2.0, 2.0);
    const Matrix b = rng.uniform_matrix(4, 2, -2.0, 2.0);

    CHECK(op_grad_error({a}, [](Tape& t, const std::vector<NodeId>& in) {
              return transpose(t, in[0]);
          }) < 1e-5);
    CHECK(op_grad_error({a, b}, [](Tape& t, const std::vector<NodeId>& in) {
              return concat_cols(t, in[0], in[1]);
          }) < 1e-5);
    CHECK(op_grad_error({a}, [](Tape& t, const std::vector<NodeId>& in) {
              return slice_cols(t, in[0], 1, 3);
          }) < 1e-5);
    CHECK(op_grad_error({a}, [](Tape& t, const std::vector<NodeId>& in) {
              return gather_rows(t, in[0], {2, 0, 2});  // duplicates accumulate
          }) < 1e-5);
    CHECK(op_grad_error({a}, [](Tape& t, const std::vector<NodeId>& in) {
              return mean_rows(t, in[0]);
          }) < 1e-5);
    CHECK(op_grad_error({rng.uniform_matrix(1, 3, -2.0, 2.0)},
                        [](Tape& t, const std::vector<NodeId>& in) {
                            return broadcast_rows(t, in[0], 5);
                        }) < 1e-5);
    CHECK(op_grad_error({a}, [](Tape& t, const std::vector<NodeId>& in) {
              return select_col(t, in[0], 1);
          }) < 1e-5);
    CHECK(op_grad_error({rng.uniform_matrix(1, 4, -2.0, 2.0), rng.uniform_matrix(1, 4, -2.0, 2.0)},
                        [](Tape& t, const std::vector<NodeId>& in) {
                            return stack_rows(t, {in[0], in[1]});
                        }) < 1e-5);
    CHECK(op_grad_error({a}, [](Tape& t, const std::vector<NodeId>& in) {
              return mean_all(t, in[0]);
          }) < 1e-5);
}

TEST_CASE("l2_normalize_rows and cosine_rows") {
    Rng rng(91);
    const Matrix a = rng.uniform_matrix(3, 4, -2.0, 2.0);
    const Matrix b = rng.uniform_matrix(2, 4, -2.0, 2.0);

    SUBCASE("gradients") {
        CHECK(op_grad_error({a}, [](Tape& t, const std::vector<NodeId>& in) {
                  return l2_normalize_rows(t, in[0]);
              }) < 1e-5);
        CHECK(op_grad_error({a, b}, [](Tape& t, const std::vector<NodeId>& in) {
                  return cosine_rows(t, in[0], in[1]);
              }) < 1e-5);
    }
    SUBCASE("cosine equals inner product of normalized rows") {
        Tape t;
        const NodeId an = t.constant(a);
        const NodeId bn = t.constant(b);
        const Matrix& fused = t.value(cosine_rows(t, an, bn));
        const Matrix& composed = t.value(
            matmul(t, l2_normalize_rows(t, an), transpose(t, l2_normalize_rows(t, bn))));
        CHECK(max_abs_diff(fused, composed) < 1e-12);
    }
    SUBCASE("zero-norm row is rejected") {
        Tape t;
        Matrix z(2, 4);
        z(0, 0) = 1.0;  // row 1 stays zero
        CHECK_THROWS_AS(l2_normalize_rows(t, t.constant(z)), NumericError);
        CHECK_THROWS_AS(cosine_rows(t, t.constant(z), t.constant(b)), NumericError);
    }
}

TEST_CASE("group_cosine gradient") {
    Rng rng(101);
    const Matrix q = rng.uniform_matrix(1, 8, -2.0, 2.0);
    const Matrix p = rng.uniform_matrix(3, 8, -2.0, 2.0);
    CHECK(op_grad_error({q, p}, [](Tape& t, const std::vector<NodeId>& in) {
              return group_cosine(t, in[0], in[1], 4);
          }) < 1e-5);
}

TEST_CASE("ce_loss gradient and values") {
    Rng rng(111);
    const Matrix logits = rng.uniform_matrix(1, 5, -2.0, 2.0);
    CHECK(op_grad_error({logits}, [](Tape& t, const std::vector<NodeId>& in) {
              return ce_loss(t, in[0], 2);
          }) < 1e-5);

    Tape t;
    CHECK_THROWS_AS(ce_loss(t, t.constant(logits), 5), DataError);
    CHECK_THROWS_AS(ce_loss(t, t.constant(logits), -1), DataError);
}

TEST_CASE("a corrupted backward rule is caught by the checker") {
    // Identity op whose backward overstates the gradient by 1%.
    const auto corrupt_identity = [](Tape& t, NodeId a) {
        return t.record({a}, t.value(a), [a](Tape& tp, NodeId self) {
            const Matrix& g = tp.grad(self);
            for (std::size_t i = 0; i < g.size(); ++i) {
                tp.grad_ref(a).raw()[i] += 1.01 * g.raw()[i];
            }
        });
    };
    Rng rng(121);
    const double err = op_grad_error({rng.uniform_matrix(3, 3, -2.0, 2.0)},
                                     [&](Tape& t, const std::vector<NodeId>& in) {
                                         return corrupt_identity(t, in[0]);
                                     });
    CHECK(err > kGradCheckTolerance);
}
