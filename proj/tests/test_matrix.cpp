#include "doctest.h"

#include <cmath>
#include <limits>

#include "fewshot/matrix.hpp"

using namespace fewshot;

TEST_CASE("matrix construction and access") {
    Matrix m(2, 3);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) CHECK(m(i, j) == 0.0);

    m(1, 2) = 4.5;
    CHECK(m(1, 2) == 4.5);

    CHECK_THROWS_AS(Matrix(0, 3), ShapeError);
    CHECK_THROWS_AS(Matrix(2, 2, std::vector<double>{1.0, 2.0, 3.0}), ShapeError);
}

TEST_CASE("from_rows and identity") {
    Matrix m = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
    CHECK(m(0, 1) == 2.0);
    CHECK(m(1, 0) == 3.0);

    Matrix id = Matrix::identity(3);
    CHECK(id(0, 0) == 1.0);
    CHECK(id(0, 1) == 0.0);
    CHECK(id(2, 2) == 1.0);
}

TEST_CASE("plain matmul") {
    SUBCASE("identity is neutral") {
        Matrix x = Matrix::from_rows({{1.5, -2.0}, {0.25, 7.0}});
        CHECK(matmul(Matrix::identity(2), x) == x);
    }
    SUBCASE("hand arithmetic") {
        Matrix a = Matrix::from_rows({{1.0, 2.0}, {3.0, 4.0}});
        Matrix b = Matrix::from_rows({{1.0}, {1.0}});
        Matrix c = matmul(a, b);
        CHECK(c(0, 0) == 3.0);
        CHECK(c(1, 0) == 7.0);
    }
    SUBCASE("shape mismatch names both shapes") {
        Matrix a(2, 3);
        Matrix b(2, 3);
        try {
            matmul(a, b);
            FAIL("expected ShapeError");
        } catch (const ShapeError& e) {
            const std::string msg = e.what();
            CHECK(msg.find("2x3") != std::string::npos);
        }
    }
}

TEST_CASE("transpose and row helpers") {
    Matrix a = Matrix::from_rows({{1.0, 2.0, 3.0}, {4.0, 5.0, 6.0}});
    Matrix t = transpose(a);
    CHECK(t.rows() == 3);
    CHECK(t(2, 1) == 6.0);

    CHECK(dot_row(a, 0, a, 1) == doctest::Approx(4.0 + 10.0 + 18.0));
    CHECK(row_norm(a, 0) == doctest::Approx(std::sqrt(14.0)));

    Matrix z(1, 3);
    CHECK_THROWS_AS(cosine_row(z, 0, a, 0), NumericError);
}

TEST_CASE("argmax ties break to lowest index") {
    Matrix m = Matrix::from_rows({{0.5, 0.7, 0.7, 0.1}});
    CHECK(argmax_row(m, 0) == 1);
}

TEST_CASE("finite checks") {
    Matrix m(1, 2);
    CHECK(m.all_finite());
    m(0, 1) = std::numeric_limits<double>::infinity();
    CHECK_FALSE(m.all_finite());
    CHECK_THROWS_AS(m.ensure_finite("test matrix"), NumericError);
}
