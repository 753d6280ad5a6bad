#include "fewshot/matrix.hpp"

#include <cmath>
#include <cstdlib>

namespace fewshot {

Matrix::Matrix(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows <= 0 || cols <= 0) {
        throw ShapeError("matrix dimensions must be positive, got " + std::to_string(rows) +
                         "x" + std::to_string(cols));
    }
    data_.assign(static_cast<std::size_t>(rows) * cols, 0.0);
}

Matrix::Matrix(int rows, int cols, double fill) : Matrix(rows, cols) {
    data_.assign(data_.size(), fill);
}

Matrix::Matrix(int rows, int cols, std::vector<double> data) : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (rows <= 0 || cols <= 0) {
        throw ShapeError("matrix dimensions must be positive, got " + std::to_string(rows) +
                         "x" + std::to_string(cols));
    }
    if (data_.size() != static_cast<std::size_t>(rows) * cols) {
        throw ShapeError("matrix data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str());
    }
}

Matrix Matrix::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const int r = static_cast<int>(rows.size());
    const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    Matrix m(r, c);
    int i = 0;
    for (const auto& row : rows) {
        if (static_cast<int>(row.size()) != c) {
            throw ShapeError("ragged initializer: row " + std::to_string(i) + " has " +
                             std::to_string(row.size()) + " entries, expected " + std::to_string(c));
        }
        int j = 0;
        for (double v : row) m(i, j++) = v;
        ++i;
    }
    return m;
}

Matrix Matrix::identity(int n) {
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

std::string Matrix::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

bool Matrix::all_finite() const {
    for (double v : data_) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void Matrix::ensure_finite(const std::string& what) const {
    if (!all_finite()) {
        throw NumericError(what + " contains a non-finite entry");
    }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul shape mismatch: " + a.shape_str() + " * " + b.shape_str());
    }
    Matrix c(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols(); ++j) {
                c(i, j) += aik * b(k, j);
            }
        }
    }
    return c;
}

Matrix transpose(const Matrix& a) {
    Matrix t(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
    }
    return t;
}

double dot_row(const Matrix& a, int ra, const Matrix& b, int rb) {
    if (a.cols() != b.cols()) {
        throw ShapeError("dot_row width mismatch: " + a.shape_str() + " vs " + b.shape_str());
    }
    double s = 0.0;
    for (int j = 0; j < a.cols(); ++j) s += a(ra, j) * b(rb, j);
    return s;
}

double row_norm(const Matrix& a, int r) {
    return std::sqrt(dot_row(a, r, a, r));
}

double cosine_row(const Matrix& a, int ra, const Matrix& b, int rb) {
    const double na = row_norm(a, ra);
    const double nb = row_norm(b, rb);
    if (na == 0.0 || nb == 0.0) {
        throw NumericError("cosine of a zero-norm vector (rows " + std::to_string(ra) + ", " +
                           std::to_string(rb) + ")");
    }
    return dot_row(a, ra, b, rb) / (na * nb);
}

int argmax_row(const Matrix& a, int r) {
    int best = 0;
    for (int j = 1; j < a.cols(); ++j) {
        if (a(r, j) > a(r, best)) best = j;
    }
    return best;
}

double max_abs(const Matrix& a) {
    double m = 0.0;
    for (double v : a.raw()) m = std::max(m, std::fabs(v));
    return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
    if (!a.same_shape(b)) {
        throw ShapeError("max_abs_diff shape mismatch: " + a.shape_str() + " vs " + b.shape_str());
    }
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a.raw()[i] - b.raw()[i]));
    return m;
}

}  // namespace fewshot
