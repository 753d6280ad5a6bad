#pragma once

#include <cstddef>
#include <initializer_list>
#include <string>
#include <vector>

#include "fewshot/errors.hpp"

namespace fewshot {

// Dense row-major matrix of 64-bit reals. The whole pipeline runs in double
// precision so finite-difference gradient checks are meaningful.
class Matrix {
public:
    Matrix() = default;
    Matrix(int rows, int cols);                // zero-filled
    Matrix(int rows, int cols, double fill);
    Matrix(int rows, int cols, std::vector<double> data);

    static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);
    static Matrix identity(int n);

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    bool same_shape(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_;
    }
    std::string shape_str() const;

    bool all_finite() const;
    // Throws NumericError naming `what` if any entry is NaN/Inf.
    void ensure_finite(const std::string& what) const;

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// Plain (untaped) helpers shared by evaluation, oracles and IO paths.
Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);
double dot_row(const Matrix& a, int ra, const Matrix& b, int rb);
double row_norm(const Matrix& a, int r);
// Cosine similarity between row `ra` of a and row `rb` of b; throws
// NumericError on a zero-norm row.
double cosine_row(const Matrix& a, int ra, const Matrix& b, int rb);
int argmax_row(const Matrix& a, int r);  // ties break to the lowest index

double max_abs(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace fewshot
