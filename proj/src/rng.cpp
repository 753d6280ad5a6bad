#include "fewshot/rng.hpp"

#include <cmath>

namespace fewshot {

double Rng::normal() {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

Matrix Rng::normal_matrix(int rows, int cols) {
    Matrix m(rows, cols);
    for (double& v : m.raw()) v = normal();
    return m;
}

Matrix Rng::uniform_matrix(int rows, int cols, double lo, double hi) {
    Matrix m(rows, cols);
    for (double& v : m.raw()) v = uniform_range(lo, hi);
    return m;
}

}  // namespace fewshot
