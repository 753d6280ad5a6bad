#include "fewshot/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace fewshot {

Matrix finite_difference_gradient(const std::function<double()>& f, Matrix& param, double step) {
    Matrix grad(param.rows(), param.cols());
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double saved = param.raw()[i];
        param.raw()[i] = saved + step;
        const double up = f();
        param.raw()[i] = saved - step;
        const double down = f();
        param.raw()[i] = saved;
        grad.raw()[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

double relative_gradient_error(const Matrix& analytic, const Matrix& numeric) {
    const double scale = std::max({max_abs(analytic), max_abs(numeric), 1.0});
    return max_abs_diff(analytic, numeric) / scale;
}

}  // namespace fewshot
