#pragma once

#include <functional>
#include <string>
#include <vector>

#include "fewshot/matrix.hpp"

namespace fewshot {

inline constexpr double kGradCheckStep = 1e-6;
inline constexpr double kGradCheckTolerance = 1e-5;

// Central finite differences of f over every entry of `param`, mutating the
// entries in place and restoring them. f must re-run the forward pass from
// the current parameter values.
Matrix finite_difference_gradient(const std::function<double()>& f, Matrix& param,
                                  double step = kGradCheckStep);

// Group-level relative error: max |a - n| over the group, scaled by the
// larger of the two gradient magnitudes. The scale is floored at 1 so
// groups whose true gradient is structurally zero compare by absolute
// error; central differences at h = 1e-6 carry ~1e-10 roundoff noise.
double relative_gradient_error(const Matrix& analytic, const Matrix& numeric);

struct GradCheckEntry {
    std::string group;
    double rel_err = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    bool all_pass() const {
        for (const auto& e : entries) {
            if (!e.pass) return false;
        }
        return true;
    }
};

}  // namespace fewshot
