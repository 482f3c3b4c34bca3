#pragma once
// Central finite-difference verification of reverse-mode gradients.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "lechpe/autodiff.hpp"
#include "lechpe/matrix.hpp"

namespace lechpe {

struct GradCheckReport {
    std::string op_name;
    double max_relative_error = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

// f must map a leaf node to a scalar node. The analytic gradient comes from
// one backward pass; the numeric one from (f(x+h e) - f(x-h e)) / 2h per
// coordinate. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
// denominator.
inline GradCheckReport finite_diff_check(const std::string& op_name,
                                         const std::function<ad::Var(const ad::Var&)>& f,
                                         const Matrix& point, double step, double tolerance) {
    if (!(step > 0.0)) throw std::invalid_argument("finite_diff_check: step must be positive");

    auto leaf = ad::parameter(point);
    auto out = f(leaf);
    if (out->value.rows() != 1 || out->value.cols() != 1) {
        throw std::invalid_argument("finite_diff_check: f is not scalar-valued");
    }
    ad::backward(out);
    const Matrix analytic = leaf->grad;

    auto eval = [&](const Matrix& x) {
        const double v = ad::scalar_value(f(ad::constant(x)));
        if (!std::isfinite(v)) {
            throw std::runtime_error("finite_diff_check: non-finite value of f near the point");
        }
        return v;
    };

    double max_rel = 0.0;
    Matrix probe = point;
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double saved = probe.data()[i];
        probe.data()[i] = saved + step;
        const double fplus = eval(probe);
        probe.data()[i] = saved - step;
        const double fminus = eval(probe);
        probe.data()[i] = saved;
        const double numeric = (fplus - fminus) / (2.0 * step);
        const double a = analytic.data()[i];
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        max_rel = std::max(max_rel, std::fabs(a - numeric) / denom);
    }

    GradCheckReport report;
    report.op_name = op_name;
    report.max_relative_error = max_rel;
    report.tolerance = tolerance;
    report.passed = max_rel <= tolerance;
    return report;
}

}  // namespace lechpe
