#pragma once
#include <cmath>
#include <cstdint>
#include <functional>
#include <vector>

#include "stan/errors.hpp"
#include "stan/tensor.hpp"

namespace stan {

// Central-difference gradient oracle: (f(x+eps*e_i) - f(x-eps*e_i)) / (2*eps)
// per element. Double precision only; f must be deterministic.
inline Tensor5<double> finite_diff_grad(
    const std::function<double(const Tensor5<double>&)>& f, const Tensor5<double>& x,
    double eps) {
    if (!(eps > 0.0)) throw NumericError("finite_diff_grad: eps must be > 0");
    Tensor5<double> g(x.shape, 0.0);
    Tensor5<double> probe = x;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const double orig = probe.data[i];
        probe.data[i] = orig + eps;
        const double hi = f(probe);
        probe.data[i] = orig - eps;
        const double lo = f(probe);
        probe.data[i] = orig;
        if (!std::isfinite(hi) || !std::isfinite(lo))
            throw NumericError("finite_diff_grad: non-finite function output");
        g.data[i] = (hi - lo) / (2.0 * eps);
    }
    return g;
}

// Same oracle for flat parameter vectors.
inline std::vector<double> finite_diff_grad_vec(
    const std::function<double(const std::vector<double>&)>& f,
    const std::vector<double>& x, double eps) {
    if (!(eps > 0.0)) throw NumericError("finite_diff_grad_vec: eps must be > 0");
    std::vector<double> g(x.size(), 0.0);
    std::vector<double> probe = x;
    for (size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double hi = f(probe);
        probe[i] = orig - eps;
        const double lo = f(probe);
        probe[i] = orig;
        if (!std::isfinite(hi) || !std::isfinite(lo))
            throw NumericError("finite_diff_grad_vec: non-finite function output");
        g[i] = (hi - lo) / (2.0 * eps);
    }
    return g;
}

// Relative error with a unit floor on the denominator, so near-zero pairs are
// compared absolutely.
inline double rel_err(double a, double b) {
    const double denom = std::max(1.0, std::max(std::fabs(a), std::fabs(b)));
    return std::fabs(a - b) / denom;
}

inline double max_rel_err(const Tensor5<double>& a, const Tensor5<double>& b) {
    require_same_shape(a, b, "max_rel_err");
    double worst = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i)
        worst = std::max(worst, rel_err(a.data[i], b.data[i]));
    return worst;
}

inline double max_rel_err_vec(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.size() && i < b.size(); ++i)
        worst = std::max(worst, rel_err(a[i], b[i]));
    return worst;
}

}  // namespace stan
