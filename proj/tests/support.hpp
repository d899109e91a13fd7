#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dasp/tensor.hpp"

namespace dasp::test {

inline double rel_err(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central finite differences of a scalar function with respect to every
// entry of `param`, leaving the tensor as it was found.
inline Tensor fd_gradient(const std::function<double()>& f, Tensor& param, double step = 1e-5) {
    Tensor grad(param.shape());
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double saved = param[i];
        param[i] = saved + step;
        const double hi = f();
        param[i] = saved - step;
        const double lo = f();
        param[i] = saved;
        grad[i] = (hi - lo) / (2.0 * step);
    }
    return grad;
}

// Singular values via one-sided Jacobi on A^T A; good enough as an
// independent rank oracle for small matrices.
inline std::vector<double> singular_values(const Tensor& a) {
    const std::size_t n = a.cols();
    Tensor g = matmul(transpose(a), a);  // n x n symmetric PSD
    for (int sweep = 0; sweep < 60; ++sweep) {
        double off = 0.0;
        for (std::size_t p = 0; p < n; ++p)
            for (std::size_t q = p + 1; q < n; ++q) off += g.at(p, q) * g.at(p, q);
        if (off < 1e-24) break;
        for (std::size_t p = 0; p < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                const double apq = g.at(p, q);
                if (std::abs(apq) < 1e-18) continue;
                const double app = g.at(p, p), aqq = g.at(q, q);
                const double theta = 0.5 * std::atan2(2.0 * apq, aqq - app);
                const double c = std::cos(theta), s = std::sin(theta);
                for (std::size_t k = 0; k < n; ++k) {
                    const double gkp = g.at(k, p), gkq = g.at(k, q);
                    g.at(k, p) = c * gkp - s * gkq;
                    g.at(k, q) = s * gkp + c * gkq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    const double gpk = g.at(p, k), gqk = g.at(q, k);
                    g.at(p, k) = c * gpk - s * gqk;
                    g.at(q, k) = s * gpk + c * gqk;
                }
            }
        }
    }
    std::vector<double> sv(n);
    for (std::size_t i = 0; i < n; ++i) sv[i] = std::sqrt(std::max(0.0, g.at(i, i)));
    std::sort(sv.begin(), sv.end(), std::greater<>());
    return sv;
}

}  // namespace dasp::test
