#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "pagelab/core.hpp"

namespace pagelab {

struct NelderMeadOptions {
    int max_iterations = 5000;
    int restarts = 3;
    double initial_step = 0.1;
    /// Converged once the best value improves by less than f_tol and the
    /// simplex moves less than x_tol for `stall_window` iterations in a row.
    double f_tol = 1e-12;
    double x_tol = 1e-8;
    int stall_window = 20;
};

struct NelderMeadResult {
    RealVector x;
    double value = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> history; // best value after each iteration, non-increasing
};

/// Standard Nelder-Mead with adaptive coefficients (Gao and Han) and
/// restarts from the best vertex.
inline NelderMeadResult nelder_mead(const std::function<double(const RealVector&)>& f, RealVector x0,
                                    const NelderMeadOptions& opt = {})
{
    const Eigen::Index n = x0.size();
    require(n >= 1, ErrorCode::invalid_argument, "Nelder-Mead needs at least one parameter");
    const double dn = static_cast<double>(n);
    const double alpha = 1.0, beta = 1.0 + 2.0 / dn, gamma = 0.75 - 0.5 / dn, delta = 1.0 - 1.0 / dn;

    NelderMeadResult res;
    res.x = x0;
    res.value = f(x0);
    int total = 0;
    for (int attempt = 0; attempt <= opt.restarts && total < opt.max_iterations; ++attempt) {
        std::vector<RealVector> pts(n + 1, res.x);
        std::vector<double> val(n + 1, res.value);
        for (Eigen::Index i = 0; i < n; ++i) {
            const double h = res.x[i] != 0.0 ? opt.initial_step * std::max(1.0, std::abs(res.x[i]))
                                             : opt.initial_step;
            pts[i + 1][i] += h;
            val[i + 1] = f(pts[i + 1]);
        }
        std::vector<int> order(n + 1);
        int stall = 0;
        bool done = false;
        double prev_best = std::numeric_limits<double>::infinity();
        while (total < opt.max_iterations && !done) {
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return val[a] < val[b]; });
            const int best = order.front(), worst = order.back(), second = order[n - 1];
            RealVector centroid = RealVector::Zero(n);
            for (int i = 0; i <= n; ++i)
                if (i != worst)
                    centroid += pts[i];
            centroid /= dn;

            const RealVector xr = centroid + alpha * (centroid - pts[worst]);
            const double fr = f(xr);
            if (fr < val[best]) {
                const RealVector xe = centroid + beta * (xr - centroid);
                const double fe = f(xe);
                if (fe < fr) {
                    pts[worst] = xe;
                    val[worst] = fe;
                } else {
                    pts[worst] = xr;
                    val[worst] = fr;
                }
            } else if (fr < val[second]) {
                pts[worst] = xr;
                val[worst] = fr;
            } else {
                const bool outside = fr < val[worst];
                const RealVector xc = outside ? RealVector(centroid + gamma * (xr - centroid))
                                              : RealVector(centroid - gamma * (centroid - pts[worst]));
                const double fc = f(xc);
                if (fc < std::min(fr, val[worst])) {
                    pts[worst] = xc;
                    val[worst] = fc;
                } else {
                    for (int i = 0; i <= n; ++i)
                        if (i != best) {
                            pts[i] = pts[best] + delta * (pts[i] - pts[best]);
                            val[i] = f(pts[i]);
                        }
                }
            }
            ++total;
            const int b = static_cast<int>(std::min_element(val.begin(), val.end()) - val.begin());
            double spread = 0.0;
            for (int i = 0; i <= n; ++i)
                spread = std::max(spread, (pts[i] - pts[b]).cwiseAbs().maxCoeff());
            if (val[b] < res.value) {
                res.value = val[b];
                res.x = pts[b];
            }
            res.history.push_back(res.value);
            const bool small_gain = prev_best - res.value < opt.f_tol;
            stall = (small_gain && spread < opt.x_tol) || (small_gain && res.value < opt.f_tol) ? stall + 1 : 0;
            prev_best = res.value;
            if (stall >= opt.stall_window || res.value == 0.0) {
                res.converged = true;
                done = true;
            }
        }
    }
    res.iterations = total;
    return res;
}

} // namespace pagelab
