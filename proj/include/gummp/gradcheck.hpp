// Finite-difference verification of tape gradients.
#pragma once

#include <cstddef>
#include <functional>

#include "gummp/autodiff.hpp"
#include "gummp/ndarray.hpp"

namespace gummp {

struct GradCheckResult {
    double max_rel_err = 0.0;
    size_t worst_index = 0;
    double analytic_at_worst = 0.0;
    double numeric_at_worst = 0.0;
};

// |analytic - central difference| / max(|analytic|, |cd|, 1e-7)
inline double grad_rel_err(double analytic, double numeric) {
    double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-7});
    return std::abs(analytic - numeric) / denom;
}

// f builds a scalar loss from a leaf of theta on the given tape. Returns the
// max over coordinates of the relative error between the tape gradient and a
// central finite difference with step eps.
template <typename F>
GradCheckResult grad_check(F&& f, const NdArray& theta, double eps = 1e-5) {
    Tape t;
    Var leaf = t.leaf(theta, true);
    Var loss = f(t, leaf);
    t.backward(loss);
    NdArray analytic = t.grad_of(leaf);

    GradCheckResult res;
    NdArray probe = theta;
    for (size_t i = 0; i < theta.numel(); ++i) {
        double keep = probe.data[i];
        probe.data[i] = keep + eps;
        Tape tp;
        double up = tp.scalar(f(tp, tp.leaf(probe)));
        probe.data[i] = keep - eps;
        Tape tm;
        double dn = tm.scalar(f(tm, tm.leaf(probe)));
        probe.data[i] = keep;
        double numeric = (up - dn) / (2.0 * eps);
        double err = grad_rel_err(analytic.data[i], numeric);
        if (err > res.max_rel_err) {
            res.max_rel_err = err;
            res.worst_index = i;
            res.analytic_at_worst = analytic.data[i];
            res.numeric_at_worst = numeric;
        }
    }
    return res;
}

}  // namespace gummp
