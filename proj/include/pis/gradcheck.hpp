#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>

#include "pis/params.hpp"
#include "pis/rng.hpp"
#include "pis/tensor.hpp"

namespace pis {

struct GradCheckOptions {
    double eps = 1e-3;            // central-difference step
    int max_coords_per_param = 16;
    uint64_t sample_seed = 17;
    // Central differences are not a valid oracle across a relu kink. When a
    // coordinate's two one-sided slopes disagree far beyond what curvature
    // can explain, the step straddles a kink and the coordinate is skipped
    // (relu'(0) = 0 by convention; checks perturb away from the kink).
    bool skip_nonsmooth = true;
    double smooth_factor = 100.0;  // tolerance = factor * eps * slope scale
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    int checked = 0;
    int skipped = 0;
};

// Central-difference verification of the analytic gradients of f over the
// trainable coordinates. Returns max |analytic - numeric| / max(1, |a|, |n|).
// f must be deterministic and is re-evaluated per probe.
template <class T>
GradCheckResult gradient_check_full(const std::function<TensorT<T>(ParameterGroupT<T>&)>& f,
                                    ParameterGroupT<T>& params, const GradCheckOptions& opt = {}) {
    params.zero_grad();
    TensorT<T> loss = f(params);
    if (loss.numel() != 1) throw std::invalid_argument("gradient_check: f must return a scalar");
    const double f0 = static_cast<double>(loss.value());
    if (!std::isfinite(f0)) throw std::runtime_error("gradient_check: f evaluated to a non-finite value");
    backward(loss);

    Rng rng(opt.sample_seed);
    GradCheckResult res;
    for (const auto& name : params.trainable) {
        TensorT<T>& p = params.at(name);
        const int64_t n = p.numel();
        std::vector<int64_t> coords;
        if (n <= opt.max_coords_per_param) {
            for (int64_t i = 0; i < n; ++i) coords.push_back(i);
        } else {
            for (int i = 0; i < opt.max_coords_per_param; ++i)
                coords.push_back(static_cast<int64_t>(rng.next_below(static_cast<uint64_t>(n))));
        }
        for (int64_t c : coords) {
            const T saved = p.data()[static_cast<size_t>(c)];
            const T hi = static_cast<T>(static_cast<double>(saved) + opt.eps);
            const T lo = static_cast<T>(static_cast<double>(saved) - opt.eps);

            p.data()[static_cast<size_t>(c)] = hi;
            const double f_hi = static_cast<double>(f(params).value());
            p.data()[static_cast<size_t>(c)] = lo;
            const double f_lo = static_cast<double>(f(params).value());
            p.data()[static_cast<size_t>(c)] = saved;
            if (!std::isfinite(f_hi) || !std::isfinite(f_lo))
                throw std::runtime_error("gradient_check: f evaluated to a non-finite value");

            // Use the realized parameter steps, not the nominal eps.
            const double step_hi = static_cast<double>(hi) - static_cast<double>(saved);
            const double step_lo = static_cast<double>(saved) - static_cast<double>(lo);
            const double numeric = (f_hi - f_lo) / (step_hi + step_lo);

            if (opt.skip_nonsmooth) {
                const double d_hi = (f_hi - f0) / step_hi;
                const double d_lo = (f0 - f_lo) / step_lo;
                const double scale = std::max({1.0, std::abs(d_hi), std::abs(d_lo)});
                if (std::abs(d_hi - d_lo) > opt.smooth_factor * opt.eps * scale) {
                    ++res.skipped;
                    continue;
                }
            }

            const double analytic = static_cast<double>(p.grad()[static_cast<size_t>(c)]);
            const double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
            res.max_rel_error = std::max(res.max_rel_error, std::abs(analytic - numeric) / denom);
            ++res.checked;
        }
    }
    return res;
}

template <class T>
double gradient_check(const std::function<TensorT<T>(ParameterGroupT<T>&)>& f, ParameterGroupT<T>& params,
                      double eps = 1e-3, int max_coords_per_param = 16, uint64_t sample_seed = 17) {
    GradCheckOptions opt;
    opt.eps = eps;
    opt.max_coords_per_param = max_coords_per_param;
    opt.sample_seed = sample_seed;
    return gradient_check_full(f, params, opt).max_rel_error;
}

}  // namespace pis
