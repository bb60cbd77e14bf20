// Training objectives: BCE+Dice segmentation loss, KL distribution alignment
// between the simple and complex branches, the JSD uncertainty map, and the
// uncertainty-weighted hard-region cross-entropy. Natural logs everywhere;
// probabilities are clamped to [1e-6, 1-1e-6] before any log.
#pragma once

#include <cmath>
#include <stdexcept>

#include "pis/tensor.hpp"

namespace pis {

inline constexpr float kProbClamp = 1e-6f;
inline const double kLn2 = std::log(2.0);

template <class T>
struct UncertaintyMapT {
    TensorT<T> w;  // per-pixel JSD / ln 2, in [0, 1]
};

using UncertaintyMap = UncertaintyMapT<float>;

struct LossBreakdown {
    double l_seg = 0.0;
    double l_align = 0.0;
    double l_hard = 0.0;
    double l_train = 0.0;
};

struct AlignOptions {
    // When set, the simple branch acts as a fixed teacher and takes no
    // gradient from the alignment term. Default is bidirectional.
    bool detach_simple = false;
};

struct HardRegionOptions {
    // When set, p_simple is a gradient-detached soft target (in both the
    // uncertainty weight and the cross-entropy), so the hard-region term
    // trains only the complex branch. Disable to make the term fully
    // differentiable, e.g. for finite-difference verification.
    bool detach_target = true;
};

namespace detail {

template <class T>
TensorT<T> clamp_prob(const TensorT<T>& p) {
    return clamp(p, static_cast<T>(kProbClamp), static_cast<T>(1.0f - kProbClamp));
}

// Elementwise Bernoulli KL(p || q) on pre-clamped inputs.
template <class T>
TensorT<T> bernoulli_kl(const TensorT<T>& p, const TensorT<T>& q) {
    TensorT<T> one_minus_p = add_const(scale(p, T(-1)), T(1));
    TensorT<T> one_minus_q = add_const(scale(q, T(-1)), T(1));
    TensorT<T> pos = mul(p, sub(log_(p), log_(q)));
    TensorT<T> neg = mul(one_minus_p, sub(log_(one_minus_p), log_(one_minus_q)));
    return add(pos, neg);
}

// Elementwise cross-entropy with soft target p: -[p ln q + (1-p) ln(1-q)].
template <class T>
TensorT<T> bernoulli_ce(const TensorT<T>& p, const TensorT<T>& q) {
    TensorT<T> one_minus_p = add_const(scale(p, T(-1)), T(1));
    TensorT<T> one_minus_q = add_const(scale(q, T(-1)), T(1));
    TensorT<T> ce = add(mul(p, log_(q)), mul(one_minus_p, log_(one_minus_q)));
    return scale(ce, T(-1));
}

}  // namespace detail

// Mean binary cross-entropy plus Dice loss against a binary ground-truth
// mask. Dice = 1 - (2*sum(p*g) + 1) / (sum(p) + sum(g) + 1).
template <class T>
TensorT<T> seg_loss(const TensorT<T>& p, const TensorT<T>& gt) {
    if (p.shape() != gt.shape())
        throw std::invalid_argument("seg_loss: shape " + shape_str(p.shape()) + " vs " + shape_str(gt.shape()));
    TensorT<T> pc = detail::clamp_prob(p);
    TensorT<T> bce = mean_all(detail::bernoulli_ce(gt, pc));
    TensorT<T> inter = sum_all(mul(pc, gt));
    TensorT<T> denom = add_const(add(sum_all(pc), sum_all(gt)), T(1));
    TensorT<T> dice = add_const(scale(div_scalars(add_const(scale(inter, T(2)), T(1)), denom), T(-1)), T(1));
    return add(bce, dice);
}

// Mean per-pixel Bernoulli KL(p_simple || p_complex).
template <class T>
TensorT<T> kl_align(const TensorT<T>& p_s, const TensorT<T>& p_c, const AlignOptions& opt = {}) {
    if (p_s.shape() != p_c.shape())
        throw std::invalid_argument("kl_align: shape " + shape_str(p_s.shape()) + " vs " + shape_str(p_c.shape()));
    TensorT<T> ps = detail::clamp_prob(opt.detach_simple ? p_s.detach() : p_s);
    TensorT<T> pc = detail::clamp_prob(p_c);
    return mean_all(detail::bernoulli_kl(ps, pc));
}

// Per-pixel Jensen-Shannon divergence normalized by ln 2 into [0, 1].
// Symmetric in its arguments; zero exactly where the branches agree.
template <class T>
UncertaintyMapT<T> jsd_map(const TensorT<T>& p_s, const TensorT<T>& p_c) {
    if (p_s.shape() != p_c.shape())
        throw std::invalid_argument("jsd_map: shape " + shape_str(p_s.shape()) + " vs " + shape_str(p_c.shape()));
    TensorT<T> ps = detail::clamp_prob(p_s);
    TensorT<T> pc = detail::clamp_prob(p_c);
    TensorT<T> m = scale(add(ps, pc), T(0.5));
    TensorT<T> jsd = scale(add(detail::bernoulli_kl(ps, m), detail::bernoulli_kl(pc, m)), T(0.5));
    return {clamp(scale(jsd, static_cast<T>(1.0 / kLn2)), T(0), T(1))};
}

// Mean of w(x) * CE(x): the JSD uncertainty weight times a cross-entropy that
// treats p_simple as soft target and p_complex as prediction.
template <class T>
TensorT<T> hard_region_loss(const TensorT<T>& p_s, const TensorT<T>& p_c, const HardRegionOptions& opt = {}) {
    if (p_s.shape() != p_c.shape())
        throw std::invalid_argument("hard_region_loss: shape " + shape_str(p_s.shape()) + " vs " +
                                    shape_str(p_c.shape()));
    TensorT<T> target = opt.detach_target ? p_s.detach() : p_s;
    TensorT<T> w = jsd_map(target, p_c).w;
    TensorT<T> ce = detail::bernoulli_ce(detail::clamp_prob(target), detail::clamp_prob(p_c));
    return mean_all(mul(w, ce));
}

// Stage-gated sum: stages 0-2 train with the segmentation term only; stage 3
// activates all three. Inactive terms are recorded as zero.
inline LossBreakdown stage_breakdown(const LossBreakdown& parts, int stage) {
    LossBreakdown out = parts;
    if (stage < 3) {
        out.l_align = 0.0;
        out.l_hard = 0.0;
    }
    out.l_train = out.l_seg + out.l_align + out.l_hard;
    return out;
}

inline double total_loss(const LossBreakdown& parts, int stage) { return stage_breakdown(parts, stage).l_train; }

}  // namespace pis
