// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <limits>
#include <span>

namespace gedi {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Max-subtracted log-sum-exp. Returns -inf when every entry is -inf.
inline double log_sum_exp(std::span<const double> v) {
    double m = kNegInf;
    for (double x : v)
        if (x > m) m = x;
    if (m == kNegInf) return kNegInf;
    double s = 0.0;
    for (double x : v) s += std::exp(x - m);
    return m + std::log(s);
}

/// In-place log-softmax with max subtraction. -inf entries stay -inf.
/// No-op (all -inf) inputs are left untouched.
inline void log_softmax_inplace(std::span<double> v) {
    double lse = log_sum_exp(v);
    if (lse == kNegInf) return;
    for (double& x : v)
        if (x != kNegInf) x -= lse;
}

/// Softmax of a logit vector into `out`. When every logit is -inf the output
/// is uniform (the caller decides whether that case is meaningful).
inline void softmax_from_logits(std::span<const double> logits, std::span<double> out) {
    double m = kNegInf;
    for (double x : logits)
        if (x > m) m = x;
    if (m == kNegInf) {
        const double u = 1.0 / static_cast<double>(logits.size());
        for (double& o : out) o = u;
        return;
    }
    double s = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::exp(logits[i] - m);
        s += out[i];
    }
    for (double& o : out) o /= s;
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace gedi
