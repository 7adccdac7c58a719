#pragma once

// Independent reference computations for the tests. Nothing here calls the
// library routine it is used to check.

#include "qaalns/delta_table.hpp"
#include "qaalns/lns.hpp"
#include "qaalns/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace oracle {

using qaalns::LnsFormat;
using qaalns::LnsScalar;

/// round-half-even(log2|x| * 2^F) in extended precision.
inline long long quantize_log(long double x, int F)
{
    return std::llrint(std::log2(std::fabs(x)) * std::ldexp(1.0L, F));
}

inline long double value_of(const LnsScalar& v, const LnsFormat& fmt)
{
    if (fmt.zero_mode == qaalns::ZeroMode::ZeroFlag ? v.zero : (v.log_mag == fmt.l_min() && !v.sign)) {
        return 0.0L;
    }
    const long double m = std::exp2(static_cast<long double>(v.log_mag) / std::ldexp(1.0L, fmt.fractional_bits));
    return v.sign ? -m : m;
}

/// Every canonical value of a format.
inline std::vector<LnsScalar> all_values(const LnsFormat& fmt)
{
    std::vector<LnsScalar> out;
    for (std::int32_t l = fmt.l_min(); l <= fmt.l_max(); ++l) {
        for (bool s : {false, true}) {
            if (fmt.zero_mode == qaalns::ZeroMode::SmallestValue && l == fmt.l_min() && !s) {
                continue;  // added once below as zero
            }
            out.push_back(LnsScalar{l, s, false});
        }
    }
    out.push_back(qaalns::zero_value(fmt));
    return out;
}

/// Scaled log of the correctly rounded real sum; clipped. Returns l_min - 1
/// for an exact zero.
inline long long rounded_sum_log(const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt)
{
    const long double s = value_of(a, fmt) + value_of(b, fmt);
    if (s == 0.0L) {
        return fmt.l_min() - 1LL;
    }
    return std::clamp<long long>(quantize_log(s, fmt.fractional_bits), fmt.l_min(), fmt.l_max());
}

/// Left fold where every step is the correctly rounded real sum.
inline long long exact_fold_log(const std::vector<LnsScalar>& v, const LnsFormat& fmt)
{
    long double acc = value_of(v.front(), fmt);
    for (std::size_t i = 1; i < v.size(); ++i) {
        acc += value_of(v[i], fmt);
        acc = std::exp2(static_cast<long double>(quantize_log(acc, fmt.fractional_bits)) /
                        std::ldexp(1.0L, fmt.fractional_bits)) *
              (acc < 0 ? -1.0L : 1.0L);
    }
    return quantize_log(acc, fmt.fractional_bits);
}

/// Linear scan for the last segment whose bin starts at or before d.
inline std::int32_t pwl_eval_scan(const qaalns::PwlCurve& c, std::int32_t d)
{
    if (d > c.domain_end) {
        return 0;
    }
    std::size_t k = 0;
    for (std::size_t i = 0; i < c.segments.size(); ++i) {
        if (c.segments[i].bin_start <= d) {
            k = i;
        }
    }
    const auto& s = c.segments[k];
    long double v = s.offset;
    if (s.slope_sign != 0) {
        const long double shifted = std::ldexp(static_cast<long double>(d), s.slope_exponent);
        v += s.slope_sign * std::nearbyint(shifted);  // ties to even
    }
    long long r = std::llrint(v);
    if (c.kind == qaalns::CurveKind::Minus) {
        r = std::min(r, 0LL);
    } else {
        r = std::max(r, 0LL);
    }
    return static_cast<std::int32_t>(r);
}

struct BruteFit
{
    double sse = std::numeric_limits<double>::infinity();
    int sign = 0;
    int k = 0;
    long long offset = 0;
};

/// Search over every slope in range. With `rule_only` the offset is the
/// half-even rounded mean residual (the fitting rule); otherwise every integer
/// offset within 3 of it is tried, which bounds the rule from below.
inline BruteFit brute_segment(const std::vector<double>& target, qaalns::CurveKind kind, int begin, int end,
                              int klo, int khi, bool rule_only)
{
    BruteFit best;
    auto consider = [&](int sign, int k) {
        std::vector<long long> lin;
        double mean = 0.0;
        int n = 0;
        for (int d = begin; d <= end; ++d) {
            const long long l =
                sign == 0 ? 0 : sign * std::llrint(std::nearbyint(std::ldexp(static_cast<double>(d), k)));
            lin.push_back(l);
            if (std::isfinite(target[static_cast<std::size_t>(d)])) {
                mean += target[static_cast<std::size_t>(d)] - static_cast<double>(l);
                ++n;
            }
        }
        if (n == 0) {
            return;
        }
        mean /= n;
        const long long centre = std::llrint(std::nearbyint(mean));
        const int w = rule_only ? 0 : 3;
        for (long long off = centre - w; off <= centre + w; ++off) {
            double sse = 0.0;
            for (int d = begin; d <= end; ++d) {
                const double t = target[static_cast<std::size_t>(d)];
                if (!std::isfinite(t)) {
                    continue;
                }
                long long v = lin[static_cast<std::size_t>(d - begin)] + off;
                v = kind == qaalns::CurveKind::Minus ? std::min(v, 0LL) : std::max(v, 0LL);
                sse += (t - static_cast<double>(v)) * (t - static_cast<double>(v));
            }
            if (sse < best.sse) {
                best = BruteFit{sse, sign, k, off};
            }
        }
    };
    consider(0, 0);
    for (int k = klo; k <= khi; ++k) {
        consider(-1, k);
        consider(1, k);
    }
    return best;
}

}  // namespace oracle
