#pragma once

// Arithmetic policies shared by every layer. Layers are written once against
// this interface; LnsArith runs them bit-true, RealArith is the float mirror
// with the same operation order.

#include "qaalns/delta_table.hpp"

#include <cmath>
#include <memory>

namespace qaalns::nn {

/// e^u for u <= 0 in LNS, built from a PWL approximation of 2^x.
///
/// With u = -2^(l_u / 2^F), the result's log-magnitude is u * log2(e) * 2^F,
/// so the only non-linear step is the conversion of l_u back to a linear
/// value. That conversion is a 2^x curve evaluated at distance
/// d = top - (l_u + round(log2(log2 e) * 2^F)), where top = log2(range) * 2^F.
/// Inputs with |u| * log2(e) > range underflow to zero.
class Pow2Table
{
public:
    explicit Pow2Table(const LnsFormat& fmt, int range = 16, std::size_t segments = 256);

    const LnsFormat& format() const { return format_; }
    const PwlCurve& curve() const { return curve_; }
    std::int32_t top() const { return top_; }
    std::int32_t log2e_offset() const { return log2e_offset_; }
    int range() const { return range_; }

    LnsScalar exp_nonpositive(const LnsScalar& u) const;

private:
    LnsFormat format_;
    int range_;
    std::int32_t top_;
    std::int32_t log2e_offset_;
    PwlCurve curve_;
};

struct RealArith
{
    using value_type = double;

    double zero() const { return 0.0; }
    double one() const { return 1.0; }
    double from_real(double x) const { return x; }
    double to_real(double v) const { return v; }
    double mul(double a, double b) const { return a * b; }
    double add(double a, double b) const { return a + b; }
    double neg(double a) const { return -a; }
    double div(double a, double b) const { return a / b; }
    double sqrt(double a) const { return std::sqrt(a); }
    bool positive(double a) const { return a > 0.0; }
    bool greater(double a, double b) const { return a > b; }
    bool is_zero(double a) const { return a == 0.0; }
    double exp_nonpositive(double u) const { return std::exp(u); }
};

class LnsArith
{
public:
    using value_type = LnsScalar;

    LnsArith(const LnsFormat& fmt, std::shared_ptr<const DeltaLut> delta, std::shared_ptr<const Pow2Table> pow2);

    const LnsFormat& format() const { return fmt_; }
    const DeltaLut& delta() const { return *delta_; }
    const Pow2Table& pow2() const { return *pow2_; }

    LnsScalar zero() const { return zero_value(fmt_); }
    LnsScalar one() const { return one_value(); }
    LnsScalar from_real(double x) const { return quantize(x, fmt_); }
    double to_real(const LnsScalar& v) const { return dequantize(v, fmt_); }
    LnsScalar mul(const LnsScalar& a, const LnsScalar& b) const { return lns_mul(a, b, fmt_); }
    LnsScalar add(const LnsScalar& a, const LnsScalar& b) const { return lns_add_unchecked(a, b, fmt_, *delta_); }
    LnsScalar neg(const LnsScalar& a) const { return negate(a, fmt_); }
    LnsScalar div(const LnsScalar& a, const LnsScalar& b) const { return lns_div(a, b, fmt_); }
    LnsScalar sqrt(const LnsScalar& a) const { return lns_sqrt(a, fmt_); }
    // sign test only; ReLU and max-pool never touch the log-magnitude
    bool positive(const LnsScalar& a) const { return !a.sign && !qaalns::is_zero(a, fmt_); }
    bool greater(const LnsScalar& a, const LnsScalar& b) const { return lns_compare(a, b, fmt_) > 0; }
    bool is_zero(const LnsScalar& a) const { return qaalns::is_zero(a, fmt_); }
    LnsScalar exp_nonpositive(const LnsScalar& u) const { return pow2_->exp_nonpositive(u); }

private:
    LnsFormat fmt_;
    std::shared_ptr<const DeltaLut> delta_;
    std::shared_ptr<const Pow2Table> pow2_;
};

/// Convenience: LNS arithmetic with a given addition evaluator and the
/// default 256-segment softmax exponential.
template <class Delta>
LnsArith make_lns_arith(const LnsFormat& fmt, const Delta& delta)
{
    check_delta_format(delta, fmt);
    return LnsArith(fmt, std::make_shared<const DeltaLut>(delta), std::make_shared<const Pow2Table>(fmt));
}

}  // namespace qaalns::nn
