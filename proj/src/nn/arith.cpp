#include "qaalns/nn/arith.hpp"
#include "qaalns/nn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace qaalns::nn {

std::string shape_string(const Shape& s)
{
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += (i ? ", " : "") + std::to_string(s[i]);
    }
    return out + "]";
}

Pow2Table::Pow2Table(const LnsFormat& fmt, int range, std::size_t segments)
    : format_(fmt),
      range_(range),
      top_(static_cast<std::int32_t>(std::nearbyint(std::log2(static_cast<double>(range)) * fmt.scale()))),
      log2e_offset_(static_cast<std::int32_t>(std::nearbyint(std::log2(std::numbers::log2e) * fmt.scale())))
{
    if (range < 2) {
        throw LnsError("Pow2Table: range must be >= 2");
    }
    if (segments < 1) {
        throw LnsError("Pow2Table: need at least one segment");
    }
    const CurveTarget target = CurveTarget::pow2(fmt, top_);
    const std::size_t n = std::min<std::size_t>(segments, static_cast<std::size_t>(target.domain_end()) + 1);
    curve_ = fit_uniform(target, n, fmt, SlopeRange{-(fmt.fractional_bits + 2), 4});
}

LnsScalar Pow2Table::exp_nonpositive(const LnsScalar& u) const
{
    if (is_zero(u, format_) || !u.sign) {
        return one_value();
    }
    const std::int64_t d = std::int64_t{top_} - (std::int64_t{u.log_mag} + log2e_offset_);
    if (d < 0) {
        return zero_value(format_);
    }
    if (d > curve_.domain_end) {
        return one_value();
    }
    return LnsScalar{saturate(-std::int64_t{curve_.eval(static_cast<std::int32_t>(d))}, format_), false, false};
}

LnsArith::LnsArith(const LnsFormat& fmt, std::shared_ptr<const DeltaLut> delta, std::shared_ptr<const Pow2Table> pow2)
    : fmt_(fmt), delta_(std::move(delta)), pow2_(std::move(pow2))
{
    if (!delta_ || !pow2_) {
        throw LnsError("LnsArith: missing addition or exponential table");
    }
    check_delta_format(*delta_, fmt_);
    if (pow2_->format().fractional_bits != fmt_.fractional_bits ||
        pow2_->format().total_bits != fmt_.total_bits) {
        throw FormatMismatchError("LnsArith: exponential table built for another format");
    }
}

}  // namespace qaalns::nn
