#include "qaalns/lns.hpp"

#include <cmath>

namespace qaalns {

LnsFormat LnsFormat::make(int total_bits, int fractional_bits, ZeroMode mode, int d_max)
{
    if (total_bits < 2 || total_bits > 30) {
        throw LnsError("total_bits must lie in [2, 30], got " + std::to_string(total_bits));
    }
    if (fractional_bits < 1 || fractional_bits >= total_bits) {
        throw LnsError("fractional_bits must lie in [1, total_bits), got " + std::to_string(fractional_bits));
    }
    if (d_max < 1 || (std::int64_t{d_max} << fractional_bits) > (std::int64_t{1} << 24)) {
        throw LnsError("d_max out of range: " + std::to_string(d_max));
    }
    return LnsFormat{total_bits, fractional_bits, mode, d_max};
}

std::string LnsFormat::describe() const
{
    return std::to_string(total_bits) + "-bit (F=" + std::to_string(fractional_bits) +
           ", o=" + std::to_string(overhead_bits()) + ", d_max=" + std::to_string(d_max) + ")";
}

const char* to_string(ZeroMode mode)
{
    return mode == ZeroMode::ZeroFlag ? "zero-flag" : "smallest-value";
}

ZeroMode zero_mode_from_string(const std::string& s)
{
    if (s == "zero-flag") {
        return ZeroMode::ZeroFlag;
    }
    if (s == "smallest-value") {
        return ZeroMode::SmallestValue;
    }
    throw LnsError("unknown zero mode '" + s + "' (expected zero-flag or smallest-value)");
}

ArithCounters& counters()
{
    static ArithCounters instance;
    return instance;
}

bool is_valid(const LnsScalar& v, const LnsFormat& fmt)
{
    if (v.log_mag < fmt.l_min() || v.log_mag > fmt.l_max()) {
        return false;
    }
    if (v.zero) {
        return fmt.zero_mode == ZeroMode::ZeroFlag && v.log_mag == fmt.l_min() && !v.sign;
    }
    return true;
}

LnsScalar quantize(double x, const LnsFormat& fmt)
{
    if (!std::isfinite(x)) {
        throw LnsError("quantize: non-finite input");
    }
    if (x == 0.0) {
        return zero_value(fmt);
    }
    // nearbyint honours the default round-to-nearest-even mode
    const double scaled = std::nearbyint(std::log2(std::fabs(x)) * fmt.scale());
    std::int32_t l;
    if (scaled > fmt.l_max()) {
        l = fmt.l_max();
    } else if (scaled < fmt.l_min()) {
        l = fmt.l_min();
    } else {
        l = static_cast<std::int32_t>(scaled);
    }
    return LnsScalar{l, x < 0.0, false};
}

double dequantize(const LnsScalar& v, const LnsFormat& fmt)
{
    if (is_zero(v, fmt)) {
        return 0.0;
    }
    const double mag = std::exp2(static_cast<double>(v.log_mag) / fmt.scale());
    return v.sign ? -mag : mag;
}

LnsScalar lns_div(const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt)
{
    if (is_zero(b, fmt)) {
        throw LnsError("lns_div: division by zero");
    }
    if (fmt.zero_mode == ZeroMode::ZeroFlag && a.zero) {
        return zero_value(fmt);
    }
    return LnsScalar{saturate(std::int64_t{a.log_mag} - b.log_mag, fmt), a.sign != b.sign, false};
}

LnsScalar lns_sqrt(const LnsScalar& a, const LnsFormat& fmt)
{
    if (is_zero(a, fmt)) {
        return a;
    }
    if (a.sign) {
        throw LnsError("lns_sqrt: negative operand");
    }
    return LnsScalar{static_cast<std::int32_t>(shift_right_rne(a.log_mag, 1)), false, false};
}

std::strong_ordering lns_compare(const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt)
{
    const auto rank = [&](const LnsScalar& v) { return is_zero(v, fmt) ? 0 : (v.sign ? -1 : 1); };
    const int ra = rank(a);
    const int rb = rank(b);
    if (ra != rb) {
        return ra <=> rb;
    }
    if (ra == 0) {
        return std::strong_ordering::equal;
    }
    return ra > 0 ? a.log_mag <=> b.log_mag : b.log_mag <=> a.log_mag;
}

std::uint32_t encode(const LnsScalar& v, const LnsFormat& fmt)
{
    const int t = fmt.total_bits;
    const std::uint32_t mag_mask = (std::uint32_t{1} << t) - 1;
    std::uint32_t bits = static_cast<std::uint32_t>(v.log_mag) & mag_mask;
    if (v.sign) {
        bits |= std::uint32_t{1} << t;
    }
    if (fmt.zero_mode == ZeroMode::ZeroFlag && v.zero) {
        bits |= std::uint32_t{1} << (t + 1);
    }
    return bits;
}

LnsScalar decode(std::uint32_t bits, const LnsFormat& fmt)
{
    const int t = fmt.total_bits;
    const std::uint32_t mag_mask = (std::uint32_t{1} << t) - 1;
    std::uint32_t raw = bits & mag_mask;
    // sign-extend the T-bit field
    std::int32_t l = static_cast<std::int32_t>(raw << (32 - t)) >> (32 - t);
    const bool sign = ((bits >> t) & 1U) != 0;
    const bool zero = fmt.zero_mode == ZeroMode::ZeroFlag && ((bits >> (t + 1)) & 1U) != 0;
    const std::uint32_t legal =
        fmt.encoded_bits() >= 32 ? ~std::uint32_t{0} : (std::uint32_t{1} << fmt.encoded_bits()) - 1;

    bool normalized = (bits & ~legal) != 0;
    LnsScalar v{l, sign, zero};
    if (zero) {
        if (l != fmt.l_min() || sign) {
            normalized = true;
        }
        v = zero_value(fmt);
    } else if (l < fmt.l_min()) {
        // reserved most-negative pattern
        normalized = true;
        v.log_mag = fmt.l_min();
    }
    if (normalized) {
        counters().decode_normalizations.fetch_add(1, std::memory_order_relaxed);
    }
    return v;
}

}  // namespace qaalns
