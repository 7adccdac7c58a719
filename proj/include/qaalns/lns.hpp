#pragma once

// Bit-true fixed-point logarithmic number system.
//
// A value is stored as a scaled integer log-magnitude l (log2|x| * 2^F), a
// sign bit and, in ZeroFlag mode, an explicit zero bit. All arithmetic on the
// log-magnitude is plain two's-complement integer math clamped to the
// symmetric range [-(2^(T-1) - 1), 2^(T-1) - 1].

#include <atomic>
#include <compare>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

namespace qaalns {

class LnsError : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
};

class FormatMismatchError : public LnsError
{
public:
    using LnsError::LnsError;
};

enum class ZeroMode : std::uint8_t
{
    ZeroFlag,      // dedicated overhead bit marks exact zero
    SmallestValue  // zero is the smallest representable magnitude, no flag
};

struct LnsFormat
{
    int total_bits = 12;
    int fractional_bits = 6;
    ZeroMode zero_mode = ZeroMode::ZeroFlag;
    int d_max = 12;  // extent of the addition correction tables, log2 units

    /// Validating constructor; throws LnsError on out-of-range widths.
    static LnsFormat make(int total_bits, int fractional_bits,
                          ZeroMode mode = ZeroMode::ZeroFlag, int d_max = 12);

    int integer_bits() const { return total_bits - fractional_bits; }
    // sign bit, plus the zero flag when present
    int overhead_bits() const { return zero_mode == ZeroMode::ZeroFlag ? 2 : 1; }
    int encoded_bits() const { return total_bits + overhead_bits(); }

    std::int32_t l_max() const { return (std::int32_t{1} << (total_bits - 1)) - 1; }
    std::int32_t l_min() const { return -l_max(); }
    std::int32_t one() const { return std::int32_t{1} << fractional_bits; }
    double scale() const { return static_cast<double>(one()); }
    // Largest operand distance (scaled) that still receives a correction term.
    std::int32_t delta_domain_end() const { return d_max * one(); }

    bool same_arithmetic(const LnsFormat& o) const
    {
        return total_bits == o.total_bits && fractional_bits == o.fractional_bits && d_max == o.d_max;
    }

    std::string describe() const;

    friend bool operator==(const LnsFormat&, const LnsFormat&) = default;
};

const char* to_string(ZeroMode mode);
ZeroMode zero_mode_from_string(const std::string& s);

struct LnsScalar
{
    std::int32_t log_mag = 0;
    bool sign = false;  // true = negative
    bool zero = false;  // only ever set in ZeroFlag mode

    friend bool operator==(const LnsScalar&, const LnsScalar&) = default;
};

/// Saturation and normalization events (relaxed atomics).
struct ArithCounters
{
    std::atomic<std::uint64_t> saturations{0};
    std::atomic<std::uint64_t> decode_normalizations{0};

    void reset()
    {
        saturations.store(0, std::memory_order_relaxed);
        decode_normalizations.store(0, std::memory_order_relaxed);
    }
};

ArithCounters& counters();

// ---------------------------------------------------------------------------
// Integer helpers

/// Round-half-even division by 2^shift (shift > 0), valid for any sign.
constexpr std::int64_t shift_right_rne(std::int64_t v, int shift)
{
    if (shift <= 0) {
        return v;
    }
    if (shift >= 62) {
        return 0;
    }
    const std::int64_t q = v >> shift;  // floor
    const std::int64_t rem = v - (q << shift);
    const std::int64_t half = std::int64_t{1} << (shift - 1);
    if (rem > half || (rem == half && (q & 1) != 0)) {
        return q + 1;
    }
    return q;
}

/// d * 2^k on integers; right shifts round half to even.
constexpr std::int64_t shift_rne(std::int64_t d, int k)
{
    return k >= 0 ? d * (std::int64_t{1} << k) : shift_right_rne(d, -k);
}

inline std::int32_t saturate(std::int64_t v, const LnsFormat& fmt)
{
    if (v > fmt.l_max()) {
        counters().saturations.fetch_add(1, std::memory_order_relaxed);
        return fmt.l_max();
    }
    if (v < fmt.l_min()) {
        counters().saturations.fetch_add(1, std::memory_order_relaxed);
        return fmt.l_min();
    }
    return static_cast<std::int32_t>(v);
}

// ---------------------------------------------------------------------------
// Construction and inspection

inline LnsScalar zero_value(const LnsFormat& fmt)
{
    return LnsScalar{fmt.l_min(), false, fmt.zero_mode == ZeroMode::ZeroFlag};
}

inline bool is_zero(const LnsScalar& v, const LnsFormat& fmt)
{
    if (fmt.zero_mode == ZeroMode::ZeroFlag) {
        return v.zero;
    }
    return v.log_mag == fmt.l_min() && !v.sign;
}

inline LnsScalar one_value() { return LnsScalar{0, false, false}; }

/// Checks every LnsScalar invariant for the given format.
bool is_valid(const LnsScalar& v, const LnsFormat& fmt);

LnsScalar quantize(double x, const LnsFormat& fmt);
double dequantize(const LnsScalar& v, const LnsFormat& fmt);

inline LnsScalar negate(const LnsScalar& v, const LnsFormat& fmt)
{
    if (is_zero(v, fmt)) {
        return v;
    }
    return LnsScalar{v.log_mag, !v.sign, false};
}

// ---------------------------------------------------------------------------
// Exact operations

inline LnsScalar lns_mul(const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt)
{
    if (fmt.zero_mode == ZeroMode::ZeroFlag && (a.zero || b.zero)) {
        return zero_value(fmt);
    }
    return LnsScalar{saturate(std::int64_t{a.log_mag} + b.log_mag, fmt), a.sign != b.sign, false};
}

LnsScalar lns_div(const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt);
LnsScalar lns_sqrt(const LnsScalar& a, const LnsFormat& fmt);

/// Total order consistent with the represented reals.
std::strong_ordering lns_compare(const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt);

inline bool lns_less(const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt)
{
    return lns_compare(a, b, fmt) < 0;
}

// ---------------------------------------------------------------------------
// Approximate addition
//
// `Delta` is any evaluator exposing
//   const LnsFormat& format() const;
//   int32_t plus(int32_t d) const;   // >= 0
//   int32_t minus(int32_t d) const;  // <= 0, d > 0
// with d the scaled distance between operand log-magnitudes.

template <class Delta>
void check_delta_format(const Delta& delta, const LnsFormat& fmt)
{
    if (delta.format().fractional_bits != fmt.fractional_bits || delta.format().d_max != fmt.d_max) {
        throw FormatMismatchError("addition table built for " + delta.format().describe() +
                                  " used with " + fmt.describe());
    }
}

/// Addition without the format check; callers validate once up front.
template <class Delta>
inline LnsScalar lns_add_unchecked(const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt,
                                   const Delta& delta)
{
    if (fmt.zero_mode == ZeroMode::ZeroFlag) {
        if (a.zero) {
            return b;
        }
        if (b.zero) {
            return a;
        }
    }
    const bool a_larger = a.log_mag >= b.log_mag;
    const std::int32_t hi = a_larger ? a.log_mag : b.log_mag;
    const std::int32_t d = a_larger ? a.log_mag - b.log_mag : b.log_mag - a.log_mag;
    const bool sign = a_larger ? a.sign : b.sign;
    if (a.sign == b.sign) {
        if (d > fmt.delta_domain_end()) {
            return LnsScalar{hi, sign, false};
        }
        return LnsScalar{saturate(std::int64_t{hi} + delta.plus(d), fmt), sign, false};
    }
    if (d == 0) {
        return zero_value(fmt);
    }
    if (d > fmt.delta_domain_end()) {
        return LnsScalar{hi, sign, false};
    }
    return LnsScalar{saturate(std::int64_t{hi} + delta.minus(d), fmt), sign, false};
}

template <class Delta>
LnsScalar lns_add(const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt, const Delta& delta)
{
    check_delta_format(delta, fmt);
    return lns_add_unchecked(a, b, fmt, delta);
}

/// Strict left-to-right fold with lns_add.
template <class Delta>
LnsScalar accumulate(std::span<const LnsScalar> values, const LnsFormat& fmt, const Delta& delta)
{
    if (values.empty()) {
        throw LnsError("accumulate: empty sequence");
    }
    check_delta_format(delta, fmt);
    LnsScalar acc = values.front();
    for (std::size_t i = 1; i < values.size(); ++i) {
        acc = lns_add_unchecked(acc, values[i], fmt, delta);
    }
    return acc;
}

// ---------------------------------------------------------------------------
// Bit patterns
//
// bit T+o-1: zero flag (ZeroFlag mode only)
// bit T:     sign
// bits T-1..0: two's-complement log-magnitude

std::uint32_t encode(const LnsScalar& v, const LnsFormat& fmt);
/// Non-canonical patterns are normalized and counted in decode_normalizations.
LnsScalar decode(std::uint32_t bits, const LnsFormat& fmt);

}  // namespace qaalns
