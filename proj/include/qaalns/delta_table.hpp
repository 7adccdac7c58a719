#pragma once

// Piecewise-linear approximations with signed power-of-two slopes.
//
// Each segment evaluates  sign * (d << k) + offset  (right shifts round half
// to even), so an evaluation costs one shift and one add after the bin lookup.

#include "qaalns/lns.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace qaalns {

class TableParseError : public LnsError
{
public:
    using LnsError::LnsError;
};

class TableInvariantError : public LnsError
{
public:
    using LnsError::LnsError;
};

class FingerprintMismatchError : public FormatMismatchError
{
public:
    using FormatMismatchError::FormatMismatchError;
};

enum class CurveKind : std::uint8_t
{
    Plus,   // log2(1 + 2^-d), clamped to >= 0
    Minus,  // log2(1 - 2^-d), clamped to <= 0
    Pow2    // top-anchored 2^x used by the softmax exponential, clamped to >= 0
};

struct SlopeRange
{
    int lo = -8;
    int hi = 1;

    friend bool operator==(const SlopeRange&, const SlopeRange&) = default;
};

/// Default slope exponents for the addition curves: [-(F+2), 1].
inline SlopeRange default_slope_range(const LnsFormat& fmt)
{
    return SlopeRange{-(fmt.fractional_bits + 2), 1};
}

struct PwlSegment
{
    std::int32_t bin_start = 0;
    int slope_sign = 0;  // -1, 0 or +1
    int slope_exponent = 0;
    std::int32_t offset = 0;

    std::int64_t linear(std::int32_t d) const
    {
        if (slope_sign == 0) {
            return offset;
        }
        const std::int64_t s = shift_rne(d, slope_exponent);
        return (slope_sign > 0 ? s : -s) + offset;
    }

    friend bool operator==(const PwlSegment&, const PwlSegment&) = default;
};

inline std::int32_t clamp_to_kind(std::int64_t v, CurveKind kind)
{
    if (kind == CurveKind::Minus) {
        v = v > 0 ? 0 : v;
    } else {
        v = v < 0 ? 0 : v;
    }
    constexpr std::int64_t lim = std::int64_t{1} << 30;
    return static_cast<std::int32_t>(v > lim ? lim : (v < -lim ? -lim : v));
}

struct PwlCurve
{
    CurveKind kind = CurveKind::Plus;
    std::int32_t domain_end = 0;  // inclusive, scaled
    std::vector<PwlSegment> segments;

    /// Binary search over bin starts. Throws on negative d; 0 beyond the domain.
    std::int32_t eval(std::int32_t d) const;

    std::size_t locate(std::int32_t d) const;

    friend bool operator==(const PwlCurve&, const PwlCurve&) = default;
};

/// True curve sampled on the integer grid d = 0..domain_end, scaled by 2^F.
class CurveTarget
{
public:
    static CurveTarget delta_plus(const LnsFormat& fmt);
    static CurveTarget delta_minus(const LnsFormat& fmt);
    /// f(d) = 2^((top - d) / 2^F) * 2^F, sampled until it falls below half an ulp.
    static CurveTarget pow2(const LnsFormat& fmt, std::int32_t top);
    /// Arbitrary target given directly as samples; used by tests.
    static CurveTarget from_samples(CurveKind kind, std::vector<double> samples);

    CurveKind kind() const { return kind_; }
    std::int32_t domain_end() const { return static_cast<std::int32_t>(values_.size()) - 1; }
    /// Scaled target value; -infinity for Delta- at d = 0.
    double at(std::int32_t d) const { return values_[static_cast<std::size_t>(d)]; }
    std::span<const double> values() const { return values_; }

private:
    CurveKind kind_ = CurveKind::Plus;
    std::vector<double> values_;
};

struct SegmentFit
{
    int slope_sign = 0;
    int slope_exponent = 0;
    std::int32_t offset = 0;
    double sse = 0.0;  // scaled units squared
};

/// Best signed power-of-two slope and quantized offset on [begin, end].
/// Non-finite target samples are skipped.
SegmentFit refit_segment(const CurveTarget& target, std::int32_t begin, std::int32_t end,
                         const LnsFormat& fmt, SlopeRange slopes);

/// Refits segment `index` of `curve` in place against `target`.
void refit_segment_at(PwlCurve& curve, std::size_t index, const CurveTarget& target,
                      const LnsFormat& fmt, SlopeRange slopes);

/// Uniform bins over [0, target.domain_end()], every segment refit.
PwlCurve fit_uniform(const CurveTarget& target, std::size_t n_segments, const LnsFormat& fmt,
                     SlopeRange slopes);

struct TableMetadata
{
    std::uint64_t seed = 0;
    std::string qa_loss;  // decimal string, empty when never evaluated
    std::string created_by;
    SlopeRange slopes;

    friend bool operator==(const TableMetadata&, const TableMetadata&) = default;
};

class DeltaTable
{
public:
    DeltaTable() = default;
    DeltaTable(const LnsFormat& fmt, PwlCurve plus, PwlCurve minus, TableMetadata meta);

    const LnsFormat& format() const { return format_; }
    const PwlCurve& plus_curve() const { return plus_; }
    const PwlCurve& minus_curve() const { return minus_; }
    PwlCurve& plus_curve() { return plus_; }
    PwlCurve& minus_curve() { return minus_; }
    const TableMetadata& metadata() const { return meta_; }
    TableMetadata& metadata() { return meta_; }

    std::int32_t plus(std::int32_t d) const { return plus_.eval(d); }
    std::int32_t minus(std::int32_t d) const { return minus_.eval(d); }

    /// Throws TableInvariantError describing the first violated invariant.
    void validate() const;

    friend bool operator==(const DeltaTable&, const DeltaTable&) = default;

private:
    LnsFormat format_;
    PwlCurve plus_;
    PwlCurve minus_;
    TableMetadata meta_;
};

/// The non quantization-aware baseline: uniform bins, per-segment MSE fit.
DeltaTable fit_uniform_table(const LnsFormat& fmt, std::size_t n_segments = 16);
DeltaTable fit_uniform_table(const LnsFormat& fmt, std::size_t n_segments, SlopeRange slopes);

/// Re-expresses a table built for one fractional width in another (bins and
/// offsets rescaled by 2^(F_new - F_old), slopes unchanged). Offsets that were
/// on the coarse grid stay there.
DeltaTable rescale_table(const DeltaTable& table, const LnsFormat& target);

std::string table_to_json(const DeltaTable& table);
DeltaTable table_from_json(const std::string& text);
void save_table(const DeltaTable& table, const std::filesystem::path& path);
DeltaTable load_table(const std::filesystem::path& path);
/// Loads and checks the (T, F, d_max) fingerprint against `expected`.
DeltaTable load_table(const std::filesystem::path& path, const LnsFormat& expected);

/// Dense lookup of an evaluator over [0, d_max * 2^F]; bit-identical to the
/// evaluator it was built from.
class DeltaLut
{
public:
    template <class Delta>
    explicit DeltaLut(const Delta& delta) : format_(delta.format())
    {
        const std::int32_t n = format_.delta_domain_end();
        plus_.resize(static_cast<std::size_t>(n) + 1);
        minus_.resize(static_cast<std::size_t>(n) + 1);
        for (std::int32_t d = 0; d <= n; ++d) {
            plus_[static_cast<std::size_t>(d)] = delta.plus(d);
            minus_[static_cast<std::size_t>(d)] = d == 0 ? 0 : delta.minus(d);
        }
    }

    const LnsFormat& format() const { return format_; }
    std::int32_t plus(std::int32_t d) const
    {
        return d < static_cast<std::int32_t>(plus_.size()) ? plus_[static_cast<std::size_t>(d)] : 0;
    }
    std::int32_t minus(std::int32_t d) const
    {
        return d < static_cast<std::int32_t>(minus_.size()) ? minus_[static_cast<std::size_t>(d)] : 0;
    }

private:
    LnsFormat format_;
    std::vector<std::int32_t> plus_;
    std::vector<std::int32_t> minus_;
};

}  // namespace qaalns
