#include "qaalns/cost.hpp"
#include "qaalns/rng.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace qaalns {

namespace {

std::int64_t counted_saturate(std::int64_t v, const LnsFormat& fmt, OpCounts& ops)
{
    ops.compares += 2;
    return std::clamp<std::int64_t>(v, fmt.l_min(), fmt.l_max());
}

std::int32_t counted_eval(const PwlCurve& curve, std::int32_t d, OpCounts& ops)
{
    // upper_bound over bin starts 1..n-1; segment 0 always starts at 0
    std::size_t lo = 1;
    std::size_t hi = curve.segments.size();
    while (lo < hi) {
        const std::size_t mid = lo + (hi - lo) / 2;
        ++ops.compares;
        if (d < curve.segments[mid].bin_start) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    ++ops.table_lookups;
    const PwlSegment& s = curve.segments[lo - 1];
    std::int64_t v = s.offset;
    if (s.slope_sign != 0) {
        ++ops.shifts;
        ++ops.adds;
        const std::int64_t sh = shift_rne(d, s.slope_exponent);
        v = (s.slope_sign > 0 ? sh : -sh) + s.offset;
    }
    ++ops.compares;  // sign clamp
    return clamp_to_kind(v, curve.kind);
}

}  // namespace

void OpCounts::max_with(const OpCounts& o)
{
    adds = std::max(adds, o.adds);
    multiplies = std::max(multiplies, o.multiplies);
    multiply_width = std::max(multiply_width, o.multiply_width);
    shifts = std::max(shifts, o.shifts);
    compares = std::max(compares, o.compares);
    table_lookups = std::max(table_lookups, o.table_lookups);
    xors = std::max(xors, o.xors);
}

LnsScalar instrumented_lns_mac(const LnsScalar& acc, const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt,
                               const DeltaTable& table, OpCounts& ops)
{
    // multiply: one T-bit add of the logs, one XOR of the signs
    LnsScalar p;
    if (fmt.zero_mode == ZeroMode::ZeroFlag && (a.zero || b.zero)) {
        p = zero_value(fmt);
    } else {
        ++ops.adds;
        ++ops.xors;
        p = LnsScalar{static_cast<std::int32_t>(counted_saturate(std::int64_t{a.log_mag} + b.log_mag, fmt, ops)),
                      a.sign != b.sign, false};
    }

    if (fmt.zero_mode == ZeroMode::ZeroFlag) {
        if (acc.zero) {
            return p;
        }
        if (p.zero) {
            return acc;
        }
    }
    ++ops.compares;
    const bool acc_larger = acc.log_mag >= p.log_mag;
    const std::int32_t hi = acc_larger ? acc.log_mag : p.log_mag;
    ++ops.adds;
    const std::int32_t d = acc_larger ? acc.log_mag - p.log_mag : p.log_mag - acc.log_mag;
    const bool sign = acc_larger ? acc.sign : p.sign;
    ++ops.xors;
    const bool same = acc.sign == p.sign;
    if (!same) {
        ++ops.compares;
        if (d == 0) {
            return zero_value(fmt);
        }
    }
    ++ops.compares;
    if (d > fmt.delta_domain_end()) {
        return LnsScalar{hi, sign, false};
    }
    const std::int32_t delta = counted_eval(same ? table.plus_curve() : table.minus_curve(), d, ops);
    ++ops.adds;
    return LnsScalar{static_cast<std::int32_t>(counted_saturate(std::int64_t{hi} + delta, fmt, ops)), sign, false};
}

std::int64_t instrumented_int_mac(std::int64_t acc, std::int64_t a, std::int64_t b, int bits, OpCounts& ops)
{
    ++ops.multiplies;
    ops.multiply_width = std::max(ops.multiply_width, 2 * bits);
    const std::int64_t prod = a * b;
    ++ops.adds;
    return acc + prod;
}

CostReport profile_macs(const std::vector<int>& total_bits, std::size_t samples, std::uint64_t seed)
{
    CostReport report;
    for (int bw : total_bits) {
        const int t = bw - 2;
        CostRow row;
        row.total_bits = bw;
        row.format = LnsFormat::make(t, t - 6);
        const DeltaTable table = fit_uniform_table(row.format);
        Rng rng(seed);
        auto draw = [&] { return quantize(rng.normal(0.0, 1.0), row.format); };
        const std::int64_t imax = (std::int64_t{1} << (bw - 1)) - 1;
        for (std::size_t i = 0; i < samples; ++i) {
            const LnsScalar acc = draw();
            const LnsScalar a = draw();
            const LnsScalar b = draw();
            OpCounts lns;
            const LnsScalar got = instrumented_lns_mac(acc, a, b, row.format, table, lns);
            const LnsScalar want = lns_add(acc, lns_mul(a, b, row.format), row.format, table);
            row.mismatches += got == want ? 0 : 1;
            row.lns.max_with(lns);

            OpCounts in;
            const auto ia = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(2 * imax + 1))) - imax;
            const auto ib = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(2 * imax + 1))) - imax;
            instrumented_int_mac(0, ia, ib, bw, in);
            row.integer.max_with(in);
        }
        row.samples = samples;
        report.rows.push_back(row);
    }
    return report;
}

std::string CostReport::to_text() const
{
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof line, "%-5s %-14s | %-28s | %-20s\n", "bits", "lns format", "LNS MAC add/mul/shf/cmp/lut",
                  "INT MAC add/mul(width)");
    out << line;
    for (const CostRow& r : rows) {
        char fmt[32];
        std::snprintf(fmt, sizeof fmt, "T=%d F=%d", r.format.total_bits, r.format.fractional_bits);
        std::snprintf(line, sizeof line, "%-5d %-14s | %4llu %4llu %4llu %4llu %4llu       | %4llu %4llu(%d)\n",
                      r.total_bits, fmt, static_cast<unsigned long long>(r.lns.adds),
                      static_cast<unsigned long long>(r.lns.multiplies), static_cast<unsigned long long>(r.lns.shifts),
                      static_cast<unsigned long long>(r.lns.compares),
                      static_cast<unsigned long long>(r.lns.table_lookups),
                      static_cast<unsigned long long>(r.integer.adds),
                      static_cast<unsigned long long>(r.integer.multiplies), r.integer.multiply_width);
        out << line;
    }
    return out.str();
}

std::string CostReport::to_csv() const
{
    std::ostringstream out;
    out << "total_bits,T,F,lns_adds,lns_multiplies,lns_shifts,lns_compares,lns_lookups,lns_xors,"
           "int_adds,int_multiplies,int_multiply_width,samples,mismatches\n";
    for (const CostRow& r : rows) {
        out << r.total_bits << ',' << r.format.total_bits << ',' << r.format.fractional_bits << ',' << r.lns.adds
            << ',' << r.lns.multiplies << ',' << r.lns.shifts << ',' << r.lns.compares << ',' << r.lns.table_lookups
            << ',' << r.lns.xors << ',' << r.integer.adds << ',' << r.integer.multiplies << ','
            << r.integer.multiply_width << ',' << r.samples << ',' << r.mismatches << '\n';
    }
    return out.str();
}

}  // namespace qaalns
