#pragma once

// Primitive-operation counts for one multiply-accumulate, measured by running
// instrumented datapaths. A qualitative proxy for hardware cost only: wiring,
// registers and gate sizes are not modeled.

#include "qaalns/delta_table.hpp"

#include <string>
#include <vector>

namespace qaalns {

struct OpCounts
{
    std::uint64_t adds = 0;  // integer add or subtract
    std::uint64_t multiplies = 0;
    int multiply_width = 0;  // widest multiplier input+output width seen, bits
    std::uint64_t shifts = 0;
    std::uint64_t compares = 0;
    std::uint64_t table_lookups = 0;  // bin selections
    std::uint64_t xors = 0;

    void max_with(const OpCounts& o);
    friend bool operator==(const OpCounts&, const OpCounts&) = default;
};

/// acc + a * b through the bit-true LNS path with `table`; tallies into `ops`.
LnsScalar instrumented_lns_mac(const LnsScalar& acc, const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt,
                               const DeltaTable& table, OpCounts& ops);

/// acc + a * b on `bits`-wide two's-complement inputs with a 2*bits product
/// and accumulator.
std::int64_t instrumented_int_mac(std::int64_t acc, std::int64_t a, std::int64_t b, int bits, OpCounts& ops);

struct CostRow
{
    int total_bits = 0;  // T + 2 overhead flags
    LnsFormat format;
    OpCounts lns;  // worst case over the sampled operands
    OpCounts integer;
    std::size_t samples = 0;
    std::size_t mismatches = 0;  // instrumented LNS MAC vs library result
};

struct CostReport
{
    std::vector<CostRow> rows;

    std::string to_text() const;
    std::string to_csv() const;
};

/// Each entry is a total bitwidth T + 2; the LNS format uses F = T - 6 and a
/// uniform 16-segment table.
CostReport profile_macs(const std::vector<int>& total_bits, std::size_t samples = 1000, std::uint64_t seed = 1);

}  // namespace qaalns
