#pragma once

// Exact correction terms: log2(1 +- 2^-d) in double precision, rounded half
// to even onto the 2^-F grid. Adding with this evaluator leaves only
// quantization error.

#include "qaalns/lns.hpp"

namespace qaalns {

class ExactDelta
{
public:
    explicit ExactDelta(const LnsFormat& fmt) : format_(fmt) {}

    const LnsFormat& format() const { return format_; }
    std::int32_t plus(std::int32_t d) const;
    /// d = 0 is singular; returns a value that saturates any sum to l_min.
    std::int32_t minus(std::int32_t d) const;

private:
    LnsFormat format_;
};

LnsScalar exact_add(const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt);

}  // namespace qaalns
