#include "qaalns/reference.hpp"

#include <cmath>

namespace qaalns {

std::int32_t ExactDelta::plus(std::int32_t d) const
{
    if (d < 0) {
        throw LnsError("ExactDelta::plus: negative distance");
    }
    if (d > format_.delta_domain_end()) {
        return 0;
    }
    const double v = std::log2(1.0 + std::exp2(-d / format_.scale())) * format_.scale();
    return static_cast<std::int32_t>(std::nearbyint(v));
}

std::int32_t ExactDelta::minus(std::int32_t d) const
{
    if (d < 0) {
        throw LnsError("ExactDelta::minus: negative distance");
    }
    if (d == 0) {
        return -2 * format_.l_max() - 1;
    }
    if (d > format_.delta_domain_end()) {
        return 0;
    }
    const double v = std::log1p(-std::exp2(-d / format_.scale())) / std::log(2.0) * format_.scale();
    return static_cast<std::int32_t>(std::nearbyint(v));
}

LnsScalar exact_add(const LnsScalar& a, const LnsScalar& b, const LnsFormat& fmt)
{
    return lns_add_unchecked(a, b, fmt, ExactDelta(fmt));
}

}  // namespace qaalns
