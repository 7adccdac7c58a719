#include "oracles.hpp"

#include <doctest.h>

using namespace qaalns;

TEST_SUITE("reference")
{
    TEST_CASE("exact correction terms agree with extended precision")
    {
        for (int F : {4, 5, 6, 8, 12}) {
            const LnsFormat fmt = LnsFormat::make(F + 8, F);
            const ExactDelta ex(fmt);
            const long double s = std::ldexp(1.0L, F);
            for (std::int32_t d = 0; d <= fmt.delta_domain_end(); ++d) {
                const long double x = d / s;
                REQUIRE(ex.plus(d) == std::llrint(std::log2(1.0L + std::exp2(-x)) * s));
                if (d > 0) {
                    REQUIRE(ex.minus(d) == std::llrint(std::log2(1.0L - std::exp2(-x)) * s));
                }
            }
            CHECK(ex.plus(0) == fmt.one());
            CHECK(ex.plus(fmt.delta_domain_end() + 1) == 0);
            CHECK(ex.minus(fmt.delta_domain_end() + 1) == 0);
            CHECK_THROWS_AS(ex.plus(-1), LnsError);
        }
    }

    TEST_CASE("examples")
    {
        const LnsFormat f12 = LnsFormat::make(12, 6);
        // 1 + 1 = 2 and 1 - 1 = 0 exactly
        CHECK(exact_add(one_value(), one_value(), f12) == quantize(2.0, f12));
        CHECK(is_zero(exact_add(one_value(), negate(one_value(), f12), f12), f12));
        // 2 + 2^-13 is lost beyond the table domain
        const LnsScalar tiny = quantize(std::exp2(-13.0), f12);
        CHECK(exact_add(quantize(2.0, f12), tiny, f12) == quantize(2.0, f12));
        // 4 - 1 = 3: 128 + round(64 log2 0.75) = 128 - 27
        CHECK(exact_add(quantize(4.0, f12), quantize(-1.0, f12), f12).log_mag == 101);
    }

    TEST_CASE("exhaustive T=8 F=4 sums are within one ulp of the rounded real sum")
    {
        const LnsFormat fmt = LnsFormat::make(8, 4);
        const auto all = oracle::all_values(fmt);
        std::size_t exact = 0;
        std::size_t total = 0;
        for (const LnsScalar& a : all) {
            for (const LnsScalar& b : all) {
                const LnsScalar r = exact_add(a, b, fmt);
                const long long want = oracle::rounded_sum_log(a, b, fmt);
                ++total;
                if (want == fmt.l_min() - 1LL) {
                    REQUIRE(is_zero(r, fmt));
                    ++exact;
                    continue;
                }
                REQUIRE(!is_zero(r, fmt));
                REQUIRE(std::llabs(r.log_mag - want) <= 1);
                const long double sum = oracle::value_of(a, fmt) + oracle::value_of(b, fmt);
                REQUIRE(r.sign == (sum < 0));
                exact += r.log_mag == want;
            }
        }
        // the single rounding of a one-term correction is almost always exact
        CHECK(static_cast<double>(exact) / static_cast<double>(total) > 0.9);
    }

    TEST_CASE("table and exact addition coincide beyond the table domain")
    {
        const LnsFormat fmt = LnsFormat::make(12, 6);
        const DeltaTable t = fit_uniform_table(fmt);
        for (std::int32_t hi = -200; hi <= 1000; hi += 37) {
            for (std::int32_t d = fmt.delta_domain_end() + 1; d < fmt.delta_domain_end() + 300; d += 7) {
                const LnsScalar a{hi, false, false};
                const LnsScalar b{std::max(hi - d, fmt.l_min()), true, false};
                REQUIRE(lns_add(a, b, fmt, t) == exact_add(a, b, fmt));
                REQUIRE(lns_add(a, b, fmt, t) == a);
            }
        }
    }
}
