#include "qaalns/annealer.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

namespace qaalns {

SampleSet SampleSet::generate(const LnsFormat& fmt, std::size_t n, std::uint64_t seed, double mean, double variance)
{
    if (n < 1) {
        throw LnsError("SampleSet: need at least one sample");
    }
    if (!(variance > 0.0)) {
        throw LnsError("SampleSet: variance must be positive");
    }
    Rng rng(seed);
    const double sd = std::sqrt(variance);
    std::vector<double> x(n);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        x[i] = rng.normal(mean, sd);
        y[i] = rng.normal(mean, sd);
    }
    return from_pairs(fmt, x, y);
}

SampleSet SampleSet::from_pairs(const LnsFormat& fmt, const std::vector<double>& x, const std::vector<double>& y)
{
    if (x.size() != y.size() || x.empty()) {
        throw LnsError("SampleSet: operand vectors must be non-empty and of equal length");
    }
    SampleSet s;
    s.format = fmt;
    const std::size_t n = x.size();
    s.x.resize(n);
    s.y.resize(n);
    s.qx.resize(n);
    s.qy.resize(n);
    s.ideal.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        s.qx[i] = quantize(x[i], fmt);
        s.qy[i] = quantize(y[i], fmt);
        s.x[i] = dequantize(s.qx[i], fmt);
        s.y[i] = dequantize(s.qy[i], fmt);
        s.ideal[i] = dequantize(quantize(s.x[i] + s.y[i], fmt), fmt);
    }
    return s;
}

double qa_loss(const DeltaTable& table, const SampleSet& samples)
{
    const LnsFormat& fmt = samples.format;
    check_delta_format(table, fmt);
    double sum = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double approx = dequantize(lns_add_unchecked(samples.qx[i], samples.qy[i], fmt, table), fmt);
        const double e = samples.ideal[i] - approx;
        sum += e * e;
    }
    return sum / static_cast<double>(samples.size());
}

double curve_mse(const PwlCurve& curve, const LnsFormat& fmt, std::span<const std::int32_t> grid)
{
    const CurveTarget target = curve.kind == CurveKind::Plus ? CurveTarget::delta_plus(fmt)
                                                             : CurveTarget::delta_minus(fmt);
    double sum = 0.0;
    std::size_t count = 0;
    for (std::int32_t d : grid) {
        if (d < 0 || d > target.domain_end()) {
            throw LnsError("curve_mse: grid point outside the table domain");
        }
        const double truth = target.at(d);
        if (!std::isfinite(truth)) {
            continue;
        }
        const double e = (truth - curve.eval(d)) / fmt.scale();
        sum += e * e;
        ++count;
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

double curve_mse_loss(const DeltaTable& table, std::span<const std::int32_t> grid)
{
    const LnsFormat& fmt = table.format();
    const CurveTarget plus = CurveTarget::delta_plus(fmt);
    const CurveTarget minus = CurveTarget::delta_minus(fmt);
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto* pair : {&plus, &minus}) {
        const PwlCurve& curve = pair == &plus ? table.plus_curve() : table.minus_curve();
        for (std::int32_t d : grid) {
            if (d < 0 || d > pair->domain_end()) {
                throw LnsError("curve_mse_loss: grid point outside the table domain");
            }
            const double truth = pair->at(d);
            if (!std::isfinite(truth)) {
                continue;
            }
            const double e = (truth - curve.eval(d)) / fmt.scale();
            sum += e * e;
            ++count;
        }
    }
    return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

std::vector<std::int32_t> dense_grid(const LnsFormat& fmt)
{
    std::vector<std::int32_t> grid(static_cast<std::size_t>(fmt.delta_domain_end()) + 1);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        grid[i] = static_cast<std::int32_t>(i);
    }
    return grid;
}

// ---------------------------------------------------------------------------

NeighborGenerator::NeighborGenerator(const LnsFormat& fmt, SlopeRange slopes)
    : format_(fmt), slopes_(slopes), plus_(CurveTarget::delta_plus(fmt)), minus_(CurveTarget::delta_minus(fmt))
{
}

namespace {

// Open interval (lo, hi) for bin i; the last bin may reach the domain end.
std::pair<std::int32_t, std::int32_t> bin_interval(const PwlCurve& c, std::size_t i)
{
    const std::int32_t lo = c.segments[i - 1].bin_start;
    const std::int32_t hi = i + 1 < c.segments.size() ? c.segments[i + 1].bin_start : c.domain_end + 1;
    return {lo, hi};
}

bool movable(const PwlCurve& c, std::size_t i)
{
    const auto [lo, hi] = bin_interval(c, i);
    return hi - lo >= 2;
}

}  // namespace

DeltaTable NeighborGenerator::operator()(const DeltaTable& table, Rng& rng) const
{
    check_delta_format(table, format_);
    DeltaTable out = table;
    const bool pick_plus = rng.below(2) == 0;
    for (int attempt_curve = 0; attempt_curve < 2; ++attempt_curve) {
        const bool use_plus = (attempt_curve == 0) == pick_plus;
        PwlCurve& curve = use_plus ? out.plus_curve() : out.minus_curve();
        const std::size_t n = curve.segments.size();
        if (n < 2) {
            continue;
        }
        std::size_t index = 0;
        for (int tries = 0; tries < 64 && index == 0; ++tries) {
            const std::size_t i = 1 + static_cast<std::size_t>(rng.below(n - 1));
            if (movable(curve, i)) {
                index = i;
            }
        }
        for (std::size_t i = 1; i < n && index == 0; ++i) {
            if (movable(curve, i)) {
                index = i;
            }
        }
        if (index == 0) {
            continue;
        }
        const auto [lo, hi] = bin_interval(curve, index);
        curve.segments[index].bin_start =
            lo + 1 + static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(hi - lo - 1)));
        const CurveTarget& target = use_plus ? plus_ : minus_;
        refit_segment_at(curve, index - 1, target, format_, slopes_);
        refit_segment_at(curve, index, target, format_, slopes_);
        return out;
    }
    return out;
}

DeltaTable neighbor(const DeltaTable& table, Rng& rng)
{
    return NeighborGenerator(table.format(), table.metadata().slopes)(table, rng);
}

double cosine_temperature(double t0, std::uint64_t t, std::uint64_t t_max)
{
    if (t >= t_max) {
        return 0.0;
    }
    return t0 * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(t_max)));
}

bool accept_move(double delta_loss, double temperature, double u)
{
    if (delta_loss <= 0.0) {
        return true;
    }
    if (!(temperature > 0.0)) {
        return false;
    }
    return u < std::exp(-delta_loss / temperature);
}

void AnnealConfig::validate() const
{
    LnsFormat::make(format.total_bits, format.fractional_bits, format.zero_mode, format.d_max);
    if (iterations < 1) {
        throw LnsError("anneal: iterations must be >= 1");
    }
    if (sample_count < 1) {
        throw LnsError("anneal: sample count must be >= 1");
    }
    if (segments < 1) {
        throw LnsError("anneal: segment count must be >= 1");
    }
    if (!(sample_variance > 0.0)) {
        throw LnsError("anneal: sample variance must be positive");
    }
    if (slopes && slopes->lo > slopes->hi) {
        throw LnsError("anneal: empty slope exponent range");
    }
}

std::string format_loss(double loss)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", loss);
    return buf;
}

AnnealResult anneal(const AnnealConfig& config, const ProgressSink& progress)
{
    config.validate();
    const LnsFormat& fmt = config.format;
    const SlopeRange slopes = config.slopes.value_or(default_slope_range(fmt));
    const SampleSet samples =
        SampleSet::generate(fmt, config.sample_count, config.seed, config.sample_mean, config.sample_variance);
    const NeighborGenerator propose(fmt, slopes);
    // proposals draw from a stream separate from the sample generator
    Rng rng(config.seed ^ 0x9E3779B97F4A7C15ULL);

    DeltaTable current = fit_uniform_table(fmt, config.segments, slopes);
    double current_loss = qa_loss(current, samples);
    const double t0 = config.initial_temperature > 0.0 ? config.initial_temperature : 0.1 * current_loss;

    AnnealResult result;
    result.initial_loss = current_loss;
    result.best_loss = current_loss;
    result.table = current;
    result.best_history.reserve(config.iterations);

    for (std::uint64_t t = 0; t < config.iterations; ++t) {
        const double temperature = cosine_temperature(t0, t, config.iterations);
        DeltaTable candidate = propose(current, rng);
        const double candidate_loss = qa_loss(candidate, samples);
        const double u = rng.uniform01();
        if (accept_move(candidate_loss - current_loss, temperature, u)) {
            current = std::move(candidate);
            current_loss = candidate_loss;
            if (current_loss < result.best_loss) {
                result.best_loss = current_loss;
                result.table = current;
            }
        }
        result.best_history.push_back(result.best_loss);
        if (progress && config.progress_interval > 0 && (t + 1) % config.progress_interval == 0) {
            progress(AnnealProgress{t + 1, temperature, current_loss, result.best_loss});
        }
    }

    TableMetadata& meta = result.table.metadata();
    meta.seed = config.seed;
    meta.qa_loss = format_loss(result.best_loss);
    meta.slopes = slopes;
    meta.created_by = "anneal iterations=" + std::to_string(config.iterations) + " t0=" + format_loss(t0) +
                      " samples=" + std::to_string(config.sample_count) +
                      " variance=" + format_loss(config.sample_variance) +
                      " segments=" + std::to_string(config.segments);
    return result;
}

}  // namespace qaalns
