#pragma once

// Quantization-aware optimization of addition tables by simulated annealing.
//
// The objective compares, in the linear domain, the table-based sum of two
// LNS operands against the correctly rounded LNS sum of the same operands.
// Proposals move one bin boundary and refit the two segments it separates.

#include "qaalns/delta_table.hpp"
#include "qaalns/rng.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace qaalns {

struct SampleSet
{
    LnsFormat format;
    std::vector<double> x;  // operands, already on the LNS grid
    std::vector<double> y;
    std::vector<LnsScalar> qx;
    std::vector<LnsScalar> qy;
    std::vector<double> ideal;  // dequantize(quantize(x + y))

    std::size_t size() const { return x.size(); }

    /// Operands drawn from N(mean, variance) and snapped to the LNS grid.
    static SampleSet generate(const LnsFormat& fmt, std::size_t n, std::uint64_t seed, double mean = 0.0,
                              double variance = 3.0);
    static SampleSet from_pairs(const LnsFormat& fmt, const std::vector<double>& x, const std::vector<double>& y);
};

/// Mean squared linear-domain error of table-based addition over the samples.
/// Per-sample errors are summed in index order.
double qa_loss(const DeltaTable& table, const SampleSet& samples);

/// Mean squared error (log2 units) of one curve against its true function on
/// the given scaled grid. Singular points of Delta- are skipped.
double curve_mse(const PwlCurve& curve, const LnsFormat& fmt, std::span<const std::int32_t> grid);
/// Both curves pooled.
double curve_mse_loss(const DeltaTable& table, std::span<const std::int32_t> grid);
/// Every integer point of the table domain.
std::vector<std::int32_t> dense_grid(const LnsFormat& fmt);

class NeighborGenerator
{
public:
    NeighborGenerator(const LnsFormat& fmt, SlopeRange slopes);

    /// Moves one random interior bin of one random curve and refits both
    /// adjacent segments. The input is left untouched.
    DeltaTable operator()(const DeltaTable& table, Rng& rng) const;

private:
    LnsFormat format_;
    SlopeRange slopes_;
    CurveTarget plus_;
    CurveTarget minus_;
};

DeltaTable neighbor(const DeltaTable& table, Rng& rng);

double cosine_temperature(double t0, std::uint64_t t, std::uint64_t t_max);

/// Metropolis rule; `u` is a uniform draw in [0, 1).
bool accept_move(double delta_loss, double temperature, double u);

struct AnnealConfig
{
    LnsFormat format;
    std::uint64_t iterations = 20000;
    double initial_temperature = 0.0;  // <= 0 selects 0.1 x the initial loss
    std::size_t sample_count = 10000;
    double sample_mean = 0.0;
    double sample_variance = 3.0;
    std::optional<SlopeRange> slopes;
    std::uint64_t seed = 1;
    std::size_t segments = 16;
    std::uint64_t progress_interval = 100;

    void validate() const;
};

struct AnnealProgress
{
    std::uint64_t iteration = 0;
    double temperature = 0.0;
    double current_loss = 0.0;
    double best_loss = 0.0;
};

struct AnnealResult
{
    DeltaTable table;
    double initial_loss = 0.0;
    double best_loss = 0.0;
    std::vector<double> best_history;  // best loss after each iteration
};

using ProgressSink = std::function<void(const AnnealProgress&)>;

AnnealResult anneal(const AnnealConfig& config, const ProgressSink& progress = {});

std::string format_loss(double loss);

}  // namespace qaalns
