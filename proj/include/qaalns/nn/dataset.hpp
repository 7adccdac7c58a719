#pragma once

#include "qaalns/lns.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace qaalns::nn {

class DatasetError : public LnsError
{
public:
    using LnsError::LnsError;
};

/// Row-major real features with integer labels.
struct Dataset
{
    std::size_t feature_count = 0;
    std::vector<double> features;
    std::vector<int> labels;

    std::size_t size() const { return labels.size(); }
    int classes() const;
    const double* row(std::size_t i) const { return features.data() + i * feature_count; }
};

/// Two interleaved half circles with Gaussian noise, shuffled by `seed`.
Dataset make_two_moons(std::size_t n, double noise, std::uint64_t seed);
/// `centers` isotropic Gaussian clusters placed on a circle of radius 3.
Dataset make_blobs(std::size_t n, int centers, double noise, std::uint64_t seed);

/// Per-feature affine map onto [-1, 1]; constant features map to 0.
void minmax_scale(Dataset& ds);

/// Shuffles with `seed` and moves the last round(n * test_fraction) rows to
/// the second element.
std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, std::uint64_t seed);

/// "label,x0,x1,..." with a header line and shortest round-trip numbers.
void write_csv(const Dataset& ds, const std::filesystem::path& path);
/// Header optional. Malformed rows throw DatasetError naming the line.
Dataset read_csv(const std::filesystem::path& path);

/// IDX image and label files (MNIST layout); pixels scaled to [-1, 1].
Dataset read_idx(const std::filesystem::path& images, const std::filesystem::path& labels);

}  // namespace qaalns::nn
