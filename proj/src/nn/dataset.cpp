#include "qaalns/nn/dataset.hpp"
#include "qaalns/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace qaalns::nn {

namespace {

void shuffle_rows(Dataset& ds, Rng& rng)
{
    const std::size_t n = ds.size();
    const std::size_t f = ds.feature_count;
    for (std::size_t i = n; i > 1; --i) {
        const std::size_t j = rng.below(i);
        std::swap(ds.labels[i - 1], ds.labels[j]);
        std::swap_ranges(ds.features.begin() + static_cast<std::ptrdiff_t>((i - 1) * f),
                         ds.features.begin() + static_cast<std::ptrdiff_t>(i * f),
                         ds.features.begin() + static_cast<std::ptrdiff_t>(j * f));
    }
}

std::string format_double(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

std::vector<std::string> split_fields(const std::string& line)
{
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, ',')) {
        const auto b = cur.find_first_not_of(" \t");
        const auto e = cur.find_last_not_of(" \t\r");
        out.push_back(b == std::string::npos ? std::string() : cur.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

template <class T>
bool parse_field(const std::string& s, T& out)
{
    const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc() && r.ptr == s.data() + s.size() && !s.empty();
}

std::uint32_t read_be32(std::istream& in)
{
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw DatasetError("idx: truncated header");
    }
    return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) | b[3];
}

std::vector<std::uint32_t> read_idx_header(std::istream& in, const std::string& name)
{
    const std::uint32_t magic = read_be32(in);
    if ((magic >> 16) != 0 || ((magic >> 8) & 0xff) != 0x08) {
        throw DatasetError("idx: " + name + " is not an unsigned-byte IDX file");
    }
    std::vector<std::uint32_t> dims(magic & 0xff);
    for (auto& d : dims) {
        d = read_be32(in);
    }
    return dims;
}

}  // namespace

int Dataset::classes() const
{
    int m = -1;
    for (int l : labels) {
        m = std::max(m, l);
    }
    return m + 1;
}

Dataset make_two_moons(std::size_t n, double noise, std::uint64_t seed)
{
    if (n < 2) {
        throw DatasetError("two-moons needs at least 2 samples");
    }
    Dataset ds;
    ds.feature_count = 2;
    const std::size_t n_out = n / 2;
    const std::size_t n_in = n - n_out;
    auto lin = [](std::size_t i, std::size_t count) {
        return count < 2 ? 0.0 : std::numbers::pi * static_cast<double>(i) / static_cast<double>(count - 1);
    };
    for (std::size_t i = 0; i < n_out; ++i) {
        ds.features.push_back(std::cos(lin(i, n_out)));
        ds.features.push_back(std::sin(lin(i, n_out)));
        ds.labels.push_back(0);
    }
    for (std::size_t i = 0; i < n_in; ++i) {
        ds.features.push_back(1.0 - std::cos(lin(i, n_in)));
        ds.features.push_back(1.0 - std::sin(lin(i, n_in)) - 0.5);
        ds.labels.push_back(1);
    }
    Rng rng(seed);
    if (noise > 0.0) {
        for (double& v : ds.features) {
            v += rng.normal(0.0, noise);
        }
    }
    shuffle_rows(ds, rng);
    return ds;
}

Dataset make_blobs(std::size_t n, int centers, double noise, std::uint64_t seed)
{
    if (centers < 2 || n < static_cast<std::size_t>(centers)) {
        throw DatasetError("blobs needs at least 2 centers and one sample per center");
    }
    Dataset ds;
    ds.feature_count = 2;
    Rng rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
        const int c = static_cast<int>(i % static_cast<std::size_t>(centers));
        const double angle = 2.0 * std::numbers::pi * c / centers;
        ds.features.push_back(3.0 * std::cos(angle) + (noise > 0.0 ? rng.normal(0.0, noise) : 0.0));
        ds.features.push_back(3.0 * std::sin(angle) + (noise > 0.0 ? rng.normal(0.0, noise) : 0.0));
        ds.labels.push_back(c);
    }
    shuffle_rows(ds, rng);
    return ds;
}

void minmax_scale(Dataset& ds)
{
    const std::size_t f = ds.feature_count;
    for (std::size_t j = 0; j < f; ++j) {
        double lo = INFINITY;
        double hi = -INFINITY;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            lo = std::min(lo, ds.features[i * f + j]);
            hi = std::max(hi, ds.features[i * f + j]);
        }
        for (std::size_t i = 0; i < ds.size(); ++i) {
            double& v = ds.features[i * f + j];
            v = hi > lo ? 2.0 * (v - lo) / (hi - lo) - 1.0 : 0.0;
        }
    }
}

std::pair<Dataset, Dataset> split(const Dataset& ds, double test_fraction, std::uint64_t seed)
{
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
        throw DatasetError("test fraction must lie in [0, 1)");
    }
    Dataset all = ds;
    Rng rng(seed);
    shuffle_rows(all, rng);
    const std::size_t n_test = static_cast<std::size_t>(std::nearbyint(static_cast<double>(ds.size()) * test_fraction));
    const std::size_t n_train = ds.size() - n_test;
    const std::size_t f = ds.feature_count;
    Dataset train;
    Dataset test;
    train.feature_count = test.feature_count = f;
    train.labels.assign(all.labels.begin(), all.labels.begin() + static_cast<std::ptrdiff_t>(n_train));
    test.labels.assign(all.labels.begin() + static_cast<std::ptrdiff_t>(n_train), all.labels.end());
    train.features.assign(all.features.begin(), all.features.begin() + static_cast<std::ptrdiff_t>(n_train * f));
    test.features.assign(all.features.begin() + static_cast<std::ptrdiff_t>(n_train * f), all.features.end());
    return {std::move(train), std::move(test)};
}

void write_csv(const Dataset& ds, const std::filesystem::path& path)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw DatasetError("cannot write " + path.string());
    }
    out << "label";
    for (std::size_t j = 0; j < ds.feature_count; ++j) {
        out << ",x" << j;
    }
    out << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << ds.labels[i];
        for (std::size_t j = 0; j < ds.feature_count; ++j) {
            out << ',' << format_double(ds.row(i)[j]);
        }
        out << '\n';
    }
    if (!out) {
        throw DatasetError("write failed: " + path.string());
    }
}

Dataset read_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw DatasetError("cannot open " + path.string());
    }
    Dataset ds;
    std::string line;
    std::size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") {
            continue;
        }
        const std::vector<std::string> fields = split_fields(line);
        const std::string where = path.string() + ":" + std::to_string(line_no) + ": ";
        int label = 0;
        if (first && !parse_field(fields[0], label)) {
            first = false;
            ds.feature_count = fields.size() - 1;
            continue;
        }
        if (first) {
            ds.feature_count = fields.size() - 1;
            first = false;
        }
        if (fields.size() < 2 || fields.size() != ds.feature_count + 1) {
            throw DatasetError(where + "expected " + std::to_string(ds.feature_count + 1) + " columns, found " +
                               std::to_string(fields.size()));
        }
        if (!parse_field(fields[0], label) || label < 0) {
            throw DatasetError(where + "label '" + fields[0] + "' is not a non-negative integer");
        }
        ds.labels.push_back(label);
        for (std::size_t j = 1; j < fields.size(); ++j) {
            double v = 0.0;
            if (!parse_field(fields[j], v) || !std::isfinite(v)) {
                throw DatasetError(where + "feature '" + fields[j] + "' is not a finite number");
            }
            ds.features.push_back(v);
        }
    }
    if (ds.size() == 0) {
        throw DatasetError(path.string() + ": no data rows");
    }
    return ds;
}

Dataset read_idx(const std::filesystem::path& images, const std::filesystem::path& labels)
{
    std::ifstream img(images, std::ios::binary);
    std::ifstream lab(labels, std::ios::binary);
    if (!img || !lab) {
        throw DatasetError("cannot open idx files");
    }
    const auto idims = read_idx_header(img, images.string());
    const auto ldims = read_idx_header(lab, labels.string());
    if (idims.empty() || ldims.size() != 1 || idims[0] != ldims[0]) {
        throw DatasetError("idx: image and label counts disagree");
    }
    Dataset ds;
    ds.feature_count = 1;
    for (std::size_t i = 1; i < idims.size(); ++i) {
        ds.feature_count *= idims[i];
    }
    const std::size_t n = idims[0];
    std::vector<unsigned char> buf(n * ds.feature_count);
    std::vector<unsigned char> lbuf(n);
    if (!img.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())) ||
        !lab.read(reinterpret_cast<char*>(lbuf.data()), static_cast<std::streamsize>(lbuf.size()))) {
        throw DatasetError("idx: truncated data");
    }
    ds.features.reserve(buf.size());
    for (unsigned char b : buf) {
        ds.features.push_back(b / 127.5 - 1.0);
    }
    ds.labels.assign(lbuf.begin(), lbuf.end());
    return ds;
}

}  // namespace qaalns::nn
