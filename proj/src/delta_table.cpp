#include "qaalns/delta_table.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

namespace qaalns {

std::size_t PwlCurve::locate(std::int32_t d) const
{
    auto it = std::upper_bound(segments.begin(), segments.end(), d,
                               [](std::int32_t v, const PwlSegment& s) { return v < s.bin_start; });
    return static_cast<std::size_t>(std::distance(segments.begin(), it)) - 1;
}

std::int32_t PwlCurve::eval(std::int32_t d) const
{
    if (d < 0) {
        throw LnsError("eval_delta: negative distance " + std::to_string(d));
    }
    if (d > domain_end || segments.empty()) {
        return 0;
    }
    return clamp_to_kind(segments[locate(d)].linear(d), kind);
}

// ---------------------------------------------------------------------------

CurveTarget CurveTarget::delta_plus(const LnsFormat& fmt)
{
    CurveTarget t;
    t.kind_ = CurveKind::Plus;
    const std::int32_t n = fmt.delta_domain_end();
    t.values_.resize(static_cast<std::size_t>(n) + 1);
    for (std::int32_t d = 0; d <= n; ++d) {
        t.values_[static_cast<std::size_t>(d)] = std::log2(1.0 + std::exp2(-d / fmt.scale())) * fmt.scale();
    }
    return t;
}

CurveTarget CurveTarget::delta_minus(const LnsFormat& fmt)
{
    CurveTarget t;
    t.kind_ = CurveKind::Minus;
    const std::int32_t n = fmt.delta_domain_end();
    t.values_.resize(static_cast<std::size_t>(n) + 1);
    t.values_[0] = -std::numeric_limits<double>::infinity();
    for (std::int32_t d = 1; d <= n; ++d) {
        // log1p/expm1 keep precision near d = 0
        t.values_[static_cast<std::size_t>(d)] =
            std::log1p(-std::exp2(-d / fmt.scale())) / std::log(2.0) * fmt.scale();
    }
    return t;
}

CurveTarget CurveTarget::pow2(const LnsFormat& fmt, std::int32_t top)
{
    CurveTarget t;
    t.kind_ = CurveKind::Pow2;
    const std::int32_t n = top + (fmt.fractional_bits + 1) * fmt.one();
    t.values_.resize(static_cast<std::size_t>(n) + 1);
    for (std::int32_t d = 0; d <= n; ++d) {
        t.values_[static_cast<std::size_t>(d)] = std::exp2((top - d) / fmt.scale()) * fmt.scale();
    }
    return t;
}

CurveTarget CurveTarget::from_samples(CurveKind kind, std::vector<double> samples)
{
    if (samples.empty()) {
        throw LnsError("curve target needs at least one sample");
    }
    CurveTarget t;
    t.kind_ = kind;
    t.values_ = std::move(samples);
    return t;
}

// ---------------------------------------------------------------------------

namespace {

// Zero slope first, then shallower exponents, negative sign before positive.
std::vector<std::pair<int, int>> slope_candidates(SlopeRange slopes)
{
    std::vector<std::pair<int, int>> out{{0, 0}};
    const int reach = std::max(std::abs(slopes.lo), std::abs(slopes.hi));
    auto push = [&](int k) {
        if (k >= slopes.lo && k <= slopes.hi) {
            out.emplace_back(-1, k);
            out.emplace_back(+1, k);
        }
    };
    push(0);
    for (int j = 1; j <= reach; ++j) {
        push(-j);
        push(j);
    }
    return out;
}

}  // namespace

SegmentFit refit_segment(const CurveTarget& target, std::int32_t begin, std::int32_t end,
                         const LnsFormat& fmt, SlopeRange slopes)
{
    if (begin > end || begin < 0 || end > target.domain_end()) {
        throw LnsError("refit_segment: empty or out-of-range segment [" + std::to_string(begin) + ", " +
                       std::to_string(end) + "]");
    }
    std::int32_t first = begin;
    while (first <= end && !std::isfinite(target.at(first))) {
        ++first;
    }
    if (first > end) {
        // only the singular point of Delta-; pin the most negative offset
        return SegmentFit{0, 0, target.kind() == CurveKind::Minus ? fmt.l_min() : 0, 0.0};
    }
    const double count = static_cast<double>(end - first + 1);

    SegmentFit best;
    best.sse = std::numeric_limits<double>::infinity();
    for (const auto& [sign, k] : slope_candidates(slopes)) {
        const PwlSegment probe{begin, sign, sign == 0 ? 0 : k, 0};
        double resid = 0.0;
        for (std::int32_t d = first; d <= end; ++d) {
            resid += target.at(d) - static_cast<double>(probe.linear(d));
        }
        double o = std::nearbyint(resid / count);
        o = std::clamp(o, static_cast<double>(fmt.l_min()), static_cast<double>(fmt.l_max()));
        const PwlSegment seg{begin, sign, probe.slope_exponent, static_cast<std::int32_t>(o)};
        double sse = 0.0;
        for (std::int32_t d = first; d <= end; ++d) {
            const double e = target.at(d) - clamp_to_kind(seg.linear(d), target.kind());
            sse += e * e;
        }
        if (sse < best.sse) {
            best = SegmentFit{seg.slope_sign, seg.slope_exponent, seg.offset, sse};
        }
    }
    return best;
}

void refit_segment_at(PwlCurve& curve, std::size_t index, const CurveTarget& target, const LnsFormat& fmt,
                      SlopeRange slopes)
{
    const std::int32_t begin = curve.segments[index].bin_start;
    const std::int32_t end =
        index + 1 < curve.segments.size() ? curve.segments[index + 1].bin_start - 1 : curve.domain_end;
    const SegmentFit fit = refit_segment(target, begin, end, fmt, slopes);
    curve.segments[index] = PwlSegment{begin, fit.slope_sign, fit.slope_exponent, fit.offset};
}

PwlCurve fit_uniform(const CurveTarget& target, std::size_t n_segments, const LnsFormat& fmt, SlopeRange slopes)
{
    const std::int64_t points = std::int64_t{target.domain_end()} + 1;
    if (n_segments < 1) {
        throw LnsError("fit_uniform: need at least one segment");
    }
    if (target.domain_end() < 1) {
        throw LnsError("fit_uniform: empty domain");
    }
    if (static_cast<std::int64_t>(n_segments) > points) {
        throw LnsError("fit_uniform: more segments than grid points");
    }
    PwlCurve curve;
    curve.kind = target.kind();
    curve.domain_end = target.domain_end();
    curve.segments.resize(n_segments);
    for (std::size_t i = 0; i < n_segments; ++i) {
        curve.segments[i].bin_start =
            static_cast<std::int32_t>(static_cast<std::int64_t>(i) * points / static_cast<std::int64_t>(n_segments));
    }
    for (std::size_t i = 0; i < n_segments; ++i) {
        refit_segment_at(curve, i, target, fmt, slopes);
    }
    return curve;
}

// ---------------------------------------------------------------------------

DeltaTable::DeltaTable(const LnsFormat& fmt, PwlCurve plus, PwlCurve minus, TableMetadata meta)
    : format_(fmt), plus_(std::move(plus)), minus_(std::move(minus)), meta_(std::move(meta))
{
    format_.zero_mode = ZeroMode::ZeroFlag;  // not part of the fingerprint
}

namespace {

void validate_curve(const PwlCurve& c, const char* name, CurveKind kind, const LnsFormat& fmt, SlopeRange slopes)
{
    const std::string where = std::string(name) + " curve: ";
    if (c.kind != kind) {
        throw TableInvariantError(where + "wrong curve kind");
    }
    if (c.segments.empty()) {
        throw TableInvariantError(where + "no segments");
    }
    if (c.domain_end != fmt.delta_domain_end()) {
        throw TableInvariantError(where + "domain does not cover [0, d_max * 2^F]");
    }
    if (c.segments.front().bin_start != 0) {
        throw TableInvariantError(where + "first bin must start at 0");
    }
    for (std::size_t i = 0; i < c.segments.size(); ++i) {
        const PwlSegment& s = c.segments[i];
        if (i > 0 && s.bin_start <= c.segments[i - 1].bin_start) {
            throw TableInvariantError(where + "bins not strictly increasing at segment " + std::to_string(i));
        }
        if (s.bin_start > c.domain_end) {
            throw TableInvariantError(where + "bin beyond domain at segment " + std::to_string(i));
        }
        if (s.slope_sign < -1 || s.slope_sign > 1) {
            throw TableInvariantError(where + "slope_sign must be -1, 0 or 1");
        }
        if (s.slope_sign != 0 && (s.slope_exponent < slopes.lo || s.slope_exponent > slopes.hi)) {
            throw TableInvariantError(where + "slope exponent outside [" + std::to_string(slopes.lo) + ", " +
                                      std::to_string(slopes.hi) + "]");
        }
        if (s.offset < fmt.l_min() || s.offset > fmt.l_max()) {
            throw TableInvariantError(where + "offset outside the log-magnitude range");
        }
    }
}

}  // namespace

void DeltaTable::validate() const
{
    LnsFormat::make(format_.total_bits, format_.fractional_bits, format_.zero_mode, format_.d_max);
    if (meta_.slopes.lo > meta_.slopes.hi) {
        throw TableInvariantError("empty slope exponent range");
    }
    validate_curve(plus_, "plus", CurveKind::Plus, format_, meta_.slopes);
    validate_curve(minus_, "minus", CurveKind::Minus, format_, meta_.slopes);
}

DeltaTable fit_uniform_table(const LnsFormat& fmt, std::size_t n_segments)
{
    return fit_uniform_table(fmt, n_segments, default_slope_range(fmt));
}

DeltaTable fit_uniform_table(const LnsFormat& fmt, std::size_t n_segments, SlopeRange slopes)
{
    TableMetadata meta;
    meta.created_by = "fit_uniform segments=" + std::to_string(n_segments);
    meta.slopes = slopes;
    return DeltaTable(fmt, fit_uniform(CurveTarget::delta_plus(fmt), n_segments, fmt, slopes),
                      fit_uniform(CurveTarget::delta_minus(fmt), n_segments, fmt, slopes), meta);
}

DeltaTable rescale_table(const DeltaTable& table, const LnsFormat& target)
{
    const LnsFormat& src = table.format();
    if (src.d_max != target.d_max) {
        throw FormatMismatchError("rescale_table: d_max differs");
    }
    const int shift = target.fractional_bits - src.fractional_bits;
    auto rescale_curve = [&](const PwlCurve& c) {
        PwlCurve out = c;
        out.domain_end = target.delta_domain_end();
        for (PwlSegment& s : out.segments) {
            s.bin_start = static_cast<std::int32_t>(shift_rne(s.bin_start, shift));
            s.offset = static_cast<std::int32_t>(
                std::clamp<std::int64_t>(shift_rne(s.offset, shift), target.l_min(), target.l_max()));
        }
        return out;
    };
    TableMetadata meta = table.metadata();
    meta.created_by += " | rescaled " + src.describe() + " -> " + target.describe();
    DeltaTable out(target, rescale_curve(table.plus_curve()), rescale_curve(table.minus_curve()), meta);
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// JSON

namespace {

using ojson = nlohmann::ordered_json;

std::int64_t read_int(const ojson& obj, const char* key)
{
    if (!obj.is_object() || !obj.contains(key)) {
        throw TableParseError(std::string("missing field '") + key + "'");
    }
    const ojson& v = obj.at(key);
    if (v.is_number_integer()) {
        return v.get<std::int64_t>();
    }
    if (v.is_number_float()) {
        throw TableInvariantError(std::string("field '") + key + "' is off the integer grid");
    }
    throw TableParseError(std::string("field '") + key + "' must be an integer");
}

std::int32_t read_i32(const ojson& obj, const char* key)
{
    const std::int64_t v = read_int(obj, key);
    if (v < std::numeric_limits<std::int32_t>::min() || v > std::numeric_limits<std::int32_t>::max()) {
        throw TableInvariantError(std::string("field '") + key + "' out of range");
    }
    return static_cast<std::int32_t>(v);
}

ojson curve_to_json(const PwlCurve& c)
{
    ojson arr = ojson::array();
    for (const PwlSegment& s : c.segments) {
        arr.push_back({{"bin_start", s.bin_start},
                       {"slope_sign", s.slope_sign},
                       {"slope_exponent", s.slope_exponent},
                       {"offset", s.offset}});
    }
    return arr;
}

PwlCurve curve_from_json(const ojson& doc, const char* key, CurveKind kind, const LnsFormat& fmt)
{
    if (!doc.contains(key) || !doc.at(key).is_array()) {
        throw TableParseError(std::string("missing segment array '") + key + "'");
    }
    PwlCurve c;
    c.kind = kind;
    c.domain_end = fmt.delta_domain_end();
    for (const ojson& s : doc.at(key)) {
        c.segments.push_back(PwlSegment{read_i32(s, "bin_start"), read_i32(s, "slope_sign"),
                                        read_i32(s, "slope_exponent"), read_i32(s, "offset")});
    }
    return c;
}

}  // namespace

std::string table_to_json(const DeltaTable& table)
{
    const LnsFormat& f = table.format();
    const TableMetadata& m = table.metadata();
    ojson doc;
    doc["format"] = {{"total_bits", f.total_bits}, {"fractional_bits", f.fractional_bits}, {"d_max", f.d_max}};
    doc["plus"] = curve_to_json(table.plus_curve());
    doc["minus"] = curve_to_json(table.minus_curve());
    doc["metadata"] = {{"seed", m.seed},
                       {"qa_loss", m.qa_loss},
                       {"created_by", m.created_by},
                       {"slope_exponent_min", m.slopes.lo},
                       {"slope_exponent_max", m.slopes.hi}};
    return doc.dump(2) + "\n";
}

DeltaTable table_from_json(const std::string& text)
{
    ojson doc;
    try {
        doc = ojson::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw TableParseError(std::string("table is not valid JSON: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("format")) {
        throw TableParseError("missing 'format' object");
    }
    const ojson& fj = doc.at("format");
    LnsFormat fmt;
    try {
        fmt = LnsFormat::make(read_i32(fj, "total_bits"), read_i32(fj, "fractional_bits"), ZeroMode::ZeroFlag,
                              read_i32(fj, "d_max"));
    } catch (const TableParseError&) {
        throw;
    } catch (const LnsError& e) {
        throw TableInvariantError(e.what());
    }

    TableMetadata meta;
    meta.slopes = default_slope_range(fmt);
    if (doc.contains("metadata")) {
        const ojson& mj = doc.at("metadata");
        if (!mj.is_object()) {
            throw TableParseError("'metadata' must be an object");
        }
        if (mj.contains("seed")) {
            if (!mj.at("seed").is_number_unsigned() && !mj.at("seed").is_number_integer()) {
                throw TableParseError("metadata seed must be an integer");
            }
            meta.seed = mj.at("seed").get<std::uint64_t>();
        }
        if (mj.contains("qa_loss")) {
            if (!mj.at("qa_loss").is_string()) {
                throw TableParseError("metadata qa_loss must be a decimal string");
            }
            meta.qa_loss = mj.at("qa_loss").get<std::string>();
        }
        if (mj.contains("created_by")) {
            if (!mj.at("created_by").is_string()) {
                throw TableParseError("metadata created_by must be a string");
            }
            meta.created_by = mj.at("created_by").get<std::string>();
        }
        if (mj.contains("slope_exponent_min")) {
            meta.slopes.lo = read_i32(mj, "slope_exponent_min");
        }
        if (mj.contains("slope_exponent_max")) {
            meta.slopes.hi = read_i32(mj, "slope_exponent_max");
        }
    }
    DeltaTable table(fmt, curve_from_json(doc, "plus", CurveKind::Plus, fmt),
                     curve_from_json(doc, "minus", CurveKind::Minus, fmt), meta);
    table.validate();
    return table;
}

void save_table(const DeltaTable& table, const std::filesystem::path& path)
{
    table.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw LnsError("cannot write table file " + path.string());
    }
    out << table_to_json(table);
    if (!out) {
        throw LnsError("failed writing table file " + path.string());
    }
}

DeltaTable load_table(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw TableParseError("cannot open table file " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return table_from_json(ss.str());
}

DeltaTable load_table(const std::filesystem::path& path, const LnsFormat& expected)
{
    DeltaTable t = load_table(path);
    if (!t.format().same_arithmetic(expected)) {
        throw FingerprintMismatchError("table " + path.string() + " was built for " + t.format().describe() +
                                       ", run uses " + expected.describe());
    }
    return t;
}

}  // namespace qaalns
