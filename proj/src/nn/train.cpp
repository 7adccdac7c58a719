#include "qaalns/nn/train.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

namespace qaalns::nn {

namespace {

using ojson = nlohmann::ordered_json;

template <class T>
void read_opt(const ojson& j, const char* key, T& out)
{
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            throw ConfigError(std::string("config field '") + key + "' has the wrong type");
        }
    }
}

std::string hex64(std::uint64_t v)
{
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

}  // namespace

void TrainConfig::validate() const
{
    network.validate();
    try {
        LnsFormat::make(format.total_bits, format.fractional_bits, format.zero_mode, format.d_max);
    } catch (const LnsError& e) {
        throw ConfigError(e.what());
    }
    if (epochs == 0) {
        throw ConfigError("epochs must be positive");
    }
    if (batch_size == 0) {
        throw ConfigError("batch_size must be positive");
    }
    if (!(optimizer.lr > 0.0) || optimizer.momentum < 0.0 || optimizer.weight_decay < 0.0) {
        throw ConfigError("optimizer: lr must be positive, momentum and weight_decay non-negative");
    }
    if (!(schedule.period_epochs > 0.0) || !(schedule.multiplier >= 1.0) || schedule.min_lr < 0.0) {
        throw ConfigError("schedule: period_epochs > 0, multiplier >= 1, min_lr >= 0 required");
    }
    if (softmax_segments == 0 || softmax_range < 2) {
        throw ConfigError("softmax: segments >= 1 and range >= 2 required");
    }
    if (dataset.path.empty() && dataset.generator != "two-moons" && dataset.generator != "blobs") {
        throw ConfigError("dataset generator must be two-moons or blobs");
    }
}

ojson TrainConfig::to_json() const
{
    ojson j;
    j["network"] = network.to_json();
    j["format"] = {{"total_bits", format.total_bits},
                   {"fractional_bits", format.fractional_bits},
                   {"zero_mode", to_string(format.zero_mode)},
                   {"d_max", format.d_max}};
    if (!table.empty()) {
        j["table"] = table;
    }
    ojson d;
    if (!dataset.path.empty()) {
        d["path"] = dataset.path;
    } else {
        d["generator"] = dataset.generator;
        d["n"] = dataset.n;
        d["noise"] = dataset.noise;
        if (dataset.generator == "blobs") {
            d["centers"] = dataset.centers;
        }
        d["seed"] = dataset.seed;
    }
    d["test_fraction"] = dataset.test_fraction;
    d["split_seed"] = dataset.split_seed;
    j["dataset"] = d;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["shuffle_seed"] = shuffle_seed;
    j["optimizer"] = {{"lr", optimizer.lr}, {"momentum", optimizer.momentum}, {"weight_decay", optimizer.weight_decay}};
    j["schedule"] = {{"period_epochs", schedule.period_epochs},
                     {"multiplier", schedule.multiplier},
                     {"min_lr", schedule.min_lr}};
    j["softmax"] = {{"segments", softmax_segments}, {"range", softmax_range}};
    return j;
}

TrainConfig TrainConfig::from_json(const ojson& j)
{
    if (!j.is_object()) {
        throw ConfigError("config must be a JSON object");
    }
    TrainConfig c;
    if (!j.contains("network")) {
        throw ConfigError("config is missing 'network'");
    }
    c.network = NetworkSpec::from_json(j.at("network"));
    if (j.contains("format")) {
        const ojson& f = j.at("format");
        int t = c.format.total_bits;
        int fb = c.format.fractional_bits;
        int dm = c.format.d_max;
        std::string zm = to_string(c.format.zero_mode);
        read_opt(f, "total_bits", t);
        read_opt(f, "fractional_bits", fb);
        read_opt(f, "d_max", dm);
        read_opt(f, "zero_mode", zm);
        try {
            c.format = LnsFormat::make(t, fb, zero_mode_from_string(zm), dm);
        } catch (const LnsError& e) {
            throw ConfigError(std::string("format: ") + e.what());
        }
    }
    read_opt(j, "table", c.table);
    if (j.contains("dataset")) {
        const ojson& d = j.at("dataset");
        read_opt(d, "path", c.dataset.path);
        read_opt(d, "generator", c.dataset.generator);
        read_opt(d, "n", c.dataset.n);
        read_opt(d, "noise", c.dataset.noise);
        read_opt(d, "centers", c.dataset.centers);
        read_opt(d, "seed", c.dataset.seed);
        read_opt(d, "test_fraction", c.dataset.test_fraction);
        read_opt(d, "split_seed", c.dataset.split_seed);
    }
    read_opt(j, "epochs", c.epochs);
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "shuffle_seed", c.shuffle_seed);
    if (j.contains("optimizer")) {
        read_opt(j.at("optimizer"), "lr", c.optimizer.lr);
        read_opt(j.at("optimizer"), "momentum", c.optimizer.momentum);
        read_opt(j.at("optimizer"), "weight_decay", c.optimizer.weight_decay);
    }
    if (j.contains("schedule")) {
        read_opt(j.at("schedule"), "period_epochs", c.schedule.period_epochs);
        read_opt(j.at("schedule"), "multiplier", c.schedule.multiplier);
        read_opt(j.at("schedule"), "min_lr", c.schedule.min_lr);
    }
    if (j.contains("softmax")) {
        read_opt(j.at("softmax"), "segments", c.softmax_segments);
        read_opt(j.at("softmax"), "range", c.softmax_range);
    }
    c.validate();
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    ojson j;
    try {
        j = ojson::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

std::pair<Dataset, Dataset> load_dataset(const DatasetSource& src)
{
    Dataset all;
    if (!src.path.empty()) {
        all = read_csv(src.path);
    } else if (src.generator == "two-moons") {
        all = make_two_moons(src.n, src.noise, src.seed);
    } else if (src.generator == "blobs") {
        all = make_blobs(src.n, src.centers, src.noise, src.seed);
    } else {
        throw ConfigError("unknown dataset generator '" + src.generator + "'");
    }
    minmax_scale(all);
    return split(all, src.test_fraction, src.split_seed);
}

ojson EpochMetrics::to_json() const
{
    return {{"epoch", epoch},   {"train_loss", train_loss}, {"train_acc", train_acc},
            {"test_acc", test_acc}, {"lr", lr},             {"order_hash", hex64(order_hash)}};
}

std::uint64_t order_hash(const std::vector<std::size_t>& order)
{
    std::string bytes;
    bytes.reserve(order.size() * 4);
    for (std::size_t i : order) {
        for (int k = 0; k < 4; ++k) {
            bytes.push_back(static_cast<char>((i >> (8 * k)) & 0xff));
        }
    }
    return fnv1a64(bytes);
}

double median_last(const std::vector<double>& values, std::size_t k)
{
    if (values.empty()) {
        return 0.0;
    }
    const std::size_t n = std::min(k, values.size());
    std::vector<double> tail(values.end() - static_cast<std::ptrdiff_t>(n), values.end());
    std::sort(tail.begin(), tail.end());
    return n % 2 ? tail[n / 2] : 0.5 * (tail[n / 2 - 1] + tail[n / 2]);
}

double TrainRun::median_last10() const
{
    std::vector<double> acc;
    for (const auto& m : metrics) {
        acc.push_back(m.test_acc);
    }
    return median_last(acc, 10);
}

LnsArith make_train_arith(const TrainConfig& cfg, const DeltaTable& table)
{
    check_delta_format(table, cfg.format);
    return LnsArith(cfg.format, std::make_shared<const DeltaLut>(table),
                    std::make_shared<const Pow2Table>(cfg.format, cfg.softmax_range, cfg.softmax_segments));
}

TrainRun train_lns(const TrainConfig& cfg, const LnsArith& arith, const EpochSink& sink,
                   std::unique_ptr<Network<LnsArith>>* net_out)
{
    cfg.validate();
    if (!arith.format().same_arithmetic(cfg.format) || arith.format().zero_mode != cfg.format.zero_mode) {
        throw FormatMismatchError("arithmetic built for " + arith.format().describe() + ", config asks for " +
                                  cfg.format.describe());
    }
    const auto [train, test] = load_dataset(cfg.dataset);
    auto net = std::make_unique<Network<LnsArith>>(cfg.network, arith, cfg.format.fractional_bits);
    TrainRun run;
    run.metrics = run_training(*net, train, test, cfg, sink);
    if (net_out) {
        *net_out = std::move(net);
    }
    return run;
}

TrainRun float_mirror_train(const TrainConfig& cfg, const EpochSink& sink)
{
    cfg.validate();
    const auto [train, test] = load_dataset(cfg.dataset);
    Network<RealArith> net(cfg.network, RealArith{}, cfg.format.fractional_bits);
    TrainRun run;
    run.metrics = run_training(net, train, test, cfg, sink);
    return run;
}

}  // namespace qaalns::nn
