#pragma once

#include "qaalns/nn/dataset.hpp"
#include "qaalns/nn/network.hpp"
#include "qaalns/nn/optimizer.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace qaalns::nn {

class ConfigError : public LnsError
{
public:
    using LnsError::LnsError;
};

struct DatasetSource
{
    std::string path;                   // CSV; empty selects the generator
    std::string generator = "two-moons";  // or "blobs"
    std::size_t n = 2000;
    double noise = 0.2;
    int centers = 3;
    std::uint64_t seed = 1;
    double test_fraction = 0.2;
    std::uint64_t split_seed = 1;
};

struct TrainConfig
{
    NetworkSpec network;
    LnsFormat format;
    std::string table;  // path; may be supplied on the command line instead
    DatasetSource dataset;
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    std::uint64_t shuffle_seed = 1;
    SgdConfig optimizer;
    Schedule schedule;
    std::size_t softmax_segments = 256;
    int softmax_range = 16;

    void validate() const;
    nlohmann::ordered_json to_json() const;
    static TrainConfig from_json(const nlohmann::ordered_json& j);
    static TrainConfig load(const std::filesystem::path& path);
};

/// Features are min-max scaled over the whole set, then split.
std::pair<Dataset, Dataset> load_dataset(const DatasetSource& src);

struct EpochMetrics
{
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double lr = 0.0;           // at the first step of the epoch
    std::uint64_t order_hash = 0;  // FNV-1a of the epoch's sample order

    nlohmann::ordered_json to_json() const;
};

using EpochSink = std::function<void(const EpochMetrics&)>;

template <class A>
Tensor<Value<A>> make_batch(const A& arith, const Dataset& ds, const Shape& sample_shape,
                            const std::vector<std::size_t>& rows)
{
    Shape shape{rows.size()};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    Tensor<Value<A>> x(shape, arith.zero());
    const std::size_t f = ds.feature_count;
    for (std::size_t n = 0; n < rows.size(); ++n) {
        for (std::size_t j = 0; j < f; ++j) {
            x.data[n * f + j] = arith.from_real(ds.row(rows[n])[j]);
        }
    }
    return x;
}

/// Top-1 accuracy with inference-mode layers.
template <class A>
double evaluate(Network<A>& net, const Dataset& ds, std::size_t batch = 256)
{
    if (ds.size() == 0) {
        throw DatasetError("evaluate: empty dataset");
    }
    std::size_t correct = 0;
    std::vector<std::size_t> rows;
    for (std::size_t start = 0; start < ds.size(); start += batch) {
        rows.clear();
        for (std::size_t i = start; i < std::min(ds.size(), start + batch); ++i) {
            rows.push_back(i);
        }
        const std::vector<int> pred = net.predict(make_batch(net.arith(), ds, net.spec().input_shape, rows));
        for (std::size_t n = 0; n < rows.size(); ++n) {
            correct += pred[n] == ds.labels[rows[n]] ? 1 : 0;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

std::uint64_t order_hash(const std::vector<std::size_t>& order);

/// Mini-batch SGD; the trailing partial batch of every epoch is dropped.
template <class A>
std::vector<EpochMetrics> run_training(Network<A>& net, const Dataset& train, const Dataset& test,
                                       const TrainConfig& cfg, const EpochSink& sink = {})
{
    if (train.size() == 0 || test.size() == 0) {
        throw DatasetError("training needs non-empty train and test sets");
    }
    if (train.feature_count != shape_size(net.spec().input_shape)) {
        throw ShapeError("dataset has " + std::to_string(train.feature_count) + " features, network expects " +
                         shape_string(net.spec().input_shape));
    }
    const std::size_t steps_per_epoch = train.size() / cfg.batch_size;
    if (steps_per_epoch == 0) {
        throw DatasetError("training set is smaller than one batch");
    }
    const std::vector<Param<A>*> params = net.params();
    OptimizerState<A> opt(net.arith(), params, cfg.optimizer);
    Rng shuffle(cfg.shuffle_seed);
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::vector<EpochMetrics> history;
    std::uint64_t step = 0;
    std::vector<std::size_t> rows(cfg.batch_size);
    std::vector<int> labels(cfg.batch_size);
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle.below(i)]);
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.order_hash = order_hash(order);
        m.lr = cfg.schedule.lr_at(cfg.optimizer.lr, step, steps_per_epoch);
        std::size_t correct = 0;
        for (std::size_t b = 0; b < steps_per_epoch; ++b) {
            for (std::size_t n = 0; n < cfg.batch_size; ++n) {
                rows[n] = order[b * cfg.batch_size + n];
                labels[n] = train.labels[rows[n]];
            }
            const auto r = net.forward_backward(make_batch(net.arith(), train, net.spec().input_shape, rows), labels);
            opt.step(params, cfg.schedule.lr_at(cfg.optimizer.lr, step, steps_per_epoch));
            ++step;
            m.train_loss += r.loss;
            correct += r.correct;
        }
        m.train_loss /= static_cast<double>(steps_per_epoch);
        m.train_acc = static_cast<double>(correct) / static_cast<double>(steps_per_epoch * cfg.batch_size);
        m.test_acc = evaluate(net, test);
        history.push_back(m);
        if (sink) {
            sink(m);
        }
    }
    return history;
}

struct TrainRun
{
    std::vector<EpochMetrics> metrics;
    double final_accuracy() const { return metrics.empty() ? 0.0 : metrics.back().test_acc; }
    /// Median test accuracy over the last (up to) 10 epochs.
    double median_last10() const;
};

LnsArith make_train_arith(const TrainConfig& cfg, const DeltaTable& table);

/// Bit-true run; `net_out` (optional) receives the trained network.
TrainRun train_lns(const TrainConfig& cfg, const LnsArith& arith, const EpochSink& sink = {},
                   std::unique_ptr<Network<LnsArith>>* net_out = nullptr);
/// Double-precision mirror with identical seeds, order and schedule.
TrainRun float_mirror_train(const TrainConfig& cfg, const EpochSink& sink = {});

double median_last(const std::vector<double>& values, std::size_t k);

}  // namespace qaalns::nn
