#pragma once

// Bit-true backward passes against central differences of the float mirror.
//
// Parameters, inputs and the output weighting r are drawn, quantized, and the
// mirror receives the dequantized copies, so both sides differentiate the same
// function L = sum(r * layer(x)). Errors are norm-relative per tensor.

#include "qaalns/nn/network.hpp"
#include "qaalns/reference.hpp"

#include <cmath>
#include <functional>
#include <memory>
#include <set>
#include <string>
#include <vector>

namespace gradcheck {

using namespace qaalns;
using namespace qaalns::nn;

inline const LnsFormat& wide_format()
{
    static const LnsFormat f = LnsFormat::make(20, 12);
    return f;
}

inline const LnsArith& exact_arith()
{
    static const LnsArith a = make_lns_arith(wide_format(), ExactDelta(wide_format()));
    return a;
}

struct Outcome
{
    double worst = 0.0;  // largest norm-relative error over the checked tensors
    std::string where;
};

inline double rel_error(const std::vector<double>& got, const std::vector<double>& want)
{
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < got.size(); ++i) {
        num += (got[i] - want[i]) * (got[i] - want[i]);
        den += want[i] * want[i];
    }
    if (den == 0.0) {
        return std::sqrt(num);
    }
    return std::sqrt(num / den);
}

inline std::vector<double> to_real(const LnsTensor& t)
{
    std::vector<double> out(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) {
        out[i] = dequantize(t[i], wide_format());
    }
    return out;
}

inline LnsTensor random_tensor(const Shape& shape, Rng& rng, bool distinct)
{
    const LnsFormat& fmt = wide_format();
    LnsTensor t(shape, zero_value(fmt));
    std::set<std::pair<std::int32_t, bool>> seen;
    for (auto& v : t.data) {
        for (;;) {
            const double x = rng.uniform(-2.0, 2.0);
            v = quantize(x, fmt);
            if (!distinct) {
                break;
            }
            if (std::abs(x) > 0.05 && seen.insert({v.log_mag, v.sign}).second) {
                break;
            }
        }
    }
    return t;
}

template <class A>
using Factory = std::function<std::unique_ptr<Layer<A>>(const A&)>;

inline Outcome check_layer(const Factory<LnsArith>& make_lns, const Factory<RealArith>& make_real,
                           const Shape& input_shape, std::uint64_t seed, bool distinct_inputs = false)
{
    const double h = 1e-5;
    Rng rng(seed);
    auto lns = make_lns(exact_arith());
    auto real = make_real(RealArith{});
    lns->init(rng);
    auto lp = lns->params();
    auto rp = real->params();
    for (std::size_t i = 0; i < lp.size(); ++i) {
        lp[i]->value = random_tensor(lp[i]->value.shape, rng, false);
        rp[i]->value.data = to_real(lp[i]->value);
    }
    const LnsTensor x = random_tensor(input_shape, rng, distinct_inputs);
    Tensor<double> xr(input_shape, 0.0);
    xr.data = to_real(x);

    const LnsTensor y = lns->forward(x, true);
    const LnsTensor r = random_tensor(y.shape, rng, false);
    const std::vector<double> rr = to_real(r);
    const std::vector<double> gx = to_real(lns->backward(r));

    auto objective = [&](const Tensor<double>& in) {
        const Tensor<double> out = real->forward(in, true);
        double s = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i) {
            s += rr[i] * out[i];
        }
        return s;
    };

    Outcome result;
    auto record = [&](double e, const std::string& name) {
        if (e > result.worst || result.where.empty()) {
            result.worst = std::max(result.worst, e);
            result.where = name;
        }
    };

    std::vector<double> fd(xr.size());
    for (std::size_t i = 0; i < xr.size(); ++i) {
        Tensor<double> up = xr;
        Tensor<double> dn = xr;
        up[i] += h;
        dn[i] -= h;
        fd[i] = (objective(up) - objective(dn)) / (2 * h);
    }
    record(rel_error(gx, fd), "input");

    for (std::size_t p = 0; p < rp.size(); ++p) {
        const std::vector<double> gp = to_real(lp[p]->grad);
        std::vector<double> fdp(rp[p]->value.size());
        for (std::size_t i = 0; i < fdp.size(); ++i) {
            const double keep = rp[p]->value[i];
            rp[p]->value[i] = keep + h;
            const double up = objective(xr);
            rp[p]->value[i] = keep - h;
            const double dn = objective(xr);
            rp[p]->value[i] = keep;
            fdp[i] = (up - dn) / (2 * h);
        }
        record(rel_error(gp, fdp), rp[p]->name);
    }
    return result;
}

/// Softmax cross-entropy head: gradient of the mean loss w.r.t. the logits.
inline Outcome check_softmax(std::size_t batch, std::size_t classes, std::uint64_t seed)
{
    const double h = 1e-5;
    Rng rng(seed);
    SoftmaxXent<LnsArith> lns(exact_arith(), classes);
    SoftmaxXent<RealArith> real(RealArith{}, classes);
    const LnsTensor z = random_tensor({batch, classes}, rng, false);
    std::vector<int> labels(batch);
    for (auto& l : labels) {
        l = static_cast<int>(rng.below(classes));
    }
    lns.forward(z, labels);
    const std::vector<double> g = to_real(lns.backward());
    Tensor<double> zr({batch, classes}, 0.0);
    zr.data = to_real(z);
    std::vector<double> fd(zr.size());
    for (std::size_t i = 0; i < zr.size(); ++i) {
        Tensor<double> up = zr;
        Tensor<double> dn = zr;
        up[i] += h;
        dn[i] -= h;
        fd[i] = (real.forward(up, labels) - real.forward(dn, labels)) / (2 * h);
    }
    return Outcome{rel_error(g, fd), "logits"};
}

struct Case
{
    std::string name;
    std::function<Outcome(std::uint64_t)> run;
};

/// One entry per layer type; the argument seeds the random draw.
inline std::vector<Case> standard_cases()
{
    std::vector<Case> out;
    out.push_back({"dense", [](std::uint64_t s) {
                       return check_layer([](const LnsArith& a) { return std::make_unique<Dense<LnsArith>>(a, 5, 4); },
                                          [](const RealArith& a) { return std::make_unique<Dense<RealArith>>(a, 5, 4); },
                                          {3, 5}, s);
                   }});
    out.push_back({"conv2d", [](std::uint64_t s) {
                       const std::size_t stride = 1 + s % 2;
                       return check_layer(
                           [=](const LnsArith& a) { return std::make_unique<Conv2d<LnsArith>>(a, 2, 3, 3, stride, 1); },
                           [=](const RealArith& a) { return std::make_unique<Conv2d<RealArith>>(a, 2, 3, 3, stride, 1); },
                           {2, 2, 5, 5}, s);
                   }});
    out.push_back({"relu", [](std::uint64_t s) {
                       return check_layer([](const LnsArith& a) { return std::make_unique<ReLU<LnsArith>>(a); },
                                          [](const RealArith& a) { return std::make_unique<ReLU<RealArith>>(a); },
                                          {3, 7}, s, true);
                   }});
    out.push_back({"maxpool", [](std::uint64_t s) {
                       const std::size_t k = s % 2 ? 3 : 2;
                       const std::size_t st = s % 2 ? 1 : 2;
                       return check_layer(
                           [=](const LnsArith& a) { return std::make_unique<MaxPool<LnsArith>>(a, k, st); },
                           [=](const RealArith& a) { return std::make_unique<MaxPool<RealArith>>(a, k, st); },
                           {2, 2, 4, 4}, s, true);
                   }});
    out.push_back({"batchnorm", [](std::uint64_t s) {
                       const double eps = default_bn_epsilon(12);
                       if (s % 2) {
                           return check_layer(
                               [=](const LnsArith& a) { return std::make_unique<BatchNorm<LnsArith>>(a, 2, eps); },
                               [=](const RealArith& a) { return std::make_unique<BatchNorm<RealArith>>(a, 2, eps); },
                               {2, 2, 2, 2}, s);
                       }
                       return check_layer(
                           [=](const LnsArith& a) { return std::make_unique<BatchNorm<LnsArith>>(a, 3, eps); },
                           [=](const RealArith& a) { return std::make_unique<BatchNorm<RealArith>>(a, 3, eps); },
                           {4, 3}, s);
                   }});
    out.push_back({"softmax_xent", [](std::uint64_t s) { return check_softmax(4, 5, s); }});
    return out;
}

}  // namespace gradcheck
