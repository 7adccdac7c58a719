#pragma once

#include "qaalns/nn/layers.hpp"

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace qaalns::nn {

struct SgdConfig
{
    double lr = 0.1;
    double momentum = 0.9;
    double weight_decay = 1e-4;
};

/// Cosine annealing with warm restarts, advanced once per optimizer step.
struct Schedule
{
    double period_epochs = 25.0;
    double multiplier = 1.0;  // period growth after each restart
    double min_lr = 0.0;

    double lr_at(double base_lr, std::uint64_t step, std::uint64_t steps_per_epoch) const
    {
        double period = period_epochs * static_cast<double>(steps_per_epoch);
        double t = static_cast<double>(step);
        if (period <= 0.0) {
            return base_lr;
        }
        while (t >= period) {
            t -= period;
            period *= multiplier;
        }
        return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(std::numbers::pi * t / period));
    }
};

template <class A>
class OptimizerState
{
public:
    using V = Value<A>;

    OptimizerState(const A& arith, const std::vector<Param<A>*>& params, const SgdConfig& cfg)
        : arith_(arith),
          momentum_(arith.from_real(cfg.momentum)),
          weight_decay_(arith.from_real(cfg.weight_decay))
    {
        for (const Param<A>* p : params) {
            velocity_.emplace_back(p->value.shape, arith.zero());
        }
    }

    std::vector<Tensor<V>>& velocity() { return velocity_; }

    /// v <- m * v + g + wd * w; w <- w - lr * v.
    void step(const std::vector<Param<A>*>& params, double lr)
    {
        if (params.size() != velocity_.size()) {
            throw ShapeError("optimizer: parameter list changed since construction");
        }
        const A& a = arith_;
        const V neg_lr = a.neg(a.from_real(lr));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Param<A>& p = *params[i];
            Tensor<V>& v = velocity_[i];
            if (v.shape != p.value.shape || p.grad.shape != p.value.shape) {
                throw ShapeError("optimizer: buffer shape does not mirror parameter " + p.name);
            }
            for (std::size_t k = 0; k < v.size(); ++k) {
                V vk = a.add(a.mul(momentum_, v.data[k]), p.grad.data[k]);
                vk = a.add(vk, a.mul(weight_decay_, p.value.data[k]));
                v.data[k] = vk;
                p.value.data[k] = a.add(p.value.data[k], a.mul(neg_lr, vk));
            }
        }
    }

private:
    A arith_;
    V momentum_;
    V weight_decay_;
    std::vector<Tensor<V>> velocity_;
};

}  // namespace qaalns::nn
