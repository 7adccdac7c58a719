#pragma once

// Layers written once against an arithmetic policy (see arith.hpp).
//
// Every reduction is a strict left-to-right fold; the order documented on
// each layer is part of its contract.

#include "qaalns/nn/arith.hpp"
#include "qaalns/nn/tensor.hpp"
#include "qaalns/rng.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

namespace qaalns::nn {

template <class A>
using Value = typename A::value_type;

template <class A>
struct Param
{
    std::string name;
    Tensor<Value<A>> value;
    Tensor<Value<A>> grad;
};

/// Left fold seeded by the first element; empty folds yield zero.
template <class A>
class Accumulator
{
public:
    explicit Accumulator(const A& arith) : arith_(arith) {}

    void add(const Value<A>& x)
    {
        if (!any_) {
            acc_ = x;
            any_ = true;
        } else {
            acc_ = arith_.add(acc_, x);
        }
    }

    Value<A> value() const { return any_ ? acc_ : arith_.zero(); }

private:
    const A& arith_;
    Value<A> acc_{};
    bool any_ = false;
};

template <class A>
class Layer
{
public:
    using V = Value<A>;

    explicit Layer(A arith) : arith_(std::move(arith)) {}
    virtual ~Layer() = default;

    virtual std::string kind() const = 0;
    /// Per-sample output shape; throws ShapeError when `in` is incompatible.
    virtual Shape output_shape(const Shape& in) const = 0;
    virtual Tensor<V> forward(const Tensor<V>& x, bool training) = 0;
    /// Uses state cached by the last training-mode forward.
    virtual Tensor<V> backward(const Tensor<V>& grad_out) = 0;
    virtual void init(Rng&) {}
    virtual std::vector<Param<A>*> params() { return {}; }
    /// Non-trainable state saved with checkpoints.
    virtual std::vector<Tensor<V>*> buffers() { return {}; }

    const A& arith() const { return arith_; }

protected:
    A arith_;
};

namespace detail {

inline Shape sample_shape(const Shape& batch_shape)
{
    return Shape(batch_shape.begin() + 1, batch_shape.end());
}

inline void require_batch(const Shape& s, const char* who)
{
    if (s.empty() || s[0] == 0) {
        throw ShapeError(std::string(who) + ": expected a non-empty batch");
    }
}

template <class A>
void kaiming_uniform(const A& arith, Tensor<Value<A>>& w, std::size_t fan_in, Rng& rng)
{
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : w.data) {
        v = arith.from_real(rng.uniform(-bound, bound));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------

/// y[n, j] = (sum_i W[j, i] * x[n, i]) + b[j], i ascending; trailing input
/// dimensions are flattened.
/// Backward folds: grad_x over j, grad_W and grad_b over the batch index n.
template <class A>
class Dense : public Layer<A>
{
public:
    using V = Value<A>;

    Dense(A arith, std::size_t in, std::size_t out, bool bias = true)
        : Layer<A>(std::move(arith)), in_(in), out_(out), has_bias_(bias)
    {
        weight_ = {"weight", Tensor<V>({out, in}, this->arith_.zero()), Tensor<V>({out, in}, this->arith_.zero())};
        bias_ = {"bias", Tensor<V>({out}, this->arith_.zero()), Tensor<V>({out}, this->arith_.zero())};
    }

    std::string kind() const override { return "dense"; }

    Shape output_shape(const Shape& in) const override
    {
        if (shape_size(in) != in_) {
            throw ShapeError("dense: input " + shape_string(in) + " does not flatten to " + std::to_string(in_));
        }
        return {out_};
    }

    void init(Rng& rng) override { detail::kaiming_uniform(this->arith_, weight_.value, in_, rng); }

    std::vector<Param<A>*> params() override
    {
        if (has_bias_) {
            return {&weight_, &bias_};
        }
        return {&weight_};
    }

    Param<A>& weight() { return weight_; }
    Param<A>& bias() { return bias_; }

    Tensor<V> forward(const Tensor<V>& x, bool /*training*/) override
    {
        detail::require_batch(x.shape, "dense");
        output_shape(detail::sample_shape(x.shape));
        input_ = x;
        const A& a = this->arith_;
        const std::size_t batch = x.dim(0);
        Tensor<V> y({batch, out_}, a.zero());
        for (std::size_t n = 0; n < batch; ++n) {
            const V* xr = &x.data[n * in_];
            for (std::size_t j = 0; j < out_; ++j) {
                const V* wr = &weight_.value.data[j * in_];
                Accumulator<A> acc(a);
                for (std::size_t i = 0; i < in_; ++i) {
                    acc.add(a.mul(wr[i], xr[i]));
                }
                y.data[n * out_ + j] = has_bias_ ? a.add(acc.value(), bias_.value.data[j]) : acc.value();
            }
        }
        return y;
    }

    Tensor<V> backward(const Tensor<V>& g) override
    {
        const A& a = this->arith_;
        const std::size_t batch = input_.dim(0);
        if (g.shape != Shape{batch, out_}) {
            throw ShapeError("dense backward: gradient " + shape_string(g.shape) + " does not match output");
        }
        Tensor<V> gx(input_.shape, a.zero());
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t i = 0; i < in_; ++i) {
                Accumulator<A> acc(a);
                for (std::size_t j = 0; j < out_; ++j) {
                    acc.add(a.mul(weight_.value.data[j * in_ + i], g.data[n * out_ + j]));
                }
                gx.data[n * in_ + i] = acc.value();
            }
        }
        for (std::size_t j = 0; j < out_; ++j) {
            for (std::size_t i = 0; i < in_; ++i) {
                Accumulator<A> acc(a);
                for (std::size_t n = 0; n < batch; ++n) {
                    acc.add(a.mul(g.data[n * out_ + j], input_.data[n * in_ + i]));
                }
                weight_.grad.data[j * in_ + i] = acc.value();
            }
            if (has_bias_) {
                Accumulator<A> acc(a);
                for (std::size_t n = 0; n < batch; ++n) {
                    acc.add(g.data[n * out_ + j]);
                }
                bias_.grad.data[j] = acc.value();
            }
        }
        return gx;
    }

private:
    std::size_t in_;
    std::size_t out_;
    bool has_bias_;
    Param<A> weight_;
    Param<A> bias_;
    Tensor<V> input_;
};

// ---------------------------------------------------------------------------

/// Direct convolution over [B, C, H, W]. Each output element folds its
/// products in (ky, kx, in_ch) order, then adds the bias; padded taps are
/// skipped. grad_x folds over (out_ch, ky, kx); grad_W and grad_b fold over
/// (n, oy, ox).
template <class A>
class Conv2d : public Layer<A>
{
public:
    using V = Value<A>;

    Conv2d(A arith, std::size_t in_ch, std::size_t out_ch, std::size_t kernel, std::size_t stride = 1,
           std::size_t pad = 0, bool bias = true)
        : Layer<A>(std::move(arith)), in_ch_(in_ch), out_ch_(out_ch), k_(kernel), stride_(stride), pad_(pad),
          has_bias_(bias)
    {
        if (kernel == 0 || stride == 0 || in_ch == 0 || out_ch == 0) {
            throw ShapeError("conv2d: kernel, stride and channel counts must be positive");
        }
        const Shape ws{out_ch, in_ch, kernel, kernel};
        weight_ = {"weight", Tensor<V>(ws, this->arith_.zero()), Tensor<V>(ws, this->arith_.zero())};
        bias_ = {"bias", Tensor<V>({out_ch}, this->arith_.zero()), Tensor<V>({out_ch}, this->arith_.zero())};
    }

    std::string kind() const override { return "conv2d"; }

    Shape output_shape(const Shape& in) const override
    {
        if (in.size() != 3 || in[0] != in_ch_) {
            throw ShapeError("conv2d: expected [" + std::to_string(in_ch_) + ", H, W], got " + shape_string(in));
        }
        if (in[1] + 2 * pad_ < k_ || in[2] + 2 * pad_ < k_) {
            throw ShapeError("conv2d: kernel larger than padded input " + shape_string(in));
        }
        return {out_ch_, (in[1] + 2 * pad_ - k_) / stride_ + 1, (in[2] + 2 * pad_ - k_) / stride_ + 1};
    }

    void init(Rng& rng) override { detail::kaiming_uniform(this->arith_, weight_.value, in_ch_ * k_ * k_, rng); }

    std::vector<Param<A>*> params() override
    {
        if (has_bias_) {
            return {&weight_, &bias_};
        }
        return {&weight_};
    }

    Param<A>& weight() { return weight_; }
    Param<A>& bias() { return bias_; }

    Tensor<V> forward(const Tensor<V>& x, bool /*training*/) override
    {
        detail::require_batch(x.shape, "conv2d");
        const Shape os = output_shape(detail::sample_shape(x.shape));
        input_ = x;
        const A& a = this->arith_;
        const std::size_t batch = x.dim(0);
        const std::size_t h = x.dim(2), w = x.dim(3), oh = os[1], ow = os[2];
        Tensor<V> y({batch, out_ch_, oh, ow}, a.zero());
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t oc = 0; oc < out_ch_; ++oc) {
                for (std::size_t oy = 0; oy < oh; ++oy) {
                    for (std::size_t ox = 0; ox < ow; ++ox) {
                        Accumulator<A> acc(a);
                        for (std::size_t ky = 0; ky < k_; ++ky) {
                            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) -
                                                      static_cast<std::ptrdiff_t>(pad_);
                            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                                continue;
                            }
                            for (std::size_t kx = 0; kx < k_; ++kx) {
                                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) -
                                                          static_cast<std::ptrdiff_t>(pad_);
                                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) {
                                    continue;
                                }
                                for (std::size_t ic = 0; ic < in_ch_; ++ic) {
                                    acc.add(a.mul(weight_.value.data[widx(oc, ic, ky, kx)],
                                                  x.data[((n * in_ch_ + ic) * h + static_cast<std::size_t>(iy)) * w +
                                                         static_cast<std::size_t>(ix)]));
                                }
                            }
                        }
                        V v = acc.value();
                        if (has_bias_) {
                            v = a.add(v, bias_.value.data[oc]);
                        }
                        y.data[((n * out_ch_ + oc) * oh + oy) * ow + ox] = v;
                    }
                }
            }
        }
        out_hw_ = {oh, ow};
        return y;
    }

    Tensor<V> backward(const Tensor<V>& g) override
    {
        const A& a = this->arith_;
        const std::size_t batch = input_.dim(0);
        const std::size_t h = input_.dim(2), w = input_.dim(3), oh = out_hw_[0], ow = out_hw_[1];
        if (g.shape != Shape{batch, out_ch_, oh, ow}) {
            throw ShapeError("conv2d backward: gradient " + shape_string(g.shape) + " does not match output");
        }
        auto gidx = [&](std::size_t n, std::size_t oc, std::size_t oy, std::size_t ox) {
            return ((n * out_ch_ + oc) * oh + oy) * ow + ox;
        };
        auto xidx = [&](std::size_t n, std::size_t ic, std::size_t iy, std::size_t ix) {
            return ((n * in_ch_ + ic) * h + iy) * w + ix;
        };

        Tensor<V> gx(input_.shape, a.zero());
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t ic = 0; ic < in_ch_; ++ic) {
                for (std::size_t iy = 0; iy < h; ++iy) {
                    for (std::size_t ix = 0; ix < w; ++ix) {
                        Accumulator<A> acc(a);
                        for (std::size_t oc = 0; oc < out_ch_; ++oc) {
                            for (std::size_t ky = 0; ky < k_; ++ky) {
                                std::size_t oy;
                                if (!tap(iy, ky, oh, oy)) {
                                    continue;
                                }
                                for (std::size_t kx = 0; kx < k_; ++kx) {
                                    std::size_t ox;
                                    if (!tap(ix, kx, ow, ox)) {
                                        continue;
                                    }
                                    acc.add(a.mul(g.data[gidx(n, oc, oy, ox)],
                                                  weight_.value.data[widx(oc, ic, ky, kx)]));
                                }
                            }
                        }
                        gx.data[xidx(n, ic, iy, ix)] = acc.value();
                    }
                }
            }
        }

        for (std::size_t oc = 0; oc < out_ch_; ++oc) {
            for (std::size_t ic = 0; ic < in_ch_; ++ic) {
                for (std::size_t ky = 0; ky < k_; ++ky) {
                    for (std::size_t kx = 0; kx < k_; ++kx) {
                        Accumulator<A> acc(a);
                        for (std::size_t n = 0; n < batch; ++n) {
                            for (std::size_t oy = 0; oy < oh; ++oy) {
                                const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) -
                                                          static_cast<std::ptrdiff_t>(pad_);
                                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                                    continue;
                                }
                                for (std::size_t ox = 0; ox < ow; ++ox) {
                                    const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride_ + kx) -
                                                              static_cast<std::ptrdiff_t>(pad_);
                                    if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) {
                                        continue;
                                    }
                                    acc.add(a.mul(g.data[gidx(n, oc, oy, ox)],
                                                  input_.data[xidx(n, ic, static_cast<std::size_t>(iy),
                                                                   static_cast<std::size_t>(ix))]));
                                }
                            }
                        }
                        weight_.grad.data[widx(oc, ic, ky, kx)] = acc.value();
                    }
                }
            }
            if (has_bias_) {
                Accumulator<A> acc(a);
                for (std::size_t n = 0; n < batch; ++n) {
                    for (std::size_t oy = 0; oy < oh; ++oy) {
                        for (std::size_t ox = 0; ox < ow; ++ox) {
                            acc.add(g.data[gidx(n, oc, oy, ox)]);
                        }
                    }
                }
                bias_.grad.data[oc] = acc.value();
            }
        }
        return gx;
    }

private:
    std::size_t widx(std::size_t oc, std::size_t ic, std::size_t ky, std::size_t kx) const
    {
        return ((oc * in_ch_ + ic) * k_ + ky) * k_ + kx;
    }

    // Output coordinate that reads input coordinate i through kernel tap k.
    bool tap(std::size_t i, std::size_t k, std::size_t out_extent, std::size_t& o) const
    {
        const std::ptrdiff_t num = static_cast<std::ptrdiff_t>(i + pad_) - static_cast<std::ptrdiff_t>(k);
        if (num < 0 || num % static_cast<std::ptrdiff_t>(stride_) != 0) {
            return false;
        }
        o = static_cast<std::size_t>(num) / stride_;
        return o < out_extent;
    }

    std::size_t in_ch_, out_ch_, k_, stride_, pad_;
    bool has_bias_;
    Param<A> weight_;
    Param<A> bias_;
    Tensor<V> input_;
    std::array<std::size_t, 2> out_hw_{};
};

// ---------------------------------------------------------------------------

/// Sign test only: no arithmetic, so no approximation error.
template <class A>
class ReLU : public Layer<A>
{
public:
    using V = Value<A>;
    using Layer<A>::Layer;

    std::string kind() const override { return "relu"; }
    Shape output_shape(const Shape& in) const override { return in; }

    Tensor<V> forward(const Tensor<V>& x, bool /*training*/) override
    {
        const A& a = this->arith_;
        mask_.assign(x.size(), false);
        Tensor<V> y = x;
        for (std::size_t i = 0; i < x.size(); ++i) {
            mask_[i] = a.positive(x.data[i]);
            if (!mask_[i]) {
                y.data[i] = a.zero();
            }
        }
        return y;
    }

    Tensor<V> backward(const Tensor<V>& g) override
    {
        if (g.size() != mask_.size()) {
            throw ShapeError("relu backward: gradient size does not match forward input");
        }
        Tensor<V> gx = g;
        for (std::size_t i = 0; i < g.size(); ++i) {
            if (!mask_[i]) {
                gx.data[i] = this->arith_.zero();
            }
        }
        return gx;
    }

private:
    std::vector<bool> mask_;
};

// ---------------------------------------------------------------------------

/// Window max over [B, C, H, W] by comparison; ties go to the lowest flat
/// index. Backward scatters into the recorded argmax positions, folding
/// overlapping windows in output order.
template <class A>
class MaxPool : public Layer<A>
{
public:
    using V = Value<A>;

    MaxPool(A arith, std::size_t kernel, std::size_t stride)
        : Layer<A>(std::move(arith)), k_(kernel), stride_(stride)
    {
        if (kernel == 0 || stride == 0) {
            throw ShapeError("maxpool: kernel and stride must be positive");
        }
    }

    std::string kind() const override { return "maxpool"; }

    Shape output_shape(const Shape& in) const override
    {
        if (in.size() != 3 || in[1] < k_ || in[2] < k_) {
            throw ShapeError("maxpool: expected [C, H, W] with H, W >= kernel, got " + shape_string(in));
        }
        return {in[0], (in[1] - k_) / stride_ + 1, (in[2] - k_) / stride_ + 1};
    }

    Tensor<V> forward(const Tensor<V>& x, bool /*training*/) override
    {
        detail::require_batch(x.shape, "maxpool");
        const Shape os = output_shape(detail::sample_shape(x.shape));
        const A& a = this->arith_;
        in_shape_ = x.shape;
        const std::size_t batch = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
        Tensor<V> y({batch, c, os[1], os[2]}, a.zero());
        argmax_.assign(y.size(), 0);
        std::size_t out = 0;
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t ch = 0; ch < c; ++ch) {
                const std::size_t base = (n * c + ch) * h * w;
                for (std::size_t oy = 0; oy < os[1]; ++oy) {
                    for (std::size_t ox = 0; ox < os[2]; ++ox, ++out) {
                        std::size_t best = base + (oy * stride_) * w + ox * stride_;
                        for (std::size_t ky = 0; ky < k_; ++ky) {
                            for (std::size_t kx = 0; kx < k_; ++kx) {
                                const std::size_t idx = base + (oy * stride_ + ky) * w + ox * stride_ + kx;
                                if (a.greater(x.data[idx], x.data[best])) {
                                    best = idx;
                                }
                            }
                        }
                        argmax_[out] = best;
                        y.data[out] = x.data[best];
                    }
                }
            }
        }
        return y;
    }

    Tensor<V> backward(const Tensor<V>& g) override
    {
        if (g.size() != argmax_.size()) {
            throw ShapeError("maxpool backward: gradient size does not match output");
        }
        const A& a = this->arith_;
        Tensor<V> gx(in_shape_, a.zero());
        std::vector<bool> touched(gx.size(), false);
        for (std::size_t o = 0; o < g.size(); ++o) {
            const std::size_t i = argmax_[o];
            gx.data[i] = touched[i] ? a.add(gx.data[i], g.data[o]) : g.data[o];
            touched[i] = true;
        }
        return gx;
    }

    const std::vector<std::size_t>& argmax() const { return argmax_; }

private:
    std::size_t k_, stride_;
    Shape in_shape_;
    std::vector<std::size_t> argmax_;
};

// ---------------------------------------------------------------------------

/// Batch normalization over [B, F] (per feature) or [B, C, H, W] (per
/// channel). Statistics fold over n, then spatial positions, and divide by
/// the reduction count, which must be a power of two so the LNS division is
/// an exact log subtraction. Evaluation uses running statistics.
template <class A>
class BatchNorm : public Layer<A>
{
public:
    using V = Value<A>;

    BatchNorm(A arith, std::size_t features, double epsilon, double momentum = 0.125)
        : Layer<A>(std::move(arith)), features_(features)
    {
        const A& a = this->arith_;
        eps_ = a.from_real(epsilon);
        mom_ = a.from_real(momentum);
        keep_ = a.from_real(1.0 - momentum);
        gamma_ = {"gamma", Tensor<V>({features}, a.one()), Tensor<V>({features}, a.zero())};
        beta_ = {"beta", Tensor<V>({features}, a.zero()), Tensor<V>({features}, a.zero())};
        running_mean_ = Tensor<V>({features}, a.zero());
        running_var_ = Tensor<V>({features}, a.one());
    }

    std::string kind() const override { return "batchnorm"; }

    Shape output_shape(const Shape& in) const override
    {
        if ((in.size() != 1 && in.size() != 3) || in[0] != features_) {
            throw ShapeError("batchnorm: expected [" + std::to_string(features_) + "] or [" +
                             std::to_string(features_) + ", H, W], got " + shape_string(in));
        }
        return in;
    }

    std::vector<Param<A>*> params() override { return {&gamma_, &beta_}; }
    std::vector<Tensor<V>*> buffers() override { return {&running_mean_, &running_var_}; }
    Param<A>& gamma() { return gamma_; }
    Param<A>& beta() { return beta_; }

    Tensor<V> forward(const Tensor<V>& x, bool training) override
    {
        detail::require_batch(x.shape, "batchnorm");
        output_shape(detail::sample_shape(x.shape));
        const A& a = this->arith_;
        const std::size_t batch = x.dim(0);
        const std::size_t spatial = x.sample_size() / features_;
        const std::size_t count = batch * spatial;
        auto at = [&](std::size_t n, std::size_t f, std::size_t s) { return (n * features_ + f) * spatial + s; };

        Tensor<V> y(x.shape, a.zero());
        if (!training) {
            for (std::size_t f = 0; f < features_; ++f) {
                const V inv_std = a.div(a.one(), a.sqrt(a.add(running_var_.data[f], eps_)));
                const V shift = a.neg(running_mean_.data[f]);
                for (std::size_t n = 0; n < batch; ++n) {
                    for (std::size_t s = 0; s < spatial; ++s) {
                        const V xh = a.mul(a.add(x.data[at(n, f, s)], shift), inv_std);
                        y.data[at(n, f, s)] = a.add(a.mul(gamma_.value.data[f], xh), beta_.value.data[f]);
                    }
                }
            }
            return y;
        }

        if (!std::has_single_bit(count)) {
            throw ShapeError("batchnorm: reduction count " + std::to_string(count) + " is not a power of two");
        }
        count_ = a.from_real(static_cast<double>(count));
        shape_ = x.shape;
        xhat_ = Tensor<V>(x.shape, a.zero());
        inv_std_.assign(features_, a.zero());
        for (std::size_t f = 0; f < features_; ++f) {
            Accumulator<A> sum(a);
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t s = 0; s < spatial; ++s) {
                    sum.add(x.data[at(n, f, s)]);
                }
            }
            const V mean = a.div(sum.value(), count_);
            const V shift = a.neg(mean);
            Accumulator<A> sq(a);
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t s = 0; s < spatial; ++s) {
                    const V diff = a.add(x.data[at(n, f, s)], shift);
                    xhat_.data[at(n, f, s)] = diff;
                    sq.add(a.mul(diff, diff));
                }
            }
            const V var = a.div(sq.value(), count_);
            const V inv_std = a.div(a.one(), a.sqrt(a.add(var, eps_)));
            inv_std_[f] = inv_std;
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t s = 0; s < spatial; ++s) {
                    V& xh = xhat_.data[at(n, f, s)];
                    xh = a.mul(xh, inv_std);
                    y.data[at(n, f, s)] = a.add(a.mul(gamma_.value.data[f], xh), beta_.value.data[f]);
                }
            }
            running_mean_.data[f] = a.add(a.mul(keep_, running_mean_.data[f]), a.mul(mom_, mean));
            running_var_.data[f] = a.add(a.mul(keep_, running_var_.data[f]), a.mul(mom_, var));
        }
        return y;
    }

    // dx = inv_std / M * (M * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
    Tensor<V> backward(const Tensor<V>& g) override
    {
        if (g.shape != shape_) {
            throw ShapeError("batchnorm backward: gradient " + shape_string(g.shape) + " does not match output");
        }
        const A& a = this->arith_;
        const std::size_t batch = shape_[0];
        const std::size_t spatial = shape_size(shape_) / batch / features_;
        auto at = [&](std::size_t n, std::size_t f, std::size_t s) { return (n * features_ + f) * spatial + s; };

        Tensor<V> gx(shape_, a.zero());
        for (std::size_t f = 0; f < features_; ++f) {
            Accumulator<A> dbeta(a);
            Accumulator<A> dgamma(a);
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t s = 0; s < spatial; ++s) {
                    const std::size_t i = at(n, f, s);
                    dbeta.add(g.data[i]);
                    dgamma.add(a.mul(g.data[i], xhat_.data[i]));
                }
            }
            beta_.grad.data[f] = dbeta.value();
            gamma_.grad.data[f] = dgamma.value();
            // sum(dxhat) = gamma * dbeta, sum(dxhat * xhat) = gamma * dgamma
            const V neg_sum_dxhat = a.neg(a.mul(gamma_.value.data[f], dbeta.value()));
            const V neg_dot = a.neg(a.mul(gamma_.value.data[f], dgamma.value()));
            const V scale = a.div(inv_std_[f], count_);
            for (std::size_t n = 0; n < batch; ++n) {
                for (std::size_t s = 0; s < spatial; ++s) {
                    const std::size_t i = at(n, f, s);
                    const V dxhat = a.mul(g.data[i], gamma_.value.data[f]);
                    V term = a.add(a.mul(count_, dxhat), neg_sum_dxhat);
                    term = a.add(term, a.mul(xhat_.data[i], neg_dot));
                    gx.data[i] = a.mul(scale, term);
                }
            }
        }
        return gx;
    }

private:
    std::size_t features_;
    V eps_{};
    V mom_{};
    V keep_{};
    V count_{};
    Param<A> gamma_;
    Param<A> beta_;
    Tensor<V> running_mean_;
    Tensor<V> running_var_;
    Shape shape_;
    Tensor<V> xhat_;
    std::vector<V> inv_std_;
};

// ---------------------------------------------------------------------------

/// Softmax with cross-entropy over [B, C] logits.
///
/// Forward: m = max_j x_j (compare), u_j = x_j - m, e_j = exp(u_j), S = fold
/// of e_j in class order, p_j = e_j / S. Backward: (p - onehot) / B.
/// The scalar loss is a double-precision diagnostic.
template <class A>
class SoftmaxXent
{
public:
    using V = Value<A>;

    SoftmaxXent(A arith, std::size_t classes) : arith_(std::move(arith)), classes_(classes) {}

    std::size_t classes() const { return classes_; }

    /// Probabilities only; usable for inference without labels.
    Tensor<V> probabilities(const Tensor<V>& logits) const
    {
        if (logits.rank() != 2 || logits.dim(1) != classes_) {
            throw ShapeError("softmax: expected [B, " + std::to_string(classes_) + "] logits, got " +
                             shape_string(logits.shape));
        }
        const A& a = arith_;
        const std::size_t batch = logits.dim(0);
        Tensor<V> p(logits.shape, a.zero());
        std::vector<V> e(classes_);
        for (std::size_t n = 0; n < batch; ++n) {
            const V* row = &logits.data[n * classes_];
            std::size_t best = 0;
            for (std::size_t j = 1; j < classes_; ++j) {
                if (a.greater(row[j], row[best])) {
                    best = j;
                }
            }
            const V shift = a.neg(row[best]);
            Accumulator<A> sum(a);
            for (std::size_t j = 0; j < classes_; ++j) {
                e[j] = j == best ? a.one() : a.exp_nonpositive(a.add(row[j], shift));
                sum.add(e[j]);
            }
            const V denom = sum.value();
            for (std::size_t j = 0; j < classes_; ++j) {
                p.data[n * classes_ + j] = a.div(e[j], denom);
            }
        }
        return p;
    }

    /// Returns the mean cross-entropy (diagnostic) and caches probabilities.
    double forward(const Tensor<V>& logits, const std::vector<int>& labels)
    {
        probs_ = probabilities(logits);
        const std::size_t batch = logits.dim(0);
        if (labels.size() != batch) {
            throw ShapeError("softmax: label count does not match batch");
        }
        labels_ = labels;
        double loss = 0.0;
        for (std::size_t n = 0; n < batch; ++n) {
            if (labels[n] < 0 || static_cast<std::size_t>(labels[n]) >= classes_) {
                throw ShapeError("softmax: label " + std::to_string(labels[n]) + " outside class range");
            }
            const double pl = arith_.to_real(probs_.data[n * classes_ + static_cast<std::size_t>(labels[n])]);
            loss -= std::log(std::max(pl, 1e-12));
        }
        return loss / static_cast<double>(batch);
    }

    Tensor<V> backward() const
    {
        const A& a = arith_;
        const std::size_t batch = probs_.dim(0);
        const V batch_size = a.from_real(static_cast<double>(batch));
        const V minus_one = a.neg(a.one());
        Tensor<V> g(probs_.shape, a.zero());
        for (std::size_t n = 0; n < batch; ++n) {
            for (std::size_t j = 0; j < classes_; ++j) {
                V v = probs_.data[n * classes_ + j];
                if (static_cast<int>(j) == labels_[n]) {
                    v = a.add(v, minus_one);
                }
                g.data[n * classes_ + j] = a.div(v, batch_size);
            }
        }
        return g;
    }

    const Tensor<V>& probs() const { return probs_; }

private:
    A arith_;
    std::size_t classes_;
    Tensor<V> probs_;
    std::vector<int> labels_;
};

/// Index of the largest entry per row (lowest index on ties).
template <class A>
std::vector<int> argmax_rows(const A& a, const Tensor<Value<A>>& t)
{
    const std::size_t batch = t.dim(0);
    const std::size_t cols = t.sample_size();
    std::vector<int> out(batch, 0);
    for (std::size_t n = 0; n < batch; ++n) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < cols; ++j) {
            if (a.greater(t.data[n * cols + j], t.data[n * cols + best])) {
                best = j;
            }
        }
        out[n] = static_cast<int>(best);
    }
    return out;
}

}  // namespace qaalns::nn
