#pragma once

#include "qaalns/nn/layers.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

namespace qaalns::nn {

enum class LayerKind
{
    Dense,
    Conv2d,
    ReLU,
    MaxPool,
    BatchNorm,
    SoftmaxXent
};

struct LayerSpec
{
    LayerKind kind = LayerKind::Dense;
    // dense
    std::size_t in = 0;
    std::size_t out = 0;
    bool bias = true;
    // conv2d
    std::size_t in_ch = 0;
    std::size_t out_ch = 0;
    std::size_t kernel = 0;
    std::size_t stride = 1;
    std::size_t pad = 0;
    // batchnorm
    std::size_t features = 0;
    double epsilon = 0.0;  // <= 0 selects default_bn_epsilon(F)
    // softmax
    std::size_t classes = 0;
};

struct NetworkSpec
{
    Shape input_shape;  // per sample
    std::vector<LayerSpec> layers;
    std::uint64_t init_seed = 1;

    /// Walks the shapes; throws ShapeError naming the first incompatible layer.
    void validate() const;
    std::size_t classes() const;

    nlohmann::ordered_json to_json() const;
    static NetworkSpec from_json(const nlohmann::ordered_json& j);
    /// FNV-1a over the canonical JSON dump.
    std::uint64_t hash() const;

    /// in -> hidden (-> batchnorm) -> relu, repeated, -> classes -> softmax.
    static NetworkSpec mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t classes,
                           bool batchnorm = false, std::uint64_t seed = 1);
};

std::uint64_t fnv1a64(std::string_view bytes);

/// Batch-norm epsilon used when a spec leaves it unset.
double default_bn_epsilon(int fractional_bits);

template <class A>
class Network
{
public:
    using V = Value<A>;

    /// Builds and initializes every layer from spec.init_seed. `fractional_bits`
    /// only feeds the default batch-norm epsilon.
    Network(const NetworkSpec& spec, A arith, int fractional_bits)
        : spec_(spec), arith_(arith), head_(arith, spec.classes())
    {
        spec_.validate();
        for (const LayerSpec& l : spec_.layers) {
            switch (l.kind) {
            case LayerKind::Dense:
                layers_.push_back(std::make_unique<Dense<A>>(arith, l.in, l.out, l.bias));
                break;
            case LayerKind::Conv2d:
                layers_.push_back(
                    std::make_unique<Conv2d<A>>(arith, l.in_ch, l.out_ch, l.kernel, l.stride, l.pad, l.bias));
                break;
            case LayerKind::ReLU:
                layers_.push_back(std::make_unique<ReLU<A>>(arith));
                break;
            case LayerKind::MaxPool:
                layers_.push_back(std::make_unique<MaxPool<A>>(arith, l.kernel, l.stride));
                break;
            case LayerKind::BatchNorm:
                layers_.push_back(std::make_unique<BatchNorm<A>>(
                    arith, l.features, l.epsilon > 0.0 ? l.epsilon : default_bn_epsilon(fractional_bits)));
                break;
            case LayerKind::SoftmaxXent:
                break;
            }
        }
        Rng rng(spec_.init_seed);
        for (auto& layer : layers_) {
            layer->init(rng);
        }
    }

    const NetworkSpec& spec() const { return spec_; }
    const A& arith() const { return arith_; }
    std::vector<std::unique_ptr<Layer<A>>>& layers() { return layers_; }

    Tensor<V> logits(const Tensor<V>& x, bool training)
    {
        Tensor<V> h = x;
        for (auto& layer : layers_) {
            h = layer->forward(h, training);
        }
        return h;
    }

    struct BatchResult
    {
        double loss = 0.0;
        std::size_t correct = 0;
    };

    /// Forward, loss and backward; parameter gradients are left in place.
    BatchResult forward_backward(const Tensor<V>& x, const std::vector<int>& labels)
    {
        const Tensor<V> z = logits(x, true);
        BatchResult r;
        r.loss = head_.forward(z, labels);
        const std::vector<int> pred = argmax_rows(arith_, head_.probs());
        for (std::size_t n = 0; n < labels.size(); ++n) {
            r.correct += pred[n] == labels[n] ? 1 : 0;
        }
        Tensor<V> g = head_.backward();
        for (std::size_t i = layers_.size(); i-- > 0;) {
            g = layers_[i]->backward(g);
        }
        return r;
    }

    std::vector<int> predict(const Tensor<V>& x)
    {
        return argmax_rows(arith_, head_.probabilities(logits(x, false)));
    }

    Tensor<V> probabilities(const Tensor<V>& x) { return head_.probabilities(logits(x, false)); }

    std::vector<Param<A>*> params()
    {
        std::vector<Param<A>*> out;
        for (auto& layer : layers_) {
            for (Param<A>* p : layer->params()) {
                out.push_back(p);
            }
        }
        return out;
    }

    std::vector<Tensor<V>*> state_tensors()
    {
        std::vector<Tensor<V>*> out;
        for (auto& layer : layers_) {
            for (Param<A>* p : layer->params()) {
                out.push_back(&p->value);
            }
            for (Tensor<V>* b : layer->buffers()) {
                out.push_back(b);
            }
        }
        return out;
    }

private:
    NetworkSpec spec_;
    A arith_;
    std::vector<std::unique_ptr<Layer<A>>> layers_;
    SoftmaxXent<A> head_;
};

}  // namespace qaalns::nn
