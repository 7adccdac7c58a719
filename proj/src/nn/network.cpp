#include "qaalns/nn/network.hpp"

#include <cmath>

namespace qaalns::nn {

namespace {

using ojson = nlohmann::ordered_json;

const char* kind_name(LayerKind k)
{
    switch (k) {
    case LayerKind::Dense:
        return "dense";
    case LayerKind::Conv2d:
        return "conv2d";
    case LayerKind::ReLU:
        return "relu";
    case LayerKind::MaxPool:
        return "maxpool";
    case LayerKind::BatchNorm:
        return "batchnorm";
    case LayerKind::SoftmaxXent:
        return "softmax_xent";
    }
    return "?";
}

LayerKind kind_from_name(const std::string& s)
{
    for (LayerKind k : {LayerKind::Dense, LayerKind::Conv2d, LayerKind::ReLU, LayerKind::MaxPool,
                        LayerKind::BatchNorm, LayerKind::SoftmaxXent}) {
        if (s == kind_name(k)) {
            return k;
        }
    }
    throw ShapeError("unknown layer type '" + s + "'");
}

std::size_t get_size(const ojson& j, const char* key, std::size_t fallback, bool required)
{
    if (!j.contains(key)) {
        if (required) {
            throw ShapeError(std::string("layer is missing '") + key + "'");
        }
        return fallback;
    }
    if (!j.at(key).is_number_unsigned()) {
        throw ShapeError(std::string("layer field '") + key + "' must be a non-negative integer");
    }
    return j.at(key).get<std::size_t>();
}

}  // namespace

double default_bn_epsilon(int fractional_bits)
{
    return std::ldexp(1.0, 2 - fractional_bits);
}

std::uint64_t fnv1a64(std::string_view bytes)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void NetworkSpec::validate() const
{
    if (input_shape.empty() || shape_size(input_shape) == 0) {
        throw ShapeError("network input shape must be non-empty");
    }
    if (layers.empty() || layers.back().kind != LayerKind::SoftmaxXent) {
        throw ShapeError("the final layer must be softmax_xent");
    }
    const RealArith a;
    Shape s = input_shape;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const LayerSpec& l = layers[i];
        const std::string where = "layer " + std::to_string(i) + " (" + kind_name(l.kind) + "): ";
        try {
            switch (l.kind) {
            case LayerKind::Dense:
                s = Dense<RealArith>(a, l.in, l.out, l.bias).output_shape(s);
                break;
            case LayerKind::Conv2d:
                s = Conv2d<RealArith>(a, l.in_ch, l.out_ch, l.kernel, l.stride, l.pad, l.bias).output_shape(s);
                break;
            case LayerKind::ReLU:
                break;
            case LayerKind::MaxPool:
                s = MaxPool<RealArith>(a, l.kernel, l.stride).output_shape(s);
                break;
            case LayerKind::BatchNorm:
                s = BatchNorm<RealArith>(a, l.features, 1.0).output_shape(s);
                break;
            case LayerKind::SoftmaxXent:
                if (i + 1 != layers.size()) {
                    throw ShapeError("softmax_xent must be the last layer");
                }
                if (l.classes < 2 || s != Shape{l.classes}) {
                    throw ShapeError("expects [" + std::to_string(l.classes) + "] logits, previous layer gives " +
                                     shape_string(s));
                }
                break;
            }
        } catch (const ShapeError& e) {
            throw ShapeError(where + e.what());
        }
    }
}

std::size_t NetworkSpec::classes() const
{
    if (layers.empty() || layers.back().kind != LayerKind::SoftmaxXent) {
        throw ShapeError("the final layer must be softmax_xent");
    }
    return layers.back().classes;
}

ojson NetworkSpec::to_json() const
{
    ojson j;
    j["input_shape"] = input_shape;
    j["init_seed"] = init_seed;
    ojson arr = ojson::array();
    for (const LayerSpec& l : layers) {
        ojson lj;
        lj["type"] = kind_name(l.kind);
        switch (l.kind) {
        case LayerKind::Dense:
            lj["in"] = l.in;
            lj["out"] = l.out;
            lj["bias"] = l.bias;
            break;
        case LayerKind::Conv2d:
            lj["in_ch"] = l.in_ch;
            lj["out_ch"] = l.out_ch;
            lj["kernel"] = l.kernel;
            lj["stride"] = l.stride;
            lj["pad"] = l.pad;
            lj["bias"] = l.bias;
            break;
        case LayerKind::MaxPool:
            lj["kernel"] = l.kernel;
            lj["stride"] = l.stride;
            break;
        case LayerKind::BatchNorm:
            lj["features"] = l.features;
            if (l.epsilon > 0.0) {
                lj["epsilon"] = l.epsilon;
            }
            break;
        case LayerKind::SoftmaxXent:
            lj["classes"] = l.classes;
            break;
        case LayerKind::ReLU:
            break;
        }
        arr.push_back(lj);
    }
    j["layers"] = arr;
    return j;
}

NetworkSpec NetworkSpec::from_json(const ojson& j)
{
    if (!j.is_object() || !j.contains("layers") || !j.at("layers").is_array()) {
        throw ShapeError("network spec needs a 'layers' array");
    }
    NetworkSpec spec;
    if (!j.contains("input_shape") || !j.at("input_shape").is_array()) {
        throw ShapeError("network spec needs an 'input_shape' array");
    }
    for (const auto& d : j.at("input_shape")) {
        if (!d.is_number_unsigned()) {
            throw ShapeError("input_shape entries must be non-negative integers");
        }
        spec.input_shape.push_back(d.get<std::size_t>());
    }
    if (j.contains("init_seed")) {
        spec.init_seed = j.at("init_seed").get<std::uint64_t>();
    }
    for (const auto& lj : j.at("layers")) {
        if (!lj.is_object() || !lj.contains("type") || !lj.at("type").is_string()) {
            throw ShapeError("every layer needs a string 'type'");
        }
        LayerSpec l;
        l.kind = kind_from_name(lj.at("type").get<std::string>());
        if (lj.contains("bias")) {
            l.bias = lj.at("bias").get<bool>();
        }
        switch (l.kind) {
        case LayerKind::Dense:
            l.in = get_size(lj, "in", 0, true);
            l.out = get_size(lj, "out", 0, true);
            break;
        case LayerKind::Conv2d:
            l.in_ch = get_size(lj, "in_ch", 0, true);
            l.out_ch = get_size(lj, "out_ch", 0, true);
            l.kernel = get_size(lj, "kernel", 0, true);
            l.stride = get_size(lj, "stride", 1, false);
            l.pad = get_size(lj, "pad", 0, false);
            break;
        case LayerKind::MaxPool:
            l.kernel = get_size(lj, "kernel", 0, true);
            l.stride = get_size(lj, "stride", l.kernel, false);
            break;
        case LayerKind::BatchNorm:
            l.features = get_size(lj, "features", 0, true);
            if (lj.contains("epsilon")) {
                l.epsilon = lj.at("epsilon").get<double>();
            }
            break;
        case LayerKind::SoftmaxXent:
            l.classes = get_size(lj, "classes", 0, true);
            break;
        case LayerKind::ReLU:
            break;
        }
        spec.layers.push_back(l);
    }
    spec.validate();
    return spec;
}

std::uint64_t NetworkSpec::hash() const
{
    return fnv1a64(to_json().dump());
}

NetworkSpec NetworkSpec::mlp(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t classes,
                             bool batchnorm, std::uint64_t seed)
{
    NetworkSpec spec;
    spec.input_shape = {in};
    spec.init_seed = seed;
    std::size_t prev = in;
    for (std::size_t h : hidden) {
        LayerSpec d;
        d.kind = LayerKind::Dense;
        d.in = prev;
        d.out = h;
        spec.layers.push_back(d);
        if (batchnorm) {
            LayerSpec bn;
            bn.kind = LayerKind::BatchNorm;
            bn.features = h;
            spec.layers.push_back(bn);
        }
        LayerSpec r;
        r.kind = LayerKind::ReLU;
        spec.layers.push_back(r);
        prev = h;
    }
    LayerSpec out;
    out.kind = LayerKind::Dense;
    out.in = prev;
    out.out = classes;
    spec.layers.push_back(out);
    LayerSpec sm;
    sm.kind = LayerKind::SoftmaxXent;
    sm.classes = classes;
    spec.layers.push_back(sm);
    spec.validate();
    return spec;
}

}  // namespace qaalns::nn
