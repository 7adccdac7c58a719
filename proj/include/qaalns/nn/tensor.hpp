#pragma once

#include "qaalns/lns.hpp"

#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

namespace qaalns::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s)
{
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& s);

class ShapeError : public LnsError
{
public:
    using LnsError::LnsError;
};

/// Row-major dense tensor. The element type carries the arithmetic: doubles
/// for the float mirror, LnsScalar for bit-true training.
template <class T>
struct Tensor
{
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    Tensor(Shape s, const T& fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    std::size_t rank() const { return shape.size(); }
    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    /// Per-sample element count for a batch-leading tensor.
    std::size_t sample_size() const { return shape.empty() || shape[0] == 0 ? 0 : data.size() / shape[0]; }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

using LnsTensor = Tensor<LnsScalar>;

}  // namespace qaalns::nn
