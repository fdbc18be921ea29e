// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace stg::num {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

class ShapeError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

class NumericalError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

// Dense row-major tensor. Extents are always positive.
template <typename T>
struct Tensor {
    Shape shape;
    std::vector<T> data;

    Tensor() = default;
    explicit Tensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(shape_numel(shape), fill) {}
    Tensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
        if (data.size() != shape_numel(shape)) {
            throw ShapeError("tensor: " + std::to_string(data.size()) + " values do not fill shape " +
                             shape_str(shape));
        }
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t dim(std::size_t i) const { return shape.at(i); }
    // Matrix view helpers: leading extent and product of the rest.
    std::size_t rows() const { return shape.empty() ? 0 : shape[0]; }
    std::size_t cols() const { return shape.empty() ? 0 : size() / shape[0]; }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }
    T item() const {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape));
        return data[0];
    }

    std::span<T> span() { return data; }
    std::span<const T> span() const { return data; }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    bool all_finite() const;

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

extern template struct Tensor<float>;
extern template struct Tensor<double>;

}  // namespace stg::num
