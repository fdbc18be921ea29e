// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "stg/numerics/tensor.hpp"

namespace stg::num {

template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    // Set by backward (or ParameterSet::mark_grads_ready); cleared by the optimizer.
    bool grad_ready = false;

    Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape) {}
};

// Named, ordered collection of parameters with stable addresses.
template <typename T>
class ParameterSet {
   public:
    explicit ParameterSet(std::string prefix = {}) : prefix_(std::move(prefix)) {}
    ParameterSet(const ParameterSet&) = delete;
    ParameterSet& operator=(const ParameterSet&) = delete;
    ParameterSet(ParameterSet&&) noexcept = default;
    ParameterSet& operator=(ParameterSet&&) noexcept = default;

    Parameter<T>& add(const std::string& name, Tensor<T> value);
    Parameter<T>* find(const std::string& name);
    const Parameter<T>* find(const std::string& name) const;
    Parameter<T>& at(const std::string& name);

    std::size_t size() const { return params_.size(); }
    std::size_t numel() const;
    const std::string& prefix() const { return prefix_; }

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.cbegin(); }
    auto end() const { return params_.cend(); }

    void zero_grad();
    // Zero every gradient and mark it populated, so parameters a loss does
    // not reach still receive an explicit zero gradient.
    void mark_grads_ready();

    // Copies values from a set with identical names and shapes (dtype may differ).
    template <typename U>
    void copy_values_from(const ParameterSet<U>& other);

   private:
    std::string prefix_;
    std::vector<std::unique_ptr<Parameter<T>>> params_;
};

// Fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, std::mt19937_64& rng);

template <typename T>
template <typename U>
void ParameterSet<T>::copy_values_from(const ParameterSet<U>& other) {
    for (const auto& src : other) {
        Parameter<T>& dst = at(src->name);
        if (dst.value.shape != src->value.shape) {
            throw ShapeError("copy_values_from: shape mismatch for " + src->name);
        }
        dst.value.data.assign(src->value.data.begin(), src->value.data.end());
    }
}

extern template class ParameterSet<float>;
extern template class ParameterSet<double>;

}  // namespace stg::num
