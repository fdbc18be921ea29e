// SPDX-License-Identifier: Apache-2.0
#include "stg/numerics/parameters.hpp"

#include <cmath>

namespace stg::num {

template <typename T>
Parameter<T>& ParameterSet<T>::add(const std::string& name, Tensor<T> value) {
    const std::string full = prefix_.empty() ? name : prefix_ + "." + name;
    if (find(full)) throw std::invalid_argument("duplicate parameter name: " + full);
    params_.push_back(std::make_unique<Parameter<T>>(full, std::move(value)));
    return *params_.back();
}

template <typename T>
Parameter<T>* ParameterSet<T>::find(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

template <typename T>
const Parameter<T>* ParameterSet<T>::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

template <typename T>
Parameter<T>& ParameterSet<T>::at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw std::out_of_range("no parameter named " + name);
}

template <typename T>
std::size_t ParameterSet<T>::numel() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
    for (auto& p : params_) {
        p->grad.fill(T(0));
        p->grad_ready = false;
    }
}

template <typename T>
void ParameterSet<T>::mark_grads_ready() {
    for (auto& p : params_) {
        p->grad.fill(T(0));
        p->grad_ready = true;
    }
}

template <typename T>
Tensor<T> uniform_fan_in(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template Tensor<float> uniform_fan_in<float>(Shape, std::size_t, std::mt19937_64&);
template Tensor<double> uniform_fan_in<double>(Shape, std::size_t, std::mt19937_64&);
template Tensor<float> normal_init<float>(Shape, double, std::mt19937_64&);
template Tensor<double> normal_init<double>(Shape, double, std::mt19937_64&);

}  // namespace stg::num
