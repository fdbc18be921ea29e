// SPDX-License-Identifier: Apache-2.0
#include "stg/numerics/tensor.hpp"

#include <cmath>

namespace stg::num {

std::string shape_str(const Shape& shape) {
    std::string out = "(";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(shape[i]);
    }
    return out + ")";
}

std::size_t shape_numel(const Shape& shape) {
    if (shape.empty()) return 0;
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

template <typename T>
bool Tensor<T>::all_finite() const {
    for (T v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

template struct Tensor<float>;
template struct Tensor<double>;

}  // namespace stg::num
