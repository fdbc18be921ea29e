// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <random>
#include <string>

#include "stg/numerics/autograd.hpp"

namespace stg::models {

using num::Parameter;
using num::ParameterSet;
using num::Tape;
using num::Tensor;
using num::Var;

// y = x W + b with W: (in, out).
template <typename T>
struct Linear {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;

    Linear() = default;
    Linear(ParameterSet<T>& set, const std::string& name, std::size_t in, std::size_t out,
           std::mt19937_64& rng)
        : weight(&set.add(name + ".weight", num::uniform_fan_in<T>({in, out}, in, rng))),
          bias(&set.add(name + ".bias", num::uniform_fan_in<T>({out}, in, rng))) {}

    Var<T> operator()(Tape<T>& tape, Var<T> x) const {
        return num::add_rows(num::matmul(x, tape.param(*weight)), tape.param(*bias));
    }
    std::size_t in() const { return weight->value.shape[0]; }
    std::size_t out() const { return weight->value.shape[1]; }
};

template <typename T>
struct LayerNorm {
    Parameter<T>* gain = nullptr;
    Parameter<T>* bias = nullptr;

    LayerNorm() = default;
    LayerNorm(ParameterSet<T>& set, const std::string& name, std::size_t dim)
        : gain(&set.add(name + ".gain", Tensor<T>({dim}, T(1)))),
          bias(&set.add(name + ".bias", Tensor<T>({dim}, T(0)))) {}

    Var<T> operator()(Tape<T>& tape, Var<T> x) const {
        return num::layer_norm(x, tape.param(*gain), tape.param(*bias), T(1e-5));
    }
};

template <typename T>
struct Conv2d {
    Parameter<T>* weight = nullptr;
    Parameter<T>* bias = nullptr;
    std::size_t stride = 1;
    std::size_t padding = 0;

    Conv2d() = default;
    Conv2d(ParameterSet<T>& set, const std::string& name, std::size_t in, std::size_t out,
           std::size_t kernel, std::size_t stride_, std::size_t padding_, std::mt19937_64& rng)
        : weight(&set.add(name + ".weight",
                          num::uniform_fan_in<T>({out, in, kernel, kernel}, in * kernel * kernel, rng))),
          bias(&set.add(name + ".bias", num::uniform_fan_in<T>({out}, in * kernel * kernel, rng))),
          stride(stride_),
          padding(padding_) {}

    Var<T> operator()(Tape<T>& tape, Var<T> x) const {
        return num::conv2d(x, tape.param(*weight), tape.param(*bias), stride, padding);
    }
};

}  // namespace stg::models
