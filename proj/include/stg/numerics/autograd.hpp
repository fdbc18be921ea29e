// SPDX-License-Identifier: Apache-2.0
#pragma once

// Reverse-mode automatic differentiation on an explicit tape.
//
// A Tape records every op applied to its Vars in creation order; backward()
// walks the tape in reverse and accumulates gradients into the Parameters
// that were bound with Tape::param. A tape is owned by one thread; several
// tapes may read the same parameters concurrently.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "stg/numerics/parameters.hpp"
#include "stg/numerics/tensor.hpp"

namespace stg::num {

template <typename T>
class Tape;

template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    std::size_t id = 0;

    const Tensor<T>& value() const;
    const Shape& shape() const { return value().shape; }
    T item() const { return value().item(); }
};

enum class TapeMode { Train, Inference };

template <typename T>
class Tape {
   public:
    using BackwardFn = std::function<void(Tape&, std::size_t)>;

    explicit Tape(TapeMode mode = TapeMode::Train) : mode_(mode) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool recording() const { return mode_ == TapeMode::Train; }

    Var<T> constant(Tensor<T> value);
    // Binds a parameter as a differentiable leaf. Parameters from frozen sets
    // (and every parameter in inference mode) enter as constants.
    Var<T> param(Parameter<T>& p);
    void freeze(const ParameterSet<T>& set);

    // Accumulates dLoss/dParam into every bound parameter and flags it ready.
    void backward(Var<T> loss);

    const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
    // Gradient w.r.t. a tape value after backward (zeros if unreached).
    Tensor<T> grad(Var<T> v) const;
    std::size_t size() const { return nodes_.size(); }

    // Op plumbing.
    Var<T> push(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs,
                BackwardFn fn);
    Var<T> push(const char* op, Tensor<T> value, const std::vector<Var<T>>& inputs,
                BackwardFn fn);
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
    Tensor<T>& grad_buffer(std::size_t id);

   private:
    struct Node {
        const char* op = "";
        Tensor<T> value;
        Tensor<T> grad;
        bool requires_grad = false;
        Parameter<T>* param = nullptr;
        BackwardFn backward;
    };

    Var<T> push_node(Node node);

    TapeMode mode_;
    std::vector<Node> nodes_;
    std::unordered_map<const Parameter<T>*, std::size_t> bound_;
    std::unordered_set<const Parameter<T>*> frozen_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
    return tape->value(id);
}

// Primitive ops. All shapes are checked; mismatches raise ShapeError naming
// the op and the offending shapes.
template <typename T> Var<T> matmul(Var<T> a, Var<T> b);
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T factor);
template <typename T> Var<T> add_scalar(Var<T> a, T offset);
// x: (R, C); table: (r, C) or (C) with R % r == 0. Row i receives table row i % r.
template <typename T> Var<T> add_rows(Var<T> x, Var<T> table);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> gelu(Var<T> a);
template <typename T> Var<T> exp(Var<T> a);
template <typename T> Var<T> softmax_rows(Var<T> a);
template <typename T> Var<T> log_softmax_rows(Var<T> a);
template <typename T> Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T eps = T(1e-5));
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, std::size_t stride, std::size_t padding);
template <typename T> Var<T> reshape(Var<T> a, Shape shape);
template <typename T> Var<T> concat_cols(Var<T> a, Var<T> b);
template <typename T> Var<T> concat_rows(const std::vector<Var<T>>& parts);
template <typename T> Var<T> slice_rows(Var<T> a, std::size_t begin, std::size_t end);
template <typename T> Var<T> slice_cols(Var<T> a, std::size_t begin, std::size_t end);
template <typename T> Var<T> gather_rows(Var<T> a, const std::vector<std::size_t>& rows);
// q, k, v: (groups * seq, d). Causal masks keys after the query position.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::size_t seq, std::size_t heads, bool causal);
// x: (groups * seq, C) -> (groups, C)
template <typename T> Var<T> group_mean(Var<T> x, std::size_t seq);
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);
template <typename T> Var<T> mse(Var<T> a, Var<T> b);
template <typename T> Var<T> l2_norm(Var<T> a);
// a: (R, C) -> (R): a[i, cols[i]]
template <typename T> Var<T> pick(Var<T> a, const std::vector<std::size_t>& cols);
template <typename T> Var<T> clamp(Var<T> a, T lo, T hi);
template <typename T> Var<T> minimum(Var<T> a, Var<T> b);
template <typename T> Var<T> detach(Var<T> a);

// Softmax attention weights (groups, heads, seq, seq) for inspection.
template <typename T>
Tensor<T> attention_weights(const Tensor<T>& q, const Tensor<T>& k, std::size_t seq,
                            std::size_t heads, bool causal);

}  // namespace stg::num
