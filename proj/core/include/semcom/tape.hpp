#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "semcom/tensor.hpp"

namespace semcom {

class Tape;

class AutodiffError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Handle to a value recorded on a tape.
class Var {
public:
    Var() = default;

    const Shape& shape() const;
    const std::vector<double>& value() const;
    Tensor tensor() const;
    double scalar() const;
    int id() const { return id_; }
    Tape* tape() const { return tape_; }

private:
    friend class Tape;
    Var(Tape* t, int id) : tape_(t), id_(id) {}
    Tape* tape_ = nullptr;
    int id_ = -1;
};

struct TapeNode {
    const char* op;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad; // allocated by backward()
    std::vector<int> inputs;
    std::function<void(Tape&, TapeNode&)> backward; // null for leaves
    const Tensor* leaf = nullptr;                   // set for parameter leaves
};

// Reverse-mode autodiff tape. Operations are recorded in creation order,
// which is a topological order by construction; backward() performs one
// reverse sweep, visiting each node exactly once, then accumulates leaf
// gradients into the referenced parameter tensors. A tape is built per
// forward pass and discarded after backward.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf whose gradient is accumulated into t.grad by backward().
    Var param(const Tensor& t);
    // Constant leaf; no gradient is tracked.
    Var input(const Tensor& t);
    Var input(Shape shape, std::vector<double> values);

    void backward(const Var& loss);
    bool backward_done() const { return backward_done_; }

    int size() const { return static_cast<int>(nodes_.size()); }
    TapeNode& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }
    const TapeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

    Var emit(const char* op, Shape shape, std::vector<double> value, std::vector<int> inputs,
             std::function<void(Tape&, TapeNode&)> bw);

private:
    std::deque<TapeNode> nodes_;
    bool backward_done_ = false;
};

// Elementwise and scalar arithmetic.
Var add(Var a, Var b);
Var add(Var a, double s);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var mul(Var a, double s);

// Dense algebra.
Var matmul(Var a, Var b);            // [m,k] x [k,n]
Var linear(Var x, Var w, Var b);     // x[B,K], w[N,K], b[N] -> [B,N]

// Convolutional ops on [B,C,H,W].
Var conv2d(Var x, Var w, Var b, int stride, int padding);
Var avg_pool2d(Var x, int k = 2);
Var nearest_upsample2d(Var x, int factor = 2);

// Nonlinearities.
Var relu(Var x);
Var silu(Var x);
Var tanh_op(Var x);

// Normalization and conditioning.
Var group_norm(Var x, Var gamma, Var beta, int groups, double eps = 1e-5);
// Per-item zero-mean unit-variance normalization over all trailing dims.
Var standardize(Var x, double eps = 1e-12);
// y[b,c,...] = x[b,c,...] * (1 + scale[b,c]) + shift[b,c]
Var film(Var x, Var scale, Var shift);

// Layout ops.
Var reshape(Var x, Shape shape);
Var concat(const std::vector<Var>& xs, int axis);
Var channels_to_rows(Var x);                 // [B,C,H,W] -> [B*H*W, C]
Var rows_to_channels(Var x, const Shape& nchw);

// Codebook lookup: out[r,:] = m[rows[r],:], gradient scatter-adds into m.
Var gather_rows(Var m, std::vector<int> rows);
// Forward takes the target's values, backward passes the gradient to x
// unchanged (the straight-through estimator).
Var straight_through(Var x, const Tensor& target);

// Reductions.
Var sum(Var x);
Var mean(Var x);
Var mse(Var a, Var b);

} // namespace semcom
