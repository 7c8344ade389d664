#pragma once

#include <functional>
#include <memory>
#include <unordered_map>
#include <vector>

#include "csda/matrix.hpp"

namespace csda::ad {

// One entry on a Graph's tape. Owned by the Graph; handles stay valid for the
// Graph's lifetime.
struct Node {
    Matrix value;
    Matrix grad;  // same shape as value, zero until backward() reaches it
    bool requires_grad = false;
    std::function<void()> backprop;  // accumulates into input grads; may be empty
};

using Var = Node*;

// Reverse-mode autodiff over a single-use tape. Nodes are created in forward
// order; backward() replays them in reverse creation order, which is a valid
// topological order because inputs always precede their consumers.
//
// A Graph represents one forward/backward pass: call backward() at most once,
// then discard the graph. Parameter leaves are memoized by storage address so
// that a parameter used in several places accumulates one combined gradient.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Constant leaf (no gradient tracked).
    Var leaf(Matrix value);

    // Trainable leaf. Copies the current value; repeated calls with the same
    // storage return the same node.
    Var param(const Matrix& storage);

    // Gradient accumulated for a parameter in this graph, or nullptr if the
    // parameter was never registered.
    const Matrix* grad_of(const Matrix& storage) const;

    // --- elementwise / structural ops -------------------------------------
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var div(Var a, Var b);
    Var scale(Var a, double c);
    Var add_const(Var a, double c);
    Var matmul(Var a, Var b);
    Var add_rowwise(Var a, Var bias);   // bias is 1 x cols
    Var concat_cols(Var a, Var b);
    Var rows(Var a, std::size_t start, std::size_t count);

    // --- nonlinearities ----------------------------------------------------
    Var tanh_(Var a);
    Var sigmoid(Var a);
    Var softmax_rows(Var a);
    Var square(Var a);
    Var pow_const(Var a, double p);     // requires a >= 0 when p is fractional
    Var log_clamped(Var a, double eps); // log(max(x, eps)), zero grad in the clamp
    Var clamp(Var a, double lo, double hi);

    // --- reductions ---------------------------------------------------------
    Var sum_all(Var a);                 // 1x1
    Var mean_all(Var a);                // 1x1
    Var row_dot(Var a, Var b);          // n x 1 of row-wise dot products

    // --- gradient routing ----------------------------------------------------
    // Identity forward; backward multiplies the upstream gradient by -strength.
    Var grl(Var a, double strength);
    // Identity forward; no gradient flows to the input.
    Var stop_gradient(Var a);

    // Seeds d(root)/d(root) = 1 and propagates through the tape. root must be
    // 1x1. Call once per graph.
    void backward(Var root);

    std::size_t node_count() const { return tape_.size(); }

private:
    Var make(Matrix value, bool requires_grad);

    std::vector<std::unique_ptr<Node>> tape_;
    std::unordered_map<const Matrix*, Var> params_;
    bool backward_done_ = false;
};

// Scalar convenience: value of a 1x1 node.
inline double scalar(Var v) {
    if (v->value.rows() != 1 || v->value.cols() != 1)
        throw std::invalid_argument("scalar: node is not 1x1");
    return v->value(0, 0);
}

}  // namespace csda::ad
