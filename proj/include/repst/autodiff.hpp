#pragma once

#include <functional>
#include <vector>

#include "repst/tensor.hpp"

namespace repst {
namespace diff {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Define-by-run reverse-mode tape over a fixed primitive set. Nodes are
// appended in topological order; backward() walks them in reverse. Frozen
// leaves (constants) never get a gradient buffer, so no backward step can
// write into them. One tape per training step, single-threaded.
class Tape {
  public:
    // Leaves.
    Var constant(Tensor value);  // frozen: receives no gradient
    Var param(Tensor value);     // trainable: gradient accumulated

    const Tensor& value(Var v) const;
    const Tensor& grad(Var v) const;  // throws ContractViolation if absent
    bool has_grad(Var v) const;

    // Primitives. Shapes are validated; mismatches throw ContractViolation
    // naming both shapes.
    Var matmul(Var a, Var b);
    Var transpose(Var a);
    Var add(Var a, Var b);    // same shape, or b rank-1 broadcast over the last axis
    Var ewmul(Var a, Var b);  // same shape, or b rank-1 broadcast over the last axis
    Var scale_rows(Var a, Var v);
    Var softmax(Var a, int axis);
    Var layer_norm(Var a, int axis, double eps);
    Var gelu(Var a);
    Var conv1d_same(Var x, Var w, Var b);  // x (B,L,Cin), w (Cout,Cin,K) odd K, b (Cout)
    Var mean_pool(Var a, int axis);
    Var scalar_scale(Var a, double c);
    Var concat(const std::vector<Var>& xs, int axis);
    Var slice(Var a, int axis, int start, int len);
    Var reshape(Var a, std::vector<int> shape);
    Var gather(Var a, std::vector<int> indices);  // a rank-1
    Var straight_through_ones(Var a);             // forward ones, backward identity
    Var mae_loss(Var pred, Var target);           // scalar; subgradient at 0 is 0

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every
    // trainable ancestor. loss must be a scalar node.
    void backward(Var loss);

    std::size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool needs_grad = false;
        bool grad_alloc = false;
        std::function<void(Tape&)> back;
    };

    Var push(Tensor value, bool needs_grad, std::function<void(Tape&)> back);
    Node& node(Var v);
    const Node& node(Var v) const;
    // Returns the gradient accumulation buffer, or nullptr for frozen nodes.
    Tensor* grad_sink(Var v);
    bool wants(Var v) const { return node(v).needs_grad; }

    std::vector<Node> nodes_;
};

// Max over coordinates of |analytic - central difference| relative error for
// a scalar function of one parameter tensor; other inputs are baked into the
// builder. h must lie in [1e-6, 1e-3].
double grad_check(const Tensor& params, double h,
                  const std::function<Var(Tape&, Var)>& build_loss);

}  // namespace diff
}  // namespace repst
