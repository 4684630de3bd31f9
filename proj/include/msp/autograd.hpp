#ifndef __MSP_AUTOGRAD_HPP__
#define __MSP_AUTOGRAD_HPP__

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "msp/tensor.hpp"

namespace msp {

/*================================== Var =====================================*/

// Reverse-mode autodiff over Tensors. Values are computed eagerly; backward()
// walks the recorded graph. While a NoGradGuard is active every op returns a
// detached constant, which is how frozen (stop-gradient) branches are built.

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily, same shape as value
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;  // scatter node.grad into parents

    void ensure_grad();
};

class Var {
public:
    Var() = default;
    static Var constant(Tensor v);
    static Var param(Tensor v);

    bool defined() const { return static_cast<bool>(n_); }
    const Tensor& value() const { return n_->value; }
    Tensor& value_mut() { return n_->value; }
    Tensor& grad() { return n_->grad; }
    const Tensor& grad() const { return n_->grad; }
    bool requires_grad() const { return n_ && n_->requires_grad; }
    NodePtr node() const { return n_; }
    double item() const { return n_->value[0]; }

    void zero_grad();

private:
    explicit Var(NodePtr n) : n_(std::move(n)) {}
    NodePtr n_;
    friend Var make_op(Tensor value, std::vector<Var> parents,
                       std::function<void(Node&)> backward_fn);
};

// RAII guard: ops executed under it produce detached constants.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

bool grad_recording_enabled();

// Accumulates d(loss)/d(leaf) into every reachable parameter's grad.
void backward(const Var& loss);

/*================================== ops =====================================*/

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise, same shape
Var scale(const Var& a, double s);
Var square(const Var& a);
Var silu(const Var& a);

Var matmul(const Var& a, const Var& b);     // [m,k] x [k,n]
Var transpose2d(const Var& a);              // [m,n] -> [n,m]
Var softmax_rows(const Var& a);             // [r,c], softmax over c
Var reshape(const Var& a, std::vector<int> shape);

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);  // x[Ci,H,W], w[Co,Ci,kh,kw]
Var upsample2x(const Var& x);                                               // nearest, x[C,H,W]
Var add_channel_bias(const Var& x, const Var& b);                           // x[C,H,W] + b[C]
Var mul_mask_hw(const Var& x, const Tensor& m);  // x[C,H,W] or [H,W], m[H,W] constant

Var gather_rows(const Var& table, const std::vector<int>& ids);  // [V,D] -> [n,D]
Var vconcat(const std::vector<Var>& rows);                       // n x [1,D] -> [n,D]
Var mean_cols(const Var& a, const std::vector<int>& cols);       // [r,c] -> [r]

Var sum_all(const Var& a);   // -> [1]
Var mean_all(const Var& a);  // -> [1]

}  // namespace msp

#endif  // __MSP_AUTOGRAD_HPP__
