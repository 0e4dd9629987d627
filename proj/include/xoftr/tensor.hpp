#pragma once

#include "xoftr/common.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace xoftr {

// Reverse-mode autodiff over dense double tensors. Graphs are built eagerly
// per forward pass and freed when the last Tensor handle goes away. All
// arithmetic is IEEE double; evaluation order is fixed, so identical inputs
// give bit-identical outputs.

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily during backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& s, bool requires_grad = false);
    static Tensor full(const Shape& s, double fill, bool requires_grad = false);
    static Tensor from(const Shape& s, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[i]; }
    int rank() const { return int(n_->shape.size()); }
    int64_t numel() const { return int64_t(n_->value.size()); }

    double* data() { return n_->value.data(); }
    const double* data() const { return n_->value.data(); }
    std::vector<double>& values() { return n_->value; }
    const std::vector<double>& values() const { return n_->value; }
    double item() const;

    bool requires_grad() const { return n_->requires_grad; }
    void set_requires_grad(bool rg) { n_->requires_grad = rg; }
    const std::vector<double>& grad() const { return n_->grad; }
    void zero_grad() { n_->grad.assign(n_->value.size(), 0.0); }

    /// Run reverse-mode accumulation from this scalar tensor.
    void backward() const;

    TensorNode* node() const { return n_.get(); }
    std::shared_ptr<TensorNode> node_ptr() const { return n_; }

    static Tensor wrap(std::shared_ptr<TensorNode> n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<TensorNode> n_;
};

// --- elementwise binary ops, numpy-style broadcasting ---
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

// --- elementwise unary ---
Tensor relu(const Tensor& a);
Tensor elu(const Tensor& a);          // alpha = 1
Tensor tanh_t(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);        // inputs clamped to >= 1e-300 for safety
Tensor sqrt_t(const Tensor& a);
Tensor square(const Tensor& a);
Tensor pow_scalar(const Tensor& a, double p);  // requires a >= 0

// --- structure ---
Tensor reshape(const Tensor& a, const Shape& s);
Tensor transpose2d(const Tensor& a);
Tensor permute(const Tensor& a, const std::vector<int>& dims);
Tensor concat(const std::vector<Tensor>& xs, int axis);
Tensor slice(const Tensor& a, int axis, int start, int len);
Tensor index_rows(const Tensor& a, const std::vector<int>& idx);  // gather on dim 0
Tensor detach(const Tensor& a);

// --- reductions ---
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor sum_axis(const Tensor& a, int axis, bool keepdim = false);

// --- linear algebra ---
// [m,k]x[k,n], [B,m,k]x[B,k,n], or [B,m,k]x[k,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// --- neural net ops ---
// x: [Cin,H,W], w: [Cout,Cin,kh,kw], b: [Cout] or undefined
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
// x: [C,H,W], w: [C,kh,kw], b: [C] or undefined
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad);
Tensor upsample_nearest2x(const Tensor& x);  // [C,H,W] -> [C,2H,2W]

// Softmax over the last axis with multiplicative {0,1} mask (same shape as x
// or broadcastable to it). Fully masked rows yield all-zero probabilities.
Tensor masked_softmax(const Tensor& x, const Tensor& mask);
Tensor softmax_lastdim(const Tensor& x);

// LayerNorm over last axis; gamma/beta shaped [last].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Crop k x k windows (zero padded) centred at (r,c) cells of an [C,H,W] map.
// Returns [N, k*k, C]; valid_mask receives one row of k*k {0,1} flags per window.
Tensor crop_windows(const Tensor& fmap, const std::vector<std::pair<int, int>>& centers, int k,
                    std::vector<std::vector<double>>* valid_mask = nullptr);

// operators
inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }

}  // namespace xoftr
