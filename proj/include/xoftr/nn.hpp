#pragma once

#include "xoftr/rng.hpp"
#include "xoftr/tensor.hpp"

#include <string>
#include <unordered_map>
#include <vector>

namespace xoftr {

// Flat name -> parameter registry with stable creation order. Modules create
// their weights here once; training and checkpoint I/O never need to know the
// module tree.
class ParamStore {
public:
    Tensor create(const std::string& name, const Shape& shape);
    Tensor get(const std::string& name) const;
    bool has(const std::string& name) const { return map_.count(name) > 0; }
    const std::vector<std::string>& names() const { return order_; }
    std::vector<Tensor> all() const;
    int64_t total_size() const;

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, Tensor> map_;
};

// y = x @ w + b with w: [in, out]. Accepts [N,in] or [B,N,in] inputs.
struct Linear {
    Tensor w, b;
    Tensor operator()(const Tensor& x) const;
};

// x: [Cin,H,W] -> [Cout,Ho,Wo]
struct Conv2d {
    Tensor w, b;
    int stride = 1, pad = 0;
    Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

struct LayerNorm {
    Tensor gamma, beta;
    Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, bool bias,
                   SeededStream& rng);
// zero-initialised output layer (used where a block must start as identity)
Linear make_linear_zero(ParamStore& ps, const std::string& name, int in, int out, bool bias);
Conv2d make_conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride,
                   int pad, bool bias, SeededStream& rng);
LayerNorm make_layer_norm(ParamStore& ps, const std::string& name, int dim);

// Adam with bias correction; optional global-norm gradient clipping.
class Adam {
public:
    Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);
    void zero_grad();
    double clip_grad_norm(double max_norm);  // returns pre-clip norm
    void step();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_, v_;
    double lr_, b1_, b2_, eps_;
    int64_t t_ = 0;
};

}  // namespace xoftr
