#include "xoftr/nn.hpp"

#include <cmath>

namespace xoftr {

Tensor ParamStore::create(const std::string& name, const Shape& shape) {
    if (map_.count(name)) throw ValidationError("duplicate parameter name: " + name);
    Tensor t = Tensor::zeros(shape, /*requires_grad=*/true);
    map_.emplace(name, t);
    order_.push_back(name);
    return t;
}

Tensor ParamStore::get(const std::string& name) const {
    auto it = map_.find(name);
    if (it == map_.end()) throw ValidationError("unknown parameter: " + name);
    return it->second;
}

std::vector<Tensor> ParamStore::all() const {
    std::vector<Tensor> out;
    out.reserve(order_.size());
    for (const auto& n : order_) out.push_back(map_.at(n));
    return out;
}

int64_t ParamStore::total_size() const {
    int64_t n = 0;
    for (const auto& nm : order_) n += map_.at(nm).numel();
    return n;
}

Tensor Linear::operator()(const Tensor& x) const {
    Tensor y = matmul(x, w);
    if (b.defined()) y = add(y, b);
    return y;
}

namespace {
void fill_uniform(Tensor& t, SeededStream& rng, double bound) {
    for (auto& v : t.values()) v = rng.uniform(-bound, bound);
}
}  // namespace

Linear make_linear(ParamStore& ps, const std::string& name, int in, int out, bool bias,
                   SeededStream& rng) {
    Linear l;
    l.w = ps.create(name + ".w", {in, out});
    double bound = 1.0 / std::sqrt(double(in));
    fill_uniform(l.w, rng, bound);
    if (bias) {
        l.b = ps.create(name + ".b", {out});
        fill_uniform(l.b, rng, bound);
    }
    return l;
}

Linear make_linear_zero(ParamStore& ps, const std::string& name, int in, int out, bool bias) {
    Linear l;
    l.w = ps.create(name + ".w", {in, out});
    if (bias) l.b = ps.create(name + ".b", {out});
    return l;
}

Conv2d make_conv2d(ParamStore& ps, const std::string& name, int cin, int cout, int k, int stride,
                   int pad, bool bias, SeededStream& rng) {
    Conv2d c;
    c.stride = stride;
    c.pad = pad;
    c.w = ps.create(name + ".w", {cout, cin, k, k});
    double bound = 1.0 / std::sqrt(double(cin) * k * k);
    fill_uniform(c.w, rng, bound);
    if (bias) {
        c.b = ps.create(name + ".b", {cout});
        fill_uniform(c.b, rng, bound);
    }
    return c;
}

LayerNorm make_layer_norm(ParamStore& ps, const std::string& name, int dim) {
    LayerNorm ln;
    ln.gamma = ps.create(name + ".gamma", {dim});
    ln.beta = ps.create(name + ".beta", {dim});
    std::fill(ln.gamma.values().begin(), ln.gamma.values().end(), 1.0);
    return ln;
}

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    m_.reserve(params_.size());
    v_.reserve(params_.size());
    for (const auto& p : params_) {
        m_.emplace_back(p.numel(), 0.0);
        v_.emplace_back(p.numel(), 0.0);
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.zero_grad();
}

double Adam::clip_grad_norm(double max_norm) {
    double sq = 0.0;
    for (const auto& p : params_)
        for (double g : p.grad()) sq += g * g;
    double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        double scale = max_norm / norm;
        for (auto& p : params_) {
            auto& n = *p.node();
            for (auto& g : n.grad) g *= scale;
        }
    }
    return norm;
}

void Adam::step() {
    ++t_;
    double bc1 = 1.0 - std::pow(b1_, double(t_));
    double bc2 = 1.0 - std::pow(b2_, double(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        auto& node = *p.node();
        if (node.grad.size() != node.value.size()) continue;  // never touched this step
        auto& m = m_[i];
        auto& v = v_[i];
        for (size_t j = 0; j < node.value.size(); ++j) {
            double g = node.grad[j];
            m[j] = b1_ * m[j] + (1.0 - b1_) * g;
            v[j] = b2_ * v[j] + (1.0 - b2_) * g * g;
            double mh = m[j] / bc1;
            double vh = v[j] / bc2;
            node.value[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
        }
    }
}

}  // namespace xoftr
