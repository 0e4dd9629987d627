#include "xoftr/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace xoftr {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<RowMat>;
using CMapRM = Eigen::Map<const RowMat>;

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

namespace {

std::shared_ptr<TensorNode> make_node(Shape s) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(s);
    n->value.assign(size_t(shape_numel(n->shape)), 0.0);
    return n;
}

bool any_requires(const std::vector<Tensor>& ps) {
    for (const auto& p : ps)
        if (p.defined() && p.requires_grad()) return true;
    return false;
}

// Wire up a result node: parents, requires_grad propagation, backward fn.
Tensor finish(std::shared_ptr<TensorNode> n, const std::vector<Tensor>& parents,
              std::function<void(TensorNode&)> bw) {
    bool rg = any_requires(parents);
    n->requires_grad = rg;
    if (rg) {
        for (const auto& p : parents) n->parents.push_back(p.node_ptr());
        n->backward = std::move(bw);
    }
    return Tensor::wrap(std::move(n));
}

struct BCast {
    Shape out;
    std::vector<int64_t> sa, sb;  // strides into a and b per out dim (0 = broadcast)
    int64_t n = 0;
};

BCast broadcast_shapes(const Shape& a, const Shape& b) {
    int ra = int(a.size()), rb = int(b.size());
    int r = std::max(ra, rb);
    BCast bc;
    bc.out.resize(r);
    for (int i = 0; i < r; ++i) {
        int da = i < r - ra ? 1 : a[i - (r - ra)];
        int db = i < r - rb ? 1 : b[i - (r - rb)];
        if (da != db && da != 1 && db != 1)
            throw ValidationError("broadcast mismatch " + shape_str(a) + " vs " + shape_str(b));
        bc.out[i] = std::max(da, db);
    }
    bc.sa.assign(r, 0);
    bc.sb.assign(r, 0);
    int64_t stra = 1;
    for (int i = ra - 1; i >= 0; --i) {
        int oi = i + (r - ra);
        bc.sa[oi] = (a[i] == 1 && bc.out[oi] != 1) ? 0 : stra;
        stra *= a[i];
    }
    int64_t strb = 1;
    for (int i = rb - 1; i >= 0; --i) {
        int oi = i + (r - rb);
        bc.sb[oi] = (b[i] == 1 && bc.out[oi] != 1) ? 0 : strb;
        strb *= b[i];
    }
    bc.n = shape_numel(bc.out);
    return bc;
}

// Walk the broadcast output linearly, producing input offsets.
template <typename F>
void bcast_foreach(const BCast& bc, F&& f) {
    int r = int(bc.out.size());
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0, ib = 0;
    for (int64_t o = 0; o < bc.n; ++o) {
        f(o, ia, ib);
        for (int d = r - 1; d >= 0; --d) {
            idx[d]++;
            ia += bc.sa[d];
            ib += bc.sb[d];
            if (idx[d] < bc.out[d]) break;
            idx[d] = 0;
            ia -= bc.sa[d] * bc.out[d];
            ib -= bc.sb[d] * bc.out[d];
        }
    }
}

enum class BinOp { Add, Sub, Mul, Div };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op) {
    const auto& sa = a.shape();
    const auto& sb = b.shape();
    if (sa == sb) {
        // fast path, no broadcasting
        auto n = make_node(sa);
        const double* pa = a.data();
        const double* pb = b.data();
        double* po = n->value.data();
        int64_t cnt = a.numel();
        switch (op) {
            case BinOp::Add: for (int64_t i = 0; i < cnt; ++i) po[i] = pa[i] + pb[i]; break;
            case BinOp::Sub: for (int64_t i = 0; i < cnt; ++i) po[i] = pa[i] - pb[i]; break;
            case BinOp::Mul: for (int64_t i = 0; i < cnt; ++i) po[i] = pa[i] * pb[i]; break;
            case BinOp::Div: for (int64_t i = 0; i < cnt; ++i) po[i] = pa[i] / pb[i]; break;
        }
        return finish(n, {a, b}, [op](TensorNode& nd) {
            auto& pa = *nd.parents[0];
            auto& pb = *nd.parents[1];
            int64_t cnt = int64_t(nd.value.size());
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (int64_t i = 0; i < cnt; ++i) {
                    double g = nd.grad[i];
                    switch (op) {
                        case BinOp::Add: case BinOp::Sub: pa.grad[i] += g; break;
                        case BinOp::Mul: pa.grad[i] += g * pb.value[i]; break;
                        case BinOp::Div: pa.grad[i] += g / pb.value[i]; break;
                    }
                }
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (int64_t i = 0; i < cnt; ++i) {
                    double g = nd.grad[i];
                    switch (op) {
                        case BinOp::Add: pb.grad[i] += g; break;
                        case BinOp::Sub: pb.grad[i] -= g; break;
                        case BinOp::Mul: pb.grad[i] += g * pa.value[i]; break;
                        case BinOp::Div:
                            pb.grad[i] -= g * pa.value[i] / (pb.value[i] * pb.value[i]);
                            break;
                    }
                }
            }
        });
    }

    BCast bc = broadcast_shapes(sa, sb);
    auto n = make_node(bc.out);
    const double* pa = a.data();
    const double* pb = b.data();
    double* po = n->value.data();
    bcast_foreach(bc, [&](int64_t o, int64_t ia, int64_t ib) {
        switch (op) {
            case BinOp::Add: po[o] = pa[ia] + pb[ib]; break;
            case BinOp::Sub: po[o] = pa[ia] - pb[ib]; break;
            case BinOp::Mul: po[o] = pa[ia] * pb[ib]; break;
            case BinOp::Div: po[o] = pa[ia] / pb[ib]; break;
        }
    });
    return finish(n, {a, b}, [op, bc](TensorNode& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        bcast_foreach(bc, [&](int64_t o, int64_t ia, int64_t ib) {
            double g = nd.grad[o];
            switch (op) {
                case BinOp::Add:
                    if (pa.requires_grad) pa.grad[ia] += g;
                    if (pb.requires_grad) pb.grad[ib] += g;
                    break;
                case BinOp::Sub:
                    if (pa.requires_grad) pa.grad[ia] += g;
                    if (pb.requires_grad) pb.grad[ib] -= g;
                    break;
                case BinOp::Mul:
                    if (pa.requires_grad) pa.grad[ia] += g * pb.value[ib];
                    if (pb.requires_grad) pb.grad[ib] += g * pa.value[ia];
                    break;
                case BinOp::Div:
                    if (pa.requires_grad) pa.grad[ia] += g / pb.value[ib];
                    if (pb.requires_grad)
                        pb.grad[ib] -= g * pa.value[ia] / (pb.value[ib] * pb.value[ib]);
                    break;
            }
        });
    });
}

template <typename FwdFn, typename DervFn>
Tensor unary_op(const Tensor& a, FwdFn f, DervFn df) {
    auto n = make_node(a.shape());
    const double* pa = a.data();
    double* po = n->value.data();
    int64_t cnt = a.numel();
    for (int64_t i = 0; i < cnt; ++i) po[i] = f(pa[i]);
    return finish(n, {a}, [df](TensorNode& nd) {
        auto& pa = *nd.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        int64_t cnt = int64_t(nd.value.size());
        for (int64_t i = 0; i < cnt; ++i)
            pa.grad[i] += nd.grad[i] * df(pa.value[i], nd.value[i]);
    });
}

}  // namespace

Tensor Tensor::zeros(const Shape& s, bool requires_grad) {
    auto n = make_node(s);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::full(const Shape& s, double fill, bool requires_grad) {
    auto n = make_node(s);
    std::fill(n->value.begin(), n->value.end(), fill);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::from(const Shape& s, std::vector<double> data, bool requires_grad) {
    if (int64_t(data.size()) != shape_numel(s))
        throw ValidationError("tensor data size does not match shape " + shape_str(s));
    auto n = std::make_shared<TensorNode>();
    n->shape = s;
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return wrap(std::move(n));
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::item() const {
    if (numel() != 1) throw ValidationError("item() on non-scalar tensor");
    return n_->value[0];
}

void Tensor::backward() const {
    if (numel() != 1) throw ValidationError("backward() requires a scalar root");
    // iterative post-order topo sort
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.push_back({n_.get(), 0});
    seen.insert(n_.get());
    while (!stack.empty()) {
        auto& [node, ci] = stack.back();
        if (ci < node->parents.size()) {
            TensorNode* p = node->parents[ci++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    n_->ensure_grad();
    n_->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backward && node->grad.size() == node->value.size()) node->backward(*node);
    }
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Div); }

Tensor add_scalar(const Tensor& a, double s) {
    return unary_op(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double s) {
    return unary_op(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor relu(const Tensor& a) {
    return unary_op(a, [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor elu(const Tensor& a) {
    return unary_op(a, [](double x) { return x > 0.0 ? x : std::expm1(x); },
                    [](double x, double y) { return x > 0.0 ? 1.0 : y + 1.0; });
}

Tensor tanh_t(const Tensor& a) {
    return unary_op(a, [](double x) { return std::tanh(x); },
                    [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
                    [](double, double y) { return y * (1.0 - y); });
}

Tensor exp_t(const Tensor& a) {
    return unary_op(a, [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
    return unary_op(a, [](double x) { return std::log(std::max(x, 1e-300)); },
                    [](double x, double) { return 1.0 / std::max(x, 1e-300); });
}

Tensor sqrt_t(const Tensor& a) {
    return unary_op(a, [](double x) { return std::sqrt(x); },
                    [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
    return unary_op(a, [](double x) { return x * x; },
                    [](double x, double) { return 2.0 * x; });
}

Tensor pow_scalar(const Tensor& a, double p) {
    return unary_op(a, [p](double x) { return std::pow(x, p); },
                    [p](double x, double) { return x > 0.0 ? p * std::pow(x, p - 1.0) : 0.0; });
}

Tensor reshape(const Tensor& a, const Shape& s) {
    if (shape_numel(s) != a.numel())
        throw ValidationError("reshape numel mismatch: " + shape_str(a.shape()) + " -> " + shape_str(s));
    auto n = std::make_shared<TensorNode>();
    n->shape = s;
    n->value = a.values();
    return finish(n, {a}, [](TensorNode& nd) {
        auto& pa = *nd.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (size_t i = 0; i < nd.grad.size(); ++i) pa.grad[i] += nd.grad[i];
    });
}

Tensor transpose2d(const Tensor& a) {
    if (a.rank() != 2) throw ValidationError("transpose2d needs rank 2");
    return permute(a, {1, 0});
}

Tensor permute(const Tensor& a, const std::vector<int>& dims) {
    int r = a.rank();
    if (int(dims.size()) != r) throw ValidationError("permute rank mismatch");
    Shape out(r);
    for (int i = 0; i < r; ++i) out[i] = a.shape()[dims[i]];
    std::vector<int64_t> in_stride(r, 1), out_of_in(r);
    for (int i = r - 2; i >= 0; --i) in_stride[i] = in_stride[i + 1] * a.shape()[i + 1];
    // stride into the input per output dim
    std::vector<int64_t> stride(r);
    for (int i = 0; i < r; ++i) stride[i] = in_stride[dims[i]];
    auto n = make_node(out);
    const double* pa = a.data();
    double* po = n->value.data();
    std::vector<int64_t> idx(r, 0);
    int64_t ia = 0;
    for (int64_t o = 0; o < int64_t(n->value.size()); ++o) {
        po[o] = pa[ia];
        for (int d = r - 1; d >= 0; --d) {
            idx[d]++;
            ia += stride[d];
            if (idx[d] < out[d]) break;
            idx[d] = 0;
            ia -= stride[d] * out[d];
        }
    }
    return finish(n, {a}, [out, stride, r](TensorNode& nd) {
        auto& pa = *nd.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        std::vector<int64_t> idx(r, 0);
        int64_t ia = 0;
        for (int64_t o = 0; o < int64_t(nd.grad.size()); ++o) {
            pa.grad[ia] += nd.grad[o];
            for (int d = r - 1; d >= 0; --d) {
                idx[d]++;
                ia += stride[d];
                if (idx[d] < out[d]) break;
                idx[d] = 0;
                ia -= stride[d] * out[d];
            }
        }
    });
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
    if (xs.empty()) throw ValidationError("concat of zero tensors");
    int r = xs[0].rank();
    Shape out = xs[0].shape();
    int64_t total_axis = 0;
    for (const auto& x : xs) {
        if (x.rank() != r) throw ValidationError("concat rank mismatch");
        for (int d = 0; d < r; ++d)
            if (d != axis && x.shape()[d] != out[d])
                throw ValidationError("concat shape mismatch");
        total_axis += x.shape()[axis];
    }
    out[axis] = int(total_axis);
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= out[d];
    for (int d = axis + 1; d < r; ++d) inner *= out[d];
    auto n = make_node(out);
    double* po = n->value.data();
    std::vector<int64_t> chunk(xs.size());
    for (size_t k = 0; k < xs.size(); ++k) chunk[k] = int64_t(xs[k].shape()[axis]) * inner;
    int64_t row_out = total_axis * inner;
    for (int64_t ou = 0; ou < outer; ++ou) {
        int64_t off = ou * row_out;
        for (size_t k = 0; k < xs.size(); ++k) {
            const double* pa = xs[k].data() + ou * chunk[k];
            std::memcpy(po + off, pa, sizeof(double) * chunk[k]);
            off += chunk[k];
        }
    }
    std::vector<Tensor> parents = xs;
    return finish(n, parents, [outer, row_out, chunk](TensorNode& nd) {
        for (int64_t ou = 0; ou < outer; ++ou) {
            int64_t off = ou * row_out;
            for (size_t k = 0; k < nd.parents.size(); ++k) {
                auto& p = *nd.parents[k];
                if (p.requires_grad) {
                    p.ensure_grad();
                    double* pg = p.grad.data() + ou * chunk[k];
                    const double* g = nd.grad.data() + off;
                    for (int64_t i = 0; i < chunk[k]; ++i) pg[i] += g[i];
                }
                off += chunk[k];
            }
        }
    });
}

Tensor slice(const Tensor& a, int axis, int start, int len) {
    int r = a.rank();
    if (axis < 0 || axis >= r || start < 0 || start + len > a.shape()[axis])
        throw ValidationError("slice out of range");
    Shape out = a.shape();
    out[axis] = len;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.shape()[d];
    for (int d = axis + 1; d < r; ++d) inner *= a.shape()[d];
    int64_t in_row = int64_t(a.shape()[axis]) * inner;
    int64_t out_row = int64_t(len) * inner;
    auto n = make_node(out);
    for (int64_t ou = 0; ou < outer; ++ou)
        std::memcpy(n->value.data() + ou * out_row, a.data() + ou * in_row + start * inner,
                    sizeof(double) * out_row);
    return finish(n, {a}, [outer, inner, in_row, out_row, start](TensorNode& nd) {
        auto& pa = *nd.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (int64_t ou = 0; ou < outer; ++ou) {
            double* pg = pa.grad.data() + ou * in_row + start * inner;
            const double* g = nd.grad.data() + ou * out_row;
            for (int64_t i = 0; i < out_row; ++i) pg[i] += g[i];
        }
    });
}

Tensor index_rows(const Tensor& a, const std::vector<int>& idx) {
    int64_t inner = 1;
    for (int d = 1; d < a.rank(); ++d) inner *= a.shape()[d];
    Shape out = a.shape();
    out[0] = int(idx.size());
    auto n = make_node(out);
    for (size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] < 0 || idx[k] >= a.shape()[0]) throw ValidationError("index_rows out of range");
        std::memcpy(n->value.data() + k * inner, a.data() + int64_t(idx[k]) * inner,
                    sizeof(double) * inner);
    }
    return finish(n, {a}, [idx, inner](TensorNode& nd) {
        auto& pa = *nd.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (size_t k = 0; k < idx.size(); ++k) {
            double* pg = pa.grad.data() + int64_t(idx[k]) * inner;
            const double* g = nd.grad.data() + k * inner;
            for (int64_t i = 0; i < inner; ++i) pg[i] += g[i];
        }
    });
}

Tensor detach(const Tensor& a) {
    auto n = std::make_shared<TensorNode>();
    n->shape = a.shape();
    n->value = a.values();
    return Tensor::wrap(std::move(n));
}

Tensor sum_all(const Tensor& a) {
    auto n = make_node({1});
    double s = 0.0;
    const double* pa = a.data();
    for (int64_t i = 0; i < a.numel(); ++i) s += pa[i];
    n->value[0] = s;
    return finish(n, {a}, [](TensorNode& nd) {
        auto& pa = *nd.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        double g = nd.grad[0];
        for (auto& x : pa.grad) x += g;
    });
}

Tensor mean_all(const Tensor& a) { return mul_scalar(sum_all(a), 1.0 / double(a.numel())); }

Tensor sum_axis(const Tensor& a, int axis, bool keepdim) {
    int r = a.rank();
    if (axis < 0) axis += r;
    int64_t outer = 1, inner = 1;
    for (int d = 0; d < axis; ++d) outer *= a.shape()[d];
    for (int d = axis + 1; d < r; ++d) inner *= a.shape()[d];
    int64_t n_axis = a.shape()[axis];
    Shape out;
    for (int d = 0; d < r; ++d) {
        if (d == axis) {
            if (keepdim) out.push_back(1);
        } else {
            out.push_back(a.shape()[d]);
        }
    }
    if (out.empty()) out.push_back(1);
    auto n = make_node(out);
    const double* pa = a.data();
    double* po = n->value.data();
    for (int64_t ou = 0; ou < outer; ++ou)
        for (int64_t k = 0; k < n_axis; ++k) {
            const double* src = pa + (ou * n_axis + k) * inner;
            double* dst = po + ou * inner;
            for (int64_t i = 0; i < inner; ++i) dst[i] += src[i];
        }
    return finish(n, {a}, [outer, inner, n_axis](TensorNode& nd) {
        auto& pa = *nd.parents[0];
        if (!pa.requires_grad) return;
        pa.ensure_grad();
        for (int64_t ou = 0; ou < outer; ++ou)
            for (int64_t k = 0; k < n_axis; ++k) {
                double* dst = pa.grad.data() + (ou * n_axis + k) * inner;
                const double* g = nd.grad.data() + ou * inner;
                for (int64_t i = 0; i < inner; ++i) dst[i] += g[i];
            }
    });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    int64_t batch = 1;
    int m, k, nn;
    bool batched_a = false, batched_b = false;
    if (sa.size() == 2 && sb.size() == 2) {
        m = sa[0]; k = sa[1]; nn = sb[1];
        if (sb[0] != k) throw ValidationError("matmul inner dim mismatch");
    } else if (sa.size() == 3 && sb.size() == 3) {
        if (sa[0] != sb[0] || sa[2] != sb[1]) throw ValidationError("batched matmul mismatch");
        batch = sa[0]; m = sa[1]; k = sa[2]; nn = sb[2];
        batched_a = batched_b = true;
    } else if (sa.size() == 3 && sb.size() == 2) {
        if (sa[2] != sb[0]) throw ValidationError("matmul inner dim mismatch");
        batch = sa[0]; m = sa[1]; k = sa[2]; nn = sb[1];
        batched_a = true;
    } else {
        throw ValidationError("matmul: unsupported ranks " + shape_str(sa) + " x " + shape_str(sb));
    }
    Shape out = batched_a ? Shape{int(batch), m, nn} : Shape{m, nn};
    auto n = make_node(out);
    for (int64_t bi = 0; bi < batch; ++bi) {
        CMapRM A(a.data() + (batched_a ? bi * int64_t(m) * k : 0), m, k);
        CMapRM B(b.data() + (batched_b ? bi * int64_t(k) * nn : 0), k, nn);
        MapRM C(n->value.data() + bi * int64_t(m) * nn, m, nn);
        C.noalias() = A * B;
    }
    return finish(n, {a, b}, [batch, m, k, nn, batched_a, batched_b](TensorNode& nd) {
        auto& pa = *nd.parents[0];
        auto& pb = *nd.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pb.requires_grad) pb.ensure_grad();
        for (int64_t bi = 0; bi < batch; ++bi) {
            CMapRM G(nd.grad.data() + bi * int64_t(m) * nn, m, nn);
            if (pa.requires_grad) {
                CMapRM B(pb.value.data() + (batched_b ? bi * int64_t(k) * nn : 0), k, nn);
                MapRM GA(pa.grad.data() + (batched_a ? bi * int64_t(m) * k : 0), m, k);
                GA.noalias() += G * B.transpose();
            }
            if (pb.requires_grad) {
                CMapRM A(pa.value.data() + (batched_a ? bi * int64_t(m) * k : 0), m, k);
                MapRM GB(pb.grad.data() + (batched_b ? bi * int64_t(k) * nn : 0), k, nn);
                GB.noalias() += A.transpose() * G;
            }
        }
    });
}

namespace {

// im2col for [Cin,H,W] -> [Cin*kh*kw, Ho*Wo]
void im2col(const double* x, int cin, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, double* cols) {
    for (int c = 0; c < cin; ++c)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                double* dst = cols + ((int64_t(c) * kh + ki) * kw + kj) * ho * wo;
                for (int oi = 0; oi < ho; ++oi) {
                    int ii = oi * stride + ki - pad;
                    for (int oj = 0; oj < wo; ++oj) {
                        int jj = oj * stride + kj - pad;
                        dst[oi * wo + oj] =
                            (ii >= 0 && ii < h && jj >= 0 && jj < w)
                                ? x[(int64_t(c) * h + ii) * w + jj]
                                : 0.0;
                    }
                }
            }
}

void col2im_add(const double* cols, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, double* gx) {
    for (int c = 0; c < cin; ++c)
        for (int ki = 0; ki < kh; ++ki)
            for (int kj = 0; kj < kw; ++kj) {
                const double* src = cols + ((int64_t(c) * kh + ki) * kw + kj) * ho * wo;
                for (int oi = 0; oi < ho; ++oi) {
                    int ii = oi * stride + ki - pad;
                    if (ii < 0 || ii >= h) continue;
                    for (int oj = 0; oj < wo; ++oj) {
                        int jj = oj * stride + kj - pad;
                        if (jj < 0 || jj >= w) continue;
                        gx[(int64_t(c) * h + ii) * w + jj] += src[oi * wo + oj];
                    }
                }
            }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
    if (x.rank() != 3 || w.rank() != 4) throw ValidationError("conv2d expects [C,H,W] and [Co,Ci,kh,kw]");
    int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    int cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != cin) throw ValidationError("conv2d channel mismatch");
    int ho = (h + 2 * pad - kh) / stride + 1;
    int wo = (wd + 2 * pad - kw) / stride + 1;
    std::vector<double> cols(size_t(cin) * kh * kw * ho * wo);
    im2col(x.data(), cin, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
    auto n = make_node({cout, ho, wo});
    {
        CMapRM W(w.data(), cout, cin * kh * kw);
        CMapRM C(cols.data(), cin * kh * kw, ho * wo);
        MapRM Y(n->value.data(), cout, ho * wo);
        Y.noalias() = W * C;
        if (b.defined()) {
            for (int c = 0; c < cout; ++c) Y.row(c).array() += b.data()[c];
        }
    }
    std::vector<Tensor> parents = b.defined() ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w};
    return finish(n, parents,
                  [cin, h, wd, cout, kh, kw, stride, pad, ho, wo](TensorNode& nd) {
        auto& px = *nd.parents[0];
        auto& pw = *nd.parents[1];
        CMapRM G(nd.grad.data(), cout, ho * wo);
        if (pw.requires_grad || px.requires_grad) {
            std::vector<double> cols(size_t(cin) * kh * kw * ho * wo);
            im2col(px.value.data(), cin, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
            if (pw.requires_grad) {
                pw.ensure_grad();
                CMapRM C(cols.data(), cin * kh * kw, ho * wo);
                MapRM GW(pw.grad.data(), cout, cin * kh * kw);
                GW.noalias() += G * C.transpose();
            }
            if (px.requires_grad) {
                px.ensure_grad();
                CMapRM W(pw.value.data(), cout, cin * kh * kw);
                RowMat GC = W.transpose() * G;
                col2im_add(GC.data(), cin, h, wd, kh, kw, stride, pad, ho, wo, px.grad.data());
            }
        }
        if (nd.parents.size() > 2) {
            auto& pb = *nd.parents[2];
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (int c = 0; c < cout; ++c) pb.grad[c] += G.row(c).sum();
            }
        }
    });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
    if (x.rank() != 3 || w.rank() != 3) throw ValidationError("depthwise_conv2d expects [C,H,W] and [C,kh,kw]");
    int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
    int kh = w.dim(1), kw = w.dim(2);
    if (w.dim(0) != cin) throw ValidationError("depthwise channel mismatch");
    int ho = h + 2 * pad - kh + 1;
    int wo = wd + 2 * pad - kw + 1;
    auto n = make_node({cin, ho, wo});
    const double* px = x.data();
    const double* pw = w.data();
    double* py = n->value.data();
    for (int c = 0; c < cin; ++c) {
        double bias = b.defined() ? b.data()[c] : 0.0;
        for (int oi = 0; oi < ho; ++oi)
            for (int oj = 0; oj < wo; ++oj) {
                double s = bias;
                for (int ki = 0; ki < kh; ++ki) {
                    int ii = oi + ki - pad;
                    if (ii < 0 || ii >= h) continue;
                    for (int kj = 0; kj < kw; ++kj) {
                        int jj = oj + kj - pad;
                        if (jj < 0 || jj >= wd) continue;
                        s += px[(int64_t(c) * h + ii) * wd + jj] * pw[(int64_t(c) * kh + ki) * kw + kj];
                    }
                }
                py[(int64_t(c) * ho + oi) * wo + oj] = s;
            }
    }
    std::vector<Tensor> parents = b.defined() ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w};
    return finish(n, parents, [cin, h, wd, kh, kw, pad, ho, wo](TensorNode& nd) {
        auto& px = *nd.parents[0];
        auto& pw = *nd.parents[1];
        if (px.requires_grad) px.ensure_grad();
        if (pw.requires_grad) pw.ensure_grad();
        for (int c = 0; c < cin; ++c)
            for (int oi = 0; oi < ho; ++oi)
                for (int oj = 0; oj < wo; ++oj) {
                    double g = nd.grad[(int64_t(c) * ho + oi) * wo + oj];
                    if (g == 0.0) continue;
                    for (int ki = 0; ki < kh; ++ki) {
                        int ii = oi + ki - pad;
                        if (ii < 0 || ii >= h) continue;
                        for (int kj = 0; kj < kw; ++kj) {
                            int jj = oj + kj - pad;
                            if (jj < 0 || jj >= wd) continue;
                            int64_t xi = (int64_t(c) * h + ii) * wd + jj;
                            int64_t wi = (int64_t(c) * kh + ki) * kw + kj;
                            if (px.requires_grad) px.grad[xi] += g * pw.value[wi];
                            if (pw.requires_grad) pw.grad[wi] += g * px.value[xi];
                        }
                    }
                }
        if (nd.parents.size() > 2) {
            auto& pb = *nd.parents[2];
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (int c = 0; c < cin; ++c) {
                    double s = 0.0;
                    for (int64_t i = 0; i < int64_t(ho) * wo; ++i) s += nd.grad[int64_t(c) * ho * wo + i];
                    pb.grad[c] += s;
                }
            }
        }
    });
}

Tensor upsample_nearest2x(const Tensor& x) {
    if (x.rank() != 3) throw ValidationError("upsample_nearest2x expects [C,H,W]");
    int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    auto n = make_node({c, 2 * h, 2 * w});
    const double* px = x.data();
    double* py = n->value.data();
    for (int ci = 0; ci < c; ++ci)
        for (int i = 0; i < 2 * h; ++i)
            for (int j = 0; j < 2 * w; ++j)
                py[(int64_t(ci) * 2 * h + i) * 2 * w + j] = px[(int64_t(ci) * h + i / 2) * w + j / 2];
    return finish(n, {x}, [c, h, w](TensorNode& nd) {
        auto& px = *nd.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        for (int ci = 0; ci < c; ++ci)
            for (int i = 0; i < 2 * h; ++i)
                for (int j = 0; j < 2 * w; ++j)
                    px.grad[(int64_t(ci) * h + i / 2) * w + j / 2] +=
                        nd.grad[(int64_t(ci) * 2 * h + i) * 2 * w + j];
    });
}

Tensor softmax_lastdim(const Tensor& x) {
    Tensor ones = Tensor::full(x.shape(), 1.0);
    return masked_softmax(x, ones);
}

Tensor masked_softmax(const Tensor& x, const Tensor& mask) {
    // broadcast the mask up front so the kernel sees equal shapes
    Tensor m = mask;
    if (mask.shape() != x.shape()) {
        m = mul(mask, Tensor::full(x.shape(), 1.0));
        m = detach(m);
    }
    int64_t last = x.shape().back();
    int64_t rows = x.numel() / last;
    auto n = make_node(x.shape());
    const double* px = x.data();
    const double* pm = m.data();
    double* py = n->value.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = px + r * last;
        const double* mr = pm + r * last;
        double* yr = py + r * last;
        double mx = -1e308;
        bool any = false;
        for (int64_t i = 0; i < last; ++i)
            if (mr[i] != 0.0) {
                any = true;
                if (xr[i] > mx) mx = xr[i];
            }
        if (!any) {
            for (int64_t i = 0; i < last; ++i) yr[i] = 0.0;
            continue;
        }
        double z = 0.0;
        for (int64_t i = 0; i < last; ++i) {
            double e = (mr[i] != 0.0) ? std::exp(xr[i] - mx) : 0.0;
            yr[i] = e;
            z += e;
        }
        for (int64_t i = 0; i < last; ++i) yr[i] /= z;
    }
    return finish(n, {x, m}, [last, rows](TensorNode& nd) {
        auto& px = *nd.parents[0];
        if (!px.requires_grad) return;
        px.ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* y = nd.value.data() + r * last;
            const double* g = nd.grad.data() + r * last;
            double* gx = px.grad.data() + r * last;
            double dot = 0.0;
            for (int64_t i = 0; i < last; ++i) dot += y[i] * g[i];
            for (int64_t i = 0; i < last; ++i) gx[i] += y[i] * (g[i] - dot);
        }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    int64_t last = x.shape().back();
    if (gamma.numel() != last || beta.numel() != last)
        throw ValidationError("layer_norm affine params must match last dim");
    int64_t rows = x.numel() / last;
    auto n = make_node(x.shape());
    std::vector<double> inv_std(rows), means(rows);
    const double* px = x.data();
    const double* pg = gamma.data();
    const double* pb = beta.data();
    double* py = n->value.data();
    for (int64_t r = 0; r < rows; ++r) {
        const double* xr = px + r * last;
        double mean = 0.0;
        for (int64_t i = 0; i < last; ++i) mean += xr[i];
        mean /= double(last);
        double var = 0.0;
        for (int64_t i = 0; i < last; ++i) {
            double d = xr[i] - mean;
            var += d * d;
        }
        var /= double(last);
        double is = 1.0 / std::sqrt(var + eps);
        means[r] = mean;
        inv_std[r] = is;
        double* yr = py + r * last;
        for (int64_t i = 0; i < last; ++i) yr[i] = (xr[i] - mean) * is * pg[i] + pb[i];
    }
    return finish(n, {x, gamma, beta}, [last, rows, means, inv_std](TensorNode& nd) {
        auto& px = *nd.parents[0];
        auto& pgam = *nd.parents[1];
        auto& pbet = *nd.parents[2];
        if (px.requires_grad) px.ensure_grad();
        if (pgam.requires_grad) pgam.ensure_grad();
        if (pbet.requires_grad) pbet.ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
            const double* xr = px.value.data() + r * last;
            const double* g = nd.grad.data() + r * last;
            double mean = means[r], is = inv_std[r];
            // accumulate affine grads
            if (pgam.requires_grad || pbet.requires_grad) {
                for (int64_t i = 0; i < last; ++i) {
                    double xhat = (xr[i] - mean) * is;
                    if (pgam.requires_grad) pgam.grad[i] += g[i] * xhat;
                    if (pbet.requires_grad) pbet.grad[i] += g[i];
                }
            }
            if (px.requires_grad) {
                double sum_gy = 0.0, sum_gy_xhat = 0.0;
                for (int64_t i = 0; i < last; ++i) {
                    double gy = g[i] * pgam.value[i];
                    double xhat = (xr[i] - mean) * is;
                    sum_gy += gy;
                    sum_gy_xhat += gy * xhat;
                }
                double* gx = px.grad.data() + r * last;
                for (int64_t i = 0; i < last; ++i) {
                    double gy = g[i] * pgam.value[i];
                    double xhat = (xr[i] - mean) * is;
                    gx[i] += is * (gy - (sum_gy + xhat * sum_gy_xhat) / double(last));
                }
            }
        }
    });
}

Tensor crop_windows(const Tensor& fmap, const std::vector<std::pair<int, int>>& centers, int k,
                    std::vector<std::vector<double>>* valid_mask) {
    if (fmap.rank() != 3) throw ValidationError("crop_windows expects [C,H,W]");
    int c = fmap.dim(0), h = fmap.dim(1), w = fmap.dim(2);
    int nwin = int(centers.size());
    int rad = k / 2;
    auto n = make_node({nwin, k * k, c});
    const double* pf = fmap.data();
    double* po = n->value.data();
    if (valid_mask) valid_mask->assign(nwin, std::vector<double>(size_t(k) * k, 0.0));
    for (int wi = 0; wi < nwin; ++wi) {
        int cr = centers[wi].first, cc = centers[wi].second;
        for (int di = 0; di < k; ++di)
            for (int dj = 0; dj < k; ++dj) {
                int r = cr + di - rad, col = cc + dj - rad;
                double* dst = po + ((int64_t(wi) * k * k) + di * k + dj) * c;
                if (r >= 0 && r < h && col >= 0 && col < w) {
                    for (int ci = 0; ci < c; ++ci) dst[ci] = pf[(int64_t(ci) * h + r) * w + col];
                    if (valid_mask) (*valid_mask)[wi][size_t(di) * k + dj] = 1.0;
                }
            }
    }
    return finish(n, {fmap}, [centers, k, c, h, w, rad](TensorNode& nd) {
        auto& pf = *nd.parents[0];
        if (!pf.requires_grad) return;
        pf.ensure_grad();
        for (size_t wi = 0; wi < centers.size(); ++wi) {
            int cr = centers[wi].first, cc = centers[wi].second;
            for (int di = 0; di < k; ++di)
                for (int dj = 0; dj < k; ++dj) {
                    int r = cr + di - rad, col = cc + dj - rad;
                    if (r < 0 || r >= h || col < 0 || col >= w) continue;
                    const double* g = nd.grad.data() + ((int64_t(wi) * k * k) + di * k + dj) * c;
                    for (int ci = 0; ci < c; ++ci) pf.grad[(int64_t(ci) * h + r) * w + col] += g[ci];
                }
        }
    });
}

}  // namespace xoftr
