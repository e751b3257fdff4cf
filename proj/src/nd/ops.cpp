#include "vclr/nd/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <mutex>
#include <tuple>

#include "vclr/error.hpp"

namespace vclr::nd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

Tensor make_result(const char* op, Shape shape, std::vector<double> data,
                   std::initializer_list<const Tensor*> inputs, std::function<void(Node&)> bw) {
    if (finite_checks()) {
        for (double v : data)
            if (!std::isfinite(v)) throw NumericAbort(std::string("non-finite value produced by ") + op);
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    if (grad_enabled()) {
        bool any = false;
        for (const Tensor* t : inputs) any = any || t->requires_grad();
        if (any) {
            node->requires_grad = true;
            node->is_leaf = false;
            for (const Tensor* t : inputs) node->parents.push_back(t->node());
            node->backward = std::move(bw);
        }
    }
    return Tensor(std::move(node));
}

Tensor make_result_n(const char* op, Shape shape, std::vector<double> data, std::span<const Tensor> inputs,
                     std::function<void(Node&)> bw) {
    if (finite_checks()) {
        for (double v : data)
            if (!std::isfinite(v)) throw NumericAbort(std::string("non-finite value produced by ") + op);
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    if (grad_enabled()) {
        bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->is_leaf = false;
            for (const Tensor& t : inputs) node->parents.push_back(t.node());
            node->backward = std::move(bw);
        }
    }
    return Tensor(std::move(node));
}

// Gradient buffer of a parent, or nullptr if it does not want one.
std::vector<double>* grad_of(Node& self, std::size_t i) {
    Node& p = *self.parents[i];
    return p.requires_grad ? &p.ensure_grad() : nullptr;
}

struct Broadcast {
    Shape out;
    std::vector<std::size_t> sa, sb;  // element strides into a, b per out axis (0 when broadcast)
    bool same = false;
};

Broadcast plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    Broadcast p;
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    const std::size_t r = std::max(a.size(), b.size());
    Shape pa(r, 1), pb(r, 1);
    std::copy(a.begin(), a.end(), pa.begin() + (r - a.size()));
    std::copy(b.begin(), b.end(), pb.begin() + (r - b.size()));
    p.out.resize(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (pa[i] == pb[i] || pb[i] == 1)
            p.out[i] = pa[i];
        else if (pa[i] == 1)
            p.out[i] = pb[i];
        else
            throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
    }
    p.sa.assign(r, 0);
    p.sb.assign(r, 0);
    std::size_t ka = 1, kb = 1;
    for (std::size_t i = r; i-- > 0;) {
        p.sa[i] = (pa[i] == 1) ? 0 : ka;
        p.sb[i] = (pb[i] == 1) ? 0 : kb;
        ka *= pa[i];
        kb *= pb[i];
    }
    return p;
}

template <class F>
void for_each_broadcast(const Broadcast& p, F&& f) {
    const std::size_t n = numel(p.out);
    if (p.same) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const std::size_t r = p.out.size();
    if (r == 0) {
        f(0, 0, 0);
        return;
    }
    const std::size_t inner = p.out[r - 1];
    const std::size_t la = p.sa[r - 1], lb = p.sb[r - 1];
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t io = 0; io < n; io += inner) {
        for (std::size_t j = 0; j < inner; ++j) f(io + j, ia + j * la, ib + j * lb);
        // advance the outer multi-index
        for (std::size_t ax = r - 1; ax-- > 0;) {
            ++idx[ax];
            ia += p.sa[ax];
            ib += p.sb[ax];
            if (idx[ax] < p.out[ax]) break;
            ia -= p.sa[ax] * idx[ax];
            ib -= p.sb[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

// Derivative functors receive (x, y, out) and return d out / d x (resp. y).
template <class Fwd, class Da, class Db>
Tensor binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, Da da, Db db) {
    Broadcast plan = plan_broadcast(op, a.shape(), b.shape());
    std::vector<double> out(numel(plan.out));
    const auto& x = a.node()->data;
    const auto& y = b.node()->data;
    for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) { out[io] = fwd(x[ia], y[ib]); });
    Shape shape = plan.out;
    return make_result(op, std::move(shape), std::move(out), {&a, &b},
                       [plan = std::move(plan), da, db](Node& self) {
                           const auto& x = self.parents[0]->data;
                           const auto& y = self.parents[1]->data;
                           auto* ga = grad_of(self, 0);
                           auto* gb = grad_of(self, 1);
                           const auto& g = self.grad;
                           const auto& o = self.data;
                           for_each_broadcast(plan, [&](std::size_t io, std::size_t ia, std::size_t ib) {
                               if (ga) (*ga)[ia] += g[io] * da(x[ia], y[ib], o[io]);
                               if (gb) (*gb)[ib] += g[io] * db(x[ia], y[ib], o[io]);
                           });
                       });
}

// Derivative functor receives (x, out) and returns d out / d x.
template <class Fwd, class Dx>
Tensor unary(const char* op, const Tensor& a, Fwd fwd, Dx dx) {
    const auto& x = a.node()->data;
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
    return make_result(op, a.shape(), std::move(out), {&a}, [dx](Node& self) {
        auto* ga = grad_of(self, 0);
        if (!ga) return;
        const auto& x = self.parents[0]->data;
        for (std::size_t i = 0; i < x.size(); ++i) (*ga)[i] += self.grad[i] * dx(x[i], self.data[i]);
    });
}

struct AxisSplit {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_axis(const char* op, const Shape& s, std::size_t axis) {
    if (axis >= s.size())
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.len = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

double sigmoid_scalar(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double softplus_scalar(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary(
        "add", a, b, [](double x, double y) { return x + y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary(
        "sub", a, b, [](double x, double y) { return x - y; }, [](double, double, double) { return 1.0; },
        [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary(
        "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y, double) { return y; },
        [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    for (double v : b.data())
        if (v == 0.0) throw DomainError("div: zero divisor in operand of shape " + shape_str(b.shape()));
    return binary(
        "div", a, b, [](double x, double y) { return x / y; }, [](double, double y, double) { return 1.0 / y; },
        [](double, double y, double o) { return -o / y; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    return binary(
        "minimum", a, b,
        [t = active_branch_trace()](double x, double y) {
            if (t) t->push(x <= y);
            return std::min(x, y);
        },
        [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    return binary(
        "maximum", a, b,
        [t = active_branch_trace()](double x, double y) {
            if (t) t->push(x >= y);
            return std::max(x, y);
        },
        [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Tensor neg(const Tensor& a) {
    return unary("neg", a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double k) {
    return unary("scale", a, [k](double x) { return k * x; }, [k](double, double) { return k; });
}

Tensor add_scalar(const Tensor& a, double k) {
    return unary("add_scalar", a, [k](double x) { return x + k; }, [](double, double) { return 1.0; });
}

Tensor pow_scalar(const Tensor& a, double p) {
    const bool integral = std::floor(p) == p;
    for (double v : a.data()) {
        if (v < 0 && !integral) throw DomainError("pow_scalar: negative base with non-integer exponent");
        if (v == 0 && p < 1 && p != 0) throw DomainError("pow_scalar: zero base with exponent < 1");
    }
    return unary(
        "pow_scalar", a, [p](double x) { return std::pow(x, p); },
        [p](double x, double) { return p == 0 ? 0.0 : p * std::pow(x, p - 1); });
}

Tensor exp(const Tensor& a) {
    return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double o) { return o; });
}

Tensor log(const Tensor& a) {
    for (double v : a.data())
        if (!(v > 0)) throw DomainError("log: non-positive argument " + std::to_string(v));
    return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt(const Tensor& a) {
    for (double v : a.data())
        if (v < 0) throw DomainError("sqrt: negative argument " + std::to_string(v));
    return unary("sqrt", a, [](double x) { return std::sqrt(x); }, [](double, double o) { return 0.5 / o; });
}

Tensor abs(const Tensor& a) {
    return unary(
        "abs", a,
        [t = active_branch_trace()](double x) {
            if (t) t->push(x >= 0);
            return std::abs(x);
        },
        [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor relu(const Tensor& a) {
    return unary(
        "relu", a,
        [t = active_branch_trace()](double x) {
            if (t) t->push(x > 0);
            return x > 0 ? x : 0.0;
        },
        [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary("sigmoid", a, sigmoid_scalar, [](double, double o) { return o * (1.0 - o); });
}

Tensor softplus(const Tensor& a) {
    return unary("softplus", a, softplus_scalar, [](double x, double) { return sigmoid_scalar(x); });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<double> out(m * n);
    MutMap(out.data(), m, n).noalias() = ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
    return make_result("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
        ConstMap g(self.grad.data(), m, n);
        if (auto* ga = grad_of(self, 0))
            MutMap(ga->data(), m, k).noalias() += g * ConstMap(self.parents[1]->data.data(), k, n).transpose();
        if (auto* gb = grad_of(self, 1))
            MutMap(gb->data(), k, n).noalias() += ConstMap(self.parents[0]->data.data(), m, k).transpose() * g;
    });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
    const auto m = a.dim(0), n = a.dim(1);
    std::vector<double> out(m * n);
    MutMap(out.data(), n, m) = ConstMap(a.data().data(), m, n).transpose();
    return make_result("transpose", {n, m}, std::move(out), {&a}, [m, n](Node& self) {
        if (auto* ga = grad_of(self, 0)) MutMap(ga->data(), m, n) += ConstMap(self.grad.data(), n, m).transpose();
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result("reshape", std::move(shape), std::move(out), {&a}, [](Node& self) {
        if (auto* ga = grad_of(self, 0))
            for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += self.grad[i];
    });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
    if (parts.empty()) throw ShapeError("concat: no operands");
    const Shape& ref = parts[0].shape();
    if (axis >= ref.size()) throw ShapeError("concat: axis out of range for " + shape_str(ref));
    Shape out_shape = ref;
    out_shape[axis] = 0;
    std::vector<std::size_t> lens;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == ref.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = (i == axis) || s[i] == ref[i];
        if (!ok) throw ShapeError("concat: " + shape_str(ref) + " vs " + shape_str(s) + " on axis " + std::to_string(axis));
        lens.push_back(s[axis]);
        out_shape[axis] += s[axis];
    }
    const AxisSplit sp = split_axis("concat", out_shape, axis);
    std::vector<double> out(numel(out_shape));
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const auto& src = parts[k].node()->data;
        const std::size_t chunk = lens[k] * sp.inner;
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(src.begin() + o * chunk, chunk, out.begin() + o * sp.len * sp.inner + offset);
        offset += chunk;
    }
    return make_result_n("concat", std::move(out_shape), std::move(out), parts, [sp, lens](Node& self) {
        std::size_t offset = 0;
        for (std::size_t k = 0; k < lens.size(); ++k) {
            const std::size_t chunk = lens[k] * sp.inner;
            if (auto* g = grad_of(self, k))
                for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t j = 0; j < chunk; ++j)
                        (*g)[o * chunk + j] += self.grad[o * sp.len * sp.inner + offset + j];
            offset += chunk;
        }
    });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const AxisSplit sp = split_axis("slice", a.shape(), axis);
    if (begin > end || end > sp.len)
        throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                         shape_str(a.shape()) + " on axis " + std::to_string(axis));
    Shape shape = a.shape();
    shape[axis] = end - begin;
    const std::size_t chunk = (end - begin) * sp.inner;
    std::vector<double> out(sp.outer * chunk);
    const auto& src = a.node()->data;
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(src.begin() + (o * sp.len + begin) * sp.inner, chunk, out.begin() + o * chunk);
    return make_result("slice", std::move(shape), std::move(out), {&a}, [sp, begin, chunk](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t j = 0; j < chunk; ++j)
                    (*g)[(o * sp.len + begin) * sp.inner + j] += self.grad[o * chunk + j];
    });
}

Tensor index_select(const Tensor& a, std::span<const std::size_t> rows) {
    if (a.rank() == 0) throw ShapeError("index_select: scalar operand");
    const std::size_t n = a.dim(0);
    const std::size_t row = a.numel() / std::max<std::size_t>(n, 1);
    for (auto r : rows)
        if (r >= n) throw ShapeError("index_select: row " + std::to_string(r) + " outside " + shape_str(a.shape()));
    Shape shape = a.shape();
    shape[0] = rows.size();
    std::vector<double> out(rows.size() * row);
    const auto& src = a.node()->data;
    for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(src.begin() + rows[i] * row, row, out.begin() + i * row);
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    return make_result("index_select", std::move(shape), std::move(out), {&a}, [idx, row](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t i = 0; i < idx.size(); ++i)
                for (std::size_t j = 0; j < row; ++j) (*g)[idx[i] * row + j] += self.grad[i * row + j];
    });
}

Tensor sum(const Tensor& a) {
    double s = 0;
    for (double v : a.data()) s += v;
    return make_result("sum", {}, {s}, {&a}, [](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (auto& v : *g) v += self.grad[0];
    });
}

Tensor sum(const Tensor& a, std::size_t axis, bool keepdim) {
    const AxisSplit sp = split_axis("sum", a.shape(), axis);
    Shape shape = a.shape();
    if (keepdim)
        shape[axis] = 1;
    else
        shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
    std::vector<double> out(sp.outer * sp.inner, 0.0);
    const auto& x = a.node()->data;
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t l = 0; l < sp.len; ++l)
            for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += x[(o * sp.len + l) * sp.inner + i];
    return make_result("sum_axis", std::move(shape), std::move(out), {&a}, [sp](Node& self) {
        if (auto* g = grad_of(self, 0))
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t l = 0; l < sp.len; ++l)
                    for (std::size_t i = 0; i < sp.inner; ++i)
                        (*g)[(o * sp.len + l) * sp.inner + i] += self.grad[o * sp.inner + i];
    });
}

Tensor mean(const Tensor& a) {
    if (a.numel() == 0) throw DomainError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor mean(const Tensor& a, std::size_t axis, bool keepdim) {
    const auto len = split_axis("mean", a.shape(), axis).len;
    if (len == 0) throw DomainError("mean: empty axis");
    return scale(sum(a, axis, keepdim), 1.0 / static_cast<double>(len));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
    const AxisSplit sp = split_axis("softmax", a.shape(), axis);
    const auto& x = a.node()->data;
    std::vector<double> out(x.size());
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i) {
            const std::size_t base = o * sp.len * sp.inner + i;
            double mx = -INFINITY;
            for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, x[base + l * sp.inner]);
            double z = 0;
            for (std::size_t l = 0; l < sp.len; ++l) z += out[base + l * sp.inner] = std::exp(x[base + l * sp.inner] - mx);
            for (std::size_t l = 0; l < sp.len; ++l) out[base + l * sp.inner] /= z;
        }
    return make_result("softmax", a.shape(), std::move(out), {&a}, [sp](Node& self) {
        auto* g = grad_of(self, 0);
        if (!g) return;
        const auto& y = self.data;
        const auto& dy = self.grad;
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                const std::size_t base = o * sp.len * sp.inner + i;
                double dot = 0;
                for (std::size_t l = 0; l < sp.len; ++l) dot += dy[base + l * sp.inner] * y[base + l * sp.inner];
                for (std::size_t l = 0; l < sp.len; ++l) {
                    const std::size_t k = base + l * sp.inner;
                    (*g)[k] += y[k] * (dy[k] - dot);
                }
            }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    if (x.rank() == 0) throw ShapeError("layer_norm: scalar operand");
    const std::size_t d = x.shape().back();
    if (gain.numel() != d || bias.numel() != d)
        throw ShapeError("layer_norm: input " + shape_str(x.shape()) + " with gain " + shape_str(gain.shape()) +
                         " and bias " + shape_str(bias.shape()));
    const std::size_t rows = x.numel() / d;
    const auto& xv = x.node()->data;
    const auto& gv = gain.node()->data;
    const auto& bv = bias.node()->data;
    std::vector<double> out(xv.size()), xhat(xv.size()), rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = xv.data() + r * d;
        double mu = 0;
        for (std::size_t j = 0; j < d; ++j) mu += xr[j];
        mu /= static_cast<double>(d);
        double var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= static_cast<double>(d);
        rstd[r] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (xr[j] - mu) * rstd[r];
            out[r * d + j] = xhat[r * d + j] * gv[j] + bv[j];
        }
    }
    return make_result("layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
                       [d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
                           const auto& dy = self.grad;
                           const auto& gv = self.parents[1]->data;
                           auto* gx = grad_of(self, 0);
                           auto* gg = grad_of(self, 1);
                           auto* gb = grad_of(self, 2);
                           std::vector<double> dxhat(d);
                           for (std::size_t r = 0; r < rows; ++r) {
                               double m1 = 0, m2 = 0;
                               for (std::size_t j = 0; j < d; ++j) {
                                   const std::size_t k = r * d + j;
                                   if (gg) (*gg)[j] += dy[k] * xhat[k];
                                   if (gb) (*gb)[j] += dy[k];
                                   dxhat[j] = dy[k] * gv[j];
                                   m1 += dxhat[j];
                                   m2 += dxhat[j] * xhat[k];
                               }
                               if (!gx) continue;
                               m1 /= static_cast<double>(d);
                               m2 /= static_cast<double>(d);
                               for (std::size_t j = 0; j < d; ++j) {
                                   const std::size_t k = r * d + j;
                                   (*gx)[k] += rstd[r] * (dxhat[j] - m1 - xhat[k] * m2);
                               }
                           }
                       });
}

namespace {

struct BilinearTable {
    std::vector<std::array<std::size_t, 4>> src;
    std::vector<std::array<double, 4>> weight;
};

void axis_taps(std::size_t in, std::size_t out, std::vector<std::size_t>& i0, std::vector<std::size_t>& i1,
               std::vector<double>& frac) {
    i0.resize(out);
    i1.resize(out);
    frac.resize(out);
    const double ratio = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t o = 0; o < out; ++o) {
        double s = (static_cast<double>(o) + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(in - 1));
        const auto lo = static_cast<std::size_t>(std::floor(s));
        i0[o] = lo;
        i1[o] = std::min(lo + 1, in - 1);
        frac[o] = s - static_cast<double>(lo);
    }
}

const BilinearTable& bilinear_table(std::size_t h, std::size_t w, std::size_t H, std::size_t W) {
    static std::mutex mu;
    static std::map<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>, BilinearTable> cache;
    std::lock_guard lock(mu);
    auto key = std::make_tuple(h, w, H, W);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    std::vector<std::size_t> y0, y1, x0, x1;
    std::vector<double> fy, fx;
    axis_taps(h, H, y0, y1, fy);
    axis_taps(w, W, x0, x1, fx);
    BilinearTable t;
    t.src.resize(H * W);
    t.weight.resize(H * W);
    for (std::size_t Y = 0; Y < H; ++Y)
        for (std::size_t X = 0; X < W; ++X) {
            const std::size_t o = Y * W + X;
            t.src[o] = {y0[Y] * w + x0[X], y0[Y] * w + x1[X], y1[Y] * w + x0[X], y1[Y] * w + x1[X]};
            t.weight[o] = {(1 - fy[Y]) * (1 - fx[X]), (1 - fy[Y]) * fx[X], fy[Y] * (1 - fx[X]), fy[Y] * fx[X]};
        }
    return cache.emplace(key, std::move(t)).first->second;
}

}  // namespace

Tensor resize_bilinear(const Tensor& a, std::size_t h, std::size_t w, std::size_t H, std::size_t W) {
    if (a.rank() != 2 || a.dim(1) != h * w || h == 0 || w == 0)
        throw ShapeError("resize_bilinear: expected [N," + std::to_string(h * w) + "], got " + shape_str(a.shape()));
    const BilinearTable& t = bilinear_table(h, w, H, W);
    const std::size_t n = a.dim(0), in = h * w, outn = H * W;
    const auto& x = a.node()->data;
    std::vector<double> out(n * outn);
    for (std::size_t r = 0; r < n; ++r) {
        const double* xr = x.data() + r * in;
        double* yr = out.data() + r * outn;
        for (std::size_t o = 0; o < outn; ++o) {
            const auto& s = t.src[o];
            const auto& wt = t.weight[o];
            yr[o] = wt[0] * xr[s[0]] + wt[1] * xr[s[1]] + wt[2] * xr[s[2]] + wt[3] * xr[s[3]];
        }
    }
    return make_result("resize_bilinear", {n, outn}, std::move(out), {&a}, [&t, n, in, outn](Node& self) {
        auto* g = grad_of(self, 0);
        if (!g) return;
        for (std::size_t r = 0; r < n; ++r) {
            double* gr = g->data() + r * in;
            const double* dy = self.grad.data() + r * outn;
            for (std::size_t o = 0; o < outn; ++o) {
                const auto& s = t.src[o];
                const auto& wt = t.weight[o];
                gr[s[0]] += wt[0] * dy[o];
                gr[s[1]] += wt[1] * dy[o];
                gr[s[2]] += wt[2] * dy[o];
                gr[s[3]] += wt[3] * dy[o];
            }
        }
    });
}

}  // namespace vclr::nd
