#include "persam/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "persam/errors.hpp"

namespace persam {

namespace testing {
bool corrupt_sigmoid_backward = false;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ")";
    return os.str();
}

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

void check_finite_shape(const Shape& s) {
    if (s.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (std::size_t d : s)
        if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(s));
}

NodePtr make_leaf(Shape shape, std::vector<double> data, bool requires_grad) {
    check_finite_shape(shape);
    if (shape_numel(shape) != data.size())
        throw ShapeError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(data);
    n->requires_grad = requires_grad;
    return n;
}

NodePtr make_op(const char* op, Shape shape, std::size_t numel,
                std::vector<NodePtr> parents) {
    auto n = std::make_shared<Node>();
    n->op = op;
    n->shape = std::move(shape);
    n->value.resize(numel);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    return n;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

void require_2d(const Tensor& x, const char* op) {
    if (x.shape().size() != 2)
        throw ShapeError(std::string(op) + ": expected 2-D tensor, got " +
                         shape_str(x.shape()));
}

// Accumulate g into parent's grad if it participates in differentiation.
void acc(const NodePtr& p, std::size_t i, double g) {
    if (p->requires_grad) p->grad[i] += g;
}

}  // namespace

// ---------------------------------------------------------------- Tensor

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : node_(make_leaf(std::move(shape), std::move(data), requires_grad)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::ones(Shape shape, bool requires_grad) {
    return full(std::move(shape), 1.0, requires_grad);
}

Tensor Tensor::scalar(double v) { return Tensor({1}, {v}); }

std::size_t Tensor::rows() const {
    require_2d(*this, "rows");
    return node_->shape[0];
}

std::size_t Tensor::cols() const {
    require_2d(*this, "cols");
    return node_->shape[1];
}

double Tensor::item() const {
    if (numel() != 1)
        throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    require_2d(*this, "at");
    return node_->value[r * node_->shape[1] + c];
}

const std::vector<double>& Tensor::grad() const {
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    node_->grad.assign(node_->value.size(), 0.0);
}

Tensor Tensor::detach() const {
    return Tensor(node_->shape, node_->value, false);
}

namespace {

// Iterative post-order topological sort over the reachable graph.
std::vector<Node*> topo_order(Node* root) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (!visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // parents before children
}

}  // namespace

void Tensor::backward() const {
    if (numel() != 1)
        throw ContractError("backward() requires a scalar, got shape " + shape_str(shape()));
    std::vector<Node*> order = topo_order(node_.get());
    // Reset grads of interior nodes; leaves keep accumulating across calls.
    for (Node* n : order) {
        if (!n->is_leaf()) n->grad.assign(n->value.size(), 0.0);
        else n->ensure_grad();
    }
    node_->ensure_grad();
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && n->requires_grad) n->backward_fn(*n);
    }
}

std::size_t Tensor::graph_size() const {
    return topo_order(node_.get()).size();
}

// ---------------------------------------------------------------- elementwise

namespace {

template <typename Fwd, typename Bwd>
Tensor binary_elementwise(const char* opname, const Tensor& a, const Tensor& b, Fwd fwd,
                          Bwd bwd) {
    require_same_shape(a, b, opname);
    auto out = make_op(opname, a.shape(), a.numel(), {a.node(), b.node()});
    const auto& av = a.data();
    const auto& bv = b.data();
    for (std::size_t i = 0; i < av.size(); ++i) out->value[i] = fwd(av[i], bv[i]);
    if (out->requires_grad) {
        out->backward_fn = [bwd](Node& n) {
            const auto& pa = n.parents[0];
            const auto& pb = n.parents[1];
            pa->ensure_grad();
            pb->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                auto [ga, gb] = bwd(pa->value[i], pb->value[i], n.value[i]);
                acc(pa, i, n.grad[i] * ga);
                acc(pb, i, n.grad[i] * gb);
            }
        };
    }
    return Tensor(out);
}

template <typename Fwd, typename Bwd>
Tensor unary_elementwise(const char* opname, const Tensor& x, Fwd fwd, Bwd bwd) {
    auto out = make_op(opname, x.shape(), x.numel(), {x.node()});
    const auto& xv = x.data();
    for (std::size_t i = 0; i < xv.size(); ++i) out->value[i] = fwd(xv[i]);
    if (out->requires_grad) {
        out->backward_fn = [bwd](Node& n) {
            const auto& p = n.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                p->grad[i] += n.grad[i] * bwd(p->value[i], n.value[i]);
        };
    }
    return Tensor(out);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return std::pair<double, double>{1.0, 1.0}; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return std::pair<double, double>{1.0, -1.0}; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double) { return std::pair<double, double>{y, x}; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double x, double y, double) {
            return std::pair<double, double>{1.0 / y, -x / (y * y)};
        });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    return binary_elementwise(
        "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
        [](double x, double y, double) {
            return x >= y ? std::pair<double, double>{1.0, 0.0}
                          : std::pair<double, double>{0.0, 1.0};
        });
}

Tensor add_scalar(const Tensor& x, double s) {
    return unary_elementwise(
        "add_scalar", x, [s](double v) { return v + s; },
        [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double s) {
    return unary_elementwise(
        "mul_scalar", x, [s](double v) { return v * s; },
        [s](double, double) { return s; });
}

Tensor rsub_scalar(double s, const Tensor& x) {
    return unary_elementwise(
        "rsub_scalar", x, [s](double v) { return s - v; },
        [](double, double) { return -1.0; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor sigmoid(const Tensor& x) {
    return unary_elementwise(
        "sigmoid", x,
        [](double v) {
            if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
            double e = std::exp(v);
            return e / (1.0 + e);
        },
        [](double, double y) {
            double g = y * (1.0 - y);
            if (testing::corrupt_sigmoid_backward) g *= 1.02;
            return g;
        });
}

Tensor relu(const Tensor& x) {
    return unary_elementwise(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor log(const Tensor& x) {
    for (double v : x.data())
        if (v <= 0.0)
            throw DomainError("log: input must be positive, got " + std::to_string(v));
    return unary_elementwise(
        "log", x, [](double v) { return std::log(v); },
        [](double v, double) { return 1.0 / v; });
}

Tensor exp(const Tensor& x) {
    return unary_elementwise(
        "exp", x, [](double v) { return std::exp(v); },
        [](double, double y) { return y; });
}

Tensor clamp_min(const Tensor& x, double lo) {
    return unary_elementwise(
        "clamp_min", x, [lo](double v) { return v < lo ? lo : v; },
        [lo](double v, double) { return v > lo ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------- matrix

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const std::size_t m = a.shape()[0], k = a.shape()[1];
    const std::size_t k2 = b.shape()[0], n = b.shape()[1];
    if (k != k2)
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
    auto out = make_op("matmul", {m, n}, m * n, {a.node(), b.node()});
    const double* A = a.data().data();
    const double* B = b.data().data();
    double* C = out->value.data();
    std::fill(C, C + m * n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = A[i * k + p];
            if (aip == 0.0) continue;
            const double* Bp = B + p * n;
            double* Ci = C + i * n;
            for (std::size_t j = 0; j < n; ++j) Ci[j] += aip * Bp[j];
        }
    if (out->requires_grad) {
        out->backward_fn = [m, k, n](Node& nd) {
            const auto& pa = nd.parents[0];
            const auto& pb = nd.parents[1];
            pa->ensure_grad();
            pb->ensure_grad();
            const double* G = nd.grad.data();
            const double* A = pa->value.data();
            const double* B = pb->value.data();
            if (pa->requires_grad) {
                double* GA = pa->grad.data();
                // dA = G * B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double s = 0.0;
                        const double* Gi = G + i * n;
                        const double* Bp = B + p * n;
                        for (std::size_t j = 0; j < n; ++j) s += Gi[j] * Bp[j];
                        GA[i * k + p] += s;
                    }
            }
            if (pb->requires_grad) {
                double* GB = pb->grad.data();
                // dB = A^T * G
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t i = 0; i < m; ++i) {
                        const double aip = A[i * k + p];
                        if (aip == 0.0) continue;
                        const double* Gi = G + i * n;
                        double* GBp = GB + p * n;
                        for (std::size_t j = 0; j < n; ++j) GBp[j] += aip * Gi[j];
                    }
            }
        };
    }
    return Tensor(out);
}

Tensor transpose(const Tensor& x) {
    require_2d(x, "transpose");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    auto out = make_op("transpose", {c, r}, r * c, {x.node()});
    const auto& xv = x.data();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->value[j * r + i] = xv[i * c + j];
    if (out->requires_grad) {
        out->backward_fn = [r, c](Node& n) {
            const auto& p = n.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += n.grad[j * r + i];
        };
    }
    return Tensor(out);
}

Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1) {
    require_2d(x, "slice_rows");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (r0 >= r1 || r1 > r)
        throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ") invalid for " + shape_str(x.shape()));
    const std::size_t nr = r1 - r0;
    auto out = make_op("slice_rows", {nr, c}, nr * c, {x.node()});
    std::copy(x.data().begin() + r0 * c, x.data().begin() + r1 * c, out->value.begin());
    if (out->requires_grad) {
        out->backward_fn = [r0, c](Node& n) {
            const auto& p = n.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[r0 * c + i] += n.grad[i];
        };
    }
    return Tensor(out);
}

Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1) {
    require_2d(x, "slice_cols");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (c0 >= c1 || c1 > c)
        throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") invalid for " + shape_str(x.shape()));
    const std::size_t nc = c1 - c0;
    auto out = make_op("slice_cols", {r, nc}, r * nc, {x.node()});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < nc; ++j) out->value[i * nc + j] = x.data()[i * c + c0 + j];
    if (out->requires_grad) {
        out->backward_fn = [r, c, c0, nc](Node& n) {
            const auto& p = n.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < nc; ++j)
                    p->grad[i * c + c0 + j] += n.grad[i * nc + j];
        };
    }
    return Tensor(out);
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
    require_2d(a, "concat_cols");
    require_2d(b, "concat_cols");
    if (a.shape()[0] != b.shape()[0])
        throw ShapeError("concat_cols: row counts differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t r = a.shape()[0], ca = a.shape()[1], cb = b.shape()[1];
    auto out = make_op("concat_cols", {r, ca + cb}, r * (ca + cb), {a.node(), b.node()});
    for (std::size_t i = 0; i < r; ++i) {
        std::copy(a.data().begin() + i * ca, a.data().begin() + (i + 1) * ca,
                  out->value.begin() + i * (ca + cb));
        std::copy(b.data().begin() + i * cb, b.data().begin() + (i + 1) * cb,
                  out->value.begin() + i * (ca + cb) + ca);
    }
    if (out->requires_grad) {
        out->backward_fn = [r, ca, cb](Node& n) {
            const auto& pa = n.parents[0];
            const auto& pb = n.parents[1];
            pa->ensure_grad();
            pb->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                for (std::size_t j = 0; j < ca; ++j)
                    acc(pa, i * ca + j, n.grad[i * (ca + cb) + j]);
                for (std::size_t j = 0; j < cb; ++j)
                    acc(pb, i * cb + j, n.grad[i * (ca + cb) + ca + j]);
            }
        };
    }
    return Tensor(out);
}

Tensor stack_rows(const std::vector<Tensor>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows: no rows given");
    const std::size_t c = rows[0].numel();
    std::vector<NodePtr> parents;
    parents.reserve(rows.size());
    for (const auto& t : rows) {
        if (t.numel() != c)
            throw ShapeError("stack_rows: row length mismatch, expected " +
                             std::to_string(c) + ", got " + shape_str(t.shape()));
        parents.push_back(t.node());
    }
    const std::size_t r = rows.size();
    auto out = make_op("stack_rows", {r, c}, r * c, std::move(parents));
    for (std::size_t i = 0; i < r; ++i)
        std::copy(rows[i].data().begin(), rows[i].data().end(), out->value.begin() + i * c);
    if (out->requires_grad) {
        out->backward_fn = [c](Node& n) {
            for (std::size_t i = 0; i < n.parents.size(); ++i) {
                const auto& p = n.parents[i];
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (std::size_t j = 0; j < c; ++j) p->grad[j] += n.grad[i * c + j];
            }
        };
    }
    return Tensor(out);
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_finite_shape(shape);
    if (shape_numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    auto out = make_op("reshape", std::move(shape), x.numel(), {x.node()});
    out->value = x.data();
    if (out->requires_grad) {
        out->backward_fn = [](Node& n) {
            const auto& p = n.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) p->grad[i] += n.grad[i];
        };
    }
    return Tensor(out);
}

Tensor scale_rows(const Tensor& x, const Tensor& w) {
    require_2d(x, "scale_rows");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (w.numel() != r)
        throw ShapeError("scale_rows: weight length " + shape_str(w.shape()) +
                         " does not match rows of " + shape_str(x.shape()));
    auto out = make_op("scale_rows", x.shape(), r * c, {x.node(), w.node()});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->value[i * c + j] = x.data()[i * c + j] * w.data()[i];
    if (out->requires_grad) {
        out->backward_fn = [r, c](Node& n) {
            const auto& px = n.parents[0];
            const auto& pw = n.parents[1];
            px->ensure_grad();
            pw->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    acc(px, i * c + j, n.grad[i * c + j] * pw->value[i]);
                    acc(pw, i, n.grad[i * c + j] * px->value[i * c + j]);
                }
        };
    }
    return Tensor(out);
}

Tensor scale_cols(const Tensor& x, const Tensor& w) {
    require_2d(x, "scale_cols");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (w.numel() != c)
        throw ShapeError("scale_cols: weight length " + shape_str(w.shape()) +
                         " does not match cols of " + shape_str(x.shape()));
    auto out = make_op("scale_cols", x.shape(), r * c, {x.node(), w.node()});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->value[i * c + j] = x.data()[i * c + j] * w.data()[j];
    if (out->requires_grad) {
        out->backward_fn = [r, c](Node& n) {
            const auto& px = n.parents[0];
            const auto& pw = n.parents[1];
            px->ensure_grad();
            pw->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    acc(px, i * c + j, n.grad[i * c + j] * pw->value[j]);
                    acc(pw, j, n.grad[i * c + j] * px->value[i * c + j]);
                }
        };
    }
    return Tensor(out);
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    require_2d(x, "add_rowvec");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (b.numel() != c)
        throw ShapeError("add_rowvec: bias " + shape_str(b.shape()) +
                         " does not match cols of " + shape_str(x.shape()));
    auto out = make_op("add_rowvec", x.shape(), r * c, {x.node(), b.node()});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out->value[i * c + j] = x.data()[i * c + j] + b.data()[j];
    if (out->requires_grad) {
        out->backward_fn = [r, c](Node& n) {
            const auto& px = n.parents[0];
            const auto& pb = n.parents[1];
            px->ensure_grad();
            pb->ensure_grad();
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) {
                    acc(px, i * c + j, n.grad[i * c + j]);
                    acc(pb, j, n.grad[i * c + j]);
                }
        };
    }
    return Tensor(out);
}

// ---------------------------------------------------------------- reductions

Tensor sum_all(const Tensor& x) {
    auto out = make_op("sum_all", {1}, 1, {x.node()});
    double s = 0.0;
    for (double v : x.data()) s += v;
    out->value[0] = s;
    if (out->requires_grad) {
        out->backward_fn = [](Node& n) {
            const auto& p = n.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < p->grad.size(); ++i) p->grad[i] += n.grad[0];
        };
    }
    return Tensor(out);
}

Tensor mean_all(const Tensor& x) {
    const double inv = 1.0 / static_cast<double>(x.numel());
    return mul_scalar(sum_all(x), inv);
}

Tensor mean_rows(const Tensor& x) {
    require_2d(x, "mean_rows");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    auto out = make_op("mean_rows", {r, 1}, r, {x.node()});
    for (std::size_t i = 0; i < r; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) s += x.data()[i * c + j];
        out->value[i] = s / static_cast<double>(c);
    }
    if (out->requires_grad) {
        out->backward_fn = [r, c](Node& n) {
            const auto& p = n.parents[0];
            p->ensure_grad();
            const double inv = 1.0 / static_cast<double>(c);
            for (std::size_t i = 0; i < r; ++i)
                for (std::size_t j = 0; j < c; ++j) p->grad[i * c + j] += n.grad[i] * inv;
        };
    }
    return Tensor(out);
}

Tensor max_rows(const Tensor& x) {
    require_2d(x, "max_rows");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    auto out = make_op("max_rows", {r, 1}, r, {x.node()});
    std::vector<std::size_t> argmax(r, 0);
    for (std::size_t i = 0; i < r; ++i) {
        double best = x.data()[i * c];
        std::size_t bj = 0;
        for (std::size_t j = 1; j < c; ++j) {
            const double v = x.data()[i * c + j];
            if (v > best) {  // ties keep the lowest column index
                best = v;
                bj = j;
            }
        }
        out->value[i] = best;
        argmax[i] = bj;
    }
    if (out->requires_grad) {
        out->backward_fn = [r, c, argmax = std::move(argmax)](Node& n) {
            const auto& p = n.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) p->grad[i * c + argmax[i]] += n.grad[i];
        };
    }
    return Tensor(out);
}

Tensor div_by_scalar_tensor(const Tensor& x, const Tensor& s) {
    if (s.numel() != 1)
        throw ShapeError("div_by_scalar_tensor: divisor must be scalar, got " +
                         shape_str(s.shape()));
    auto out = make_op("div_by_scalar_tensor", x.shape(), x.numel(), {x.node(), s.node()});
    const double sv = s.data()[0];
    for (std::size_t i = 0; i < x.numel(); ++i) out->value[i] = x.data()[i] / sv;
    if (out->requires_grad) {
        out->backward_fn = [](Node& n) {
            const auto& px = n.parents[0];
            const auto& ps = n.parents[1];
            px->ensure_grad();
            ps->ensure_grad();
            const double sv = ps->value[0];
            for (std::size_t i = 0; i < n.grad.size(); ++i) {
                acc(px, i, n.grad[i] / sv);
                acc(ps, 0, -n.grad[i] * px->value[i] / (sv * sv));
            }
        };
    }
    return Tensor(out);
}

// ---------------------------------------------------------------- nn ops

Tensor softmax_rows(const Tensor& x) {
    require_2d(x, "softmax");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    auto out = make_op("softmax", x.shape(), r * c, {x.node()});
    for (std::size_t i = 0; i < r; ++i) {
        double mx = x.data()[i * c];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, x.data()[i * c + j]);
        double s = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double e = std::exp(x.data()[i * c + j] - mx);
            out->value[i * c + j] = e;
            s += e;
        }
        const double inv = 1.0 / s;
        for (std::size_t j = 0; j < c; ++j) out->value[i * c + j] *= inv;
    }
    if (out->requires_grad) {
        out->backward_fn = [r, c](Node& n) {
            const auto& p = n.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < c; ++j)
                    dot += n.grad[i * c + j] * n.value[i * c + j];
                for (std::size_t j = 0; j < c; ++j)
                    p->grad[i * c + j] += n.value[i * c + j] * (n.grad[i * c + j] - dot);
            }
        };
    }
    return Tensor(out);
}

Tensor softmax(const Tensor& x, int axis) {
    if (x.shape().size() == 1) {
        Tensor row = reshape(x, {1, x.numel()});
        return reshape(softmax_rows(row), x.shape());
    }
    require_2d(x, "softmax");
    if (axis == 1) return softmax_rows(x);
    if (axis == 0) return transpose(softmax_rows(transpose(x)));
    throw ShapeError("softmax: axis must be 0 or 1, got " + std::to_string(axis));
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    require_2d(x, "layer_norm");
    const std::size_t r = x.shape()[0], c = x.shape()[1];
    if (gamma.numel() != c || beta.numel() != c)
        throw ShapeError("layer_norm: affine params must have length " + std::to_string(c));
    auto out =
        make_op("layer_norm", x.shape(), r * c, {x.node(), gamma.node(), beta.node()});
    std::vector<double> inv_std(r), xhat(r * c);
    for (std::size_t i = 0; i < r; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < c; ++j) mean += x.data()[i * c + j];
        mean /= static_cast<double>(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = x.data()[i * c + j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(c);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[i] = is;
        for (std::size_t j = 0; j < c; ++j) {
            const double h = (x.data()[i * c + j] - mean) * is;
            xhat[i * c + j] = h;
            out->value[i * c + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    if (out->requires_grad) {
        out->backward_fn = [r, c, inv_std = std::move(inv_std),
                            xhat = std::move(xhat)](Node& n) {
            const auto& px = n.parents[0];
            const auto& pg = n.parents[1];
            const auto& pb = n.parents[2];
            px->ensure_grad();
            pg->ensure_grad();
            pb->ensure_grad();
            for (std::size_t i = 0; i < r; ++i) {
                double sum_dh = 0.0, sum_dh_xhat = 0.0;
                for (std::size_t j = 0; j < c; ++j) {
                    const double go = n.grad[i * c + j];
                    acc(pg, j, go * xhat[i * c + j]);
                    acc(pb, j, go);
                    const double dh = go * pg->value[j];
                    sum_dh += dh;
                    sum_dh_xhat += dh * xhat[i * c + j];
                }
                if (!px->requires_grad) continue;
                const double invc = 1.0 / static_cast<double>(c);
                for (std::size_t j = 0; j < c; ++j) {
                    const double dh = n.grad[i * c + j] * pg->value[j];
                    px->grad[i * c + j] +=
                        inv_std[i] *
                        (dh - invc * sum_dh - xhat[i * c + j] * invc * sum_dh_xhat);
                }
            }
        };
    }
    return Tensor(out);
}

Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
    if (!training || p <= 0.0) return x;
    if (p >= 1.0) throw ContractError("dropout: rate must be < 1");
    const double scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.numel());
    for (std::size_t i = 0; i < mask.size(); ++i)
        mask[i] = rng.uniform() < p ? 0.0 : scale;
    auto out = make_op("dropout", x.shape(), x.numel(), {x.node()});
    for (std::size_t i = 0; i < x.numel(); ++i) out->value[i] = x.data()[i] * mask[i];
    if (out->requires_grad) {
        out->backward_fn = [mask = std::move(mask)](Node& n) {
            const auto& p_ = n.parents[0];
            p_->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i)
                p_->grad[i] += n.grad[i] * mask[i];
        };
    }
    return Tensor(out);
}

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad) {
    if (x.shape().size() != 3)
        throw ShapeError("conv2d: input must be {C,H,W}, got " + shape_str(x.shape()));
    if (w.shape().size() != 4)
        throw ShapeError("conv2d: weight must be {Co,Ci,kh,kw}, got " + shape_str(w.shape()));
    const std::size_t ci = x.shape()[0], h = x.shape()[1], wd = x.shape()[2];
    const std::size_t co = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
    if (w.shape()[1] != ci)
        throw ShapeError("conv2d: channel mismatch, input " + shape_str(x.shape()) +
                         " vs weight " + shape_str(w.shape()));
    if (b.numel() != co)
        throw ShapeError("conv2d: bias must have length " + std::to_string(co));
    const std::size_t ho = (h + 2 * pad - kh) / stride + 1;
    const std::size_t wo = (wd + 2 * pad - kw) / stride + 1;
    auto out = make_op("conv2d", {co, ho, wo}, co * ho * wo,
                       {x.node(), w.node(), b.node()});
    const auto& X = x.data();
    const auto& W = w.data();
    auto in_at = [&](std::size_t c, long yy, long xx) -> double {
        if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(wd))
            return 0.0;
        return X[(c * h + yy) * wd + xx];
    };
    for (std::size_t oc = 0; oc < co; ++oc)
        for (std::size_t oy = 0; oy < ho; ++oy)
            for (std::size_t ox = 0; ox < wo; ++ox) {
                double s = b.data()[oc];
                for (std::size_t ic = 0; ic < ci; ++ic)
                    for (std::size_t ky = 0; ky < kh; ++ky)
                        for (std::size_t kx = 0; kx < kw; ++kx) {
                            const long yy = static_cast<long>(oy * stride + ky) -
                                            static_cast<long>(pad);
                            const long xx = static_cast<long>(ox * stride + kx) -
                                            static_cast<long>(pad);
                            s += in_at(ic, yy, xx) * W[((oc * ci + ic) * kh + ky) * kw + kx];
                        }
                out->value[(oc * ho + oy) * wo + ox] = s;
            }
    if (out->requires_grad) {
        out->backward_fn = [ci, h, wd, co, kh, kw, ho, wo, stride, pad](Node& n) {
            const auto& px = n.parents[0];
            const auto& pw = n.parents[1];
            const auto& pb = n.parents[2];
            px->ensure_grad();
            pw->ensure_grad();
            pb->ensure_grad();
            for (std::size_t oc = 0; oc < co; ++oc)
                for (std::size_t oy = 0; oy < ho; ++oy)
                    for (std::size_t ox = 0; ox < wo; ++ox) {
                        const double g = n.grad[(oc * ho + oy) * wo + ox];
                        if (g == 0.0) continue;
                        acc(pb, oc, g);
                        for (std::size_t ic = 0; ic < ci; ++ic)
                            for (std::size_t ky = 0; ky < kh; ++ky)
                                for (std::size_t kx = 0; kx < kw; ++kx) {
                                    const long yy = static_cast<long>(oy * stride + ky) -
                                                    static_cast<long>(pad);
                                    const long xx = static_cast<long>(ox * stride + kx) -
                                                    static_cast<long>(pad);
                                    if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) ||
                                        xx >= static_cast<long>(wd))
                                        continue;
                                    const std::size_t xi = (ic * h + yy) * wd + xx;
                                    const std::size_t wi =
                                        ((oc * ci + ic) * kh + ky) * kw + kx;
                                    acc(pw, wi, g * px->value[xi]);
                                    acc(px, xi, g * pw->value[wi]);
                                }
                    }
        };
    }
    return Tensor(out);
}

Tensor global_avg_pool(const Tensor& x) {
    if (x.shape().size() != 3)
        throw ShapeError("global_avg_pool: input must be {C,H,W}, got " +
                         shape_str(x.shape()));
    const std::size_t c = x.shape()[0], hw = x.shape()[1] * x.shape()[2];
    auto out = make_op("global_avg_pool", {1, c}, c, {x.node()});
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < c; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < hw; ++j) s += x.data()[i * hw + j];
        out->value[i] = s * inv;
    }
    if (out->requires_grad) {
        out->backward_fn = [c, hw, inv](Node& n) {
            const auto& p = n.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < c; ++i)
                for (std::size_t j = 0; j < hw; ++j) p->grad[i * hw + j] += n.grad[i] * inv;
        };
    }
    return Tensor(out);
}

}  // namespace persam
