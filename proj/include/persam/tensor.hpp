#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "persam/rng.hpp"

namespace persam {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

namespace detail {

// One record in the reverse-mode graph. Ops create a node holding the forward
// value plus a closure that scatters the node's grad into its parents.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily, same length as value
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;  // empty for leaves

    std::size_t numel() const { return value.size(); }
    bool is_leaf() const { return !backward_fn; }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

}  // namespace detail

// Dense f64 tensor participating in a reverse-mode differentiation graph.
// Value semantics on the handle; the node itself is shared, so a Tensor can
// appear as the parent of many ops (gradients accumulate).
class Tensor {
public:
    Tensor() = default;
    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor ones(Shape shape, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->numel(); }
    std::size_t rows() const;
    std::size_t cols() const;

    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& mutable_data() { return node_->value; }
    double item() const;
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const { return node_->requires_grad; }
    const std::vector<double>& grad() const;
    void zero_grad();

    // Reverse pass from a scalar. Intermediate grads are reset per call;
    // leaf grads accumulate across calls.
    void backward() const;

    // Value copy detached from the graph.
    Tensor detach() const;

    std::shared_ptr<detail::Node> node() const { return node_; }

    // Number of nodes reachable from this tensor (diagnostics/tests).
    std::size_t graph_size() const;

private:
    std::shared_ptr<detail::Node> node_;
};

// ---- elementwise (same-shape) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);  // ties route grad to a

// ---- tensor/scalar ----
Tensor add_scalar(const Tensor& x, double s);
Tensor mul_scalar(const Tensor& x, double s);
Tensor rsub_scalar(double s, const Tensor& x);  // s - x
Tensor neg(const Tensor& x);

// ---- unary ----
Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor log(const Tensor& x);  // throws DomainError for x <= 0
Tensor exp(const Tensor& x);
Tensor clamp_min(const Tensor& x, double lo);  // grad passes where x > lo

// ---- matrix ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
Tensor slice_rows(const Tensor& x, std::size_t r0, std::size_t r1);
Tensor slice_cols(const Tensor& x, std::size_t c0, std::size_t c1);
Tensor concat_cols(const Tensor& a, const Tensor& b);
Tensor stack_rows(const std::vector<Tensor>& rows);  // each 1 x N
Tensor reshape(const Tensor& x, Shape shape);

// row i scaled by w[i] (w is rows x 1)
Tensor scale_rows(const Tensor& x, const Tensor& w);
// column j scaled by w[j] (w is 1 x cols)
Tensor scale_cols(const Tensor& x, const Tensor& w);
// bias row added to every row (b is 1 x cols)
Tensor add_rowvec(const Tensor& x, const Tensor& b);

// ---- reductions ----
Tensor sum_all(const Tensor& x);   // -> {1}
Tensor mean_all(const Tensor& x);  // -> {1}
Tensor mean_rows(const Tensor& x);  // rows x cols -> rows x 1
Tensor max_rows(const Tensor& x);   // rows x cols -> rows x 1, grad to argmax (ties: lowest col)
Tensor div_by_scalar_tensor(const Tensor& x, const Tensor& s);  // s is {1}

// ---- neural-net specific ----
Tensor softmax(const Tensor& x, int axis = 1);  // rows of a 2-D tensor by default
Tensor softmax_rows(const Tensor& x);
// per-row normalization over the feature axis, then affine (gamma, beta are 1 x cols)
Tensor layer_norm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                       double eps = 1e-5);
// identity in eval mode; inverted dropout with mask drawn from rng in training mode
Tensor dropout(const Tensor& x, double p, Rng& rng, bool training);
// x: {Cin, H, W}; w: {Cout, Cin, kh, kw}; b: {Cout}
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad);
Tensor global_avg_pool(const Tensor& x);  // {C, H, W} -> {1, C}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return mul_scalar(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return mul_scalar(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }

namespace testing {
// When set, the sigmoid backward rule is deliberately wrong (negative control
// for the gradient checker).
extern bool corrupt_sigmoid_backward;
}  // namespace testing

}  // namespace persam
