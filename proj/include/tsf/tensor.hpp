#pragma once

// Dense N-D double tensors with reverse-mode differentiation.
//
// Conventions used throughout the library:
//  - Row-major storage, outermost extent first. Feature maps are [H,W,D],
//    temporal stacks [H,W,T,D], conv weights [kH,kW,Din,Dout] (2D) or
//    [kH,kW,kT,Din,Dout] (3D), FC weights [in,out].
//  - "Convolution" means cross-correlation (no kernel flip), the usual
//    ConvNet convention.
//  - Max-pool backward routes the gradient to the earliest maximal element
//    in row-major scan order of the window.
//  - Padding is explicit zero padding; callers compute pad amounts for
//    "same"-style shapes.
//
// Graphs are built per sample on a single logical thread; tensors are
// immutable after forward construction except for gradient accumulation.
// Fan-out gradients are summed, never overwritten.

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <iosfwd>
#include <memory>
#include <vector>

#include "tsf/common.hpp"

namespace tsf {

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated lazily during backward()
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and accumulates into parents' grad buffers.
    std::function<void(Node&)> backprop;
};

using NodePtr = std::shared_ptr<Node>;

NodePtr make_leaf(Shape shape, std::vector<double> value, bool requires_grad);
// Interior graph node; requires_grad is inherited from the parents and the
// backprop closure is dropped when no parent needs gradients.
NodePtr make_op(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                std::function<void(Node&)> backprop);
void ensure_grad(Node& n);

}  // namespace detail

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(detail::NodePtr n) : node_(std::move(n)) {}

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double v, bool requires_grad = false);
    static Tensor from_data(const Shape& shape, std::vector<double> data,
                            bool requires_grad = false);
    static Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    int rank() const;
    int64_t numel() const;
    int extent(int axis) const;

    std::vector<double>& data();
    const std::vector<double>& data() const;
    bool requires_grad() const;
    bool has_grad() const;
    const std::vector<double>& grad() const;

    double item() const;  // scalar tensors only
    double at(std::initializer_list<int> idx) const;

    void zero_grad();

    // Reverse-mode sweep from a scalar. Every reachable tensor with
    // requires_grad ends up with a fully accumulated gradient.
    void backward() const;

    const detail::NodePtr& node() const { return node_; }

private:
    detail::NodePtr node_;
};

// ---- elementwise / structural ops (all differentiable) ----

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor sum(const Tensor& a);  // -> scalar
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor flatten(const Tensor& a);
Tensor concat_vec(const Tensor& a, const Tensor& b);  // rank-1 concat

// Zero-pads a [H,W,D] map on the spatial axes.
Tensor pad_spatial(const Tensor& x, int top, int bottom, int left, int right);

// Identity forward; gradient does not flow into the argument. Used to
// realize the backprop barrier that halts training at a designated layer.
Tensor stop_gradient(const Tensor& x);

// ---- serialization ----
//
// Flat binary format: magic "TSR1", then dtype code, rank and extents as
// 64-bit little-endian words, then row-major values (f64 or u8).

constexpr uint64_t kDtypeF64 = 0;
constexpr uint64_t kDtypeU8 = 1;

// Plain byte tensor for image/flow storage; no autodiff.
struct ByteTensor {
    Shape shape;
    std::vector<uint8_t> data;

    int64_t numel() const { return shape_numel(shape); }
    uint8_t at(std::initializer_list<int> idx) const;
};

void save_tensor(std::ostream& os, const Tensor& t);
void save_tensor(std::ostream& os, const ByteTensor& t);
void save_tensor(const std::string& path, const Tensor& t);
void save_tensor(const std::string& path, const ByteTensor& t);
Tensor load_tensor(std::istream& is);
Tensor load_tensor(const std::string& path);
ByteTensor load_byte_tensor(std::istream& is);
ByteTensor load_byte_tensor(const std::string& path);

// Row-major flat offset helpers.
inline int64_t offset3(const Shape& s, int i, int j, int k) {
    return (static_cast<int64_t>(i) * s[1] + j) * s[2] + k;
}
inline int64_t offset4(const Shape& s, int i, int j, int k, int l) {
    return ((static_cast<int64_t>(i) * s[1] + j) * s[2] + k) * s[3] + l;
}
inline int64_t offset5(const Shape& s, int i, int j, int k, int l, int m) {
    return (((static_cast<int64_t>(i) * s[1] + j) * s[2] + k) * s[3] + l) * s[4] + m;
}

}  // namespace tsf
