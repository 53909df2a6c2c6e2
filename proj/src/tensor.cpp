#include "tsf/tensor.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace tsf {

namespace detail {

NodePtr make_leaf(Shape shape, std::vector<double> value, bool requires_grad) {
    if (static_cast<int>(shape.size()) > kMaxRank)
        throw std::invalid_argument("tensor rank " + std::to_string(shape.size()) +
                                    " exceeds the supported maximum of " +
                                    std::to_string(kMaxRank));
    for (int e : shape)
        if (e < 1)
            throw std::invalid_argument("tensor shape " + shape_str(shape) +
                                        " has a non-positive extent");
    if (shape_numel(shape) != static_cast<int64_t>(value.size()))
        throw std::invalid_argument("tensor data size " + std::to_string(value.size()) +
                                    " does not match shape " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    return n;
}

void ensure_grad(Node& n) {
    if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
}

NodePtr make_op(Shape shape, std::vector<double> value, std::vector<NodePtr> parents,
                std::function<void(Node&)> backprop) {
    auto n = make_leaf(std::move(shape), std::move(value), false);
    for (const auto& p : parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

}  // namespace detail

using detail::Node;
using detail::NodePtr;

// ---- Tensor basics ----

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) {
    return Tensor(detail::make_leaf(shape, std::vector<double>(shape_numel(shape), 0.0),
                                    requires_grad));
}

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
    return Tensor(detail::make_leaf(shape, std::vector<double>(shape_numel(shape), v),
                                    requires_grad));
}

Tensor Tensor::from_data(const Shape& shape, std::vector<double> data, bool requires_grad) {
    return Tensor(detail::make_leaf(shape, std::move(data), requires_grad));
}

Tensor Tensor::randn(const Shape& shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) x = rng.normal(0.0, stddev);
    return Tensor(detail::make_leaf(shape, std::move(v), requires_grad));
}

const Shape& Tensor::shape() const { return node_->shape; }
int Tensor::rank() const { return static_cast<int>(node_->shape.size()); }
int64_t Tensor::numel() const { return static_cast<int64_t>(node_->value.size()); }
int Tensor::extent(int axis) const { return node_->shape.at(axis); }

std::vector<double>& Tensor::data() { return node_->value; }
const std::vector<double>& Tensor::data() const { return node_->value; }
bool Tensor::requires_grad() const { return node_->requires_grad; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty())
        throw std::runtime_error("tensor has no gradient; call backward() first");
    return node_->grad;
}

double Tensor::item() const {
    if (numel() != 1) throw std::invalid_argument("item() requires a scalar tensor");
    return node_->value[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    const Shape& s = node_->shape;
    if (idx.size() != s.size())
        throw std::invalid_argument("index rank does not match tensor rank");
    int64_t off = 0;
    int axis = 0;
    for (int i : idx) {
        if (i < 0 || i >= s[axis]) throw std::out_of_range("tensor index out of range");
        off = off * s[axis] + i;
        ++axis;
    }
    return node_->value[off];
}

void Tensor::zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), 0.0);
}

void Tensor::backward() const {
    if (!defined()) throw std::invalid_argument("backward() on an undefined tensor");
    if (numel() != 1)
        throw std::invalid_argument("backward() requires a scalar loss tensor, got shape " +
                                    shape_str(node_->shape));

    // Post-order DFS over requires_grad nodes, then reverse sweep.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    struct Frame {
        Node* n;
        size_t next_parent;
    };
    std::vector<Frame> stack;
    if (node_->requires_grad) {
        stack.push_back({node_.get(), 0});
        visited.insert(node_.get());
    }
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next_parent < f.n->parents.size()) {
            Node* p = f.n->parents[f.next_parent++].get();
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    detail::ensure_grad(*node_);
    node_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->backprop) continue;
        for (const auto& p : n->parents)
            if (p->requires_grad) detail::ensure_grad(*p);
        n->backprop(*n);
    }
}

// ---- elementwise / structural ops ----

namespace {
void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (!shape_eq(a.shape(), b.shape()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch between " +
                                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    std::vector<double> y(a.numel());
    const auto &av = a.data(), &bv = b.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
    NodePtr an = a.node(), bn = b.node();
    return Tensor(detail::make_op(a.shape(), std::move(y), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        if (bn->requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
    }));
}

Tensor sub(const Tensor& a, const Tensor& b) {
    check_same_shape("sub", a, b);
    std::vector<double> y(a.numel());
    const auto &av = a.data(), &bv = b.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
    NodePtr an = a.node(), bn = b.node();
    return Tensor(detail::make_op(a.shape(), std::move(y), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
        if (bn->requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
    }));
}

Tensor mul(const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    std::vector<double> y(a.numel());
    const auto &av = a.data(), &bv = b.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
    NodePtr an = a.node(), bn = b.node();
    return Tensor(detail::make_op(a.shape(), std::move(y), {an, bn}, [an, bn](Node& self) {
        if (an->requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i)
                an->grad[i] += self.grad[i] * bn->value[i];
        if (bn->requires_grad)
            for (size_t i = 0; i < self.grad.size(); ++i)
                bn->grad[i] += self.grad[i] * an->value[i];
    }));
}

Tensor scale(const Tensor& a, double s) {
    std::vector<double> y(a.numel());
    const auto& av = a.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] * s;
    NodePtr an = a.node();
    return Tensor(detail::make_op(a.shape(), std::move(y), {an}, [an, s](Node& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i] * s;
    }));
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.data()) acc += v;
    NodePtr an = a.node();
    return Tensor(detail::make_op({1}, {acc}, {an}, [an](Node& self) {
        const double g = self.grad[0];
        for (size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += g;
    }));
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != a.numel())
        throw std::invalid_argument("reshape: cannot view " + shape_str(a.shape()) + " as " +
                                    shape_str(shape));
    NodePtr an = a.node();
    return Tensor(detail::make_op(shape, a.data(), {an}, [an](Node& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    }));
}

Tensor flatten(const Tensor& a) { return reshape(a, {static_cast<int>(a.numel())}); }

Tensor concat_vec(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1)
        throw std::invalid_argument("concat_vec expects rank-1 tensors, got " +
                                    shape_str(a.shape()) + " and " + shape_str(b.shape()));
    const int na = a.extent(0), nb = b.extent(0);
    std::vector<double> y(na + nb);
    std::copy(a.data().begin(), a.data().end(), y.begin());
    std::copy(b.data().begin(), b.data().end(), y.begin() + na);
    NodePtr an = a.node(), bn = b.node();
    return Tensor(detail::make_op({na + nb}, std::move(y), {an, bn}, [an, bn, na](Node& self) {
        if (an->requires_grad)
            for (int i = 0; i < na; ++i) an->grad[i] += self.grad[i];
        if (bn->requires_grad)
            for (size_t i = na; i < self.grad.size(); ++i) bn->grad[i - na] += self.grad[i];
    }));
}

Tensor pad_spatial(const Tensor& x, int top, int bottom, int left, int right) {
    if (x.rank() != 3)
        throw std::invalid_argument("pad_spatial expects a [H,W,D] map, got " +
                                    shape_str(x.shape()));
    if (top < 0 || bottom < 0 || left < 0 || right < 0)
        throw std::invalid_argument("pad_spatial: negative padding");
    const int H = x.extent(0), W = x.extent(1), D = x.extent(2);
    const Shape out_shape{H + top + bottom, W + left + right, D};
    std::vector<double> y(shape_numel(out_shape), 0.0);
    const auto& xv = x.data();
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const int64_t src = offset3(x.shape(), i, j, 0);
            const int64_t dst = offset3(out_shape, i + top, j + left, 0);
            for (int d = 0; d < D; ++d) y[dst + d] = xv[src + d];
        }
    NodePtr xn = x.node();
    Shape in_shape = x.shape();
    return Tensor(detail::make_op(out_shape, std::move(y), {xn},
                                  [xn, in_shape, out_shape, top, left](Node& self) {
                                      const int H = in_shape[0], W = in_shape[1], D = in_shape[2];
                                      for (int i = 0; i < H; ++i)
                                          for (int j = 0; j < W; ++j) {
                                              const int64_t src = offset3(out_shape, i + top, j + left, 0);
                                              const int64_t dst = offset3(in_shape, i, j, 0);
                                              for (int d = 0; d < D; ++d)
                                                  xn->grad[dst + d] += self.grad[src + d];
                                          }
                                  }));
}

Tensor stop_gradient(const Tensor& x) {
    return Tensor(detail::make_leaf(x.shape(), x.data(), false));
}

// ---- serialization ----

namespace {

void write_u64_le(std::ostream& os, uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw std::runtime_error("tensor file truncated");
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
}

void write_header(std::ostream& os, uint64_t dtype, const Shape& shape) {
    os.write("TSR1", 4);
    write_u64_le(os, dtype);
    write_u64_le(os, shape.size());
    for (int e : shape) write_u64_le(os, static_cast<uint64_t>(e));
}

Shape read_header(std::istream& is, uint64_t expected_dtype) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "TSR1", 4) != 0)
        throw std::runtime_error("not a tensor file (bad magic)");
    const uint64_t dtype = read_u64_le(is);
    if (dtype != expected_dtype)
        throw std::runtime_error("tensor dtype code " + std::to_string(dtype) +
                                 " does not match expected " + std::to_string(expected_dtype));
    const uint64_t rank = read_u64_le(is);
    if (rank > static_cast<uint64_t>(kMaxRank)) throw std::runtime_error("tensor rank too large");
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<int>(read_u64_le(is));
    return shape;
}

}  // namespace

void save_tensor(std::ostream& os, const Tensor& t) {
    write_header(os, kDtypeF64, t.shape());
    for (double v : t.data()) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        write_u64_le(os, bits);
    }
}

void save_tensor(std::ostream& os, const ByteTensor& t) {
    if (t.numel() != static_cast<int64_t>(t.data.size()))
        throw std::invalid_argument("byte tensor data does not match shape");
    write_header(os, kDtypeU8, t.shape);
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size()));
}

Tensor load_tensor(std::istream& is) {
    Shape shape = read_header(is, kDtypeF64);
    std::vector<double> v(shape_numel(shape));
    for (double& x : v) {
        uint64_t bits = read_u64_le(is);
        std::memcpy(&x, &bits, 8);
    }
    return Tensor::from_data(shape, std::move(v));
}

ByteTensor load_byte_tensor(std::istream& is) {
    ByteTensor t;
    t.shape = read_header(is, kDtypeU8);
    t.data.resize(shape_numel(t.shape));
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size()));
    if (!is) throw std::runtime_error("tensor file truncated");
    return t;
}

namespace {
template <class T>
void save_to_path(const std::string& path, const T& t) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    save_tensor(out, t);
    if (!out) throw std::runtime_error("write failed: " + path);
}
}  // namespace

void save_tensor(const std::string& path, const Tensor& t) { save_to_path(path, t); }
void save_tensor(const std::string& path, const ByteTensor& t) { save_to_path(path, t); }

Tensor load_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return load_tensor(in);
}

ByteTensor load_byte_tensor(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return load_byte_tensor(in);
}

uint8_t ByteTensor::at(std::initializer_list<int> idx) const {
    if (idx.size() != shape.size())
        throw std::invalid_argument("index rank does not match tensor rank");
    int64_t off = 0;
    int axis = 0;
    for (int i : idx) {
        off = off * shape[axis] + i;
        ++axis;
    }
    return data[off];
}

}  // namespace tsf
