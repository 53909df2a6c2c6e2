#include "tsf/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tsf {

using detail::make_op;
using detail::Node;
using detail::NodePtr;

namespace {

int conv_out_extent(int in, int k, int stride, int pad, const char* what) {
    const int out = (in + 2 * pad - k) / stride + 1;
    if (in + 2 * pad < k || out < 1)
        throw std::invalid_argument(std::string(what) + ": kernel extent " + std::to_string(k) +
                                    " does not fit input extent " + std::to_string(in) +
                                    " with pad " + std::to_string(pad));
    return out;
}

}  // namespace

void ConvSpec::validate() const {
    const size_t n = kernel.size();
    if (n != 2 && n != 3)
        throw std::invalid_argument("ConvSpec: kernel must have 2 or 3 extents");
    if (stride.size() != n || pad.size() != n)
        throw std::invalid_argument("ConvSpec: stride/pad arity does not match kernel");
    for (size_t i = 0; i < n; ++i) {
        if (kernel[i] < 1 || stride[i] < 1 || pad[i] < 0)
            throw std::invalid_argument("ConvSpec: extents must be >= 1 and pads >= 0");
    }
    if (in_channels < 1 || out_channels < 1)
        throw std::invalid_argument("ConvSpec: channel counts must be >= 1");
}

Shape ConvSpec::weight_shape() const {
    Shape s(kernel.begin(), kernel.end());
    s.push_back(in_channels);
    s.push_back(out_channels);
    return s;
}

Shape ConvSpec::out_shape(const Shape& in) const {
    validate();
    const bool td = is_3d();
    if (static_cast<int>(in.size()) != (td ? 4 : 3))
        throw std::invalid_argument("conv: input rank does not match kernel arity, got " +
                                    shape_str(in));
    if (in.back() != in_channels)
        throw std::invalid_argument("conv: input has " + std::to_string(in.back()) +
                                    " channels but spec expects " +
                                    std::to_string(in_channels));
    Shape out;
    for (size_t a = 0; a < kernel.size(); ++a)
        out.push_back(conv_out_extent(in[a], kernel[a], stride[a], pad[a], "conv"));
    out.push_back(out_channels);
    return out;
}

void PoolSpec::validate() const {
    const size_t n = window.size();
    if (n != 2 && n != 3)
        throw std::invalid_argument("PoolSpec: window must have 2 or 3 extents");
    if (stride.size() != n)
        throw std::invalid_argument("PoolSpec: stride arity does not match window");
    for (size_t i = 0; i < n; ++i)
        if (window[i] < 1 || stride[i] < 1)
            throw std::invalid_argument("PoolSpec: extents must be >= 1");
}

int PoolSpec::out_extent(int in, int axis) const {
    const int k = window[axis], s = stride[axis];
    if (k > in)
        throw std::invalid_argument("maxpool: window " + std::to_string(k) +
                                    " larger than input extent " + std::to_string(in));
    int out;
    if (ceil_mode) {
        out = (in - k + s - 1) / s + 1;
        if ((out - 1) * s >= in) --out;  // last window must start inside the input
    } else {
        out = (in - k) / s + 1;
    }
    return out;
}

// ---- conv2d ----

Tensor conv2d(const Tensor& x, const ConvSpec& spec, const Tensor& w, const Tensor& b) {
    spec.validate();
    if (spec.is_3d()) throw std::invalid_argument("conv2d called with a 3D ConvSpec");
    const Shape out_shape = spec.out_shape(x.shape());
    if (!shape_eq(w.shape(), spec.weight_shape()))
        throw std::invalid_argument("conv2d: weight shape " + shape_str(w.shape()) +
                                    " does not match spec weight shape " +
                                    shape_str(spec.weight_shape()));
    if (!shape_eq(b.shape(), {spec.out_channels}))
        throw std::invalid_argument("conv2d: bias shape " + shape_str(b.shape()) +
                                    " does not match [" + std::to_string(spec.out_channels) + "]");

    const int H = x.extent(0), W = x.extent(1), Din = spec.in_channels;
    const int OH = out_shape[0], OW = out_shape[1], Dout = spec.out_channels;
    const int kh = spec.kernel[0], kw = spec.kernel[1];
    const int sh = spec.stride[0], sw = spec.stride[1];
    const int ph = spec.pad[0], pw = spec.pad[1];

    std::vector<double> y(shape_numel(out_shape));
    const auto &xv = x.data(), &wv = w.data(), &bv = b.data();
    const Shape &xs = x.shape(), &ws = w.shape();

    for (int oi = 0; oi < OH; ++oi) {
        for (int oj = 0; oj < OW; ++oj) {
            double* yo = &y[offset3(out_shape, oi, oj, 0)];
            for (int d = 0; d < Dout; ++d) yo[d] = bv[d];
            for (int u = 0; u < kh; ++u) {
                const int ii = oi * sh + u - ph;
                if (ii < 0 || ii >= H) continue;
                for (int v = 0; v < kw; ++v) {
                    const int jj = oj * sw + v - pw;
                    if (jj < 0 || jj >= W) continue;
                    const double* xp = &xv[offset3(xs, ii, jj, 0)];
                    const double* wp = &wv[offset4(ws, u, v, 0, 0)];
                    for (int c = 0; c < Din; ++c) {
                        const double xval = xp[c];
                        const double* wr = wp + static_cast<int64_t>(c) * Dout;
                        for (int d = 0; d < Dout; ++d) yo[d] += xval * wr[d];
                    }
                }
            }
        }
    }

    NodePtr xn = x.node(), wn = w.node(), bn = b.node();
    return Tensor(make_op(out_shape, std::move(y), {xn, wn, bn}, [=](Node& self) {
        const auto& g = self.grad;
        const bool need_x = xn->requires_grad, need_w = wn->requires_grad,
                   need_b = bn->requires_grad;
        for (int oi = 0; oi < OH; ++oi) {
            for (int oj = 0; oj < OW; ++oj) {
                const double* go = &g[offset3(self.shape, oi, oj, 0)];
                if (need_b)
                    for (int d = 0; d < Dout; ++d) bn->grad[d] += go[d];
                for (int u = 0; u < kh; ++u) {
                    const int ii = oi * sh + u - ph;
                    if (ii < 0 || ii >= H) continue;
                    for (int v = 0; v < kw; ++v) {
                        const int jj = oj * sw + v - pw;
                        if (jj < 0 || jj >= W) continue;
                        const int64_t xoff = offset3(xn->shape, ii, jj, 0);
                        const int64_t woff = offset4(wn->shape, u, v, 0, 0);
                        for (int c = 0; c < Din; ++c) {
                            const double* wr = &wn->value[woff + static_cast<int64_t>(c) * Dout];
                            if (need_x) {
                                double acc = 0.0;
                                for (int d = 0; d < Dout; ++d) acc += wr[d] * go[d];
                                xn->grad[xoff + c] += acc;
                            }
                            if (need_w) {
                                const double xval = xn->value[xoff + c];
                                double* wgr = &wn->grad[woff + static_cast<int64_t>(c) * Dout];
                                for (int d = 0; d < Dout; ++d) wgr[d] += xval * go[d];
                            }
                        }
                    }
                }
            }
        }
    }));
}

// ---- conv3d ----

Tensor conv3d(const Tensor& x, const ConvSpec& spec, const Tensor& w, const Tensor& b) {
    spec.validate();
    if (!spec.is_3d()) throw std::invalid_argument("conv3d called with a 2D ConvSpec");
    const Shape out_shape = spec.out_shape(x.shape());
    if (!shape_eq(w.shape(), spec.weight_shape()))
        throw std::invalid_argument("conv3d: weight shape " + shape_str(w.shape()) +
                                    " does not match spec weight shape " +
                                    shape_str(spec.weight_shape()));
    if (!shape_eq(b.shape(), {spec.out_channels}))
        throw std::invalid_argument("conv3d: bias shape " + shape_str(b.shape()) +
                                    " does not match [" + std::to_string(spec.out_channels) + "]");

    const int H = x.extent(0), W = x.extent(1), T = x.extent(2), Din = spec.in_channels;
    const int OH = out_shape[0], OW = out_shape[1], OT = out_shape[2], Dout = spec.out_channels;
    const int kh = spec.kernel[0], kw = spec.kernel[1], kt = spec.kernel[2];
    const int sh = spec.stride[0], sw = spec.stride[1], st = spec.stride[2];
    const int ph = spec.pad[0], pw = spec.pad[1], pt = spec.pad[2];

    std::vector<double> y(shape_numel(out_shape));
    const auto &xv = x.data(), &wv = w.data(), &bv = b.data();
    const Shape &xs = x.shape(), &ws = w.shape();

    for (int oi = 0; oi < OH; ++oi)
        for (int oj = 0; oj < OW; ++oj)
            for (int ot = 0; ot < OT; ++ot) {
                double* yo = &y[offset4(out_shape, oi, oj, ot, 0)];
                for (int d = 0; d < Dout; ++d) yo[d] = bv[d];
                for (int u = 0; u < kh; ++u) {
                    const int ii = oi * sh + u - ph;
                    if (ii < 0 || ii >= H) continue;
                    for (int v = 0; v < kw; ++v) {
                        const int jj = oj * sw + v - pw;
                        if (jj < 0 || jj >= W) continue;
                        for (int r = 0; r < kt; ++r) {
                            const int tt = ot * st + r - pt;
                            if (tt < 0 || tt >= T) continue;
                            const double* xp = &xv[offset4(xs, ii, jj, tt, 0)];
                            const double* wp = &wv[offset5(ws, u, v, r, 0, 0)];
                            for (int c = 0; c < Din; ++c) {
                                const double xval = xp[c];
                                const double* wr = wp + static_cast<int64_t>(c) * Dout;
                                for (int d = 0; d < Dout; ++d) yo[d] += xval * wr[d];
                            }
                        }
                    }
                }
            }

    NodePtr xn = x.node(), wn = w.node(), bn = b.node();
    return Tensor(make_op(out_shape, std::move(y), {xn, wn, bn}, [=](Node& self) {
        const auto& g = self.grad;
        const bool need_x = xn->requires_grad, need_w = wn->requires_grad,
                   need_b = bn->requires_grad;
        for (int oi = 0; oi < OH; ++oi)
            for (int oj = 0; oj < OW; ++oj)
                for (int ot = 0; ot < OT; ++ot) {
                    const double* go = &g[offset4(self.shape, oi, oj, ot, 0)];
                    if (need_b)
                        for (int d = 0; d < Dout; ++d) bn->grad[d] += go[d];
                    for (int u = 0; u < kh; ++u) {
                        const int ii = oi * sh + u - ph;
                        if (ii < 0 || ii >= H) continue;
                        for (int v = 0; v < kw; ++v) {
                            const int jj = oj * sw + v - pw;
                            if (jj < 0 || jj >= W) continue;
                            for (int r = 0; r < kt; ++r) {
                                const int tt = ot * st + r - pt;
                                if (tt < 0 || tt >= T) continue;
                                const int64_t xoff = offset4(xn->shape, ii, jj, tt, 0);
                                const int64_t woff = offset5(wn->shape, u, v, r, 0, 0);
                                for (int c = 0; c < Din; ++c) {
                                    const double* wr =
                                        &wn->value[woff + static_cast<int64_t>(c) * Dout];
                                    if (need_x) {
                                        double acc = 0.0;
                                        for (int d = 0; d < Dout; ++d) acc += wr[d] * go[d];
                                        xn->grad[xoff + c] += acc;
                                    }
                                    if (need_w) {
                                        const double xval = xn->value[xoff + c];
                                        double* wgr =
                                            &wn->grad[woff + static_cast<int64_t>(c) * Dout];
                                        for (int d = 0; d < Dout; ++d) wgr[d] += xval * go[d];
                                    }
                                }
                            }
                        }
                    }
                }
    }));
}

// ---- max pooling ----
//
// Pooling is per channel; there is no pooling across channels. The argmax
// (earliest maximal element in row-major window scan) is recorded for the
// backward pass.

Tensor maxpool2d(const Tensor& x, const PoolSpec& spec) {
    spec.validate();
    if (spec.window.size() != 2) throw std::invalid_argument("maxpool2d needs a 2D window");
    if (x.rank() != 3)
        throw std::invalid_argument("maxpool2d expects [H,W,D], got " + shape_str(x.shape()));
    const int H = x.extent(0), W = x.extent(1), D = x.extent(2);
    const int OH = spec.out_extent(H, 0), OW = spec.out_extent(W, 1);
    const Shape out_shape{OH, OW, D};
    const int kh = spec.window[0], kw = spec.window[1];
    const int sh = spec.stride[0], sw = spec.stride[1];

    std::vector<double> y(shape_numel(out_shape));
    auto argmax = std::make_shared<std::vector<int64_t>>(y.size());
    const auto& xv = x.data();
    const Shape& xs = x.shape();

    for (int oi = 0; oi < OH; ++oi)
        for (int oj = 0; oj < OW; ++oj) {
            const int i0 = oi * sh, j0 = oj * sw;
            const int i1 = std::min(i0 + kh, H), j1 = std::min(j0 + kw, W);
            for (int d = 0; d < D; ++d) {
                double best = -std::numeric_limits<double>::infinity();
                int64_t best_idx = -1;
                for (int i = i0; i < i1; ++i)
                    for (int j = j0; j < j1; ++j) {
                        const double v = xv[offset3(xs, i, j, d)];
                        if (v > best) {
                            best = v;
                            best_idx = offset3(xs, i, j, d);
                        }
                    }
                const int64_t o = offset3(out_shape, oi, oj, d);
                y[o] = best;
                (*argmax)[o] = best_idx;
            }
        }

    NodePtr xn = x.node();
    return Tensor(make_op(out_shape, std::move(y), {xn}, [xn, argmax](Node& self) {
        for (size_t o = 0; o < self.grad.size(); ++o) xn->grad[(*argmax)[o]] += self.grad[o];
    }));
}

Tensor maxpool3d(const Tensor& x, const PoolSpec& spec) {
    spec.validate();
    if (spec.window.size() != 3) throw std::invalid_argument("maxpool3d needs a 3D window");
    if (x.rank() != 4)
        throw std::invalid_argument("maxpool3d expects [H,W,T,D], got " + shape_str(x.shape()));
    const int H = x.extent(0), W = x.extent(1), T = x.extent(2), D = x.extent(3);
    const int OH = spec.out_extent(H, 0), OW = spec.out_extent(W, 1), OT = spec.out_extent(T, 2);
    const Shape out_shape{OH, OW, OT, D};
    const int kh = spec.window[0], kw = spec.window[1], kt = spec.window[2];
    const int sh = spec.stride[0], sw = spec.stride[1], st = spec.stride[2];

    std::vector<double> y(shape_numel(out_shape));
    auto argmax = std::make_shared<std::vector<int64_t>>(y.size());
    const auto& xv = x.data();
    const Shape& xs = x.shape();

    for (int oi = 0; oi < OH; ++oi)
        for (int oj = 0; oj < OW; ++oj)
            for (int ot = 0; ot < OT; ++ot) {
                const int i0 = oi * sh, j0 = oj * sw, t0 = ot * st;
                const int i1 = std::min(i0 + kh, H), j1 = std::min(j0 + kw, W),
                          t1 = std::min(t0 + kt, T);
                for (int d = 0; d < D; ++d) {
                    double best = -std::numeric_limits<double>::infinity();
                    int64_t best_idx = -1;
                    for (int i = i0; i < i1; ++i)
                        for (int j = j0; j < j1; ++j)
                            for (int t = t0; t < t1; ++t) {
                                const double v = xv[offset4(xs, i, j, t, d)];
                                if (v > best) {
                                    best = v;
                                    best_idx = offset4(xs, i, j, t, d);
                                }
                            }
                    const int64_t o = offset4(out_shape, oi, oj, ot, d);
                    y[o] = best;
                    (*argmax)[o] = best_idx;
                }
            }

    NodePtr xn = x.node();
    return Tensor(make_op(out_shape, std::move(y), {xn}, [xn, argmax](Node& self) {
        for (size_t o = 0; o < self.grad.size(); ++o) xn->grad[(*argmax)[o]] += self.grad[o];
    }));
}

// ---- fully connected ----

Tensor fully_connected(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (x.rank() != 1)
        throw std::invalid_argument("fully_connected expects a rank-1 input, got " +
                                    shape_str(x.shape()));
    if (w.rank() != 2 || w.extent(0) != x.extent(0))
        throw std::invalid_argument("fully_connected: weight shape " + shape_str(w.shape()) +
                                    " does not match input " + shape_str(x.shape()));
    const int n = w.extent(0), m = w.extent(1);
    if (!shape_eq(b.shape(), {m}))
        throw std::invalid_argument("fully_connected: bias shape " + shape_str(b.shape()) +
                                    " does not match [" + std::to_string(m) + "]");

    std::vector<double> y(b.data());
    const auto &xv = x.data(), &wv = w.data();
    for (int i = 0; i < n; ++i) {
        const double xval = xv[i];
        const double* wr = &wv[static_cast<int64_t>(i) * m];
        for (int j = 0; j < m; ++j) y[j] += xval * wr[j];
    }

    NodePtr xn = x.node(), wn = w.node(), bn = b.node();
    return Tensor(make_op({m}, std::move(y), {xn, wn, bn}, [xn, wn, bn, n, m](Node& self) {
        const auto& g = self.grad;
        if (bn->requires_grad)
            for (int j = 0; j < m; ++j) bn->grad[j] += g[j];
        for (int i = 0; i < n; ++i) {
            const int64_t row = static_cast<int64_t>(i) * m;
            if (xn->requires_grad) {
                double acc = 0.0;
                for (int j = 0; j < m; ++j) acc += wn->value[row + j] * g[j];
                xn->grad[i] += acc;
            }
            if (wn->requires_grad) {
                const double xval = xn->value[i];
                for (int j = 0; j < m; ++j) wn->grad[row + j] += xval * g[j];
            }
        }
    }));
}

// ---- activations and losses ----

Tensor relu(const Tensor& x) {
    std::vector<double> y(x.numel());
    const auto& xv = x.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xv[i] > 0.0 ? xv[i] : 0.0;
    NodePtr xn = x.node();
    return Tensor(make_op(x.shape(), std::move(y), {xn}, [xn](Node& self) {
        for (size_t i = 0; i < self.grad.size(); ++i)
            if (xn->value[i] > 0.0) xn->grad[i] += self.grad[i];
    }));
}

Tensor softmax(const Tensor& x) {
    if (x.rank() != 1)
        throw std::invalid_argument("softmax expects a rank-1 tensor, got " +
                                    shape_str(x.shape()));
    const auto& xv = x.data();
    const double m = *std::max_element(xv.begin(), xv.end());
    std::vector<double> y(xv.size());
    double z = 0.0;
    for (size_t i = 0; i < y.size(); ++i) {
        y[i] = std::exp(xv[i] - m);
        z += y[i];
    }
    for (double& v : y) v /= z;
    NodePtr xn = x.node();
    auto probs = std::make_shared<std::vector<double>>(y);
    return Tensor(make_op(x.shape(), std::move(y), {xn}, [xn, probs](Node& self) {
        const auto& p = *probs;
        double dot = 0.0;
        for (size_t i = 0; i < p.size(); ++i) dot += self.grad[i] * p[i];
        for (size_t i = 0; i < p.size(); ++i) xn->grad[i] += p[i] * (self.grad[i] - dot);
    }));
}

Tensor cross_entropy(const Tensor& probs, int label) {
    if (probs.rank() != 1)
        throw std::invalid_argument("cross_entropy expects a rank-1 probability vector");
    if (label < 0 || label >= probs.extent(0))
        throw std::invalid_argument("cross_entropy: label " + std::to_string(label) +
                                    " out of range for " + shape_str(probs.shape()));
    const double p = std::max(probs.data()[label], 1e-300);
    NodePtr pn = probs.node();
    return Tensor(make_op({1}, {-std::log(p)}, {pn}, [pn, label, p](Node& self) {
        pn->grad[label] += -self.grad[0] / p;
    }));
}

Tensor multiclass_hinge(const Tensor& scores, int label, double margin) {
    if (scores.rank() != 1)
        throw std::invalid_argument("multiclass_hinge expects a rank-1 score vector");
    const int k = scores.extent(0);
    if (label < 0 || label >= k)
        throw std::invalid_argument("multiclass_hinge: label out of range");
    const auto& s = scores.data();
    double loss = 0.0;
    auto active = std::make_shared<std::vector<int>>();
    for (int c = 0; c < k; ++c) {
        if (c == label) continue;
        const double v = margin + s[c] - s[label];
        if (v > 0.0) {
            loss += v;
            active->push_back(c);
        }
    }
    NodePtr sn = scores.node();
    return Tensor(make_op({1}, {loss}, {sn}, [sn, active, label](Node& self) {
        const double g = self.grad[0];
        for (int c : *active) {
            sn->grad[c] += g;
            sn->grad[label] -= g;
        }
    }));
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("dropout rate must be in [0,1)");
    if (rate == 0.0) return x;
    const double keep = 1.0 - rate;
    auto mask = std::make_shared<std::vector<double>>(x.numel());
    for (double& m : *mask) m = rng.uniform(0.0, 1.0) < rate ? 0.0 : 1.0 / keep;
    std::vector<double> y(x.numel());
    const auto& xv = x.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = xv[i] * (*mask)[i];
    NodePtr xn = x.node();
    return Tensor(make_op(x.shape(), std::move(y), {xn}, [xn, mask](Node& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * (*mask)[i];
    }));
}

Tensor signed_sqrt(const Tensor& x) {
    std::vector<double> y(x.numel());
    const auto& xv = x.data();
    for (size_t i = 0; i < y.size(); ++i) {
        const double a = std::sqrt(std::abs(xv[i]));
        y[i] = xv[i] < 0.0 ? -a : a;
    }
    NodePtr xn = x.node();
    return Tensor(make_op(x.shape(), std::move(y), {xn}, [xn](Node& self) {
        for (size_t i = 0; i < self.grad.size(); ++i) {
            const double denom = std::max(std::sqrt(std::abs(xn->value[i])), 1e-8);
            xn->grad[i] += self.grad[i] * 0.5 / denom;
        }
    }));
}

Tensor l2_normalize(const Tensor& x, double eps) {
    const auto& xv = x.data();
    double norm2 = 0.0;
    for (double v : xv) norm2 += v * v;
    const double norm = std::max(std::sqrt(norm2), eps);
    std::vector<double> y(x.numel());
    for (size_t i = 0; i < y.size(); ++i) y[i] = xv[i] / norm;
    NodePtr xn = x.node();
    return Tensor(make_op(x.shape(), std::move(y), {xn}, [xn, norm](Node& self) {
        double dot = 0.0;
        for (size_t i = 0; i < self.grad.size(); ++i) dot += self.grad[i] * xn->value[i];
        for (size_t i = 0; i < self.grad.size(); ++i)
            xn->grad[i] += self.grad[i] / norm - xn->value[i] * dot / (norm * norm * norm);
    }));
}

}  // namespace tsf
