#include "tsf/fusion.hpp"

#include <cmath>

namespace tsf {

using detail::make_op;
using detail::Node;
using detail::NodePtr;

namespace {

void check_fusible(const char* op, const Tensor& xa, const Tensor& xb) {
    if (xa.rank() != 3 || xb.rank() != 3)
        throw std::invalid_argument(std::string(op) + ": feature maps must be [H,W,D], got " +
                                    shape_str(xa.shape()) + " and " + shape_str(xb.shape()));
    if (!shape_eq(xa.shape(), xb.shape()))
        throw std::invalid_argument(std::string(op) + ": shape mismatch between " +
                                    shape_str(xa.shape()) + " and " + shape_str(xb.shape()));
}

}  // namespace

FusionMethod fusion_method_from_string(const std::string& s) {
    if (s == "sum") return FusionMethod::Sum;
    if (s == "max") return FusionMethod::Max;
    if (s == "cat") return FusionMethod::Cat;
    if (s == "conv") return FusionMethod::Conv;
    if (s == "bilinear") return FusionMethod::Bilinear;
    throw std::invalid_argument("unknown fusion method '" + s +
                                "' (expected sum|max|cat|conv|bilinear)");
}

std::string to_string(FusionMethod m) {
    switch (m) {
        case FusionMethod::Sum: return "sum";
        case FusionMethod::Max: return "max";
        case FusionMethod::Cat: return "cat";
        case FusionMethod::Conv: return "conv";
        case FusionMethod::Bilinear: return "bilinear";
    }
    return "?";
}

FusionInit fusion_init_from_string(const std::string& s) {
    if (s == "identity_sum") return FusionInit::IdentitySum;
    if (s == "identity_sum_scaled") return FusionInit::IdentitySumScaled;
    if (s == "gaussian") return FusionInit::Gaussian;
    if (s == "random") return FusionInit::Random;
    throw std::invalid_argument(
        "unknown fusion init '" + s +
        "' (expected identity_sum|identity_sum_scaled|gaussian|random)");
}

std::string to_string(FusionInit i) {
    switch (i) {
        case FusionInit::IdentitySum: return "identity_sum";
        case FusionInit::IdentitySumScaled: return "identity_sum_scaled";
        case FusionInit::Gaussian: return "gaussian";
        case FusionInit::Random: return "random";
    }
    return "?";
}

Tensor fuse_sum(const Tensor& xa, const Tensor& xb) {
    check_fusible("fuse_sum", xa, xb);
    return add(xa, xb);
}

Tensor fuse_max(const Tensor& xa, const Tensor& xb) {
    check_fusible("fuse_max", xa, xb);
    std::vector<double> y(xa.numel());
    const auto &av = xa.data(), &bv = xb.data();
    for (size_t i = 0; i < y.size(); ++i) y[i] = av[i] >= bv[i] ? av[i] : bv[i];
    NodePtr an = xa.node(), bn = xb.node();
    return Tensor(make_op(xa.shape(), std::move(y), {an, bn}, [an, bn](Node& self) {
        // Ties route the gradient to xa.
        for (size_t i = 0; i < self.grad.size(); ++i) {
            if (an->value[i] >= bn->value[i]) {
                if (an->requires_grad) an->grad[i] += self.grad[i];
            } else if (bn->requires_grad) {
                bn->grad[i] += self.grad[i];
            }
        }
    }));
}

Tensor fuse_cat(const Tensor& xa, const Tensor& xb) {
    check_fusible("fuse_cat", xa, xb);
    const int H = xa.extent(0), W = xa.extent(1), D = xa.extent(2);
    const Shape out_shape{H, W, 2 * D};
    std::vector<double> y(shape_numel(out_shape));
    const auto &av = xa.data(), &bv = xb.data();
    for (int64_t p = 0; p < static_cast<int64_t>(H) * W; ++p) {
        const double* ap = &av[p * D];
        const double* bp = &bv[p * D];
        double* yp = &y[p * 2 * D];
        for (int d = 0; d < D; ++d) {
            yp[2 * d] = bp[d];
            yp[2 * d + 1] = ap[d];
        }
    }
    NodePtr an = xa.node(), bn = xb.node();
    const int64_t npix = static_cast<int64_t>(H) * W;
    return Tensor(make_op(out_shape, std::move(y), {an, bn}, [an, bn, npix, D](Node& self) {
        for (int64_t p = 0; p < npix; ++p) {
            const double* gp = &self.grad[p * 2 * D];
            for (int d = 0; d < D; ++d) {
                if (bn->requires_grad) bn->grad[p * D + d] += gp[2 * d];
                if (an->requires_grad) an->grad[p * D + d] += gp[2 * d + 1];
            }
        }
    }));
}

std::pair<Tensor, Tensor> split_cat(const Tensor& y) {
    if (y.rank() != 3 || y.extent(2) % 2 != 0)
        throw std::invalid_argument("split_cat expects [H,W,2D], got " + shape_str(y.shape()));
    const int H = y.extent(0), W = y.extent(1), D = y.extent(2) / 2;
    const Shape part{H, W, D};
    std::vector<double> a(shape_numel(part)), b(shape_numel(part));
    const auto& yv = y.data();
    const int64_t npix = static_cast<int64_t>(H) * W;
    for (int64_t p = 0; p < npix; ++p)
        for (int d = 0; d < D; ++d) {
            b[p * D + d] = yv[p * 2 * D + 2 * d];
            a[p * D + d] = yv[p * 2 * D + 2 * d + 1];
        }
    NodePtr yn = y.node();
    Tensor xa(make_op(part, std::move(a), {yn}, [yn, npix, D](Node& self) {
        for (int64_t p = 0; p < npix; ++p)
            for (int d = 0; d < D; ++d) yn->grad[p * 2 * D + 2 * d + 1] += self.grad[p * D + d];
    }));
    Tensor xb(make_op(part, std::move(b), {yn}, [yn, npix, D](Node& self) {
        for (int64_t p = 0; p < npix; ++p)
            for (int d = 0; d < D; ++d) yn->grad[p * 2 * D + 2 * d] += self.grad[p * D + d];
    }));
    return {xa, xb};
}

Tensor fuse_conv(const Tensor& xa, const Tensor& xb, const Tensor& f, const Tensor& b) {
    check_fusible("fuse_conv", xa, xb);
    const int D = xa.extent(2);
    if (!shape_eq(f.shape(), {1, 1, 2 * D, D}))
        throw std::invalid_argument("fuse_conv: filter shape " + shape_str(f.shape()) +
                                    " does not match [1,1," + std::to_string(2 * D) + "," +
                                    std::to_string(D) + "]");
    ConvSpec spec;
    spec.kernel = {1, 1};
    spec.stride = {1, 1};
    spec.pad = {0, 0};
    spec.in_channels = 2 * D;
    spec.out_channels = D;
    return conv2d(fuse_cat(xa, xb), spec, f, b);
}

Tensor fuse_bilinear(const Tensor& xa, const Tensor& xb) {
    if (xa.rank() != 3 || xb.rank() != 3)
        throw std::invalid_argument("fuse_bilinear: feature maps must be [H,W,D]");
    if (xa.extent(0) != xb.extent(0) || xa.extent(1) != xb.extent(1) ||
        xa.extent(2) != xb.extent(2))
        throw std::invalid_argument("fuse_bilinear: shape mismatch between " +
                                    shape_str(xa.shape()) + " and " + shape_str(xb.shape()) +
                                    " (equal H, W and D required)");
    const int H = xa.extent(0), W = xa.extent(1), D = xa.extent(2);
    const int64_t npix = static_cast<int64_t>(H) * W;
    std::vector<double> y(static_cast<size_t>(D) * D, 0.0);
    const auto &av = xa.data(), &bv = xb.data();
    for (int64_t p = 0; p < npix; ++p) {
        const double* ap = &av[p * D];
        const double* bp = &bv[p * D];
        for (int da = 0; da < D; ++da) {
            const double a = ap[da];
            double* yr = &y[static_cast<int64_t>(da) * D];
            for (int db = 0; db < D; ++db) yr[db] += a * bp[db];
        }
    }
    NodePtr an = xa.node(), bn = xb.node();
    return Tensor(make_op({D * D}, std::move(y), {an, bn}, [an, bn, npix, D](Node& self) {
        for (int64_t p = 0; p < npix; ++p) {
            for (int da = 0; da < D; ++da) {
                const double* gr = &self.grad[static_cast<int64_t>(da) * D];
                if (an->requires_grad) {
                    double acc = 0.0;
                    for (int db = 0; db < D; ++db) acc += gr[db] * bn->value[p * D + db];
                    an->grad[p * D + da] += acc;
                }
                if (bn->requires_grad) {
                    const double a = an->value[p * D + da];
                    for (int db = 0; db < D; ++db) bn->grad[p * D + db] += gr[db] * a;
                }
            }
        }
    }));
}

std::pair<Tensor, Tensor> init_fusion_filter(FusionInit mode, int channels,
                                             double temporal_scale, double sigma, Rng* rng) {
    if (channels < 1) throw std::invalid_argument("init_fusion_filter: channels must be >= 1");
    const int D = channels;
    const Shape fshape{1, 1, 2 * D, D};
    std::vector<double> f(shape_numel(fshape), 0.0);
    auto row = [D](int in_channel) { return static_cast<int64_t>(in_channel) * D; };
    switch (mode) {
        case FusionInit::IdentitySum:
        case FusionInit::IdentitySumScaled: {
            const double xb_scale = mode == FusionInit::IdentitySumScaled ? temporal_scale : 1.0;
            for (int d = 0; d < D; ++d) {
                f[row(2 * d) + d] = xb_scale;  // temporal (xb) channels sit at even rows
                f[row(2 * d + 1) + d] = 1.0;
            }
            break;
        }
        case FusionInit::Gaussian:
        case FusionInit::Random: {
            if (!rng)
                throw std::invalid_argument("init_fusion_filter: rng required for random modes");
            const double std =
                mode == FusionInit::Gaussian ? sigma : std::sqrt(2.0 / (2.0 * D));
            for (double& v : f) v = rng->normal(0.0, std);
            break;
        }
    }
    Tensor filter = Tensor::from_data(fshape, std::move(f), true);
    Tensor bias = Tensor::zeros({D}, true);
    return {filter, bias};
}

Tensor bilinear_features(const Tensor& xa, const Tensor& xb) {
    return l2_normalize(signed_sqrt(fuse_bilinear(xa, xb)));
}

}  // namespace tsf
