#include "tsf/temporal.hpp"

#include <cmath>

namespace tsf {

using detail::make_op;
using detail::Node;
using detail::NodePtr;

ReceptiveField receptive_field(const SamplingPlan& plan) {
    if (plan.T < 1 || plan.tau < 1 || plan.L < 1)
        throw std::invalid_argument("receptive_field: T, tau and L must all be >= 1");
    ReceptiveField rf;
    rf.total_frames = (plan.T - 1) * plan.tau + plan.L;
    rf.nominal_capacity = plan.T * plan.L;
    rf.overlapping = plan.T > 1 && plan.tau < plan.L;
    return rf;
}

Tensor stack_time(const std::vector<Tensor>& maps) {
    if (maps.empty()) throw std::invalid_argument("stack_time: no maps given");
    const Shape& m0 = maps[0].shape();
    if (m0.size() != 3)
        throw std::invalid_argument("stack_time expects [H,W,D] maps, got " + shape_str(m0));
    for (const Tensor& m : maps)
        if (!shape_eq(m.shape(), m0))
            throw std::invalid_argument("stack_time: map shape " + shape_str(m.shape()) +
                                        " differs from " + shape_str(m0));
    const int H = m0[0], W = m0[1], D = m0[2], T = static_cast<int>(maps.size());
    const Shape out_shape{H, W, T, D};
    std::vector<double> y(shape_numel(out_shape));
    for (int t = 0; t < T; ++t) {
        const auto& mv = maps[t].data();
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const double* src = &mv[offset3(m0, i, j, 0)];
                double* dst = &y[offset4(out_shape, i, j, t, 0)];
                for (int d = 0; d < D; ++d) dst[d] = src[d];
            }
    }
    std::vector<NodePtr> parents;
    parents.reserve(maps.size());
    for (const Tensor& m : maps) parents.push_back(m.node());
    auto nodes = std::make_shared<std::vector<NodePtr>>(parents);
    return Tensor(make_op(out_shape, std::move(y), std::move(parents),
                          [nodes, m0, out_shape, H, W, T, D](Node& self) {
                              for (int t = 0; t < T; ++t) {
                                  Node& m = *(*nodes)[t];
                                  if (!m.requires_grad) continue;
                                  for (int i = 0; i < H; ++i)
                                      for (int j = 0; j < W; ++j) {
                                          const double* g =
                                              &self.grad[offset4(out_shape, i, j, t, 0)];
                                          double* mg = &m.grad[offset3(m0, i, j, 0)];
                                          for (int d = 0; d < D; ++d) mg[d] += g[d];
                                      }
                              }
                          }));
}

std::vector<Tensor> unstack_time(const Tensor& stack) {
    if (stack.rank() != 4)
        throw std::invalid_argument("unstack_time expects [H,W,T,D], got " +
                                    shape_str(stack.shape()));
    const int H = stack.extent(0), W = stack.extent(1), T = stack.extent(2), D = stack.extent(3);
    const Shape slice{H, W, D};
    const Shape& ss = stack.shape();
    std::vector<Tensor> out;
    out.reserve(T);
    NodePtr sn = stack.node();
    for (int t = 0; t < T; ++t) {
        std::vector<double> v(shape_numel(slice));
        const auto& sv = stack.data();
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const double* src = &sv[offset4(ss, i, j, t, 0)];
                double* dst = &v[offset3(slice, i, j, 0)];
                for (int d = 0; d < D; ++d) dst[d] = src[d];
            }
        out.emplace_back(make_op(slice, std::move(v), {sn}, [sn, ss, slice, t, H, W, D](Node& self) {
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j) {
                    const double* g = &self.grad[offset3(slice, i, j, 0)];
                    double* sg = &sn->grad[offset4(ss, i, j, t, 0)];
                    for (int d = 0; d < D; ++d) sg[d] += g[d];
                }
        }));
    }
    return out;
}

Tensor pool2d_head(const Tensor& stack, const PoolSpec& spatial_pool) {
    if (spatial_pool.window.size() != 2)
        throw std::invalid_argument("pool2d_head expects a 2D pooling window");
    std::vector<Tensor> slices = unstack_time(stack);
    for (Tensor& s : slices) s = maxpool2d(s, spatial_pool);
    return stack_time(slices);
}

Tensor pool3d_head(const Tensor& stack, const PoolSpec& pool) {
    return maxpool3d(stack, pool);
}

Tensor conv3d_fusion_head(const Tensor& stack, const ConvSpec& spec, const Tensor& w,
                          const Tensor& b, const PoolSpec& pool) {
    return maxpool3d(conv3d(stack, spec, w, b), pool);
}

std::pair<Tensor, Tensor> init_fusion_conv3d(int k_spatial, int k_temporal, int in_channels,
                                             int out_channels, bool cat_input,
                                             double temporal_scale, double sigma) {
    if (cat_input && in_channels != 2 * out_channels)
        throw std::invalid_argument("init_fusion_conv3d: cat input needs Din == 2*Dout");
    if (!cat_input && in_channels != out_channels)
        throw std::invalid_argument("init_fusion_conv3d: identity map needs Din == Dout");
    const int kh = k_spatial, kw = k_spatial, kt = k_temporal;
    const Shape fshape{kh, kw, kt, in_channels, out_channels};
    std::vector<double> f(shape_numel(fshape), 0.0);

    // Normalized Gaussian envelope over the spatiotemporal taps; sum 1 so
    // the initial filter reproduces a (smoothed) stream summation.
    std::vector<double> env(static_cast<size_t>(kh) * kw * kt);
    double env_sum = 0.0;
    for (int u = 0; u < kh; ++u)
        for (int v = 0; v < kw; ++v)
            for (int r = 0; r < kt; ++r) {
                const double du = u - (kh - 1) / 2.0;
                const double dv = v - (kw - 1) / 2.0;
                const double dr = r - (kt - 1) / 2.0;
                const double g = std::exp(-(du * du + dv * dv + dr * dr) / (2.0 * sigma * sigma));
                env[(static_cast<size_t>(u) * kw + v) * kt + r] = g;
                env_sum += g;
            }
    for (double& e : env) e /= env_sum;

    for (int u = 0; u < kh; ++u)
        for (int v = 0; v < kw; ++v)
            for (int r = 0; r < kt; ++r) {
                const double e = env[(static_cast<size_t>(u) * kw + v) * kt + r];
                for (int d = 0; d < out_channels; ++d) {
                    if (cat_input) {
                        f[offset5(fshape, u, v, r, 2 * d, d)] = e * temporal_scale;
                        f[offset5(fshape, u, v, r, 2 * d + 1, d)] = e;
                    } else {
                        f[offset5(fshape, u, v, r, d, d)] = e;
                    }
                }
            }

    Tensor filter = Tensor::from_data(fshape, std::move(f), true);
    Tensor bias = Tensor::zeros({out_channels}, true);
    return {filter, bias};
}

}  // namespace tsf
