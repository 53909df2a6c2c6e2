#pragma once

// Temporal stacking and the three temporal fusion heads: 2D pooling per
// time step, 3D pooling over spatiotemporal cubes, and 3D convolution with
// a fusion kernel followed by 3D pooling. Pooling cubes never span the
// channel axis.

#include <vector>

#include "tsf/nn_ops.hpp"
#include "tsf/tensor.hpp"

namespace tsf {

// T feature maps stacked into [H,W,T,D], plus the sampling geometry that
// produced them.
struct TemporalStack {
    Tensor x;     // [H,W,T,D]
    int tau = 1;  // frames between consecutive chunks
    int L = 1;    // flow frames per chunk
};

// Chunk sampling geometry: T chunks taken at frames t + k*tau for
// k = 0..T-1. Writing the last chunk as t+T*tau would give T+1 chunks; this
// library always uses exactly T.
struct SamplingPlan {
    int T = 1;
    int tau = 1;
    int L = 1;
    int start = 0;
};

struct ReceptiveField {
    // Frames actually spanned: (T-1)*tau + L. For tau < L consecutive flow
    // stacks overlap, so this is smaller than the nominal capacity T*L
    // (e.g. 14 spanned frames at T=5, L=10, tau=1).
    int total_frames = 0;
    int nominal_capacity = 0;  // T*L
    bool overlapping = false;  // tau < L; false for T == 1
};

ReceptiveField receptive_field(const SamplingPlan& plan);

// Order-preserving stack of T maps with identical [H,W,D] shape.
Tensor stack_time(const std::vector<Tensor>& maps);
std::vector<Tensor> unstack_time(const Tensor& stack);

// 2D pooling applied independently at each time step; [H',W',T,D].
Tensor pool2d_head(const Tensor& stack, const PoolSpec& spatial_pool);

// 3D max pooling with window {h,w,t}.
Tensor pool3d_head(const Tensor& stack, const PoolSpec& pool);

// Eq.-style 3D conv fusion: conv3d with kernel weights w/b (zero-padded on
// the time axis so T is preserved before pooling), then 3D pooling.
Tensor conv3d_fusion_head(const Tensor& stack, const ConvSpec& spec, const Tensor& w,
                          const Tensor& b, const PoolSpec& pool);

// 3D fusion kernel of shape [k,k,k,Din,Dout] initialised as a normalized
// Gaussian spatiotemporal envelope (sigma in taps, sum 1) times a channel
// map. When `cat_input` the channel map is the stacked permuted identity of
// init_fusion_filter (Din == 2*Dout, temporal rows scaled); otherwise it is
// a plain identity (Din == Dout). Gaussian/Random modes fill every entry
// from rng instead.
std::pair<Tensor, Tensor> init_fusion_conv3d(int k_spatial, int k_temporal, int in_channels,
                                             int out_channels, bool cat_input,
                                             double temporal_scale = 1.0, double sigma = 1.0);

}  // namespace tsf
