#pragma once

// Spatial fusion functions combining two feature maps x^a (spatial stream)
// and x^b (temporal stream) of identical [H,W,D] shape:
//
//   sum      y(i,j,d) = xa(i,j,d) + xb(i,j,d)
//   max      y(i,j,d) = max(xa, xb); gradient to xa on ties
//   cat      channel interleave, [H,W,2D]
//   conv     cat followed by a learned 1x1x2D->D filter bank plus bias
//   bilinear sum over locations of the channel outer product, length D*D
//
// Concatenation layout (used everywhere, including the conv-fusion filter
// row order): in 0-based storage, output channel 2d holds xb channel d and
// output channel 2d+1 holds xa channel d. This is the 1-based interleave
// y_cat(2d) = xa(d), y_cat(2d-1) = xb(d) written out with indices starting
// at 0, so the first stored channel pair is (xb, xa).

#include "tsf/nn_ops.hpp"
#include "tsf/tensor.hpp"

namespace tsf {

enum class FusionMethod { Sum, Max, Cat, Conv, Bilinear };

enum class FusionInit {
    IdentitySum,        // stacked per-stream identities; conv fusion == sum fusion
    IdentitySumScaled,  // identity rows of the temporal (xb) stream scaled by a factor
    Gaussian,           // zero-mean entries with std sigma
    Random,             // zero-mean entries with std sqrt(2 / fan_in)
};

FusionMethod fusion_method_from_string(const std::string& s);
std::string to_string(FusionMethod m);
FusionInit fusion_init_from_string(const std::string& s);
std::string to_string(FusionInit i);

Tensor fuse_sum(const Tensor& xa, const Tensor& xb);
Tensor fuse_max(const Tensor& xa, const Tensor& xb);
Tensor fuse_cat(const Tensor& xa, const Tensor& xb);
Tensor fuse_conv(const Tensor& xa, const Tensor& xb, const Tensor& f, const Tensor& b);
// Length D*D vector; entry d_a*D + d_b correlates xa channel d_a with xb
// channel d_b. All spatial information is marginalized out.
Tensor fuse_bilinear(const Tensor& xa, const Tensor& xb);

// Inverse of fuse_cat; returns (xa, xb). Differentiable.
std::pair<Tensor, Tensor> split_cat(const Tensor& y);

// Conv-fusion filter f of shape [1,1,2D,D] plus zero bias of shape [D],
// both trainable. Filter rows follow the cat interleave above, so the
// IdentitySum filter reproduces fuse_sum exactly and the scaled variant
// multiplies the temporal (xb) stream's identity by `temporal_scale`.
// `rng` is required for Gaussian/Random modes.
std::pair<Tensor, Tensor> init_fusion_filter(FusionInit mode, int channels,
                                             double temporal_scale = 3.0, double sigma = 1.0,
                                             Rng* rng = nullptr);

// Power- and L2-normalised bilinear descriptor (signed square root, then
// unit L2 norm), the form fed to the linear classifier.
Tensor bilinear_features(const Tensor& xa, const Tensor& xb);

}  // namespace tsf
