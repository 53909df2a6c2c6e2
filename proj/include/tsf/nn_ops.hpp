#pragma once

// Primitive network kernels on top of the tensor core: 2D/3D convolution,
// 2D/3D max pooling, fully-connected, ReLU, softmax and losses.

#include "tsf/tensor.hpp"

namespace tsf {

// Kernel geometry for 2D (kernel.size()==2) or 3D (==3) convolution.
// Output extent per axis: floor((in + 2*pad - k) / stride) + 1, and must
// be >= 1.
struct ConvSpec {
    std::vector<int> kernel;  // {kh,kw} or {kh,kw,kt}
    std::vector<int> stride;  // same arity as kernel
    std::vector<int> pad;
    int in_channels = 0;
    int out_channels = 0;

    bool is_3d() const { return kernel.size() == 3; }
    void validate() const;
    // Expected weight shape: [kh,kw,Din,Dout] or [kh,kw,kt,Din,Dout].
    Shape weight_shape() const;
    // Output map shape for input [H,W,D] or [H,W,T,D].
    Shape out_shape(const Shape& in) const;
};

// Pooling window geometry. With ceil_mode the output extent uses
// ceil((in - k)/stride) + 1 and windows are clamped to the input, the
// classic Caffe rule (needed to reproduce published VGG-M map sizes).
struct PoolSpec {
    std::vector<int> window;  // {h,w} or {h,w,t}
    std::vector<int> stride;
    bool ceil_mode = false;

    void validate() const;
    int out_extent(int in, int axis) const;
};

Tensor conv2d(const Tensor& x, const ConvSpec& spec, const Tensor& w, const Tensor& b);
Tensor conv3d(const Tensor& x, const ConvSpec& spec, const Tensor& w, const Tensor& b);

Tensor maxpool2d(const Tensor& x, const PoolSpec& spec);
Tensor maxpool3d(const Tensor& x, const PoolSpec& spec);

// y = x^T W + b for a rank-1 input, W of shape [in,out].
Tensor fully_connected(const Tensor& x, const Tensor& w, const Tensor& b);

Tensor relu(const Tensor& x);

// Numerically stable softmax over a rank-1 tensor; output sums to 1.
Tensor softmax(const Tensor& x);

// -log(p[label]) for a probability vector; >= 0 for valid inputs.
Tensor cross_entropy(const Tensor& probs, int label);

// Sum over c != label of max(0, margin + s_c - s_label). Stands in for a
// linear SVM when training the bilinear feature classifier.
Tensor multiclass_hinge(const Tensor& scores, int label, double margin = 1.0);

// Inverted dropout: zero with probability `rate`, otherwise scale by
// 1/(1-rate). Identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng);

// sign(x)*sqrt(|x|), the power-normalisation half of bilinear feature
// normalisation.
Tensor signed_sqrt(const Tensor& x);

// x / max(||x||_2, eps).
Tensor l2_normalize(const Tensor& x, double eps = 1e-12);

}  // namespace tsf
