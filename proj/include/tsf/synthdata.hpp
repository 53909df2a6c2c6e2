#pragma once

// Synthetic appearance x motion videos, block-matching optical flow, flow
// stacking with clip/quantize storage, and clip sampling with the training
// augmentation pipeline.
//
// A class is a (texture, motion) pair: a fixed noise texture bounces
// through the frame along a motion-specific axis. A single RGB frame
// reveals the texture but not the motion (positions are uniform); the flow
// field reveals the motion but not the texture, so neither stream alone
// determines the class.

#include <string>
#include <utility>
#include <vector>

#include "tsf/network.hpp"
#include "tsf/tensor.hpp"

namespace tsf {

struct DataGeometry {
    int height = 32, width = 32;
    int frames = 16;
    int patch = 12;        // moving patch side in pixels
    int speed = 2;         // patch displacement per frame
    int block = 4;         // block-matching block size
    int search_radius = 5;
    double flow_clip = 20.0;  // displacement clipping bound in pixels
};

enum class Split { Train, Val, Test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

struct VideoSpec {
    std::string id;
    int label = 0, texture = 0, motion = 0;
    Split split = Split::Train;
};

struct VideoRecord {
    VideoSpec spec;
    ByteTensor frames;  // [F,H,W,3]
    ByteTensor flow_q;  // [F-1,2,H,W], u then v, clipped and quantized
};

struct DatasetParams {
    uint64_t seed = 0;
    int na = 2;  // texture count
    int nm = 2;  // motion count (up to 4 motion axes)
    int train_per_class = 50, val_per_class = 10, test_per_class = 25;
    DataGeometry geom;
};

struct Dataset {
    DatasetParams params;
    std::vector<VideoRecord> videos;

    int classes() const { return params.na * params.nm; }
    std::vector<int> split_indices(Split s) const;
};

// Deterministic (texture, motion, split) assignment, exposed separately so
// distribution properties can be checked without materializing frames.
std::vector<VideoSpec> enumerate_video_specs(const DatasetParams& p);

// Full generation: frames plus precomputed, clipped, quantized flow.
// Deterministic under the seed; per-video RNG streams are forked from it.
Dataset generate_dataset(const DatasetParams& p);

// Integer-pixel displacements minimizing per-block SAD between consecutive
// frames ([H,W,3] u8). Ties break toward the smallest displacement
// magnitude, then row-major search order. Returned fields give, per pixel,
// where that block's content moved from frame_a to frame_b.
std::pair<Tensor, Tensor> block_matching_flow(const ByteTensor& frame_a,
                                              const ByteTensor& frame_b, int block,
                                              int search_radius);

// Flow storage maps [-clip, clip] linearly onto [0, 255].
uint8_t quantize_flow_value(double v, double clip);
double dequantize_flow_value(uint8_t q, double clip);

// Stacks L consecutive flow pairs starting at frame t into [H,W,2L]:
// channels 0..L-1 hold horizontal displacement (oldest first), channels
// L..2L-1 vertical. Values are dequantized pixels.
Tensor build_flow_stack(const ByteTensor& flow_q, int t, int L, double clip);

struct CropRules {
    double base_frac = 0.8125;      // base crop side relative to the image side
    double jitter = 0.25;           // width/height jitter, +-25%
    double max_border_frac = 0.25;  // each crop edge within 25% of its border
    bool allow_flip = true;
};

struct AugmentedCrop {
    int x = 0, y = 0, w = 0, h = 0;
    double jitter_w = 1.0, jitter_h = 1.0;
    bool flip = false;
    int start_frame = 0;
    int tau = 1;
};

// Draws the stride, start frame and one spatial transform shared by every
// frame in the clip. Throws when the video is too short, naming the minimal
// required length (T-1)*tau + L + 1.
AugmentedCrop draw_augmentation(Rng& rng, const DataGeometry& geom, const CropRules& rules,
                                int video_frames, int T, std::pair<int, int> tau_range, int L);

struct SampledClip {
    ClipSample clip;
    AugmentedCrop aug;
};

// Training sampling: random start/stride/crop/flip, rescale to
// input_size x input_size (aspect-ratio change allowed). RGB is scaled to
// [-0.5, 0.5]; flow channels are divided by the clip bound. A horizontal
// flip mirrors every channel and negates the horizontal flow channels.
SampledClip sample_training_clip(const VideoRecord& video, const DataGeometry& geom, int T,
                                 std::pair<int, int> tau_range, int L, const CropRules& rules,
                                 int input_size, Rng& rng);

// Test sampling: `count` evenly spaced start frames, full frame (no crop),
// optionally adding a horizontally flipped duplicate of each clip.
std::vector<ClipSample> sample_test_clips(const VideoRecord& video, const DataGeometry& geom,
                                          int T, int tau, int L, int count, bool flips,
                                          int input_size);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace tsf
