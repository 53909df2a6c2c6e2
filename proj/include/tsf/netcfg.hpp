#pragma once

// Declarative architecture description. A .net file names towers and their
// layers plus optional default fusion/head settings:
//
//   name vgg-m-2048
//   classes 101
//   input 224 224
//
//   tower spatial
//   channels 3
//   layer conv1 conv filters=96 kernel=7 stride=2 pad=0
//   layer relu1 relu
//   layer pool1 maxpool window=3 stride=2 ceil
//   layer fc6 fc out=4096
//   layer drop6 dropout rate=0.85
//   layer prob softmax
//   end
//
//   tower temporal
//   ...
//   end
//
//   fusion method=conv layers=relu5 init=identity_sum keep_both=false
//   head 3dconv tkernel=3
//
// kernel/stride/pad/window accept N or NxM. "out=classes" resolves to the
// file's class count (overridable at build time).

#include <optional>
#include <string>
#include <vector>

#include "tsf/fusion.hpp"

namespace tsf {

enum class LayerKind { Conv, Pool, Relu, Fc, Dropout, Softmax };

std::string to_string(LayerKind k);

struct LayerDef {
    std::string name;
    LayerKind kind = LayerKind::Relu;
    // conv
    int filters = 0, kh = 0, kw = 0, sh = 1, sw = 1, ph = 0, pw = 0;
    // pool
    int wh = 0, ww = 0, psh = 1, psw = 1;
    bool ceil_mode = false;
    // fc
    int out = 0;
    bool out_is_classes = false;
    // dropout
    double rate = 0.0;

    bool weighted() const { return kind == LayerKind::Conv || kind == LayerKind::Fc; }
};

struct TowerConfig {
    std::string name;
    int in_channels = 0;
    std::vector<LayerDef> layers;

    int layer_index(const std::string& layer_name) const;  // -1 when absent
};

enum class TemporalHead { Pool2D, Pool3D, ConvPool3D };

TemporalHead head_from_string(const std::string& s);
std::string to_string(TemporalHead h);

struct FusionSpecCfg {
    FusionMethod method = FusionMethod::Conv;
    FusionInit init = FusionInit::IdentitySum;
    double temporal_scale = 1.0;
    double sigma = 1.0;
    std::vector<std::string> layers;
    bool keep_both = false;
};

struct HeadCfg {
    TemporalHead type = TemporalHead::Pool2D;
    int t_kernel = 3;  // temporal extent of the 3D fusion kernel
};

struct NetDef {
    std::string name;
    int classes = 0;
    int input_h = 0, input_w = 0;
    std::vector<TowerConfig> towers;
    std::optional<FusionSpecCfg> fusion;
    std::optional<HeadCfg> head;

    const TowerConfig& tower(const std::string& name) const;
    bool has_tower(const std::string& name) const;
};

// Throws std::invalid_argument with "<source>:<line>: message" diagnostics.
NetDef parse_net_string(const std::string& text, const std::string& source_name = "<string>");
NetDef parse_net_file(const std::string& path);
std::string write_net_string(const NetDef& def);

}  // namespace tsf
