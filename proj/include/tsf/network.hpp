#pragma once

// Two-stream network construction: fusion injection at named layers,
// single-tower truncation vs dual-tower retention, temporal heads, exact
// parameter accounting and output-shape arithmetic.
//
// Placement semantics (also the parameter-accounting convention):
//  - Fusion direction is temporal -> spatial: the spatial tower continues
//    as the hybrid stream after fusion. With keep_both_towers the temporal
//    tower is also kept with its own loss; predictions of all retained
//    streams are averaged at test time.
//  - A placement at a conv-stage layer applies the configured fusion
//    method. For Conv fusion the injected 1x1x2D->D filter (or, with the
//    3D-conv head, the kxkxk 3D fusion filter on the stacked cat maps)
//    counts as a weighted layer. In multi-placement configurations only
//    the first conv-stage placement injects a filter; subsequent
//    conv-stage placements fuse by summation.
//  - A placement at a hidden FC layer concatenates the two streams'
//    activations; the next FC layer absorbs the doubled input (no injected
//    filter).
//  - A placement at the prediction layer (the last FC or the softmax)
//    averages predictions at test time only; it contributes no parameters,
//    no weighted layer, and no training loss term.
//  - Fused conv-stage maps may differ by at most one row/column; the
//    smaller map is zero-padded on the bottom/right.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tsf/netcfg.hpp"
#include "tsf/nn_ops.hpp"
#include "tsf/temporal.hpp"

namespace tsf {

// Runtime experiment description; defaults may come from the .net file.
struct ExperimentSpec {
    std::string stream = "both";  // both | spatial | temporal
    FusionMethod method = FusionMethod::Conv;
    FusionInit init = FusionInit::IdentitySum;
    double temporal_scale = 1.0;
    double sigma = 1.0;
    std::vector<std::string> placements;
    bool keep_both = false;
    TemporalHead head = TemporalHead::Pool2D;
    int head_t_kernel = 3;
    int T = 1;
    int classes = 0;  // 0: use the .net file's count

    static ExperimentSpec from_netdef(const NetDef& def);
    std::string describe() const;
};

enum class PlacementStage { ConvStage, HiddenFc, Prediction };

struct Placement {
    std::string layer;
    int sp_idx = -1, tp_idx = -1;
    PlacementStage stage = PlacementStage::ConvStage;
    FusionMethod effective = FusionMethod::Sum;
    bool injects_filter = false;  // 1x1 conv-fusion filter allocated here
    bool cat_for_head = false;    // per-chunk cat feeding the 3D fusion filter
    int channels = 0;             // per-stream channels D at the placement
    int fused_h = 0, fused_w = 0;
};

// A tower layer with geometry resolved against actual input shapes (fusion
// effects included for the hybrid tower).
struct ResolvedLayer {
    LayerDef def;
    ConvSpec conv;
    PoolSpec pool;
    int fc_in = 0, fc_out = 0;
    Shape in_shape, out_shape;
};

struct ParamRow {
    std::string name;
    int64_t params = 0;
    bool weighted_layer = false;
};

struct ParamReport {
    std::vector<ParamRow> rows;
    int64_t total = 0;
    int layers = 0;                // weighted layers (conv + fc + injected fusion filters)
    int64_t classifier_params = 0; // bilinear classifier, reported outside the total
    std::string to_csv() const;    // columns: layer,name,params
};

struct NetParamDef {
    std::string name;  // e.g. "spatial/conv1", "fusion/relu5", "head/relu5"
    Shape w_shape, b_shape;
    bool counts_as_layer = false;
    enum class Init { He, FusionFilter, Fusion3d, Classifier } init = Init::He;
};

struct NetPlan {
    NetDef def;
    ExperimentSpec spec;
    int classes = 0;
    int sp_tower = -1, tp_tower = -1;  // indices into def.towers
    bool run_spatial = true, run_temporal = true;
    bool keep_spatial_head = true, keep_temporal_head = false;
    std::vector<Placement> placements;       // sorted by spatial-tower depth
    int first_struct = -1;                   // placements index; -1 when none
    int last_struct_sp = -1, last_struct_tp = -1;  // deepest structural layer idx
    int head_pool_sp = -1, head_pool_tp = -1;      // pool displaced by 3D heads
    std::vector<ResolvedLayer> sp_layers, tp_layers;
    bool bilinear = false;
    std::vector<NetParamDef> params;

    const std::vector<ResolvedLayer>& tower_layers(bool spatial) const {
        return spatial ? sp_layers : tp_layers;
    }
};

// Pure planning: shape arithmetic, placement resolution, parameter layout.
// Performs all structural validation; throws std::invalid_argument on
// contract violations (unknown layer names, incompatible fused shapes, ...).
NetPlan plan_network(const NetDef& def, const ExperimentSpec& spec);

// Architecture-only accounting; no tensors are allocated.
ParamReport count_params(const NetPlan& plan);
ParamReport count_params(const NetDef& def, const ExperimentSpec& spec);

// Per-layer output shapes of a single tower at the given input size.
std::vector<std::pair<std::string, Shape>> layer_output_shapes(const TowerConfig& tower,
                                                               int input_h, int input_w,
                                                               int classes);

// One network input chunk sequence: T RGB frames plus T flow stacks.
struct ClipSample {
    std::vector<Tensor> rgb;   // each [H,W,3]
    std::vector<Tensor> flow;  // each [H,W,2L]
    int label = -1;
};

struct ForwardOptions {
    bool train = false;
    Rng* rng = nullptr;             // required when training with dropout
    std::string barrier;            // stop-gradient after this layer (all towers)
    double dropout_override = -1.0; // >= 0 replaces configured dropout rates
};

struct ForwardResult {
    std::vector<std::string> stream_names;  // retained loss heads
    std::vector<Tensor> stream_preds;       // probabilities (scores for bilinear)
    std::vector<Tensor> stream_losses;      // present when the clip has a label
    Tensor total_loss;                      // sum of stream losses
    // Mean of stream_preds: the test-time two-stream prediction average.
    Tensor averaged_pred() const;
};

class Network {
public:
    Network(NetPlan plan, Rng& init_rng);

    const NetPlan& plan() const { return plan_; }
    const std::vector<std::pair<std::string, Tensor>>& parameters() const { return params_; }
    Tensor param(const std::string& name) const;
    int64_t total_params() const;

    ForwardResult forward(const ClipSample& clip, const ForwardOptions& opts = {}) const;

    // Runs one tower in isolation (eval mode, no fusion events) up to and
    // including the named layer. Meaningful for layers at or before the
    // fusion point; used by equivalence tests.
    Tensor tower_features(bool spatial, const Tensor& input, const std::string& layer) const;

    void save_params(const std::string& path) const;
    void load_params(const std::string& path);

private:
    NetPlan plan_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::map<std::string, Tensor> by_name_;

    Tensor apply_layer(const ResolvedLayer& rl, const std::string& tower, Tensor x,
                       const ForwardOptions& opts) const;
    Tensor run_tower_range(bool spatial, int first, int last_exclusive, Tensor x,
                           const ForwardOptions& opts) const;
};

// Formats rows like the published fusion comparison tables:
// method, layer(s), #layers, #parameters (in millions).
struct TableRow {
    std::string method, layers_label;
    int layer_count = 0;
    int64_t params = 0;
    int64_t classifier_params = 0;
};
std::string format_param_table(const std::vector<TableRow>& rows);

}  // namespace tsf
