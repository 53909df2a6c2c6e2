#include <algorithm>
#include <cmath>
#include <sstream>

#include "tsf/network.hpp"

namespace tsf {

ExperimentSpec ExperimentSpec::from_netdef(const NetDef& def) {
    ExperimentSpec spec;
    if (def.towers.size() == 1) spec.stream = def.towers[0].name;
    if (def.fusion) {
        spec.method = def.fusion->method;
        spec.init = def.fusion->init;
        spec.temporal_scale = def.fusion->temporal_scale;
        spec.sigma = def.fusion->sigma;
        spec.placements = def.fusion->layers;
        spec.keep_both = def.fusion->keep_both;
    }
    if (def.head) {
        spec.head = def.head->type;
        spec.head_t_kernel = def.head->t_kernel;
    }
    return spec;
}

std::string ExperimentSpec::describe() const {
    std::ostringstream os;
    if (stream != "both") {
        os << "single:" << stream;
    } else {
        os << to_string(method) << "@";
        for (size_t i = 0; i < placements.size(); ++i) os << (i ? "," : "") << placements[i];
        if (keep_both) os << "+keep";
    }
    os << "/" << to_string(head) << "/T=" << T;
    return os.str();
}

namespace {

struct Walker {
    Shape cur;         // [H,W,D] while a map, [n] after flatten
    bool is_map = true;

    void apply(ResolvedLayer& rl, int classes) {
        LayerDef& d = rl.def;
        rl.in_shape = cur;
        switch (d.kind) {
            case LayerKind::Conv: {
                if (!is_map)
                    throw std::invalid_argument("layer '" + d.name +
                                                "': conv after flatten is not supported");
                rl.conv.kernel = {d.kh, d.kw};
                rl.conv.stride = {d.sh, d.sw};
                rl.conv.pad = {d.ph, d.pw};
                rl.conv.in_channels = cur[2];
                rl.conv.out_channels = d.filters;
                cur = rl.conv.out_shape(cur);
                break;
            }
            case LayerKind::Pool: {
                if (!is_map)
                    throw std::invalid_argument("layer '" + d.name +
                                                "': pool after flatten is not supported");
                rl.pool.window = {d.wh, d.ww};
                rl.pool.stride = {d.psh, d.psw};
                rl.pool.ceil_mode = d.ceil_mode;
                cur = {rl.pool.out_extent(cur[0], 0), rl.pool.out_extent(cur[1], 1), cur[2]};
                break;
            }
            case LayerKind::Fc: {
                const int in = static_cast<int>(shape_numel(cur));
                rl.fc_in = in;
                rl.fc_out = d.out_is_classes ? classes : d.out;
                cur = {rl.fc_out};
                is_map = false;
                break;
            }
            case LayerKind::Relu:
            case LayerKind::Dropout:
            case LayerKind::Softmax: break;
        }
        rl.out_shape = cur;
    }
};

int last_fc_index(const TowerConfig& t) {
    for (int i = static_cast<int>(t.layers.size()) - 1; i >= 0; --i)
        if (t.layers[i].kind == LayerKind::Fc) return i;
    return -1;
}

int first_pool_after(const TowerConfig& t, int idx) {
    for (int i = idx + 1; i < static_cast<int>(t.layers.size()); ++i)
        if (t.layers[i].kind == LayerKind::Pool) return i;
    return -1;
}

int64_t param_count(const NetParamDef& p) {
    return shape_numel(p.w_shape) + shape_numel(p.b_shape);
}

void add_tower_params(NetPlan& plan, const std::string& tower_name,
                      const std::vector<ResolvedLayer>& layers, int upto_inclusive) {
    for (int i = 0; i <= upto_inclusive && i < static_cast<int>(layers.size()); ++i) {
        const ResolvedLayer& rl = layers[i];
        if (!rl.def.weighted()) continue;
        NetParamDef p;
        p.name = tower_name + "/" + rl.def.name;
        p.counts_as_layer = true;
        p.init = NetParamDef::Init::He;
        if (rl.def.kind == LayerKind::Conv) {
            p.w_shape = rl.conv.weight_shape();
            p.b_shape = {rl.conv.out_channels};
        } else {
            p.w_shape = {rl.fc_in, rl.fc_out};
            p.b_shape = {rl.fc_out};
        }
        plan.params.push_back(std::move(p));
    }
}

}  // namespace

NetPlan plan_network(const NetDef& def, const ExperimentSpec& spec_in) {
    NetPlan plan;
    plan.def = def;
    plan.spec = spec_in;
    ExperimentSpec& spec = plan.spec;
    plan.classes = spec.classes > 0 ? spec.classes : def.classes;
    if (plan.classes < 1) throw std::invalid_argument("network needs a positive class count");
    if (spec.T < 1) throw std::invalid_argument("T must be >= 1");

    // Resolve which towers take part.
    if (spec.stream == "both") {
        if (!def.has_tower("spatial") || !def.has_tower("temporal"))
            throw std::invalid_argument(
                "two-stream experiments need towers named 'spatial' and 'temporal'");
        for (size_t i = 0; i < def.towers.size(); ++i) {
            if (def.towers[i].name == "spatial") plan.sp_tower = static_cast<int>(i);
            if (def.towers[i].name == "temporal") plan.tp_tower = static_cast<int>(i);
        }
        plan.run_spatial = plan.run_temporal = true;
        if (spec.placements.empty())
            throw std::invalid_argument(
                "two-stream experiments need at least one fusion placement");
    } else {
        if (!def.has_tower(spec.stream))
            throw std::invalid_argument("no tower named '" + spec.stream + "'");
        if (!spec.placements.empty())
            throw std::invalid_argument("single-stream experiments cannot have placements");
        if (spec.head != TemporalHead::Pool2D)
            throw std::invalid_argument("single-stream experiments use the 2d head");
        for (size_t i = 0; i < def.towers.size(); ++i)
            if (def.towers[i].name == spec.stream) {
                if (spec.stream == "temporal")
                    plan.tp_tower = static_cast<int>(i);
                else
                    plan.sp_tower = static_cast<int>(i);
            }
        plan.run_spatial = plan.sp_tower >= 0;
        plan.run_temporal = plan.tp_tower >= 0;
    }
    plan.bilinear = spec.stream == "both" && spec.method == FusionMethod::Bilinear;

    // Plain walk of the temporal tower.
    const TowerConfig* tp_cfg = plan.tp_tower >= 0 ? &def.towers[plan.tp_tower] : nullptr;
    if (tp_cfg) {
        Walker w;
        w.cur = {def.input_h, def.input_w, tp_cfg->in_channels};
        for (const LayerDef& d : tp_cfg->layers) {
            ResolvedLayer rl;
            rl.def = d;
            w.apply(rl, plan.classes);
            plan.tp_layers.push_back(rl);
        }
    }

    // Resolve placements against both towers, sorted by spatial depth.
    const TowerConfig* sp_cfg = plan.sp_tower >= 0 ? &def.towers[plan.sp_tower] : nullptr;
    if (spec.stream == "both") {
        for (const std::string& pl : spec.placements) {
            Placement p;
            const auto colon = pl.find(':');
            p.layer = pl;
            const std::string sp_name = colon == std::string::npos ? pl : pl.substr(0, colon);
            const std::string tp_name = colon == std::string::npos ? pl : pl.substr(colon + 1);
            p.sp_idx = sp_cfg->layer_index(sp_name);
            p.tp_idx = tp_cfg->layer_index(tp_name);
            if (p.sp_idx < 0 || p.tp_idx < 0)
                throw std::invalid_argument("unknown fusion layer name '" + pl + "'");
            plan.placements.push_back(p);
        }
        std::sort(plan.placements.begin(), plan.placements.end(),
                  [](const Placement& a, const Placement& b) { return a.sp_idx < b.sp_idx; });
        for (size_t i = 1; i < plan.placements.size(); ++i)
            if (plan.placements[i].sp_idx == plan.placements[i - 1].sp_idx ||
                plan.placements[i].tp_idx <= plan.placements[i - 1].tp_idx)
                throw std::invalid_argument("fusion placements must be strictly ordered");
    }

    // Hybrid (spatial) walk with fusion effects applied along the way.
    if (sp_cfg) {
        const int sp_last_fc = last_fc_index(*sp_cfg);
        Walker w;
        w.cur = {def.input_h, def.input_w, sp_cfg->in_channels};
        for (int i = 0; i < static_cast<int>(sp_cfg->layers.size()); ++i) {
            ResolvedLayer rl;
            rl.def = sp_cfg->layers[i];
            w.apply(rl, plan.classes);
            plan.sp_layers.push_back(rl);

            for (Placement& p : plan.placements) {
                if (p.sp_idx != i) continue;
                const Shape& tp_shape = plan.tp_layers[p.tp_idx].out_shape;
                if (w.is_map) {
                    p.stage = PlacementStage::ConvStage;
                    if (tp_shape.size() != 3)
                        throw std::invalid_argument("fusion layer '" + p.layer +
                                                    "' is a map in one tower only");
                    if (w.cur[2] != tp_shape[2])
                        throw std::invalid_argument(
                            "fusion at '" + p.layer + "': channel mismatch between " +
                            shape_str(w.cur) + " and " + shape_str(tp_shape));
                    if (std::abs(w.cur[0] - tp_shape[0]) > 1 ||
                        std::abs(w.cur[1] - tp_shape[1]) > 1)
                        throw std::invalid_argument(
                            "fusion at '" + p.layer + "': spatial extents " + shape_str(w.cur) +
                            " vs " + shape_str(tp_shape) +
                            " differ by more than the one-pixel padding allowance");
                    p.channels = w.cur[2];
                    p.fused_h = std::max(w.cur[0], tp_shape[0]);
                    p.fused_w = std::max(w.cur[1], tp_shape[1]);
                    const bool first = plan.first_struct < 0;
                    if (first) {
                        plan.first_struct =
                            static_cast<int>(&p - plan.placements.data());
                        p.effective = spec.method;
                        if (spec.head == TemporalHead::ConvPool3D &&
                            (spec.method == FusionMethod::Conv ||
                             spec.method == FusionMethod::Cat)) {
                            p.cat_for_head = true;  // the 3D filter performs the fusion
                        } else if (spec.method == FusionMethod::Conv) {
                            p.injects_filter = true;
                        }
                    } else {
                        p.effective = FusionMethod::Sum;
                    }
                    // Downstream hybrid geometry.
                    int out_d = p.channels;
                    if (p.effective == FusionMethod::Cat || p.cat_for_head) out_d *= 2;
                    if (spec.head == TemporalHead::ConvPool3D && first &&
                        spec.method == FusionMethod::Conv)
                        out_d = p.channels;  // 3D filter reduces 2D -> D
                    w.cur = {p.fused_h, p.fused_w, out_d};
                } else {
                    if (tp_shape.size() != 1 || tp_shape[0] != w.cur[0])
                        throw std::invalid_argument("fusion at '" + p.layer +
                                                    "': incompatible FC activations " +
                                                    shape_str(w.cur) + " vs " +
                                                    shape_str(tp_shape));
                    if (p.sp_idx >= sp_last_fc) {
                        p.stage = PlacementStage::Prediction;
                        p.effective = FusionMethod::Sum;  // test-time averaging
                    } else {
                        p.stage = PlacementStage::HiddenFc;
                        p.effective = FusionMethod::Cat;
                        w.cur = {w.cur[0] * 2};
                    }
                }
                rl.out_shape = w.cur;
                plan.sp_layers.back() = rl;
            }
        }
    }

    // Structural bookkeeping and validation.
    bool structural = false, prediction_seen = false;
    for (const Placement& p : plan.placements) {
        if (p.stage == PlacementStage::Prediction) {
            prediction_seen = true;
            continue;
        }
        if (prediction_seen)
            throw std::invalid_argument("prediction-layer fusion must be the deepest placement");
        structural = true;
        plan.last_struct_sp = std::max(plan.last_struct_sp, p.sp_idx);
        plan.last_struct_tp = std::max(plan.last_struct_tp, p.tp_idx);
    }
    if (spec.stream == "both") {
        int n_struct = 0;
        for (const Placement& p : plan.placements)
            if (p.stage != PlacementStage::Prediction) ++n_struct;
        if (!structural && !spec.keep_both)
            throw std::invalid_argument(
                "prediction-layer fusion alone requires keep_both_towers");
        if (n_struct > 1 && !spec.keep_both)
            throw std::invalid_argument("fusing at multiple layers requires keep_both_towers");
        if (prediction_seen && !spec.keep_both)
            throw std::invalid_argument("prediction-layer fusion requires keep_both_towers");
        if (plan.bilinear) {
            if (plan.placements.size() != 1 ||
                plan.placements[0].stage != PlacementStage::ConvStage)
                throw std::invalid_argument(
                    "bilinear fusion needs exactly one conv-stage placement");
            if (spec.keep_both)
                throw std::invalid_argument("bilinear fusion is a terminal feature extractor; "
                                            "keep_both_towers does not apply");
            if (spec.T != 1 || spec.head != TemporalHead::Pool2D)
                throw std::invalid_argument("bilinear fusion supports only T=1 with the 2d head");
        }
    }
    plan.keep_spatial_head = plan.run_spatial;
    plan.keep_temporal_head =
        spec.stream == "temporal" || (spec.stream == "both" && spec.keep_both);

    // Temporal heads displace the first pool after the fusion point.
    if (spec.stream == "both" && spec.head != TemporalHead::Pool2D) {
        if (plan.first_struct < 0)
            throw std::invalid_argument("3D heads need a conv-stage fusion placement");
        const Placement& fp = plan.placements[plan.first_struct];
        plan.head_pool_sp = first_pool_after(*sp_cfg, fp.sp_idx);
        if (plan.head_pool_sp < 0)
            throw std::invalid_argument("3D heads need a pool layer after the fusion point");
        if (plan.keep_temporal_head) {
            plan.head_pool_tp = first_pool_after(*tp_cfg, fp.tp_idx);
            if (plan.head_pool_tp < 0)
                throw std::invalid_argument(
                    "3D heads need a pool layer after the fusion point in the temporal tower");
        }
        for (const Placement& p : plan.placements)
            if (p.stage == PlacementStage::ConvStage && p.sp_idx >= plan.head_pool_sp)
                throw std::invalid_argument(
                    "conv-stage fusion below the 3D head pool is not supported");
        if (fp.cat_for_head)
            for (int i = fp.sp_idx + 1; i < plan.head_pool_sp; ++i)
                if (sp_cfg->layers[i].kind == LayerKind::Conv)
                    throw std::invalid_argument(
                        "the 3D fusion filter must sit directly under its pool layer; found a "
                        "conv layer between '" +
                        fp.layer + "' and the head pool");
    }

    // Losses end in a softmax (bilinear nets end in the hinge classifier).
    if (!plan.bilinear) {
        if (plan.keep_spatial_head &&
            plan.sp_layers.back().def.kind != LayerKind::Softmax)
            throw std::invalid_argument("the spatial tower must end in a softmax layer");
        if (plan.keep_temporal_head &&
            plan.tp_layers.back().def.kind != LayerKind::Softmax)
            throw std::invalid_argument("the temporal tower must end in a softmax layer");
    }

    // Parameter layout. The hybrid tower is the spatial tower's weights with
    // fusion-adjusted input widths, already reflected in the resolved walk.
    if (plan.run_spatial) {
        const int upto = plan.bilinear ? plan.placements[0].sp_idx
                                       : static_cast<int>(plan.sp_layers.size()) - 1;
        add_tower_params(plan, "spatial", plan.sp_layers, upto);
    }
    if (plan.run_temporal) {
        int upto = static_cast<int>(plan.tp_layers.size()) - 1;
        if (spec.stream == "both" && !plan.keep_temporal_head)
            upto = plan.bilinear ? plan.placements[0].tp_idx : plan.last_struct_tp;
        add_tower_params(plan, "temporal", plan.tp_layers, upto);
    }
    for (const Placement& p : plan.placements) {
        if (p.injects_filter) {
            NetParamDef f;
            f.name = "fusion/" + p.layer;
            f.w_shape = {1, 1, 2 * p.channels, p.channels};
            f.b_shape = {p.channels};
            f.counts_as_layer = true;
            f.init = NetParamDef::Init::FusionFilter;
            plan.params.push_back(std::move(f));
        }
    }
    if (spec.stream == "both" && spec.head == TemporalHead::ConvPool3D) {
        const Placement& fp = plan.placements[plan.first_struct];
        const int din = fp.cat_for_head ? 2 * fp.channels : fp.channels;
        const int dout = spec.method == FusionMethod::Conv ? fp.channels : din;
        NetParamDef f;
        f.name = "head/" + fp.layer;
        const int k = 3;
        f.w_shape = {k, k, spec.head_t_kernel, din, dout};
        f.b_shape = {dout};
        f.counts_as_layer = true;
        f.init = NetParamDef::Init::Fusion3d;
        plan.params.push_back(std::move(f));
    }
    if (plan.bilinear) {
        const Placement& fp = plan.placements[0];
        NetParamDef c;
        c.name = "classifier/linear";
        c.w_shape = {fp.channels * fp.channels, plan.classes};
        c.b_shape = {plan.classes};
        c.counts_as_layer = false;
        c.init = NetParamDef::Init::Classifier;
        plan.params.push_back(std::move(c));
    }
    return plan;
}

ParamReport count_params(const NetPlan& plan) {
    ParamReport rep;
    for (const NetParamDef& p : plan.params) {
        const int64_t n = param_count(p);
        if (p.init == NetParamDef::Init::Classifier) {
            rep.classifier_params += n;
            rep.rows.push_back({p.name, n, false});
            continue;
        }
        rep.rows.push_back({p.name, n, p.counts_as_layer});
        rep.total += n;
        if (p.counts_as_layer) rep.layers++;
    }
    return rep;
}

ParamReport count_params(const NetDef& def, const ExperimentSpec& spec) {
    return count_params(plan_network(def, spec));
}

std::vector<std::pair<std::string, Shape>> layer_output_shapes(const TowerConfig& tower,
                                                               int input_h, int input_w,
                                                               int classes) {
    std::vector<std::pair<std::string, Shape>> out;
    Walker w;
    w.cur = {input_h, input_w, tower.in_channels};
    for (const LayerDef& d : tower.layers) {
        ResolvedLayer rl;
        rl.def = d;
        w.apply(rl, classes);
        out.emplace_back(d.name, rl.out_shape);
    }
    return out;
}

std::string ParamReport::to_csv() const {
    std::ostringstream os;
    os << "layer,name,params\n";
    int idx = 0;
    for (const ParamRow& r : rows) os << idx++ << "," << r.name << "," << r.params << "\n";
    os << idx << ",total," << total << "\n";
    return os.str();
}

std::string format_param_table(const std::vector<TableRow>& rows) {
    std::ostringstream os;
    os << "Fusion Method      | Fusion Layer(s)        | #layers | #parameters\n";
    os << "-------------------+------------------------+---------+------------\n";
    for (const TableRow& r : rows) {
        char params[64];
        if (r.classifier_params > 0)
            std::snprintf(params, sizeof(params), "%.2fM+clf(%.2fM)", r.params / 1e6,
                          r.classifier_params / 1e6);
        else
            std::snprintf(params, sizeof(params), "%.2fM", r.params / 1e6);
        char line[192];
        std::snprintf(line, sizeof(line), "%-18s | %-22s | %7d | %s\n", r.method.c_str(),
                      r.layers_label.c_str(), r.layer_count, params);
        os << line;
    }
    return os.str();
}

}  // namespace tsf
