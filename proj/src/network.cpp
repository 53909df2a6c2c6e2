#include <cmath>
#include <cstring>
#include <fstream>

#include "tsf/fusion.hpp"
#include "tsf/network.hpp"

namespace tsf {

namespace {

Tensor he_init(const Shape& w_shape, Rng& rng) {
    int64_t fan_in = 1;
    for (size_t i = 0; i + 1 < w_shape.size(); ++i) fan_in *= w_shape[i];
    return Tensor::randn(w_shape, rng, std::sqrt(2.0 / static_cast<double>(fan_in)), true);
}

// Pads a map on the bottom/right up to the fused extents.
Tensor align_to(const Tensor& x, int fh, int fw) {
    const int dh = fh - x.extent(0), dw = fw - x.extent(1);
    if (dh == 0 && dw == 0) return x;
    return pad_spatial(x, 0, dh, 0, dw);
}

Tensor mean_of(const std::vector<Tensor>& xs) {
    Tensor acc = xs[0];
    for (size_t i = 1; i < xs.size(); ++i) acc = add(acc, xs[i]);
    return xs.size() > 1 ? scale(acc, 1.0 / static_cast<double>(xs.size())) : acc;
}

}  // namespace

Tensor ForwardResult::averaged_pred() const {
    if (stream_preds.empty()) throw std::runtime_error("forward produced no predictions");
    return mean_of(stream_preds);
}

Network::Network(NetPlan plan, Rng& init_rng) : plan_(std::move(plan)) {
    const ExperimentSpec& spec = plan_.spec;
    for (const NetParamDef& pd : plan_.params) {
        Tensor w, b;
        switch (pd.init) {
            case NetParamDef::Init::He:
            case NetParamDef::Init::Classifier:
                w = he_init(pd.w_shape, init_rng);
                b = Tensor::zeros(pd.b_shape, true);
                break;
            case NetParamDef::Init::FusionFilter: {
                const int d = pd.b_shape[0];
                std::tie(w, b) = init_fusion_filter(spec.init, d, spec.temporal_scale,
                                                    spec.sigma, &init_rng);
                break;
            }
            case NetParamDef::Init::Fusion3d: {
                const int din = pd.w_shape[3], dout = pd.w_shape[4];
                if (spec.init == FusionInit::Gaussian) {
                    w = Tensor::randn(pd.w_shape, init_rng, spec.sigma, true);
                    b = Tensor::zeros(pd.b_shape, true);
                } else if (spec.init == FusionInit::Random) {
                    w = he_init(pd.w_shape, init_rng);
                    b = Tensor::zeros(pd.b_shape, true);
                } else {
                    const double s = spec.init == FusionInit::IdentitySumScaled
                                         ? spec.temporal_scale
                                         : 1.0;
                    std::tie(w, b) = init_fusion_conv3d(pd.w_shape[0], pd.w_shape[2], din, dout,
                                                        din == 2 * dout, s, spec.sigma);
                }
                break;
            }
        }
        params_.emplace_back(pd.name + ".w", w);
        params_.emplace_back(pd.name + ".b", b);
        by_name_[pd.name + ".w"] = w;
        by_name_[pd.name + ".b"] = b;
    }
}

Tensor Network::param(const std::string& name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::invalid_argument("no parameter named '" + name + "'");
    return it->second;
}

int64_t Network::total_params() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
}

Tensor Network::apply_layer(const ResolvedLayer& rl, const std::string& tower, Tensor x,
                            const ForwardOptions& opts) const {
    switch (rl.def.kind) {
        case LayerKind::Conv:
            return conv2d(x, rl.conv, param(tower + "/" + rl.def.name + ".w"),
                          param(tower + "/" + rl.def.name + ".b"));
        case LayerKind::Pool: return maxpool2d(x, rl.pool);
        case LayerKind::Relu: return relu(x);
        case LayerKind::Fc:
            if (x.rank() != 1) x = flatten(x);
            return fully_connected(x, param(tower + "/" + rl.def.name + ".w"),
                                   param(tower + "/" + rl.def.name + ".b"));
        case LayerKind::Dropout: {
            if (!opts.train) return x;
            const double rate = opts.dropout_override >= 0.0 ? opts.dropout_override
                                                             : rl.def.rate;
            if (rate == 0.0) return x;
            if (!opts.rng)
                throw std::invalid_argument("training forward needs an rng for dropout");
            return dropout(x, rate, *opts.rng);
        }
        case LayerKind::Softmax: return softmax(x);
    }
    throw std::logic_error("unreachable layer kind");
}

Tensor Network::run_tower_range(bool spatial, int first, int last_exclusive, Tensor x,
                                const ForwardOptions& opts) const {
    const auto& layers = plan_.tower_layers(spatial);
    const std::string tower = spatial ? "spatial" : "temporal";
    for (int i = first; i < last_exclusive; ++i) {
        x = apply_layer(layers[i], tower, x, opts);
        if (!opts.barrier.empty() && layers[i].def.name == opts.barrier) x = stop_gradient(x);
    }
    return x;
}

ForwardResult Network::forward(const ClipSample& clip, const ForwardOptions& opts) const {
    const ExperimentSpec& spec = plan_.spec;
    const int T = spec.T;
    if (plan_.run_spatial && static_cast<int>(clip.rgb.size()) != T)
        throw std::invalid_argument("clip has " + std::to_string(clip.rgb.size()) +
                                    " RGB chunks but the network expects T=" +
                                    std::to_string(T));
    if (plan_.run_temporal && static_cast<int>(clip.flow.size()) != T)
        throw std::invalid_argument("clip has " + std::to_string(clip.flow.size()) +
                                    " flow chunks but the network expects T=" +
                                    std::to_string(T));

    ForwardResult res;
    const bool has_label = clip.label >= 0;

    auto finish_stream = [&](const std::string& name, std::vector<Tensor> preds,
                             std::vector<Tensor> losses) {
        res.stream_names.push_back(name);
        res.stream_preds.push_back(mean_of(preds));
        if (has_label) res.stream_losses.push_back(mean_of(losses));
    };

    // ---- single-stream baselines: per-chunk forward, averaged ----
    if (spec.stream != "both") {
        const bool spatial = spec.stream != "temporal";
        const auto& layers = plan_.tower_layers(spatial);
        std::vector<Tensor> preds, losses;
        for (int k = 0; k < T; ++k) {
            Tensor x = spatial ? clip.rgb[k] : clip.flow[k];
            x = run_tower_range(spatial, 0, static_cast<int>(layers.size()), x, opts);
            preds.push_back(x);
            if (has_label) losses.push_back(cross_entropy(x, clip.label));
        }
        finish_stream(spec.stream, preds, losses);
        if (has_label) res.total_loss = res.stream_losses[0];
        return res;
    }

    // ---- two-stream ----
    const auto& sp_layers = plan_.sp_layers;
    const auto& tp_layers = plan_.tp_layers;

    // Temporal tower per chunk, capturing activations at the fusion taps.
    const bool temporal_kept = plan_.keep_temporal_head;
    int tp_chunk_stop;
    if (!temporal_kept)
        tp_chunk_stop = plan_.bilinear ? plan_.placements[0].tp_idx + 1
                                       : plan_.last_struct_tp + 1;
    else if (spec.head == TemporalHead::Pool2D)
        tp_chunk_stop = static_cast<int>(tp_layers.size());
    else
        tp_chunk_stop = plan_.head_pool_tp;

    std::vector<std::map<int, Tensor>> tp_taps(T);
    std::vector<Tensor> tp_chunk_out(T);
    for (int k = 0; k < T; ++k) {
        Tensor x = clip.flow[k];
        for (int i = 0; i < tp_chunk_stop; ++i) {
            x = apply_layer(tp_layers[i], "temporal", x, opts);
            if (!opts.barrier.empty() && tp_layers[i].def.name == opts.barrier)
                x = stop_gradient(x);
            for (const Placement& p : plan_.placements)
                if (p.tp_idx == i && p.stage != PlacementStage::Prediction)
                    tp_taps[k][i] = x;
        }
        tp_chunk_out[k] = x;
    }

    // Kept temporal stream: own head and loss.
    Tensor tp_post;  // FC-stage activations of the kept temporal stream
    std::map<int, Tensor> tp_post_taps;
    if (temporal_kept) {
        std::vector<Tensor> preds, losses;
        if (spec.head == TemporalHead::Pool2D) {
            for (int k = 0; k < T; ++k) {
                preds.push_back(tp_chunk_out[k]);
                if (has_label) losses.push_back(cross_entropy(tp_chunk_out[k], clip.label));
            }
        } else {
            const ResolvedLayer& hp = tp_layers[plan_.head_pool_tp];
            PoolSpec cube;
            cube.window = {hp.pool.window[0], hp.pool.window[1], T};
            cube.stride = {hp.pool.stride[0], hp.pool.stride[1], 1};
            cube.ceil_mode = hp.pool.ceil_mode;
            Tensor st = pool3d_head(stack_time(tp_chunk_out), cube);
            Tensor x = reshape(st, {st.extent(0), st.extent(1), st.extent(3)});
            for (int i = plan_.head_pool_tp + 1; i < static_cast<int>(tp_layers.size()); ++i) {
                x = apply_layer(tp_layers[i], "temporal", x, opts);
                for (const Placement& p : plan_.placements)
                    if (p.tp_idx == i && p.stage == PlacementStage::HiddenFc)
                        tp_post_taps[i] = x;
            }
            preds.push_back(x);
            if (has_label) losses.push_back(cross_entropy(x, clip.label));
        }
        finish_stream("temporal", preds, losses);
    }

    // ---- bilinear terminal head ----
    if (plan_.bilinear) {
        const Placement& p = plan_.placements[0];
        Tensor xa = run_tower_range(true, 0, p.sp_idx + 1, clip.rgb[0], opts);
        Tensor xb = tp_taps[0][p.tp_idx];
        xa = align_to(xa, p.fused_h, p.fused_w);
        xb = align_to(xb, p.fused_h, p.fused_w);
        Tensor feat = bilinear_features(xa, xb);
        Tensor scores = fully_connected(feat, param("classifier/linear.w"),
                                        param("classifier/linear.b"));
        res.stream_names.push_back("bilinear");
        res.stream_preds.push_back(scores);
        if (has_label) {
            res.stream_losses.push_back(multiclass_hinge(scores, clip.label));
            res.total_loss = res.stream_losses.back();
        }
        return res;
    }

    // ---- hybrid (fused) stream ----
    auto fuse_at = [&](const Placement& p, Tensor xa, Tensor xb) -> Tensor {
        xa = align_to(xa, p.fused_h, p.fused_w);
        xb = align_to(xb, p.fused_h, p.fused_w);
        if (p.cat_for_head) return fuse_cat(xa, xb);
        switch (p.effective) {
            case FusionMethod::Sum: return fuse_sum(xa, xb);
            case FusionMethod::Max: return fuse_max(xa, xb);
            case FusionMethod::Cat: return fuse_cat(xa, xb);
            case FusionMethod::Conv:
                return fuse_conv(xa, xb, param("fusion/" + p.layer + ".w"),
                                 param("fusion/" + p.layer + ".b"));
            default:
                throw std::logic_error("unexpected fusion method at a placement");
        }
    };

    const int sp_chunk_stop = spec.head == TemporalHead::Pool2D
                                  ? static_cast<int>(sp_layers.size())
                                  : plan_.head_pool_sp;
    auto run_hybrid_chunk = [&](int k) -> Tensor {
        Tensor x = clip.rgb[k];
        for (int i = 0; i < sp_chunk_stop; ++i) {
            x = apply_layer(sp_layers[i], "spatial", x, opts);
            if (!opts.barrier.empty() && sp_layers[i].def.name == opts.barrier)
                x = stop_gradient(x);
            for (const Placement& p : plan_.placements) {
                if (p.sp_idx != i || p.stage == PlacementStage::Prediction) continue;
                // With a 2D head the whole tower runs per chunk, so FC-stage
                // taps are per-chunk values too.
                Tensor xb = tp_taps[k].at(p.tp_idx);
                if (p.stage == PlacementStage::HiddenFc)
                    x = concat_vec(x, xb);
                else
                    x = fuse_at(p, x, xb);
            }
        }
        return x;
    };

    std::vector<Tensor> preds, losses;
    if (spec.head == TemporalHead::Pool2D) {
        for (int k = 0; k < T; ++k) {
            Tensor x = run_hybrid_chunk(k);
            preds.push_back(x);
            if (has_label) losses.push_back(cross_entropy(x, clip.label));
        }
    } else {
        std::vector<Tensor> fused(T);
        for (int k = 0; k < T; ++k) fused[k] = run_hybrid_chunk(k);
        Tensor st = stack_time(fused);
        if (spec.head == TemporalHead::ConvPool3D) {
            const Placement& fp = plan_.placements[plan_.first_struct];
            Tensor w = param("head/" + fp.layer + ".w");
            ConvSpec cs;
            cs.kernel = {w.extent(0), w.extent(1), w.extent(2)};
            cs.stride = {1, 1, 1};
            cs.pad = {(w.extent(0) - 1) / 2, (w.extent(1) - 1) / 2, (w.extent(2) - 1) / 2};
            cs.in_channels = w.extent(3);
            cs.out_channels = w.extent(4);
            st = conv3d(st, cs, w, param("head/" + fp.layer + ".b"));
        }
        const ResolvedLayer& hp = sp_layers[plan_.head_pool_sp];
        PoolSpec cube;
        cube.window = {hp.pool.window[0], hp.pool.window[1], T};
        cube.stride = {hp.pool.stride[0], hp.pool.stride[1], 1};
        cube.ceil_mode = hp.pool.ceil_mode;
        Tensor pooled = pool3d_head(st, cube);
        Tensor x = reshape(pooled, {pooled.extent(0), pooled.extent(1), pooled.extent(3)});
        for (int i = plan_.head_pool_sp + 1; i < static_cast<int>(sp_layers.size()); ++i) {
            x = apply_layer(sp_layers[i], "spatial", x, opts);
            for (const Placement& p : plan_.placements) {
                if (p.sp_idx != i || p.stage != PlacementStage::HiddenFc) continue;
                x = concat_vec(x, tp_post_taps.at(p.tp_idx));
            }
        }
        preds.push_back(x);
        if (has_label) losses.push_back(cross_entropy(x, clip.label));
    }
    finish_stream("fused", preds, losses);

    if (has_label) {
        // Losses of all retained streams are summed with equal weight;
        // prediction-layer placements contribute nothing during training.
        Tensor total = res.stream_losses[0];
        for (size_t i = 1; i < res.stream_losses.size(); ++i)
            total = add(total, res.stream_losses[i]);
        res.total_loss = total;
    }
    return res;
}

Tensor Network::tower_features(bool spatial, const Tensor& input, const std::string& layer) const {
    const auto& layers = plan_.tower_layers(spatial);
    ForwardOptions opts;
    Tensor x = input;
    for (const ResolvedLayer& rl : layers) {
        x = apply_layer(rl, spatial ? "spatial" : "temporal", x, opts);
        if (rl.def.name == layer) return x;
    }
    throw std::invalid_argument("unknown layer name '" + layer + "'");
}

void Network::save_params(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path + " for writing");
    uint64_t n = params_.size();
    out.write(reinterpret_cast<const char*>(&n), 8);
    for (const auto& [name, t] : params_) {
        uint64_t len = name.size();
        out.write(reinterpret_cast<const char*>(&len), 8);
        out.write(name.data(), static_cast<std::streamsize>(len));
        save_tensor(out, t);
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

void Network::load_params(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), 8);
    if (!in || n != params_.size())
        throw std::runtime_error("checkpoint " + path + " holds " + std::to_string(n) +
                                 " parameters, expected " + std::to_string(params_.size()));
    for (auto& [name, t] : params_) {
        uint64_t len = 0;
        in.read(reinterpret_cast<char*>(&len), 8);
        std::string got(len, '\0');
        in.read(got.data(), static_cast<std::streamsize>(len));
        if (!in || got != name)
            throw std::runtime_error("checkpoint mismatch: expected parameter '" + name +
                                     "', found '" + got + "'");
        Tensor loaded = load_tensor(in);
        if (!shape_eq(loaded.shape(), t.shape()))
            throw std::runtime_error("checkpoint shape mismatch for '" + name + "'");
        t.data() = loaded.data();
    }
}

}  // namespace tsf
