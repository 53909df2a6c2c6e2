#include <doctest.h>

#include <cmath>
#include <fstream>

#include "tsf/network.hpp"

using namespace tsf;

namespace {

NetDef load_cfg(const std::string& name) {
    for (const std::string prefix : {"configs/", "../configs/", "../../configs/"}) {
        std::ifstream probe(prefix + name);
        if (probe) return parse_net_file(prefix + name);
    }
    throw std::runtime_error("cannot locate config " + name);
}

ExperimentSpec two_stream(FusionMethod m, std::vector<std::string> layers, bool keep,
                          TemporalHead head = TemporalHead::Pool2D, int T = 1) {
    ExperimentSpec s;
    s.method = m;
    s.placements = std::move(layers);
    s.keep_both = keep;
    s.head = head;
    s.T = T;
    return s;
}

ClipSample random_clip(Rng& rng, int T, int size, int flow_ch, int label) {
    ClipSample c;
    for (int k = 0; k < T; ++k) {
        c.rgb.push_back(Tensor::randn({size, size, 3}, rng, 0.5));
        c.flow.push_back(Tensor::randn({size, size, flow_ch}, rng, 0.5));
    }
    c.label = label;
    return c;
}

}  // namespace

TEST_CASE("config parser round trips and reports line-numbered errors") {
    NetDef def = load_cfg("vggtiny.net");
    CHECK(def.name == "vgg-tiny");
    CHECK(def.classes == 4);
    CHECK(def.towers.size() == 2);
    CHECK(def.tower("temporal").in_channels == 8);
    REQUIRE(def.fusion.has_value());
    CHECK(def.fusion->method == FusionMethod::Conv);

    NetDef again = parse_net_string(write_net_string(def), "roundtrip");
    CHECK(write_net_string(again) == write_net_string(def));

    CHECK_THROWS_WITH_AS(parse_net_string("name x\nbogus line\n", "f"),
                         doctest::Contains("f:2"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_net_string("classes 4\ninput 8 8\ntower t\nchannels 3\n"
                                          "layer c1 conv filters=4\nend\n", "f"),
                         doctest::Contains("kernel"), std::invalid_argument);
}

TEST_CASE("VGG-M shape walk reproduces the published geometry") {
    NetDef def = load_cfg("vggm2048.net");
    auto shapes = layer_output_shapes(def.tower("spatial"), 224, 224, 101);
    auto at = [&](const std::string& n) -> Shape {
        for (auto& [name, s] : shapes)
            if (name == n) return s;
        FAIL("missing layer ", n);
        return {};
    };
    CHECK(at("conv1") == Shape{109, 109, 96});
    CHECK(at("pool1") == Shape{54, 54, 96});
    CHECK(at("conv2") == Shape{26, 26, 256});
    CHECK(at("pool2") == Shape{13, 13, 256});
    CHECK(at("conv5") == Shape{13, 13, 512});
    CHECK(at("pool5") == Shape{6, 6, 512});
    CHECK(at("fc6") == Shape{4096});
    CHECK(at("prob") == Shape{101});
}

TEST_CASE("VGG-16 conv5_3 sits at 14x14 for 224 input") {
    NetDef def = load_cfg("vgg16.net");
    auto shapes = layer_output_shapes(def.tower("spatial"), 224, 224, 101);
    for (auto& [name, s] : shapes)
        if (name == "conv5_3") CHECK(s == Shape{14, 14, 512});
}

TEST_CASE("trivial 1x1 network keeps 1x1 maps") {
    TowerConfig t;
    t.name = "main";
    t.in_channels = 2;
    LayerDef c;
    c.name = "c1";
    c.kind = LayerKind::Conv;
    c.filters = 3;
    c.kh = c.kw = 1;
    t.layers.push_back(c);
    auto shapes = layer_output_shapes(t, 1, 1, 2);
    CHECK(shapes[0].second == Shape{1, 1, 3});
}

// Reference parameter totals, derived by hand from the layer dimensions
// (kernel*kernel*in*out + out per conv, in*out + out per FC; spatial conv1
// reads 3 channels, temporal conv1 reads 20).
TEST_CASE("two-tower parameter accounting") {
    NetDef def = load_cfg("vggm2048.net");

    SUBCASE("softmax-sum late fusion uses all 16 layers") {
        auto r = count_params(def, two_stream(FusionMethod::Sum, {"prob"}, true));
        CHECK(r.total == 181335594);
        CHECK(r.layers == 16);
    }
    SUBCASE("sum and max fusion at relu5, truncated") {
        for (FusionMethod m : {FusionMethod::Sum, FusionMethod::Max}) {
            auto r = count_params(def, two_stream(m, {"relu5"}, false));
            CHECK(r.total == 97236421);
            CHECK(r.layers == 13);
        }
    }
    SUBCASE("conv fusion at relu5 adds the 1x1x1024x512 filter") {
        auto r = count_params(def, two_stream(FusionMethod::Conv, {"relu5"}, false));
        CHECK(r.total == 97236421 + 524800);
        CHECK(r.layers == 14);
    }
    SUBCASE("cat fusion at relu5 doubles the first FC layer") {
        auto r = count_params(def, two_stream(FusionMethod::Cat, {"relu5"}, false));
        CHECK(r.total == 172733893);
        CHECK(r.layers == 13);
    }
    SUBCASE("bilinear keeps only the conv towers plus a flagged classifier") {
        auto r = count_params(def, two_stream(FusionMethod::Bilinear, {"relu5"}, false));
        CHECK(r.total == 13137248);
        CHECK(r.layers == 10);
        CHECK(r.classifier_params == 26476645);
    }
    SUBCASE("conv fusion placement sweep") {
        CHECK(count_params(def, two_stream(FusionMethod::Conv, {"relu2"}, false)).total ==
              91467973);
        CHECK(count_params(def, two_stream(FusionMethod::Conv, {"relu2"}, false)).layers == 11);
        CHECK(count_params(def, two_stream(FusionMethod::Conv, {"relu3"}, false)).total ==
              93041605);
        CHECK(count_params(def, two_stream(FusionMethod::Conv, {"relu3"}, false)).layers == 12);
        CHECK(count_params(def, two_stream(FusionMethod::Conv, {"relu4"}, false)).total ==
              95401413);
        CHECK(count_params(def, two_stream(FusionMethod::Conv, {"relu4"}, false)).layers == 13);
    }
    SUBCASE("dual placements keep both towers") {
        auto r = count_params(def, two_stream(FusionMethod::Conv, {"relu5", "fc8"}, true));
        CHECK(r.total == 181335594 + 524800);
        CHECK(r.layers == 17);
        auto r2 =
            count_params(def, two_stream(FusionMethod::Conv, {"relu3", "relu5", "fc6"}, true));
        CHECK(r2.total == 181335594 + 524800 + 8388608);
        CHECK(r2.layers == 17);
        // Strictly more parameters than the truncated relu5 net.
        CHECK(r.total > count_params(def, two_stream(FusionMethod::Conv, {"relu5"}, false)).total);
    }
    SUBCASE("single fc layer counts n*m + m") {
        auto r = count_params(def, two_stream(FusionMethod::Sum, {"prob"}, true));
        for (const auto& row : r.rows)
            if (row.name == "spatial/fc7") CHECK(row.params == 4096 * 2048 + 2048);
    }
}

TEST_CASE("rebuilding from the serialized config yields an identical report") {
    NetDef def = load_cfg("vggm2048.net");
    NetDef reparsed = parse_net_string(write_net_string(def), "rt");
    auto spec = two_stream(FusionMethod::Conv, {"relu5"}, false);
    auto a = count_params(def, spec), b = count_params(reparsed, spec);
    CHECK(a.total == b.total);
    CHECK(a.layers == b.layers);
    REQUIRE(a.rows.size() == b.rows.size());
    for (size_t i = 0; i < a.rows.size(); ++i) {
        CHECK(a.rows[i].name == b.rows[i].name);
        CHECK(a.rows[i].params == b.rows[i].params);
    }
}

TEST_CASE("placement validation rejects bad configurations") {
    NetDef def = load_cfg("vggm2048.net");
    CHECK_THROWS_WITH_AS(plan_network(def, two_stream(FusionMethod::Sum, {"nosuch"}, false)),
                         doctest::Contains("unknown fusion layer"), std::invalid_argument);
    CHECK_THROWS_AS(plan_network(def, two_stream(FusionMethod::Conv, {"relu3", "relu5"}, false)),
                    std::invalid_argument);  // multi-placement needs keep_both
    CHECK_THROWS_AS(plan_network(def, two_stream(FusionMethod::Sum, {"prob"}, false)),
                    std::invalid_argument);  // prediction fusion needs keep_both
}

TEST_CASE("fusing maps that differ by more than one pixel is rejected, one pixel is padded") {
    // Two tiny towers whose relu maps differ by exactly one pixel: spatial
    // 5x5 -> conv(s2,k3,p1) -> 3x3; temporal via pad=0 -> 2x2.
    const char* txt = R"(
classes 2
input 5 5
tower spatial
channels 3
layer c1 conv filters=4 kernel=3 stride=2 pad=1
layer r1 relu
layer fc fc out=classes
layer prob softmax
end
tower temporal
channels 2
layer c1 conv filters=4 kernel=3 stride=2 pad=0
layer r1 relu
layer fc fc out=classes
layer prob softmax
end
)";
    NetDef def = parse_net_string(txt, "pad1");
    auto plan = plan_network(def, two_stream(FusionMethod::Sum, {"r1"}, false));
    CHECK(plan.placements[0].fused_h == 3);
    Rng rng(1);
    Network net(plan, rng);
    ClipSample clip;
    clip.rgb.push_back(Tensor::randn({5, 5, 3}, rng));
    clip.flow.push_back(Tensor::randn({5, 5, 2}, rng));
    clip.label = 1;
    auto out = net.forward(clip);
    CHECK(out.stream_preds[0].shape() == Shape{2});

    // More than one pixel apart: spatial stays 5x5, temporal drops to 2x2.
    const char* bad = R"(
classes 2
input 5 5
tower spatial
channels 3
layer c1 conv filters=4 kernel=3 stride=1 pad=1
layer r1 relu
layer fc fc out=classes
layer prob softmax
end
tower temporal
channels 2
layer c1 conv filters=4 kernel=3 stride=2 pad=0
layer r1 relu
layer fc fc out=classes
layer prob softmax
end
)";
    CHECK_THROWS_WITH_AS(
        plan_network(parse_net_string(bad, "pad2"), two_stream(FusionMethod::Sum, {"r1"}, false)),
        doctest::Contains("one-pixel"), std::invalid_argument);
}

TEST_CASE("every buildable fusion/head combination runs and emits probabilities") {
    NetDef def = load_cfg("vggtiny.net");
    Rng data_rng(99);
    struct Case {
        FusionMethod m;
        bool keep;
        TemporalHead head;
        int T;
    };
    std::vector<Case> cases = {
        {FusionMethod::Sum, false, TemporalHead::Pool2D, 1},
        {FusionMethod::Max, false, TemporalHead::Pool2D, 2},
        {FusionMethod::Cat, false, TemporalHead::Pool2D, 1},
        {FusionMethod::Conv, false, TemporalHead::Pool2D, 3},
        {FusionMethod::Conv, true, TemporalHead::Pool2D, 2},
        {FusionMethod::Conv, false, TemporalHead::Pool3D, 3},
        {FusionMethod::Conv, true, TemporalHead::Pool3D, 3},
        {FusionMethod::Conv, false, TemporalHead::ConvPool3D, 3},
        {FusionMethod::Conv, true, TemporalHead::ConvPool3D, 3},
        {FusionMethod::Sum, true, TemporalHead::ConvPool3D, 2},
        {FusionMethod::Cat, false, TemporalHead::ConvPool3D, 2},
    };
    for (const Case& c : cases) {
        INFO("method " << to_string(c.m) << " keep " << c.keep << " head " << to_string(c.head)
                       << " T " << c.T);
        auto spec = two_stream(c.m, {"relu2"}, c.keep, c.head, c.T);
        Rng rng(7);
        Network net(plan_network(def, spec), rng);
        ClipSample clip = random_clip(data_rng, c.T, 32, 8, 2);
        auto out = net.forward(clip);
        REQUIRE(out.stream_preds.size() == (c.keep ? 2u : 1u));
        for (const Tensor& p : out.stream_preds) {
            double total = 0.0;
            for (double v : p.data()) {
                CHECK(v >= 0.0);
                total += v;
            }
            CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
        }
        CHECK(out.total_loss.item() >= 0.0);
    }
}

TEST_CASE("single-stream baselines run on their own modality") {
    NetDef def = load_cfg("vggtiny.net");
    Rng rng(3);
    for (const std::string stream : {"spatial", "temporal"}) {
        ExperimentSpec spec;
        spec.stream = stream;
        spec.T = 2;
        Network net(plan_network(def, spec), rng);
        Rng drng(5);
        ClipSample clip = random_clip(drng, 2, 32, 8, 0);
        auto out = net.forward(clip);
        CHECK(out.stream_names == std::vector<std::string>{stream});
        CHECK(out.stream_preds[0].extent(0) == 4);
    }
}

TEST_CASE("identity-sum conv fusion equals sum fusion end to end") {
    NetDef def = load_cfg("vggtiny.net");
    auto conv_spec = two_stream(FusionMethod::Conv, {"relu2"}, false);
    conv_spec.init = FusionInit::IdentitySum;
    auto sum_spec = two_stream(FusionMethod::Sum, {"relu2"}, false);
    // Identical seeds give identical tower weights; the identity filter
    // draws nothing from the stream.
    Rng r1(42), r2(42);
    Network net_conv(plan_network(def, conv_spec), r1);
    Network net_sum(plan_network(def, sum_spec), r2);
    Rng drng(11);
    ClipSample clip = random_clip(drng, 1, 32, 8, 1);
    auto a = net_conv.forward(clip), b = net_sum.forward(clip);
    for (int64_t i = 0; i < a.stream_preds[0].numel(); ++i)
        CHECK(std::abs(a.stream_preds[0].data()[i] - b.stream_preds[0].data()[i]) <= 1e-12);
}

TEST_CASE("fused stream equals a manual recomposition from independent tower passes") {
    NetDef def = load_cfg("vggtiny.net");
    auto spec = two_stream(FusionMethod::Sum, {"relu2"}, false);
    Rng rng(21);
    Network net(plan_network(def, spec), rng);
    Rng drng(22);
    ClipSample clip = random_clip(drng, 1, 32, 8, 0);

    // Manual path: run each tower independently to relu2, add, then apply
    // the remaining spatial layers by hand using the network's parameters.
    Tensor xa = net.tower_features(true, clip.rgb[0], "relu2");
    Tensor xb = net.tower_features(false, clip.flow[0], "relu2");
    Tensor x = add(xa, xb);
    PoolSpec pool2;
    pool2.window = {2, 2};
    pool2.stride = {2, 2};
    x = maxpool2d(x, pool2);
    x = fully_connected(flatten(x), net.param("spatial/fc3.w"), net.param("spatial/fc3.b"));
    x = relu(x);
    x = fully_connected(x, net.param("spatial/fc4.w"), net.param("spatial/fc4.b"));
    x = softmax(x);

    auto out = net.forward(clip);
    for (int64_t i = 0; i < x.numel(); ++i)
        CHECK(out.stream_preds[0].data()[i] == doctest::Approx(x.data()[i]).epsilon(1e-12));
}

TEST_CASE("softmax placement with sum is exactly prediction averaging") {
    NetDef def = load_cfg("vggtiny.net");
    auto spec = two_stream(FusionMethod::Sum, {"prob"}, true);
    Rng rng(31);
    Network net(plan_network(def, spec), rng);
    Rng drng(32);
    ClipSample clip = random_clip(drng, 1, 32, 8, 3);
    auto out = net.forward(clip);
    Tensor avg = out.averaged_pred();

    Tensor pa = net.tower_features(true, clip.rgb[0], "prob");
    Tensor pb = net.tower_features(false, clip.flow[0], "prob");
    for (int64_t i = 0; i < avg.numel(); ++i)
        CHECK(avg.data()[i] ==
              doctest::Approx(0.5 * (pa.data()[i] + pb.data()[i])).epsilon(1e-12));
}

TEST_CASE("bilinear network is a terminal hinge classifier") {
    NetDef def = load_cfg("vggtiny.net");
    auto spec = two_stream(FusionMethod::Bilinear, {"relu2"}, false);
    Rng rng(41);
    Network net(plan_network(def, spec), rng);
    Rng drng(42);
    ClipSample clip = random_clip(drng, 1, 32, 8, 2);
    auto out = net.forward(clip);
    CHECK(out.stream_names == std::vector<std::string>{"bilinear"});
    CHECK(out.stream_preds[0].extent(0) == 4);
    CHECK(out.total_loss.item() >= 0.0);
    auto rep = count_params(net.plan());
    CHECK(rep.classifier_params == (16 * 16 * 4 + 4));
}

TEST_CASE("checkpoint save/load round trip restores parameters bitwise") {
    NetDef def = load_cfg("vggtiny.net");
    auto spec = two_stream(FusionMethod::Conv, {"relu2"}, true);
    Rng r1(5), r2(6);
    Network a(plan_network(def, spec), r1);
    Network b(plan_network(def, spec), r2);
    const std::string path = "ckpt_test.bin";
    a.save_params(path);
    b.load_params(path);
    for (size_t i = 0; i < a.parameters().size(); ++i) {
        CHECK(a.parameters()[i].first == b.parameters()[i].first);
        CHECK(a.parameters()[i].second.data() == b.parameters()[i].second.data());
    }
    std::remove(path.c_str());
}

TEST_CASE("3d-conv head subsumes the 1x1 fusion filter") {
    NetDef def = load_cfg("vggtiny.net");
    auto spec = two_stream(FusionMethod::Conv, {"relu2"}, false, TemporalHead::ConvPool3D, 3);
    auto plan = plan_network(def, spec);
    int fusion_filters = 0, head_filters = 0;
    for (const auto& p : plan.params) {
        if (p.name.rfind("fusion/", 0) == 0) fusion_filters++;
        if (p.name.rfind("head/", 0) == 0) {
            head_filters++;
            CHECK(p.w_shape == Shape{3, 3, 3, 32, 16});
        }
    }
    CHECK(fusion_filters == 0);
    CHECK(head_filters == 1);
}
