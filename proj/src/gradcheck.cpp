#include "tsf/gradcheck.hpp"

#include <cmath>
#include <map>

#include "tsf/fusion.hpp"
#include "tsf/nn_ops.hpp"
#include "tsf/temporal.hpp"

namespace tsf {

GradCheckResult check_gradients(const std::vector<std::pair<std::string, Tensor>>& inputs,
                                const std::function<Tensor()>& f, const GradCheckOptions& opts) {
    // Analytic pass.
    Tensor loss = f();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& [name, t] : inputs) {
        if (!t.requires_grad())
            throw std::invalid_argument("check_gradients: input '" + name +
                                        "' does not require gradients");
        analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.numel(), 0.0));
    }

    GradCheckResult res;
    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor t = inputs[k].second;
        auto& values = t.data();
        for (size_t i = 0; i < values.size(); ++i) {
            const double orig = values[i];
            values[i] = orig + opts.epsilon;
            const double fp = f().item();
            values[i] = orig - opts.epsilon;
            const double fm = f().item();
            values[i] = orig;
            const double numeric = (fp - fm) / (2.0 * opts.epsilon);
            const double a = analytic[k][i];
            const double rel =
                std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
            if (rel > res.max_rel_error) {
                res.max_rel_error = rel;
                res.worst_input = inputs[k].first;
                res.worst_coord = static_cast<int64_t>(i);
            }
        }
    }
    res.ok = res.max_rel_error <= opts.tolerance;
    return res;
}

namespace {

// Random tensor with entries bounded away from ReLU/max kinks.
Tensor rand_input(const Shape& s, Rng& rng) {
    std::vector<double> v(shape_numel(s));
    for (double& x : v) {
        x = rng.uniform(0.1, 1.0);
        if (rng.bernoulli(0.5)) x = -x;
    }
    return Tensor::from_data(s, std::move(v), true);
}

// Random projection to scalarize a non-scalar output. The coefficients are
// drawn once on first use and then held fixed, so repeated evaluations of
// the same case see one linear functional.
struct FixedProjection {
    Rng rng;
    Tensor c;
    explicit FixedProjection(uint64_t seed) : rng(seed) {}
    Tensor operator()(const Tensor& y) {
        if (!c.defined()) {
            std::vector<double> v(y.numel());
            for (double& x : v) x = rng.uniform(-1.0, 1.0);
            c = Tensor::from_data(y.shape(), std::move(v));
        }
        return sum(mul(y, c));
    }
};

using Projector = std::shared_ptr<FixedProjection>;

Projector make_projector(Rng& rng) { return std::make_shared<FixedProjection>(rng.next_u64()); }

Tensor project(const Tensor& y, const Projector& p) { return (*p)(y); }

using Suite = std::function<GradCheckResult(Rng&, const GradCheckOptions&)>;

GradCheckResult run_case(std::vector<std::pair<std::string, Tensor>> inputs,
                         std::function<Tensor()> f, const GradCheckOptions& opts) {
    return check_gradients(inputs, f, opts);
}

const std::map<std::string, Suite>& suites() {
    static const std::map<std::string, Suite> table = {
        {"conv2d",
         [](Rng& rng, const GradCheckOptions& o) {
             ConvSpec spec;
             spec.kernel = {rng.uniform_int(1, 3), rng.uniform_int(1, 3)};
             spec.stride = {rng.uniform_int(1, 2), rng.uniform_int(1, 2)};
             spec.pad = {rng.uniform_int(0, 1), rng.uniform_int(0, 1)};
             spec.in_channels = rng.uniform_int(1, 3);
             spec.out_channels = rng.uniform_int(1, 3);
             Tensor x = rand_input({rng.uniform_int(3, 6), rng.uniform_int(3, 6),
                                    spec.in_channels}, rng);
             Tensor w = rand_input(spec.weight_shape(), rng);
             Tensor b = rand_input({spec.out_channels}, rng);
             Projector proj = make_projector(rng);
             return run_case({{"x", x}, {"w", w}, {"b", b}},
                             [=]() mutable { return project(conv2d(x, spec, w, b), proj); }, o);
         }},
        {"conv3d",
         [](Rng& rng, const GradCheckOptions& o) {
             ConvSpec spec;
             spec.kernel = {rng.uniform_int(1, 3), rng.uniform_int(1, 3), rng.uniform_int(1, 3)};
             spec.stride = {1, 1, 1};
             spec.pad = {rng.uniform_int(0, 1), 0, rng.uniform_int(0, 1)};
             spec.in_channels = rng.uniform_int(1, 2);
             spec.out_channels = rng.uniform_int(1, 2);
             Tensor x = rand_input({rng.uniform_int(3, 5), rng.uniform_int(3, 5),
                                    rng.uniform_int(3, 4), spec.in_channels}, rng);
             Tensor w = rand_input(spec.weight_shape(), rng);
             Tensor b = rand_input({spec.out_channels}, rng);
             Projector proj = make_projector(rng);
             return run_case({{"x", x}, {"w", w}, {"b", b}},
                             [=]() mutable { return project(conv3d(x, spec, w, b), proj); }, o);
         }},
        {"maxpool2d",
         [](Rng& rng, const GradCheckOptions& o) {
             PoolSpec spec;
             spec.window = {rng.uniform_int(1, 3), rng.uniform_int(1, 3)};
             spec.stride = {rng.uniform_int(1, 2), rng.uniform_int(1, 2)};
             spec.ceil_mode = rng.bernoulli(0.5);
             Tensor x = rand_input({rng.uniform_int(3, 6), rng.uniform_int(3, 6),
                                    rng.uniform_int(1, 3)}, rng);
             Projector proj = make_projector(rng);
             return run_case({{"x", x}},
                             [=]() mutable { return project(maxpool2d(x, spec), proj); }, o);
         }},
        {"maxpool3d",
         [](Rng& rng, const GradCheckOptions& o) {
             PoolSpec spec;
             spec.window = {rng.uniform_int(1, 3), rng.uniform_int(1, 3), rng.uniform_int(1, 3)};
             spec.stride = {rng.uniform_int(1, 2), rng.uniform_int(1, 2), rng.uniform_int(1, 2)};
             Tensor x = rand_input({rng.uniform_int(3, 5), rng.uniform_int(3, 5),
                                    rng.uniform_int(3, 4), rng.uniform_int(1, 2)}, rng);
             Projector proj = make_projector(rng);
             return run_case({{"x", x}},
                             [=]() mutable { return project(maxpool3d(x, spec), proj); }, o);
         }},
        {"fully_connected",
         [](Rng& rng, const GradCheckOptions& o) {
             const int n = rng.uniform_int(2, 8), m = rng.uniform_int(2, 6);
             Tensor x = rand_input({n}, rng), w = rand_input({n, m}, rng),
                    b = rand_input({m}, rng);
             Projector proj = make_projector(rng);
             return run_case({{"x", x}, {"w", w}, {"b", b}},
                             [=]() mutable { return project(fully_connected(x, w, b), proj); },
                             o);
         }},
        {"relu_composite",
         [](Rng& rng, const GradCheckOptions& o) {
             // FC -> ReLU -> FC, checked away from the kink by construction
             // of rand_input.
             const int n = rng.uniform_int(3, 6), h = rng.uniform_int(3, 6);
             Tensor x = rand_input({n}, rng), w1 = rand_input({n, h}, rng),
                    b1 = rand_input({h}, rng), w2 = rand_input({h, 2}, rng),
                    b2 = rand_input({2}, rng);
             Projector proj = make_projector(rng);
             return run_case(
                 {{"x", x}, {"w1", w1}, {"b1", b1}, {"w2", w2}, {"b2", b2}},
                 [=]() mutable {
                     return project(fully_connected(relu(fully_connected(x, w1, b1)), w2, b2),
                                    proj);
                 },
                 o);
         }},
        {"softmax",
         [](Rng& rng, const GradCheckOptions& o) {
             Tensor x = rand_input({rng.uniform_int(2, 8)}, rng);
             Projector proj = make_projector(rng);
             return run_case({{"x", x}}, [=]() mutable { return project(softmax(x), proj); }, o);
         }},
        {"cross_entropy",
         [](Rng& rng, const GradCheckOptions& o) {
             const int k = rng.uniform_int(2, 6);
             Tensor x = rand_input({k}, rng);
             const int label = rng.uniform_int(0, k - 1);
             return run_case({{"x", x}},
                             [=]() { return cross_entropy(softmax(x), label); }, o);
         }},
        {"multiclass_hinge",
         [](Rng& rng, const GradCheckOptions& o) {
             const int k = rng.uniform_int(3, 6);
             // Keep scores away from the hinge kinks.
             std::vector<double> v(k);
             for (double& s : v) s = rng.uniform_int(0, 6) + 0.5;
             Tensor x = Tensor::from_data({k}, std::move(v), true);
             const int label = rng.uniform_int(0, k - 1);
             return run_case({{"x", x}},
                             [=]() { return multiclass_hinge(x, label, 1.0); }, o);
         }},
        {"fuse_sum",
         [](Rng& rng, const GradCheckOptions& o) {
             const Shape s{rng.uniform_int(2, 5), rng.uniform_int(2, 5), rng.uniform_int(1, 4)};
             Tensor a = rand_input(s, rng), b = rand_input(s, rng);
             Projector proj = make_projector(rng);
             return run_case({{"xa", a}, {"xb", b}},
                             [=]() mutable { return project(fuse_sum(a, b), proj); }, o);
         }},
        {"fuse_max",
         [](Rng& rng, const GradCheckOptions& o) {
             const Shape s{rng.uniform_int(2, 5), rng.uniform_int(2, 5), rng.uniform_int(1, 4)};
             Tensor a = rand_input(s, rng), b = rand_input(s, rng);
             Projector proj = make_projector(rng);
             return run_case({{"xa", a}, {"xb", b}},
                             [=]() mutable { return project(fuse_max(a, b), proj); }, o);
         }},
        {"fuse_cat",
         [](Rng& rng, const GradCheckOptions& o) {
             const Shape s{rng.uniform_int(2, 4), rng.uniform_int(2, 4), rng.uniform_int(1, 3)};
             Tensor a = rand_input(s, rng), b = rand_input(s, rng);
             Projector proj = make_projector(rng);
             return run_case({{"xa", a}, {"xb", b}},
                             [=]() mutable { return project(fuse_cat(a, b), proj); }, o);
         }},
        {"fuse_conv",
         [](Rng& rng, const GradCheckOptions& o) {
             const int D = rng.uniform_int(1, 3);
             const Shape s{rng.uniform_int(2, 4), rng.uniform_int(2, 4), D};
             Tensor a = rand_input(s, rng), b = rand_input(s, rng);
             Tensor f = rand_input({1, 1, 2 * D, D}, rng), bias = rand_input({D}, rng);
             Projector proj = make_projector(rng);
             return run_case({{"xa", a}, {"xb", b}, {"f", f}, {"bias", bias}},
                             [=]() mutable { return project(fuse_conv(a, b, f, bias), proj); },
                             o);
         }},
        {"fuse_bilinear",
         [](Rng& rng, const GradCheckOptions& o) {
             const Shape s{rng.uniform_int(2, 4), rng.uniform_int(2, 4), rng.uniform_int(1, 3)};
             Tensor a = rand_input(s, rng), b = rand_input(s, rng);
             Projector proj = make_projector(rng);
             return run_case({{"xa", a}, {"xb", b}},
                             [=]() mutable { return project(fuse_bilinear(a, b), proj); }, o);
         }},
        {"bilinear_normalized",
         [](Rng& rng, const GradCheckOptions& o) {
             const Shape s{rng.uniform_int(2, 3), rng.uniform_int(2, 3), rng.uniform_int(2, 3)};
             Tensor a = rand_input(s, rng), b = rand_input(s, rng);
             Projector proj = make_projector(rng);
             return run_case({{"xa", a}, {"xb", b}},
                             [=]() mutable { return project(bilinear_features(a, b), proj); },
                             o);
         }},
        {"stack_time",
         [](Rng& rng, const GradCheckOptions& o) {
             const Shape s{rng.uniform_int(2, 4), rng.uniform_int(2, 4), rng.uniform_int(1, 3)};
             const int T = rng.uniform_int(1, 3);
             std::vector<Tensor> maps;
             std::vector<std::pair<std::string, Tensor>> inputs;
             for (int t = 0; t < T; ++t) {
                 maps.push_back(rand_input(s, rng));
                 inputs.emplace_back("map" + std::to_string(t), maps.back());
             }
             Projector proj = make_projector(rng);
             return run_case(inputs, [=]() mutable { return project(stack_time(maps), proj); },
                             o);
         }},
        {"pool2d_head",
         [](Rng& rng, const GradCheckOptions& o) {
             PoolSpec spec;
             spec.window = {2, 2};
             spec.stride = {rng.uniform_int(1, 2), rng.uniform_int(1, 2)};
             Tensor x = rand_input({rng.uniform_int(3, 5), rng.uniform_int(3, 5),
                                    rng.uniform_int(2, 3), rng.uniform_int(1, 2)}, rng);
             Projector proj = make_projector(rng);
             return run_case({{"x", x}},
                             [=]() mutable { return project(pool2d_head(x, spec), proj); }, o);
         }},
        {"pool3d_head",
         [](Rng& rng, const GradCheckOptions& o) {
             PoolSpec spec;
             spec.window = {2, 2, rng.uniform_int(1, 2)};
             spec.stride = {2, 2, 1};
             Tensor x = rand_input({rng.uniform_int(3, 5), rng.uniform_int(3, 5),
                                    rng.uniform_int(2, 3), rng.uniform_int(1, 2)}, rng);
             Projector proj = make_projector(rng);
             return run_case({{"x", x}},
                             [=]() mutable { return project(pool3d_head(x, spec), proj); }, o);
         }},
        {"conv3d_fusion_head",
         [](Rng& rng, const GradCheckOptions& o) {
             const int D = rng.uniform_int(1, 2), Dout = rng.uniform_int(1, 2), T = 3;
             ConvSpec spec;
             spec.kernel = {3, 3, 3};
             spec.stride = {1, 1, 1};
             spec.pad = {1, 1, 1};
             spec.in_channels = D;
             spec.out_channels = Dout;
             PoolSpec pool;
             pool.window = {2, 2, T};
             pool.stride = {2, 2, 1};
             Tensor x = rand_input({4, 4, T, D}, rng);
             Tensor w = rand_input(spec.weight_shape(), rng), b = rand_input({Dout}, rng);
             Projector proj = make_projector(rng);
             return run_case(
                 {{"x", x}, {"w", w}, {"b", b}},
                 [=]() mutable { return project(conv3d_fusion_head(x, spec, w, b, pool), proj); },
                 o);
         }},
        {"pad_spatial",
         [](Rng& rng, const GradCheckOptions& o) {
             Tensor x = rand_input({rng.uniform_int(2, 4), rng.uniform_int(2, 4),
                                    rng.uniform_int(1, 3)}, rng);
             const int t = rng.uniform_int(0, 1), b = rng.uniform_int(0, 1),
                       l = rng.uniform_int(0, 1), r = rng.uniform_int(0, 1);
             Projector proj = make_projector(rng);
             return run_case({{"x", x}},
                             [=]() mutable { return project(pad_spatial(x, t, b, l, r), proj); },
                             o);
         }},
        {"signed_sqrt",
         [](Rng& rng, const GradCheckOptions& o) {
             Tensor x = rand_input({rng.uniform_int(3, 8)}, rng);
             Projector proj = make_projector(rng);
             return run_case({{"x", x}},
                             [=]() mutable { return project(signed_sqrt(x), proj); }, o);
         }},
        {"l2_normalize",
         [](Rng& rng, const GradCheckOptions& o) {
             Tensor x = rand_input({rng.uniform_int(3, 8)}, rng);
             Projector proj = make_projector(rng);
             return run_case({{"x", x}},
                             [=]() mutable { return project(l2_normalize(x), proj); }, o);
         }},
    };
    return table;
}

}  // namespace

std::vector<std::string> gradcheck_suite_names() {
    std::vector<std::string> names;
    for (const auto& [name, fn] : suites()) names.push_back(name);
    return names;
}

std::vector<OpCheckReport> run_gradcheck_suites(const std::vector<std::string>& ops,
                                                uint64_t seed, int trials_per_op,
                                                const GradCheckOptions& opts) {
    std::vector<std::string> selected = ops;
    if (selected.size() == 1 && selected[0] == "all") selected = gradcheck_suite_names();
    std::vector<OpCheckReport> reports;
    for (const std::string& name : selected) {
        auto it = suites().find(name);
        if (it == suites().end())
            throw std::invalid_argument("unknown gradcheck suite '" + name + "'");
        OpCheckReport rep;
        rep.op = name;
        Rng rng(seed ^ fnv1a64(name.data(), name.size()));
        for (int t = 0; t < trials_per_op; ++t) {
            GradCheckResult r = it->second(rng, opts);
            rep.trials++;
            rep.max_rel_error = std::max(rep.max_rel_error, r.max_rel_error);
            if (!r.ok) rep.ok = false;
        }
        reports.push_back(rep);
    }
    return reports;
}

}  // namespace tsf
