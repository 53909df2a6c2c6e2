#include <doctest.h>

#include "tsf/gradcheck.hpp"
#include "tsf/nn_ops.hpp"

using namespace tsf;

TEST_CASE("finite differences confirm a hand-built gradient") {
    Tensor x = Tensor::from_data({3}, {0.5, -0.4, 1.2}, true);
    auto f = [&]() { return sum(mul(x, x)); };
    GradCheckResult r = check_gradients({{"x", x}}, f);
    CHECK(r.ok);
    CHECK(r.max_rel_error <= 1e-6);
}

TEST_CASE("negative control: a wrong gradient is caught") {
    using detail::make_op;
    using detail::Node;
    Tensor x = Tensor::from_data({3}, {0.5, -0.4, 1.2}, true);
    auto broken_square = [](const Tensor& t) {
        std::vector<double> y(t.numel());
        for (size_t i = 0; i < y.size(); ++i) y[i] = t.data()[i] * t.data()[i];
        auto tn = t.node();
        return Tensor(make_op(t.shape(), std::move(y), {tn}, [tn](Node& self) {
            // deliberately wrong: should be 2*x*g
            for (size_t i = 0; i < self.grad.size(); ++i)
                tn->grad[i] += 3.0 * tn->value[i] * self.grad[i];
        }));
    };
    auto f = [&]() { return sum(broken_square(x)); };
    GradCheckResult r = check_gradients({{"x", x}}, f);
    CHECK_FALSE(r.ok);
    CHECK(r.max_rel_error > 1e-2);
}

TEST_CASE("every differentiable op passes finite-difference checks") {
    auto reports = run_gradcheck_suites({"all"}, 12345, 5);
    CHECK(reports.size() == gradcheck_suite_names().size());
    for (const auto& rep : reports) {
        INFO("op: " << rep.op << " max_rel_error: " << rep.max_rel_error);
        CHECK(rep.ok);
        CHECK(rep.max_rel_error <= 1e-4);
        CHECK(rep.trials == 5);
    }
}

TEST_CASE("single-op selection runs only that op") {
    auto reports = run_gradcheck_suites({"conv2d"}, 1, 2);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].op == "conv2d");
    CHECK(reports[0].trials == 2);
    CHECK_THROWS_AS(run_gradcheck_suites({"no_such_op"}, 1, 1), std::invalid_argument);
}
