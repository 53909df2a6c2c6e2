#pragma once

// Central finite-difference gradient checking. A checked function maps a
// set of input tensors to a scalar loss; the checker compares the analytic
// gradient against (f(x+eps) - f(x-eps)) / (2 eps) per coordinate.

#include <functional>
#include <string>
#include <vector>

#include "tsf/tensor.hpp"

namespace tsf {

struct GradCheckResult {
    bool ok = true;
    double max_rel_error = 0.0;
    std::string worst_input;  // name of the input holding the worst coordinate
    int64_t worst_coord = -1;
};

struct GradCheckOptions {
    double epsilon = 1e-5;
    double tolerance = 1e-4;
};

// `inputs` are leaf tensors with requires_grad=true; `f` rebuilds the graph
// from the current input values and returns the scalar loss. Names are used
// for diagnostics only.
GradCheckResult check_gradients(const std::vector<std::pair<std::string, Tensor>>& inputs,
                                const std::function<Tensor()>& f,
                                const GradCheckOptions& opts = {});

// Named finite-difference suites over randomized shapes for every
// differentiable op in the library. Returns per-op worst-case results;
// `ops` may be {"all"} or a list of suite names.
struct OpCheckReport {
    std::string op;
    int trials = 0;
    double max_rel_error = 0.0;
    bool ok = true;
};

std::vector<std::string> gradcheck_suite_names();
std::vector<OpCheckReport> run_gradcheck_suites(const std::vector<std::string>& ops,
                                                uint64_t seed, int trials_per_op = 5,
                                                const GradCheckOptions& opts = {});

}  // namespace tsf
