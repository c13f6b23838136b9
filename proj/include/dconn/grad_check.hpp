#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dconn/tensor.hpp"

namespace dconn {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    std::size_t checked = 0;
    // Entries left out because the loss is not smooth inside the stencil.
    std::size_t skipped = 0;
};

struct GradCheckOptions {
    double eps = 1e-5;
    // 0 checks every entry; otherwise at most this many entries per tensor,
    // chosen deterministically from `seed`.
    std::size_t max_entries_per_tensor = 0;
    std::uint64_t seed = 0;
    // Relative errors use max(|analytic|, |numeric|, denominator_floor).
    double denominator_floor = 1e-8;
    // When set, an entry is skipped (and counted) if f(p-eps), f(p) and
    // f(p+eps) do not all take the same branches through ReLU, abs, clamp
    // and max; central differences are meaningless across such a kink.
    bool skip_kinks = false;
};

// |a - b| / max(|a|, |b|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-8);

// Compares the analytic gradient of the scalar `f` against central differences
// (f(p+eps) - f(p-eps)) / (2 eps) for every entry of every parameter.
// `f` must rebuild its graph from the current parameter values on each call.
GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options = {});

}  // namespace dconn
