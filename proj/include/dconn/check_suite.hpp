#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dconn/grad_check.hpp"
#include "dconn/net.hpp"

namespace dconn {

struct CheckTarget {
    std::string name;
    double threshold;
    double default_eps;
    std::function<GradCheckResult(const GradCheckOptions&)> run;
};

// Gradient-check targets for the differentiable ops and losses (threshold
// 1e-5), followed by "net": the full network total loss (threshold 1e-3).
//
// The network check skips entries whose stencil crosses a ReLU/max/abs/clamp
// branch and floors the relative-error denominator at 1e-6: deep activations
// at default init are ~1e-5, so tiny gradients sit at the round-off level of
// the finite differences.
std::vector<CheckTarget> gradcheck_targets();

// Smallest configuration the full-network check runs on.
NetConfig tiny_net_config();

// Full-network total-loss gradient check on `config` for a random input and
// a random blob mask. `perturb` additionally randomises biases and the
// zero-initialised attention gammas so every branch carries gradient.
GradCheckResult check_full_net(const NetConfig& config, std::uint64_t seed, bool perturb,
                               const GradCheckOptions& options);

}  // namespace dconn
