#include "dconn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dconn/rng.hpp"

namespace dconn {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
    return std::fabs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<Tensor()>& f, const std::vector<NamedTensor>& params,
                           const GradCheckOptions& options) {
    if (!(options.eps >= 1e-6 && options.eps <= 1e-3)) {
        throw std::invalid_argument("grad_check: eps must lie in [1e-6, 1e-3]");
    }
    for (const auto& p : params) {
        if (!p.tensor.is_leaf() || !p.tensor.requires_grad()) {
            throw std::invalid_argument("grad_check: parameter '" + p.name + "' must be a leaf requiring grad");
        }
    }
    auto evaluate = [&f](std::uint64_t* branches) {
        double v = 0.0;
        if (branches) {
            BranchTrace trace;
            v = f().item();
            *branches = trace.digest();
        } else {
            v = f().item();
        }
        if (!std::isfinite(v)) throw NonFiniteError("grad_check: objective is not finite");
        return v;
    };

    for (auto p : params) p.tensor.zero_grad();
    std::uint64_t base_branches = 0;
    Tensor base;
    {
        BranchTrace trace;
        base = f();
        base_branches = trace.digest();
    }
    base.backward();
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p.tensor.grad());

    GradCheckResult result;
    Rng rng(options.seed);
    for (std::size_t t = 0; t < params.size(); ++t) {
        Tensor param = params[t].tensor;
        auto values = param.mutable_data();
        std::vector<std::size_t> indices(values.size());
        std::iota(indices.begin(), indices.end(), 0);
        if (options.max_entries_per_tensor && indices.size() > options.max_entries_per_tensor) {
            for (std::size_t i = 0; i < options.max_entries_per_tensor; ++i) {
                std::swap(indices[i], indices[i + rng.below(indices.size() - i)]);
            }
            indices.resize(options.max_entries_per_tensor);
        }
        for (std::size_t idx : indices) {
            const double saved = values[idx];
            std::uint64_t up_branches = 0, down_branches = 0;
            std::uint64_t* trace_up = options.skip_kinks ? &up_branches : nullptr;
            std::uint64_t* trace_down = options.skip_kinks ? &down_branches : nullptr;
            values[idx] = saved + options.eps;
            const double up = evaluate(trace_up);
            values[idx] = saved - options.eps;
            const double down = evaluate(trace_down);
            values[idx] = saved;
            if (options.skip_kinks && (up_branches != base_branches || down_branches != base_branches)) {
                ++result.skipped;
                continue;
            }
            const double numeric = (up - down) / (2.0 * options.eps);
            const double err = relative_error(analytic[t][idx], numeric, options.denominator_floor);
            ++result.checked;
            if (err > result.max_rel_error || result.checked == 1) {
                result.max_rel_error = err;
                result.worst_param = params[t].name;
                result.worst_index = idx;
                result.worst_analytic = analytic[t][idx];
                result.worst_numeric = numeric;
            }
        }
    }
    for (auto p : params) p.tensor.zero_grad();
    return result;
}

}  // namespace dconn
