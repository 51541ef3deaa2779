#include "icodec/nn/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <type_traits>

#include "icodec/error.hpp"
#include "icodec/rng.hpp"

ICODEC_CORE_BEGIN
namespace nn {

namespace {

double evaluate(const std::function<Tensor()>& loss_fn) {
    const double v = static_cast<double>(loss_fn().item());
    if (!std::isfinite(v)) {
        throw Error("grad_check: non-finite loss");
    }
    return v;
}

}  // namespace

GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params, double h,
                           std::size_t max_coords, std::uint64_t seed) {
    if constexpr (!std::is_same_v<Real, double>) {
        throw Error("grad_check: requires the 64-bit build");
    }
    GradCheckResult result;
    std::vector<std::pair<std::size_t, std::size_t>> coords;
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t i = 0; i < params[p].size(); ++i) coords.emplace_back(p, i);
    }
    if (coords.empty()) {
        return result;
    }

    for (auto& p : params) p.zero_grad();
    {
        const Tensor loss = loss_fn();
        if (!std::isfinite(static_cast<double>(loss.item()))) {
            throw Error("grad_check: non-finite loss");
        }
        loss.backward();
    }

    if (coords.size() > max_coords) {
        Rng rng(seed);
        for (std::size_t i = 0; i < max_coords; ++i) {
            std::swap(coords[i], coords[i + rng.below(coords.size() - i)]);
        }
        coords.resize(max_coords);
    }

    for (auto [p, i] : coords) {
        const auto grad = params[p].grad();
        const double analytic = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
        Real& slot = params[p].mutable_values()[i];
        const Real saved = slot;
        slot = static_cast<Real>(saved + h);
        const double up = evaluate(loss_fn);
        slot = static_cast<Real>(saved - h);
        const double down = evaluate(loss_fn);
        slot = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
        result.max_rel_error = std::max(result.max_rel_error, std::abs(analytic - numeric) / denom);
        ++result.checked;
    }
    return result;
}

}  // namespace nn
ICODEC_CORE_END
