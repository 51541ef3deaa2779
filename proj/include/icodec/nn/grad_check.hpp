#pragma once

#include <cstdint>
#include <functional>
#include <span>

#include "icodec/nn/tensor.hpp"

ICODEC_CORE_BEGIN
namespace nn {

struct GradCheckResult {
    std::size_t checked = 0;
    double max_rel_error = 0.0;
};

/// Compares backward() against central differences on up to `max_coords`
/// randomly chosen parameter coordinates. Relative error per coordinate is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6). Only available in
/// the 64-bit build; throws on a non-finite loss.
GradCheckResult grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> params, double h = 1e-5,
                           std::size_t max_coords = 200, std::uint64_t seed = 0);

}  // namespace nn
ICODEC_CORE_END
