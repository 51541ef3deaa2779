#include <doctest.h>

#include "../test_support.hpp"
#include "icodec/nn/grad_check.hpp"
#include "icodec/seqlayout.hpp"

using namespace icodec;
using test_support::tiny_options;

namespace {

// Losses sit near 5, so smaller steps drown gradients of order 1e-6 in rounding.
constexpr double kStep = 1e-4;

std::vector<nn::Tensor> tensors(const nn::ParamList& params) {
    std::vector<nn::Tensor> out;
    for (const auto& p : params) out.push_back(p.tensor);
    return out;
}

}  // namespace

TEST_CASE("ar loss gradients match finite differences") {
    ModelBundle bundle{tiny_options(21)};
    // Give the adapters a non-zero B so their gradients are exercised too.
    for (const auto& p : bundle.ar_params()) {
        if (p.name.ends_with(".lora_b")) {
            Rng rng(1);
            for (Real& v : p.tensor.mutable_values()) v = 0.1 * rng.normal();
        }
    }
    const auto inst = toyworld::sample_instruction(3, toyworld::Language::L0);
    const auto sem = seqlayout::semantic_sequence(inst);
    const auto grid = toyworld::oracle_acoustic(inst);
    for (int flags = 0; flags < 3; ++flags) {
        const auto ex = seqlayout::build_ar_example(inst, sem, grid.column(0), flags == 1, flags == 2);
        auto params = tensors(bundle.ar_params());
        const auto r = nn::grad_check([&] { return bundle.ar.loss(ex); }, params, kStep, 200, flags);
        CHECK(r.checked == 200);
        CHECK(r.max_rel_error <= 1e-4);
    }
}

TEST_CASE("nar loss gradients match finite differences") {
    ModelBundle bundle{tiny_options(22)};
    const auto inst = toyworld::sample_instruction(4, toyworld::Language::L1);
    const auto sem = seqlayout::semantic_sequence(inst);
    const auto grid = toyworld::oracle_acoustic(inst);
    int checked = 0;
    for (std::uint64_t s = 0; checked < 3; ++s) {
        const auto ex = seqlayout::build_nar_example(inst, sem, grid, s);
        if (ex.masked.empty()) continue;
        auto params = tensors(bundle.nar_params());
        const auto r = nn::grad_check([&] { return bundle.nar.loss(ex); }, params, kStep, 200, s);
        CHECK(r.checked == 200);
        CHECK(r.max_rel_error <= 1e-4);
        ++checked;
    }
}
