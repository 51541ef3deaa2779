#pragma once

// End-to-end evaluation: synthesize every held-out instruction and score the
// grids with the oracle metrics.

#include <vector>

#include "icodec/dataset_io.hpp"
#include "icodec/metrics.hpp"
#include "icodec/sampler.hpp"

ICODEC_CORE_BEGIN

struct EvalOptions {
    /// Per-sample speech prompts (empty: no prompt mode). When present it must
    /// have one grid per eval record.
    std::vector<toyworld::AcousticGrid> prompts;
    /// Force the language label from the reference instruction.
    bool force_language = false;
    std::size_t threads = 1;
    std::string checkpoint_id;
};

/// Per-sample outcome, in eval-set order.
struct EvalSample {
    bool ok = false;
    std::string error;
    toyworld::AcousticGrid grid;       // full output, prompt frames included
    toyworld::AcousticGrid generated;  // output without prompt frames
    std::vector<int> decoded;
    GenerationReport report;
};

/// Sample i decodes with seed derive_seed(policy.seed, i), so results do not
/// depend on the thread count. A failing sample is logged in the report and
/// left out of every metric.
evalkit::EvalReport run_eval(const ModelBundle& bundle, const std::vector<io::Record>& eval_set,
                             const GuidanceWeights& gw, const DecodePolicy& policy, const EvalOptions& options = {},
                             std::vector<EvalSample>* samples = nullptr);

ICODEC_CORE_END
