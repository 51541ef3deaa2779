#include "icodec/evalkit.hpp"

#include <atomic>
#include <thread>

#include "icodec/error.hpp"

ICODEC_CORE_BEGIN

using toyworld::AcousticGrid;

namespace {

AcousticGrid drop_prefix(const AcousticGrid& grid, std::size_t count) {
    AcousticGrid out(grid.frames - count, grid.layers);
    std::copy(grid.values.begin() + static_cast<std::ptrdiff_t>(count * grid.layers), grid.values.end(),
              out.values.begin());
    return out;
}

}  // namespace

evalkit::EvalReport run_eval(const ModelBundle& bundle, const std::vector<io::Record>& eval_set,
                             const GuidanceWeights& gw, const DecodePolicy& policy, const EvalOptions& options,
                             std::vector<EvalSample>* samples_out) {
    if (!options.prompts.empty() && options.prompts.size() != eval_set.size()) {
        throw Error("run_eval: " + std::to_string(options.prompts.size()) + " prompts for " +
                    std::to_string(eval_set.size()) + " samples");
    }
    for (std::size_t i = 0; i < eval_set.size(); ++i) {
        if (!eval_set[i].labeled) {
            throw Error("run_eval: record " + std::to_string(i + 1) + " has no reference labels");
        }
    }

    std::vector<EvalSample> samples(eval_set.size());
    auto work = [&](std::size_t i) {
        EvalSample& s = samples[i];
        try {
            const auto& inst = eval_set[i].instruction;
            DecodePolicy p = policy;
            p.seed = derive_seed(policy.seed, i);
            const AcousticGrid* prompt = options.prompts.empty() ? nullptr : &options.prompts[i];
            std::optional<int> lang;
            if (options.force_language) lang = seqlayout::VocabMap::lang_id(inst.attributes.language);
            SynthesisResult r = synthesize(bundle, inst.tokens, gw, p, prompt, lang);
            s.generated = drop_prefix(r.grid, r.report.prompt_len);
            s.decoded = toyworld::oracle_decode_content(s.generated);
            s.grid = std::move(r.grid);
            s.report = std::move(r.report);
            s.ok = true;
        } catch (const std::exception& e) {
            s.ok = false;
            s.error = e.what();
        }
    };

    const std::size_t threads = std::max<std::size_t>(1, std::min(options.threads, eval_set.size()));
    if (threads <= 1) {
        for (std::size_t i = 0; i < eval_set.size(); ++i) work(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < eval_set.size(); i = next++) work(i);
            });
        }
        for (auto& th : pool) th.join();
    }

    evalkit::EvalReport report;
    report.config = {gw.gamma, gw.alpha, gw.beta, policy.temperature, policy.top_k, policy.nar_iterations,
                     policy.seed, options.checkpoint_id};
    std::vector<toyworld::Instruction> insts;
    std::vector<AcousticGrid> grids;
    std::size_t edits = 0;
    std::size_t ref_len = 0;
    double secs_sum = 0.0;
    std::size_t secs_count = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto& s = samples[i];
        if (!s.ok) {
            ++report.failures;
            report.failure_log.push_back("sample " + std::to_string(i) + ": " + s.error);
            continue;
        }
        const auto& inst = eval_set[i].instruction;
        edits += evalkit::levenshtein(inst.content, s.decoded);
        ref_len += inst.content.size();
        insts.push_back(inst);
        grids.push_back(s.generated);
        if (!options.prompts.empty() && !options.prompts[i].empty()) {
            secs_sum += evalkit::toy_secs(s.generated, options.prompts[i]);
            ++secs_count;
        }
    }
    report.samples = insts.size();
    report.toy_wer = ref_len == 0 ? 0.0 : static_cast<double>(edits) / static_cast<double>(ref_len);
    report.accuracy = evalkit::attr_accuracy(insts, grids);
    if (secs_count > 0) report.toy_secs = secs_sum / static_cast<double>(secs_count);
    if (samples_out) *samples_out = std::move(samples);
    return report;
}

ICODEC_CORE_END
