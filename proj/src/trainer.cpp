#include "icodec/trainer.hpp"

#include <cmath>
#include <cstdio>

#include "icodec/error.hpp"

ICODEC_CORE_BEGIN

using toyworld::Phase;

std::string_view name(Network n) {
    return n == Network::ar ? "ar" : "nar";
}

std::string_view name(DecayShape d) {
    return d == DecayShape::linear ? "linear" : "inverse_sqrt";
}

std::string_view name(EncoderMode m) {
    return m == EncoderMode::full ? "full" : "lora";
}

Network parse_network(std::string_view text) {
    if (text == "ar") return Network::ar;
    if (text == "nar") return Network::nar;
    throw Error("unknown network '" + std::string(text) + "' (expected ar or nar)");
}

DecayShape parse_decay(std::string_view text) {
    if (text == "linear") return DecayShape::linear;
    if (text == "inverse_sqrt") return DecayShape::inverse_sqrt;
    throw Error("unknown decay '" + std::string(text) + "' (expected linear or inverse_sqrt)");
}

EncoderMode parse_encoder_mode(std::string_view text) {
    if (text == "full") return EncoderMode::full;
    if (text == "lora") return EncoderMode::lora;
    throw Error("unknown encoder mode '" + std::string(text) + "' (expected full or lora)");
}

void TrainConfig::validate() const {
    auto prob = [](double p, const char* what) {
        if (!(p >= 0.0 && p <= 1.0)) {
            throw Error(std::string("train config: ") + what + " must be in [0, 1]");
        }
    };
    if (steps == 0) throw Error("train config: steps must be positive");
    if (batch == 0) throw Error("train config: batch must be positive");
    if (warmup > steps) throw Error("train config: warmup exceeds steps");
    if (!(peak_lr > 0.0) || !std::isfinite(peak_lr)) throw Error("train config: peak_lr must be positive");
    if (!(clip_norm > 0.0)) throw Error("train config: clip_norm must be positive");
    if (log_every == 0) throw Error("train config: log_every must be positive");
    prob(p_drop_text, "p_drop_text");
    prob(p_drop_st, "p_drop_st");
    prob(p_no_prompt, "p_no_prompt");
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
    constexpr double kFloor = 0.1;
    const double peak = cfg.peak_lr;
    if (step <= cfg.warmup) {
        return cfg.warmup == 0 ? peak : peak * static_cast<double>(step) / static_cast<double>(cfg.warmup);
    }
    if (cfg.steps <= cfg.warmup) {
        return peak * kFloor;
    }
    const double span = static_cast<double>(cfg.steps - cfg.warmup);
    const double since = std::min(static_cast<double>(step - cfg.warmup), span);
    if (cfg.decay == DecayShape::linear) {
        return peak * (1.0 - (1.0 - kFloor) * since / span);
    }
    // peak / sqrt(1 + c * since) with c picked so the floor is hit at cfg.steps.
    const double c = (1.0 / (kFloor * kFloor) - 1.0) / span;
    return peak / std::sqrt(1.0 + c * since);
}

void optimizer_step(const nn::ParamList& params, AdamState& state, double lr, std::size_t step,
                    const AdamOptions& opts) {
    if (state.m.size() != params.size()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
    }
    for (std::size_t p = 0; p < params.size(); ++p) {
        const auto g = params[p].tensor.grad();
        for (Real x : g) {
            if (!std::isfinite(static_cast<double>(x))) {
                throw Error("optimizer: non-finite gradient at step " + std::to_string(step) + " in " +
                            params[p].name);
            }
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(opts.beta1, t);
    const double c2 = 1.0 - std::pow(opts.beta2, t);
    for (std::size_t p = 0; p < params.size(); ++p) {
        const nn::Tensor& w = params[p].tensor;
        auto& m = state.m[p];
        auto& v = state.v[p];
        if (m.size() != w.size()) {
            m.assign(w.size(), Real(0));
            v.assign(w.size(), Real(0));
        }
        if (!w.requires_grad()) continue;
        const auto g = w.grad();
        auto values = w.mutable_values();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double gi = g.empty() ? 0.0 : static_cast<double>(g[i]);
            const double mi = opts.beta1 * m[i] + (1.0 - opts.beta1) * gi;
            const double vi = opts.beta2 * v[i] + (1.0 - opts.beta2) * gi * gi;
            m[i] = static_cast<Real>(mi);
            v[i] = static_cast<Real>(vi);
            const double update = lr * (mi / c1) / (std::sqrt(vi / c2) + opts.eps);
            values[i] = static_cast<Real>(values[i] - update);
        }
    }
}

double clip_global_norm(const nn::ParamList& params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        for (Real g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (std::isfinite(norm) && norm > max_norm) {
        const double s = max_norm / norm;
        for (const auto& p : params) {
            if (p.tensor.grad().empty()) continue;
            for (Real& g : p.tensor.mutable_grad()) g = static_cast<Real>(g * s);
        }
    }
    return norm;
}

std::string metrics_header() {
    return "step,phase,network,loss,lr";
}

std::string metrics_line(const MetricsRow& row) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%zu,%s,%s,%.6f,%.6e", row.step, std::string(toyworld::name(row.phase)).c_str(),
                  std::string(name(row.network)).c_str(), row.loss, row.lr);
    return buf;
}

void check_dataset(const std::vector<io::Record>& records, Phase phase) {
    if (records.empty()) {
        throw Error("dataset: no records");
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        const std::string where = "dataset record " + std::to_string(i + 1) + ": ";
        if (!r.labeled) {
            throw Error(where + "unlabeled record cannot be trained on");
        }
        if (r.phase && *r.phase != phase) {
            throw Error(where + "phase " + std::string(toyworld::name(*r.phase)) + " does not match training phase " +
                        std::string(toyworld::name(phase)));
        }
        const auto& tokens = r.instruction.tokens;
        if (phase == Phase::pretrain && (toyworld::has_attribute_tokens(tokens) || toyworld::has_stress_tokens(tokens))) {
            throw Error(where + "pretrain instructions must carry only the quoted content");
        }
        if (phase == Phase::stress && !toyworld::has_stress_tokens(tokens)) {
            throw Error(where + "stress-phase instructions must carry stress tokens");
        }
    }
}

std::vector<TrainItem> prepare_items(const std::vector<io::Record>& records) {
    std::vector<TrainItem> items;
    items.reserve(records.size());
    for (const auto& r : records) {
        TrainItem item;
        item.instruction = r.instruction;
        item.semantic = seqlayout::semantic_sequence(r.instruction);
        item.grid = r.grid.empty() ? toyworld::oracle_acoustic(r.instruction) : r.grid;
        item.coarse = item.grid.column(0);
        items.push_back(std::move(item));
    }
    return items;
}

DropDraw draw_dropout(Rng& rng, double p_text, double p_st) {
    DropDraw d;
    d.text = rng.bernoulli(p_text);
    d.st = rng.bernoulli(p_st);
    return d;
}

Trainer::Trainer(ModelBundle& bundle, Network network, const TrainConfig& cfg, std::vector<TrainItem> items)
    : bundle_(bundle), network_(network), cfg_(cfg), items_(std::move(items)) {
    cfg_.validate();
    if (items_.empty()) {
        throw Error("trainer: empty dataset");
    }
    const TextEncoder& enc = network == Network::ar ? bundle.ar.encoder() : bundle.nar.encoder();
    enc.freeze_base(cfg_.encoder_mode == EncoderMode::lora);
    params_ = network == Network::ar ? bundle.ar_params() : bundle.nar_params();
    adam_.m.resize(params_.size());
    adam_.v.resize(params_.size());
    for (std::size_t p = 0; p < params_.size(); ++p) {
        adam_.m[p].assign(params_[p].tensor.size(), Real(0));
        adam_.v[p].assign(params_[p].tensor.size(), Real(0));
    }
}

nn::Tensor Trainer::example_loss(std::size_t index, Rng& rng) const {
    const TrainItem& item = items_[index];
    if (network_ == Network::ar) {
        const DropDraw d = draw_dropout(rng, cfg_.p_drop_text, cfg_.p_drop_st);
        const auto ex = seqlayout::build_ar_example(item.instruction, item.semantic, item.coarse, d.text, d.st,
                                                    bundle_.options.use_semantic);
        return bundle_.ar.loss(ex);
    }
    seqlayout::NarLayoutOptions layout;
    layout.p_no_prompt = cfg_.p_no_prompt;
    const auto ex = seqlayout::build_nar_example(item.instruction, item.semantic, item.grid, rng.next(), layout);
    return bundle_.nar.loss(ex);
}

double Trainer::batch_loss(std::size_t k) const {
    nn::NoGradGuard guard;
    Rng rng(derive_seed(cfg_.seed, static_cast<std::uint64_t>(network_), k));
    double total = 0.0;
    for (std::size_t b = 0; b < cfg_.batch; ++b) {
        const std::size_t index = rng.below(items_.size());
        total += static_cast<double>(example_loss(index, rng).item());
    }
    return total / static_cast<double>(cfg_.batch);
}

double Trainer::step() {
    const std::size_t k = adam_.step + 1;
    Rng rng(derive_seed(cfg_.seed, static_cast<std::uint64_t>(network_), k));
    const Real inv_batch = Real(1) / static_cast<Real>(cfg_.batch);
    double total = 0.0;
    for (const auto& p : params_) p.tensor.zero_grad();
    for (std::size_t b = 0; b < cfg_.batch; ++b) {
        const std::size_t index = rng.below(items_.size());
        const nn::Tensor loss = example_loss(index, rng);
        const double value = static_cast<double>(loss.item());
        if (!std::isfinite(value)) {
            throw Error("trainer: non-finite loss at step " + std::to_string(k));
        }
        total += value;
        if (loss.requires_grad()) {
            nn::scale(loss, inv_batch).backward();
        }
    }
    const double norm = clip_global_norm(params_, cfg_.clip_norm);
    if (!std::isfinite(norm)) {
        throw Error("optimizer: non-finite gradient at step " + std::to_string(k));
    }
    const double lr = lr_at(k, cfg_);
    optimizer_step(params_, adam_, lr, k);
    for (const auto& p : params_) p.tensor.zero_grad();

    const double mean = total / static_cast<double>(cfg_.batch);
    window_sum_ += mean;
    ++window_count_;
    if (k % cfg_.log_every == 0) {
        MetricsRow row{k, cfg_.phase, network_, window_sum_ / static_cast<double>(window_count_), lr};
        metrics_.push_back(row);
        if (on_log) on_log(row);
        window_sum_ = 0.0;
        window_count_ = 0;
    }
    return mean;
}

void Trainer::run_until(std::size_t target) {
    target = std::min(target, cfg_.steps);
    while (adam_.step < target) step();
}

double ar_teacher_forced_accuracy(const ModelBundle& bundle, const std::vector<TrainItem>& items) {
    nn::NoGradGuard guard;
    std::size_t hits = 0;
    std::size_t total = 0;
    const bool use_semantic = bundle.options.use_semantic;
    for (const auto& item : items) {
        const auto ex = seqlayout::build_ar_example(item.instruction, item.semantic, item.coarse, false, false,
                                                    use_semantic);
        const InstructionEncoding enc = bundle.ar.encode(ex.instruction_tokens);
        const nn::Tensor logits = bundle.ar.forward(enc, ex.inputs, false, false);
        const auto segments = seqlayout::prediction_segments(ex.inputs, use_semantic);
        const std::size_t vocab = logits.cols();
        for (std::size_t r = 0; r < ex.targets.size(); ++r) {
            if (!ex.loss_mask[r]) continue;
            const auto legal = seqlayout::legality_mask(segments[r]);
            int best = -1;
            for (std::size_t j = 0; j < vocab; ++j) {
                if (!legal[j]) continue;
                if (best < 0 || logits.at(r, j) > logits.at(r, static_cast<std::size_t>(best))) {
                    best = static_cast<int>(j);
                }
            }
            hits += best == ex.targets[r] ? 1 : 0;
            ++total;
        }
    }
    return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

ICODEC_CORE_END
