#pragma once

// Optimization: learning-rate schedule, Adam with global-norm clipping,
// condition dropout, and the per-network training loop used by every phase.

#include <functional>
#include <string>
#include <vector>

#include "icodec/dataset_io.hpp"
#include "icodec/models.hpp"

ICODEC_CORE_BEGIN

enum class Network : std::uint8_t { ar, nar };
enum class DecayShape : std::uint8_t { linear, inverse_sqrt };
enum class EncoderMode : std::uint8_t { full, lora };

std::string_view name(Network n);
std::string_view name(DecayShape d);
std::string_view name(EncoderMode m);
Network parse_network(std::string_view text);
DecayShape parse_decay(std::string_view text);
EncoderMode parse_encoder_mode(std::string_view text);

struct TrainConfig {
    std::size_t steps = 3000;
    std::size_t batch = 8;
    double peak_lr = 3e-4;
    std::size_t warmup = 200;
    DecayShape decay = DecayShape::linear;
    double p_drop_text = 0.1;
    double p_drop_st = 0.1;
    double p_no_prompt = 0.3;
    double clip_norm = 1.0;
    std::uint64_t seed = 0;
    toyworld::Phase phase = toyworld::Phase::instruct;
    EncoderMode encoder_mode = EncoderMode::full;
    std::size_t log_every = 100;

    /// Throws when warmup > steps, a probability is outside [0, 1], or a
    /// count is zero.
    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

/// Linear ramp 0 -> peak over warmup, then decay to 10% of peak at cfg.steps
/// (held there afterwards).
double lr_at(std::size_t step, const TrainConfig& cfg);

struct AdamState {
    std::size_t step = 0;
    std::vector<std::vector<Real>> m;
    std::vector<std::vector<Real>> v;
};

struct AdamOptions {
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
};

/// One bias-corrected Adam update with learning rate `lr`. Frozen parameters
/// are left untouched; a trainable parameter without a gradient buffer counts
/// as a zero gradient, so its moments decay the same way after a reload.
/// Throws on a non-finite gradient, naming `step` and the parameter.
void optimizer_step(const nn::ParamList& params, AdamState& state, double lr, std::size_t step,
                    const AdamOptions& opts = {});

/// Scales every gradient so the global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_global_norm(const nn::ParamList& params, double max_norm);

struct MetricsRow {
    std::size_t step = 0;
    toyworld::Phase phase = toyworld::Phase::instruct;
    Network network = Network::ar;
    double loss = 0.0;
    double lr = 0.0;
};

std::string metrics_header();
std::string metrics_line(const MetricsRow& row);

/// Oracle-derived pieces of one labeled record, computed once.
struct TrainItem {
    toyworld::Instruction instruction;
    seqlayout::SemanticSequence semantic;
    toyworld::AcousticGrid grid;
    std::vector<int> coarse;
};

/// Throws unless every record is labeled and fits `phase`: pretrain records
/// carry no attribute tokens, stress records all carry stress tokens, and a
/// stored phase tag must equal `phase`.
void check_dataset(const std::vector<io::Record>& records, toyworld::Phase phase);
std::vector<TrainItem> prepare_items(const std::vector<io::Record>& records);

struct DropDraw {
    bool text = false;
    bool st = false;
};
/// Independent Bernoulli draws for the two condition dropouts.
DropDraw draw_dropout(Rng& rng, double p_text, double p_st);

/// Training loop for one network. Step k (1-based) draws its batch and every
/// per-example random choice from derive_seed(cfg.seed, network, k), so a run
/// resumed from a checkpoint continues exactly as an uninterrupted one.
class Trainer {
public:
    Trainer(ModelBundle& bundle, Network network, const TrainConfig& cfg, std::vector<TrainItem> items);

    /// Runs until `state().step == target` (capped at cfg.steps).
    void run_until(std::size_t target);
    void run() { run_until(cfg_.steps); }
    /// One optimization step; returns the batch-mean loss.
    double step();

    /// Batch-mean loss of step `k` without updating anything.
    double batch_loss(std::size_t k) const;

    AdamState& state() { return adam_; }
    const AdamState& state() const { return adam_; }
    const std::vector<MetricsRow>& metrics() const { return metrics_; }
    /// Called for every logged row (e.g. to append to a CSV file).
    std::function<void(const MetricsRow&)> on_log;

    const nn::ParamList& params() const { return params_; }

private:
    nn::Tensor example_loss(std::size_t item, Rng& rng) const;

    ModelBundle& bundle_;
    Network network_;
    TrainConfig cfg_;
    std::vector<TrainItem> items_;
    nn::ParamList params_;
    AdamState adam_;
    std::vector<MetricsRow> metrics_;
    double window_sum_ = 0.0;
    std::size_t window_count_ = 0;
};

/// Teacher-forced next-token accuracy of the AR over `items` (argmax over the
/// legal ids of each row, positions with loss weight only).
double ar_teacher_forced_accuracy(const ModelBundle& bundle, const std::vector<TrainItem>& items);

ICODEC_CORE_END
