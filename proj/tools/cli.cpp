#include "cli.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "icodec/checkpoint.hpp"
#include "icodec/error.hpp"
#include "icodec/evalkit.hpp"
#include "icodec/run_config.hpp"

namespace icodec::cli {

namespace fs = std::filesystem;
using toyworld::Phase;

namespace {

/// Bad arguments or configuration, detected before any work starts.
class UsageError : public Error {
public:
    using Error::Error;
};

void require_file(const std::string& path, const std::string& what) {
    if (!fs::is_regular_file(path)) throw UsageError(what + " not found: " + path);
}

void require_dir(const std::string& path, const std::string& what) {
    if (!fs::is_directory(path)) throw UsageError(what + " not found: " + path);
}

void require_writable_parent(const std::string& path, const std::string& what) {
    const fs::path parent = fs::absolute(fs::path(path)).parent_path();
    if (!fs::is_directory(parent)) throw UsageError(what + ": directory does not exist: " + parent.string());
}

std::size_t env_threads() {
    const char* v = std::getenv("ICODEC_THREADS");
    if (v == nullptr || *v == '\0') return 1;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 1) throw UsageError(std::string("ICODEC_THREADS must be a positive integer, got '") + v + "'");
    return static_cast<std::size_t>(n);
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw Error("cannot write " + path);
    for (const auto& l : lines) f << l << '\n';
    if (!f) throw Error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataArgs {
    std::size_t count = 0;
    double l1_fraction = 0.5;
    std::string phase = "instruct";
    std::uint64_t seed = 0;
    std::string out;
};

int cmd_gen_data(const GenDataArgs& a, std::ostream& out) {
    if (!(a.l1_fraction >= 0.0 && a.l1_fraction <= 1.0)) throw UsageError("--l1-fraction must be in [0, 1]");
    Phase phase;
    try {
        phase = toyworld::parse_phase(a.phase);
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    require_writable_parent(a.out, "--out");
    const auto records = io::generate_dataset(a.count, a.l1_fraction, phase, a.seed);
    io::write_records(a.out, records);
    out << "wrote " << records.size() << " records to " << a.out << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// train

const std::set<std::string> kTrainKeys = {"steps",       "batch",     "lr",           "warmup",   "decay",
                                          "p_drop_text", "p_drop_st", "p_no_prompt",  "clip_norm", "seed",
                                          "encoder_mode", "log_every", "stop_after"};
const std::set<std::string> kModelKeys = {"model_seed", "model_dim", "layers",      "heads",
                                          "ffn_dim",    "lora_rank", "use_semantic"};
const std::set<std::string> kRunKeys = {"dataset", "out", "metrics", "init", "resume", "phase", "networks"};

TrainConfig train_config_for(const config::ConfigFile& cfg, const std::string& section, Phase phase) {
    auto num = [&](const std::string& key, double fallback) {
        return cfg.get_double(section, key, cfg.get_double("", key, fallback));
    };
    auto uint = [&](const std::string& key, std::uint64_t fallback) {
        return cfg.get_uint(section, key, cfg.get_uint("", key, fallback));
    };
    auto str = [&](const std::string& key, const std::string& fallback) {
        return cfg.get_string(section, key, cfg.get_string("", key, fallback));
    };
    auto entry = [&](const std::string& key) {
        const config::Entry* e = cfg.find(section, key);
        return e ? e : cfg.find("", key);
    };
    TrainConfig t;
    t.phase = phase;
    t.steps = uint("steps", t.steps);
    t.batch = uint("batch", t.batch);
    t.peak_lr = num("lr", t.peak_lr);
    t.warmup = uint("warmup", t.warmup);
    t.p_drop_text = num("p_drop_text", t.p_drop_text);
    t.p_drop_st = num("p_drop_st", t.p_drop_st);
    t.p_no_prompt = num("p_no_prompt", t.p_no_prompt);
    t.clip_norm = num("clip_norm", t.clip_norm);
    t.seed = uint("seed", t.seed);
    t.log_every = uint("log_every", t.log_every);
    try {
        t.decay = parse_decay(str("decay", std::string(name(t.decay))));
    } catch (const Error& e) {
        throw UsageError(cfg.where(*entry("decay"), e.what()));
    }
    try {
        t.encoder_mode = parse_encoder_mode(str("encoder_mode", std::string(name(t.encoder_mode))));
    } catch (const Error& e) {
        throw UsageError(cfg.where(*entry("encoder_mode"), e.what()));
    }
    try {
        t.validate();
    } catch (const Error& e) {
        throw UsageError(cfg.source() + (section.empty() ? "" : " [" + section + "]") + ": " + e.what());
    }
    return t;
}

struct TrainArgs {
    std::string config;
    std::string init;
    std::string out;
    bool resume = false;
};

int cmd_train(const TrainArgs& a, std::ostream& out) {
    require_file(a.config, "config");
    config::ConfigFile cfg;
    try {
        cfg = config::ConfigFile::load(a.config);
        cfg.reject_unknown_sections({"", "ar", "nar"});
        std::set<std::string> global = kTrainKeys;
        global.insert(kModelKeys.begin(), kModelKeys.end());
        global.insert(kRunKeys.begin(), kRunKeys.end());
        cfg.reject_unknown("", global);
        cfg.reject_unknown("ar", kTrainKeys);
        cfg.reject_unknown("nar", kTrainKeys);
    } catch (const UsageError&) {
        throw;
    } catch (const Error& e) {
        throw UsageError(e.what());
    }

    auto required = [&](const std::string& key, const std::string& override_value) {
        if (!override_value.empty()) return override_value;
        const config::Entry* e = cfg.find("", key);
        if (!e) throw UsageError(cfg.source() + ": missing required key '" + key + "'");
        return e->value;
    };
    const std::string dataset = required("dataset", "");
    const std::string out_dir = required("out", a.out);
    const std::string init = a.init.empty() ? cfg.get_string("", "init", "") : a.init;
    const bool resume = a.resume || cfg.get_bool("", "resume", false);
    const std::string metrics_path = cfg.get_string("", "metrics", (fs::path(out_dir) / "metrics.csv").string());
    Phase phase;
    try {
        phase = toyworld::parse_phase(cfg.get_string("", "phase", "instruct"));
    } catch (const Error& e) {
        const config::Entry* entry = cfg.find("", "phase");
        throw UsageError(entry ? cfg.where(*entry, e.what()) : std::string(e.what()));
    }
    std::vector<Network> networks;
    {
        std::stringstream ss(cfg.get_string("", "networks", "ar,nar"));
        std::string item;
        while (std::getline(ss, item, ',')) {
            try {
                networks.push_back(parse_network(item));
            } catch (const Error& e) {
                throw UsageError(cfg.where(*cfg.find("", "networks"), e.what()));
            }
        }
    }
    require_file(dataset, "dataset");
    if (!init.empty()) require_dir(init, "init checkpoint");
    if (resume && init.empty()) throw UsageError("resume needs an init checkpoint");
    require_writable_parent(out_dir, "out");
    if (cfg.has("", "metrics")) require_writable_parent(metrics_path, "metrics");
    if (!init.empty()) {
        for (const auto& key : kModelKeys) {
            if (const config::Entry* e = cfg.find("", key)) {
                throw UsageError(cfg.where(*e, "'" + key + "' cannot change an initialized model"));
            }
        }
    }
    std::map<Network, TrainConfig> configs;
    for (Network n : networks) configs[n] = train_config_for(cfg, std::string(name(n)), phase);

    // Work starts here.
    Checkpoint ck;
    if (!init.empty()) {
        ck = load_checkpoint(init);
        if (resume && ck.info.phase != toyworld::name(phase)) {
            throw Error("resume: checkpoint phase '" + ck.info.phase + "' differs from '" +
                        std::string(toyworld::name(phase)) + "'");
        }
    } else {
        ModelOptions o;
        o.seed = cfg.get_uint("", "model_seed", 0);
        const std::size_t dim = cfg.get_uint("", "model_dim", o.ar.model_dim);
        const std::size_t layers = cfg.get_uint("", "layers", o.ar.layers);
        const std::size_t heads = cfg.get_uint("", "heads", o.ar.heads);
        const std::size_t ffn = cfg.get_uint("", "ffn_dim", o.ar.ffn_dim);
        for (auto* b : {&o.encoder, &o.ar, &o.nar}) {
            b->model_dim = dim;
            b->layers = layers;
            b->heads = heads;
            b->ffn_dim = ffn;
        }
        o.lora_rank = cfg.get_uint("", "lora_rank", o.lora_rank);
        o.use_semantic = cfg.get_bool("", "use_semantic", true);
        ck.bundle = ModelBundle(o);
        ck.info.ar_step = 0;
        ck.info.nar_step = 0;
    }
    const auto records = io::read_records(dataset);
    check_dataset(records, phase);
    const auto items = prepare_items(records);

    fs::create_directories(out_dir);
    const bool fresh_metrics = !fs::exists(metrics_path);
    std::ofstream metrics(metrics_path, std::ios::app);
    if (!metrics) throw Error("cannot open metrics file " + metrics_path);
    if (fresh_metrics) metrics << metrics_header() << '\n';

    CheckpointInfo info = ck.info;
    info.phase = std::string(toyworld::name(phase));
    std::optional<AdamState> optimizers[2];
    if (resume) {
        optimizers[0] = ck.ar_optimizer;
        optimizers[1] = ck.nar_optimizer;
    } else {
        info.ar_step = 0;
        info.nar_step = 0;
    }
    for (Network n : networks) {
        const TrainConfig& tc = configs.at(n);
        const auto idx = static_cast<std::size_t>(n);
        info.train_seed = tc.seed;
        Trainer trainer(ck.bundle, n, tc, items);
        if (resume) {
            if (!optimizers[idx]) throw Error("resume: checkpoint has no optimizer state for " + std::string(name(n)));
            trainer.state() = *optimizers[idx];
        }
        trainer.on_log = [&](const MetricsRow& row) {
            metrics << metrics_line(row) << '\n';
            metrics.flush();
        };
        const std::size_t stop = cfg.get_uint(std::string(name(n)), "stop_after", cfg.get_uint("", "stop_after", tc.steps));
        trainer.run_until(stop);
        optimizers[idx] = trainer.state();
        (n == Network::ar ? info.ar_step : info.nar_step) = trainer.state().step;
        if (!trainer.metrics().empty()) info.metrics[std::string(name(n)) + "_loss"] = trainer.metrics().back().loss;
        out << name(n) << ": " << trainer.state().step << " steps";
        if (!trainer.metrics().empty()) out << ", last logged loss " << trainer.metrics().back().loss;
        out << '\n';
    }
    save_checkpoint(out_dir, ck.bundle, info, optimizers[0] ? &*optimizers[0] : nullptr,
                    optimizers[1] ? &*optimizers[1] : nullptr);
    out << "checkpoint written to " << out_dir << '\n';
    return kExitOk;
}

// ---------------------------------------------------------------------------
// sample / eval shared options

struct DecodeArgs {
    double gamma = 2.0;
    double alpha = 2.0;
    double beta = 2.0;
    std::uint64_t seed = 0;
    double temperature = 1.0;
    int top_k = 16;
    int nar_iterations = 4;
    bool gumbel = false;
    bool force_language = false;
    std::size_t prompt_frames = 0;  // 0: whole stored grid
};

void add_decode_options(CLI::App* app, DecodeArgs& d) {
    app->add_option("--gamma", d.gamma, "Text guidance on the semantic stage")->capture_default_str();
    app->add_option("--alpha", d.alpha, "Text guidance on the coarse acoustic stage")->capture_default_str();
    app->add_option("--beta", d.beta, "Semantic guidance on the coarse acoustic stage")->capture_default_str();
    app->add_option("--seed", d.seed, "Sampling seed")->capture_default_str();
    app->add_option("--temperature", d.temperature, "Sampling temperature (0: greedy)")->capture_default_str();
    app->add_option("--top-k", d.top_k, "Top-k cut")->capture_default_str();
    app->add_option("--nar-iterations", d.nar_iterations, "Parallel decoding rounds per layer")->capture_default_str();
    app->add_flag("--gumbel", d.gumbel, "Add Gumbel noise to NAR confidences");
    app->add_flag("--force-language", d.force_language, "Force the language label implied by the instruction");
    app->add_option("--prompt-frames", d.prompt_frames, "Frames of the stored prompt grid to use (0: all)");
}

DecodePolicy policy_from(const DecodeArgs& d) {
    DecodePolicy p;
    p.temperature = d.temperature;
    p.top_k = d.top_k;
    p.nar_iterations = d.nar_iterations;
    p.confidence = d.gumbel ? ConfidenceRule::prob_gumbel : ConfidenceRule::prob;
    p.seed = d.seed;
    try {
        p.validate();
        GuidanceWeights{d.gamma, d.alpha, d.beta}.validate();
    } catch (const Error& e) {
        throw UsageError(e.what());
    }
    return p;
}

toyworld::AcousticGrid prompt_from(const toyworld::AcousticGrid& stored, std::size_t frames) {
    if (frames == 0) return stored;
    if (frames > stored.frames) {
        throw Error("prompt: asked for " + std::to_string(frames) + " frames, stored grid has " +
                    std::to_string(stored.frames));
    }
    return stored.prefix(frames);
}

// ---------------------------------------------------------------------------
// sample

struct SampleArgs {
    std::string checkpoint;
    std::string instruction;
    std::string instructions_file;
    std::string prompt;
    std::size_t prompt_index = 0;
    std::string out;
    std::string report;
    DecodeArgs decode;
};

int cmd_sample(const SampleArgs& a, std::ostream& out) {
    require_dir(a.checkpoint, "checkpoint");
    if (a.instruction.empty() == a.instructions_file.empty()) {
        throw UsageError("give exactly one of --instruction or --instructions");
    }
    if (!a.instructions_file.empty()) require_file(a.instructions_file, "instruction file");
    if (!a.prompt.empty()) require_file(a.prompt, "prompt");
    require_writable_parent(a.out, "--out");
    if (!a.report.empty()) require_writable_parent(a.report, "--report");
    const DecodePolicy policy = policy_from(a.decode);
    const GuidanceWeights gw{a.decode.gamma, a.decode.alpha, a.decode.beta};

    std::vector<std::string> texts;
    if (!a.instruction.empty()) {
        texts.push_back(a.instruction);
    } else {
        std::ifstream f(a.instructions_file);
        std::string line;
        while (std::getline(f, line)) {
            const auto first = line.find_first_not_of(" \t\r");
            if (first == std::string::npos) continue;
            if (line[first] == '{') {
                try {
                    texts.push_back(toyworld::tokens_to_text(io::from_line(line).instruction.tokens));
                } catch (const Error& e) {
                    throw UsageError(a.instructions_file + ": " + e.what());
                }
            } else {
                texts.push_back(line);
            }
        }
    }
    std::vector<std::vector<int>> token_lists;
    for (const auto& t : texts) {
        try {
            token_lists.push_back(toyworld::tokens_from_text(t));
        } catch (const Error& e) {
            throw UsageError(e.what());
        }
    }

    const Checkpoint ck = load_checkpoint(a.checkpoint);
    std::optional<toyworld::AcousticGrid> prompt;
    if (!a.prompt.empty()) {
        const auto stored = io::read_records(a.prompt);
        if (a.prompt_index >= stored.size()) {
            throw Error("prompt: index " + std::to_string(a.prompt_index) + " but file has " +
                        std::to_string(stored.size()) + " records");
        }
        prompt = prompt_from(stored[a.prompt_index].grid, a.decode.prompt_frames);
    }

    std::vector<std::string> grid_lines;
    std::vector<std::string> report_lines;
    for (std::size_t i = 0; i < token_lists.size(); ++i) {
        DecodePolicy p = policy;
        if (token_lists.size() > 1) p.seed = derive_seed(policy.seed, i);
        std::optional<int> lang;
        if (a.decode.force_language) {
            const auto content = toyworld::quoted_content(token_lists[i]);
            if (content.empty()) throw Error("--force-language: instruction has no quoted content");
            lang = seqlayout::VocabMap::lang_id(toyworld::language_of_symbol(content.front()));
        }
        const SynthesisResult r = synthesize(ck.bundle, token_lists[i], gw, p, prompt ? &*prompt : nullptr, lang);
        io::Record rec;
        rec.seed = p.seed;
        rec.instruction.tokens = token_lists[i];
        rec.grid = r.grid;
        grid_lines.push_back(io::to_line(rec));
        report_lines.push_back(to_json(r.report));
    }
    write_lines(a.out, grid_lines);
    if (a.report.empty()) {
        for (const auto& l : report_lines) out << l << '\n';
    } else {
        write_lines(a.report, report_lines);
    }
    return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
    std::string checkpoint;
    std::string eval_set;
    std::string prompts;
    std::string sweep;
    bool sweep_given = false;
    std::string out;
    DecodeArgs decode;
};

std::vector<GuidanceWeights> parse_sweep(const std::string& text) {
    if (text.empty() || text == "default") {
        return {{1, 1, 1}, {2, 1, 1}, {1, 2, 1}, {1, 1, 2}};
    }
    std::vector<GuidanceWeights> rows;
    std::stringstream ss(text);
    std::string row;
    while (std::getline(ss, row, ';')) {
        std::stringstream rs(row);
        std::string cell;
        std::vector<double> v;
        while (std::getline(rs, cell, ',')) {
            try {
                std::size_t used = 0;
                v.push_back(std::stod(cell, &used));
                if (used != cell.size()) throw std::invalid_argument(cell);
            } catch (const std::exception&) {
                throw UsageError("--sweep: bad number '" + cell + "'");
            }
        }
        if (v.size() != 3) throw UsageError("--sweep: each row needs gamma,alpha,beta; got '" + row + "'");
        rows.push_back({v[0], v[1], v[2]});
    }
    if (rows.empty()) throw UsageError("--sweep: no rows");
    return rows;
}

int cmd_eval(const EvalArgs& a, std::ostream& out) {
    require_dir(a.checkpoint, "checkpoint");
    require_file(a.eval_set, "eval set");
    if (!a.prompts.empty()) require_file(a.prompts, "prompts");
    if (!a.out.empty()) require_writable_parent(a.out, "--out");
    const DecodePolicy policy = policy_from(a.decode);
    const std::vector<GuidanceWeights> rows =
        a.sweep_given ? parse_sweep(a.sweep)
                      : std::vector<GuidanceWeights>{{a.decode.gamma, a.decode.alpha, a.decode.beta}};
    EvalOptions opts;
    opts.threads = env_threads();
    opts.force_language = a.decode.force_language;
    opts.checkpoint_id = a.checkpoint;

    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const auto records = io::read_records(a.eval_set);
    if (!a.prompts.empty()) {
        for (const auto& r : io::read_records(a.prompts)) {
            opts.prompts.push_back(prompt_from(r.grid, a.decode.prompt_frames));
        }
    }
    std::vector<std::string> lines;
    out << evalkit::table_header() << '\n';
    for (const auto& gw : rows) {
        const evalkit::EvalReport report = run_eval(ck.bundle, records, gw, policy, opts);
        lines.push_back(evalkit::to_json(report));
        out << evalkit::table_row(report) << '\n';
    }
    if (!a.out.empty()) write_lines(a.out, lines);
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Instruction-conditioned codec language model on a synthetic token world"};
    app.name(args.empty() ? "icodec" : fs::path(args[0]).filename().string());
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* c_gen = app.add_subcommand("gen-data", "Generate a labeled dataset");
    c_gen->add_option("--count", gen.count, "Number of records")->required();
    c_gen->add_option("--l1-fraction", gen.l1_fraction, "Fraction of L1 instructions")->capture_default_str();
    c_gen->add_option("--phase", gen.phase, "pretrain, instruct or stress")->capture_default_str();
    c_gen->add_option("--seed", gen.seed, "Generator seed")->capture_default_str();
    c_gen->add_option("--out", gen.out, "Output file")->required();

    TrainArgs train;
    auto* c_train = app.add_subcommand("train", "Train from a config file");
    c_train->add_option("--config", train.config, "Config file")->required();
    c_train->add_option("--init", train.init, "Start from this checkpoint");
    c_train->add_option("--out", train.out, "Checkpoint directory (overrides the config)");
    c_train->add_flag("--resume", train.resume, "Continue the init checkpoint's optimizer state and step count");

    SampleArgs sample;
    auto* c_sample = app.add_subcommand("sample", "Synthesize grids for instructions");
    c_sample->add_option("--checkpoint", sample.checkpoint, "Checkpoint directory")->required();
    c_sample->add_option("--instruction", sample.instruction, "Instruction text, e.g. 'say \" a3 a7 \"'");
    c_sample->add_option("--instructions", sample.instructions_file, "File with one instruction per line (text or record lines)");
    c_sample->add_option("--prompt", sample.prompt, "Record file holding the prompt grid");
    c_sample->add_option("--prompt-index", sample.prompt_index, "Record index inside the prompt file");
    c_sample->add_option("--out", sample.out, "Output record file")->required();
    c_sample->add_option("--report", sample.report, "Generation report file (default: stdout)");
    add_decode_options(c_sample, sample.decode);

    EvalArgs eval;
    auto* c_eval = app.add_subcommand("eval", "Evaluate on a labeled set");
    c_eval->add_option("--checkpoint", eval.checkpoint, "Checkpoint directory")->required();
    c_eval->add_option("--eval-set", eval.eval_set, "Labeled record file")->required();
    c_eval->add_option("--prompts", eval.prompts, "Record file with one prompt grid per eval record");
    auto* sweep = c_eval->add_option("--sweep", eval.sweep,
                                     "Guidance rows 'g,a,b;g,a,b' (no value: 1,1,1 2,1,1 1,2,1 1,1,2)");
    sweep->expected(0, 1);
    c_eval->add_option("--out", eval.out, "Report file, one JSON object per row");
    add_decode_options(c_eval, eval.decode);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "icodec: error: " << e.what() << '\n';
        return kExitUsage;
    }
    eval.sweep_given = sweep->count() > 0;

    try {
        if (c_gen->parsed()) return cmd_gen_data(gen, out);
        if (c_train->parsed()) return cmd_train(train, out);
        if (c_sample->parsed()) return cmd_sample(sample, out);
        if (c_eval->parsed()) return cmd_eval(eval, out);
    } catch (const UsageError& e) {
        err << "icodec: error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "icodec: error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace icodec::cli
