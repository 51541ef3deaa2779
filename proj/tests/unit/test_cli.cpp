#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "../test_support.hpp"
#include "cli.hpp"
#include "icodec/checkpoint.hpp"
#include "icodec/dataset_io.hpp"
#include "icodec/metrics.hpp"

using namespace icodec;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code;
    std::string out;
    std::string err;
};

Outcome run(std::vector<std::string> args) {
    args.insert(args.begin(), "icodec");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::vector<std::string> lines(const fs::path& p) {
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);) out.push_back(l);
    return out;
}

void spit(const fs::path& p, const std::string& text) {
    std::ofstream(p, std::ios::trunc) << text;
}

const char* kTinyModel =
    "model_dim = 16\nlayers = 1\nheads = 2\nffn_dim = 32\nlora_rank = 2\n";

}  // namespace

TEST_CASE("gen-data writes deterministic labeled records") {
    const auto dir = test_support::scratch_dir("cli_gen");
    const auto a = (dir / "a.jsonl").string(), b = (dir / "b.jsonl").string(), p = (dir / "p.jsonl").string();
    auto r = run({"gen-data", "--count", "12", "--seed", "3", "--out", a});
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("wrote 12 records") != std::string::npos);
    CHECK(lines(a).size() == 12);
    CHECK(run({"gen-data", "--count", "12", "--seed", "3", "--out", b}).code == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(run({"gen-data", "--count", "12", "--seed", "4", "--out", b}).code == 0);
    CHECK(slurp(a) != slurp(b));

    CHECK(run({"gen-data", "--count", "20", "--phase", "pretrain", "--out", p}).code == 0);
    for (const auto& rec : io::read_records(p)) {
        CHECK(rec.phase == toyworld::Phase::pretrain);
        for (int t : rec.instruction.tokens) CHECK((t < toyworld::tok::pitch_base || t >= toyworld::tok::say));
    }
    fs::remove_all(dir);
}

TEST_CASE("usage errors exit 1 with a prefixed message") {
    const auto dir = test_support::scratch_dir("cli_usage");
    auto r = run({"gen-data", "--count", "3"});
    CHECK(r.code == cli::kExitUsage);
    r = run({"gen-data", "--count", "3", "--phase", "warmup", "--out", (dir / "x").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.rfind("icodec: error: ", 0) == 0);
    r = run({"gen-data", "--count", "3", "--out", "/nonexistent_dir_xyz/x.jsonl"});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("directory does not exist") != std::string::npos);
    r = run({"frobnicate"});
    CHECK(r.code == cli::kExitUsage);
    r = run({"--help"});
    CHECK(r.code == cli::kExitOk);
    CHECK(r.out.find("gen-data") != std::string::npos);

    const auto cfg = dir / "bad.cfg";
    spit(cfg, "steps = 4\nwarmpu = 1\n");
    r = run({"train", "--config", cfg.string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("bad.cfg:2") != std::string::npos);
    CHECK(r.err.find("warmpu") != std::string::npos);
    fs::remove_all(dir);
}

TEST_CASE("train, sample and eval end to end") {
    const auto dir = test_support::scratch_dir("cli_e2e");
    const auto pre = (dir / "pre.jsonl").string(), ins = (dir / "ins.jsonl").string(),
               held = (dir / "held.jsonl").string();
    REQUIRE(run({"gen-data", "--count", "8", "--phase", "pretrain", "--seed", "1", "--out", pre}).code == 0);
    REQUIRE(run({"gen-data", "--count", "8", "--seed", "2", "--out", ins}).code == 0);
    REQUIRE(run({"gen-data", "--count", "3", "--seed", "9", "--out", held}).code == 0);

    const auto cfg_pre = dir / "pre.cfg";
    spit(cfg_pre, std::string(kTinyModel) + "dataset = " + pre + "\nout = " + (dir / "ck_pre").string() +
                      "\nphase = pretrain\nsteps = 10\nwarmup = 2\nbatch = 2\nlog_every = 5\n[nar]\nsteps = 6\n");
    auto r = run({"train", "--config", cfg_pre.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto metrics = lines(dir / "ck_pre" / "metrics.csv");
    REQUIRE(metrics.size() == 1 + 2 + 1);
    CHECK(metrics[0] == "step,phase,network,loss,lr");
    CHECK(metrics[1].rfind("5,pretrain,ar,", 0) == 0);
    CHECK(metrics[3].rfind("5,pretrain,nar,", 0) == 0);
    const auto ck_pre = load_checkpoint(dir / "ck_pre");
    CHECK(ck_pre.info.ar_step == 10);
    CHECK(ck_pre.info.nar_step == 6);

    const auto cfg_ins = dir / "ins.cfg";
    spit(cfg_ins, "dataset = " + ins + "\nphase = instruct\nsteps = 4\nwarmup = 1\nbatch = 2\nencoder_mode = lora\n");
    r = run({"train", "--config", cfg_ins.string(), "--init", (dir / "ck_pre").string(), "--out",
             (dir / "ck").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(load_checkpoint(dir / "ck").info.phase == "instruct");

    spit(cfg_ins, "dataset = " + ins + "\nmodel_dim = 32\nsteps = 4\nwarmup = 1\n");
    r = run({"train", "--config", cfg_ins.string(), "--init", (dir / "ck_pre").string(), "--out",
             (dir / "ck2").string()});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("cannot change an initialized model") != std::string::npos);

    const auto inst = toyworld::tokens_to_text(io::read_records(held)[0].instruction.tokens);
    const auto out = (dir / "s.jsonl").string();
    r = run({"sample", "--checkpoint", (dir / "ck").string(), "--instruction", inst, "--out", out, "--seed", "4"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto report = nlohmann::json::parse(r.out);
    CHECK(report.at("gamma") == 2.0);
    CHECK(report.at("alpha") == 2.0);
    CHECK(report.at("beta") == 2.0);
    CHECK(report.at("instruction") == inst);
    const auto generated = io::read_records(out);
    REQUIRE(generated.size() == 1);
    CHECK(generated[0].grid.frames == report.at("frames").get<std::size_t>());
    const auto first = slurp(out);
    REQUIRE(run({"sample", "--checkpoint", (dir / "ck").string(), "--instruction", inst, "--out", out, "--seed", "4"})
                .code == 0);
    CHECK(slurp(out) == first);

    r = run({"sample", "--checkpoint", (dir / "ck").string(), "--instructions", held, "--prompt", held,
             "--prompt-index", "1", "--prompt-frames", "3", "--out", out});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto prompted = io::read_records(out);
    const auto prompt_grid = io::read_records(held)[1].grid;
    REQUIRE(prompted.size() == 3);
    for (const auto& rec : prompted) {
        for (std::size_t t = 0; t < 3; ++t) {
            for (std::size_t l = 0; l < prompt_grid.layers; ++l) CHECK(rec.grid.at(t, l) == prompt_grid.at(t, l));
        }
    }

    r = run({"sample", "--checkpoint", (dir / "ck").string(), "--instruction", "say \" zz \"", "--out", out});
    CHECK(r.code == cli::kExitUsage);
    r = run({"sample", "--checkpoint", (dir / "missing").string(), "--instruction", inst, "--out", out});
    CHECK(r.code == cli::kExitUsage);

    const auto reports = (dir / "eval.jsonl").string();
    r = run({"eval", "--checkpoint", (dir / "ck").string(), "--eval-set", held, "--sweep", "--out", reports});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    const auto rows = lines(reports);
    REQUIRE(rows.size() == 4);
    const auto r0 = evalkit::report_from_json(rows[0]);
    const auto r2 = evalkit::report_from_json(rows[2]);
    CHECK(r0.config.gamma == 1.0);
    CHECK(r2.config.alpha == 2.0);
    CHECK(r0.samples == 3);
    std::istringstream table(r.out);
    std::string header;
    std::getline(table, header);
    CHECK(header == evalkit::table_header());

    r = run({"eval", "--checkpoint", (dir / "ck").string(), "--eval-set", held, "--sweep", "1,2"});
    CHECK(r.code == cli::kExitUsage);
    fs::remove_all(dir);
}

TEST_CASE("resume continues the optimizer state") {
    const auto dir = test_support::scratch_dir("cli_resume");
    const auto ins = (dir / "ins.jsonl").string();
    REQUIRE(run({"gen-data", "--count", "6", "--seed", "2", "--out", ins}).code == 0);
    const std::string base = std::string(kTinyModel) + "dataset = " + ins +
                             "\nsteps = 12\nwarmup = 2\nbatch = 2\nlog_every = 1\nnetworks = ar\n";
    spit(dir / "full.cfg", base + "out = " + (dir / "full").string() + "\n");
    spit(dir / "half.cfg", base + "out = " + (dir / "half").string() + "\nstop_after = 7\n");
    REQUIRE(run({"train", "--config", (dir / "full.cfg").string()}).code == 0);
    REQUIRE(run({"train", "--config", (dir / "half.cfg").string()}).code == 0);
    spit(dir / "rest.cfg", "dataset = " + ins + "\nsteps = 12\nwarmup = 2\nbatch = 2\nlog_every = 1\nnetworks = ar\n");
    auto r = run({"train", "--config", (dir / "rest.cfg").string(), "--init", (dir / "half").string(), "--resume",
                  "--out", (dir / "rest").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(slurp(dir / "full" / "tensors.bin") == slurp(dir / "rest" / "tensors.bin"));
    fs::remove_all(dir);
}
