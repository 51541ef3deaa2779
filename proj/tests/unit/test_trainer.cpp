#include <doctest.h>

#include <cmath>

#include "../frozen_values.hpp"
#include "../test_support.hpp"
#include "icodec/checkpoint.hpp"
#include "icodec/error.hpp"
#include "icodec/trainer.hpp"

using namespace icodec;
using test_support::tiny_options;

namespace {

std::vector<TrainItem> items(std::size_t n, std::uint64_t seed, toyworld::Phase phase = toyworld::Phase::instruct) {
    return prepare_items(io::generate_dataset(n, 0.5, phase, seed));
}

TrainConfig quick(std::size_t steps, std::uint64_t seed = 3) {
    TrainConfig c;
    c.steps = steps;
    c.batch = 2;
    c.warmup = std::min<std::size_t>(5, steps);
    c.peak_lr = 3e-3;
    c.seed = seed;
    c.log_every = 5;
    return c;
}

std::vector<std::vector<Real>> snapshot(const nn::ParamList& params) {
    std::vector<std::vector<Real>> out;
    for (const auto& p : params) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
    return out;
}

}  // namespace

TEST_CASE("learning rate schedule") {
    TrainConfig c;
    c.steps = 3000;
    c.warmup = 200;
    c.peak_lr = 3e-4;
    for (const auto& ref : frozen::kLr) {
        c.decay = DecayShape::linear;
        CHECK(lr_at(static_cast<std::size_t>(ref.step), c) == doctest::Approx(ref.linear).epsilon(1e-12));
        c.decay = DecayShape::inverse_sqrt;
        CHECK(lr_at(static_cast<std::size_t>(ref.step), c) == doctest::Approx(ref.inverse_sqrt).epsilon(1e-12));
    }
    c.decay = DecayShape::linear;
    CHECK(lr_at(0, c) == 0.0);
    CHECK(lr_at(200, c) == 3e-4);
    CHECK(lr_at(3000, c) == doctest::Approx(3e-5).epsilon(1e-12));
    TrainConfig paper;
    paper.peak_lr = 1e-4;
    paper.warmup = 10000;
    paper.steps = 1000000;
    CHECK(lr_at(5000, paper) == doctest::Approx(5e-5).epsilon(1e-12));
    CHECK(lr_at(5000, paper) == doctest::Approx(frozen::kLrPaperScaleStep5000).epsilon(1e-12));
}

TEST_CASE("train config validation and names") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.warmup = c.steps + 1;
    CHECK_THROWS_AS(c.validate(), Error);
    c = TrainConfig{};
    c.p_drop_text = 1.5;
    CHECK_THROWS_AS(c.validate(), Error);
    CHECK(parse_network("nar") == Network::nar);
    CHECK(parse_decay("inverse_sqrt") == DecayShape::inverse_sqrt);
    CHECK(parse_encoder_mode("lora") == EncoderMode::lora);
    CHECK_THROWS_AS(parse_network("both"), Error);
}

TEST_CASE("adam updates") {
    const nn::Tensor p = nn::Tensor::from({3}, {1.0f, -2.0f, 0.5f}, true);
    const nn::ParamList params = {{"p", p}};
    AdamState st;
    p.mutable_grad();
    optimizer_step(params, st, 1e-2, 1);
    CHECK(p.values()[0] == 1.0f);
    CHECK(p.values()[1] == -2.0f);

    // Constant gradient: bias-corrected steps approach lr in magnitude.
    const nn::Tensor q = nn::Tensor::from({1}, {0.0f}, true);
    const nn::ParamList qp = {{"q", q}};
    AdamState qs;
    double last = 0.0;
    for (std::size_t k = 1; k <= 100; ++k) {
        q.zero_grad();
        q.mutable_grad()[0] = 0.5f;
        const double before = q.values()[0];
        optimizer_step(qp, qs, 1e-3, k);
        last = before - q.values()[0];
        if (k == 1) CHECK(last == doctest::Approx(frozen::kAdamUpdate_g05_lr1e3_step1).epsilon(1e-4));
    }
    CHECK(last == doctest::Approx(frozen::kAdamUpdate_g05_lr1e3_step100).epsilon(1e-3));
    CHECK(last == doctest::Approx(1e-3).epsilon(1e-3));

    q.mutable_grad()[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_WITH_AS(optimizer_step(qp, qs, 1e-3, 101), "optimizer: non-finite gradient at step 101 in q", Error);
}

TEST_CASE("global norm clipping") {
    const nn::Tensor a = nn::Tensor::from({2}, {0.0f, 0.0f}, true);
    const nn::Tensor b = nn::Tensor::from({1}, {0.0f}, true);
    a.mutable_grad()[0] = 3.0f;
    b.mutable_grad()[0] = 4.0f;
    const nn::ParamList params = {{"a", a}, {"b", b}};
    CHECK(clip_global_norm(params, 1.0) == doctest::Approx(5.0));
    CHECK(a.grad()[0] == doctest::Approx(0.6));
    CHECK(b.grad()[0] == doctest::Approx(0.8));
    CHECK(clip_global_norm(params, 10.0) == doctest::Approx(1.0));
    CHECK(a.grad()[0] == doctest::Approx(0.6));
}

TEST_CASE("condition dropout rates") {
    Rng rng(17);
    int text = 0, st = 0;
    for (int i = 0; i < 10000; ++i) {
        const DropDraw d = draw_dropout(rng, 0.1, 0.1);
        text += d.text;
        st += d.st;
    }
    const double sigma = std::sqrt(0.1 * 0.9 / 10000.0);
    CHECK(std::abs(text / 10000.0 - 0.1) <= 2 * sigma + 1e-3);
    CHECK(std::abs(st / 10000.0 - 0.1) <= 2 * sigma + 1e-3);
    CHECK((text / 10000.0 >= 0.08 && text / 10000.0 <= 0.12));
}

TEST_CASE("dataset phase checks") {
    const auto pre = io::generate_dataset(5, 0.5, toyworld::Phase::pretrain, 1);
    const auto ins = io::generate_dataset(5, 0.5, toyworld::Phase::instruct, 1);
    CHECK_NOTHROW(check_dataset(pre, toyworld::Phase::pretrain));
    CHECK_THROWS_AS(check_dataset(pre, toyworld::Phase::instruct), Error);
    CHECK_THROWS_AS(check_dataset(ins, toyworld::Phase::stress), Error);
    auto unlabeled = ins;
    unlabeled[2].labeled = false;
    CHECK_THROWS_AS(check_dataset(unlabeled, toyworld::Phase::instruct), Error);
    CHECK_THROWS_AS(check_dataset({}, toyworld::Phase::instruct), Error);
}

TEST_CASE("initial loss is near uniform and logging follows log_every") {
    ModelBundle bundle{ModelOptions{}};
    TrainConfig c = quick(10);
    c.log_every = 5;
    Trainer t(bundle, Network::ar, c, items(16, 2));
    CHECK(std::abs(t.batch_loss(1) - std::log(136.0)) <= 0.05 * std::log(136.0));
    t.run();
    CHECK(t.state().step == 10);
    REQUIRE(t.metrics().size() == 2);
    CHECK(t.metrics()[0].step == 5);
    CHECK(t.metrics()[1].step == 10);
    CHECK(t.metrics()[1].network == Network::ar);
    CHECK(metrics_header() == "step,phase,network,loss,lr");
    CHECK(metrics_line(t.metrics()[1]).rfind("10,instruct,ar,", 0) == 0);
}

TEST_CASE("training is deterministic per seed") {
    ModelBundle a{tiny_options(5)}, b{tiny_options(5)};
    const auto data = items(12, 4);
    Trainer ta(a, Network::nar, quick(15), data), tb(b, Network::nar, quick(15), data);
    ta.run();
    tb.run();
    CHECK(snapshot(a.nar_params()) == snapshot(b.nar_params()));
    for (std::size_t i = 0; i < ta.metrics().size(); ++i) CHECK(ta.metrics()[i].loss == tb.metrics()[i].loss);
}

TEST_CASE("resumed training matches uninterrupted training") {
    const auto data = items(12, 5);
    const TrainConfig cfg = quick(120, 9);
    for (Network net : {Network::ar, Network::nar}) {
        CAPTURE(name(net));
        ModelBundle straight{tiny_options(6)};
        Trainer ts(straight, net, cfg, data);
        ts.run_until(100);
        const double loss101 = ts.batch_loss(101);
        ts.run_until(120);

        ModelBundle first{tiny_options(6)};
        Trainer tf(first, net, cfg, data);
        tf.run_until(100);
        const auto dir = test_support::scratch_dir("resume");
        CheckpointInfo info;
        info.phase = "instruct";
        (net == Network::ar ? info.ar_step : info.nar_step) = 100;
        save_checkpoint(dir, first, info, net == Network::ar ? &tf.state() : nullptr,
                        net == Network::nar ? &tf.state() : nullptr);

        Checkpoint ck = load_checkpoint(dir);
        Trainer tr(ck.bundle, net, cfg, data);
        tr.state() = net == Network::ar ? *ck.ar_optimizer : *ck.nar_optimizer;
        CHECK(tr.state().step == 100);
        CHECK(tr.batch_loss(101) == loss101);
        CHECK(tr.step() == loss101);
        tr.run_until(120);
        const auto& ps = net == Network::ar ? straight.ar_params() : straight.nar_params();
        const auto& pr = net == Network::ar ? ck.bundle.ar_params() : ck.bundle.nar_params();
        CHECK(snapshot(ps) == snapshot(pr));
        std::filesystem::remove_all(dir);
    }
}

TEST_CASE("a single repeated example is memorized") {
    ModelBundle bundle{tiny_options(7)};
    TrainConfig c;
    c.steps = 200;
    c.batch = 1;
    c.warmup = 10;
    c.peak_lr = 1e-2;
    c.p_drop_text = 0.0;
    c.p_drop_st = 0.0;
    c.log_every = 50;
    Trainer t(bundle, Network::ar, c, items(1, 8));
    const double start = t.batch_loss(1);
    t.run();
    CHECK(t.batch_loss(201) < 0.1);
    CHECK(t.batch_loss(201) < start);
}

TEST_CASE("lora mode trains adapters and freezes the encoder base") {
    ModelBundle bundle{tiny_options(8)};
    TrainConfig c = quick(10);
    c.encoder_mode = EncoderMode::lora;
    nn::ParamList enc;
    bundle.ar.encoder().collect(enc, "enc");
    const auto before = snapshot(enc);
    Trainer t(bundle, Network::ar, c, items(8, 9));
    t.run();
    const auto after = snapshot(enc);
    bool adapter_moved = false;
    for (std::size_t i = 0; i < enc.size(); ++i) {
        const bool adapter = enc[i].name.find(".lora_") != std::string::npos;
        if (adapter) {
            adapter_moved = adapter_moved || before[i] != after[i];
        } else {
            CHECK(before[i] == after[i]);
        }
    }
    CHECK(adapter_moved);
}

TEST_CASE("conditioning signals matter after brief training") {
    ModelBundle bundle{tiny_options(9)};
    const auto data = items(16, 10);
    TrainConfig c = quick(60);
    Trainer(bundle, Network::ar, c, data).run();
    Trainer(bundle, Network::nar, c, data).run();
    const auto& it = data[0];
    const auto ex = seqlayout::build_ar_example(it.instruction, it.semantic, it.coarse, false, false);
    const auto enc = bundle.ar.encode(it.instruction.tokens);
    const auto on = bundle.ar.forward(enc, ex.inputs, false, false);
    const auto off = bundle.ar.forward(enc, ex.inputs, true, false);
    bool differ = false;
    for (std::size_t i = 0; i < on.size(); ++i) differ = differ || on.values()[i] != off.values()[i];
    CHECK(differ);

    const auto nenc = bundle.nar.encode(it.instruction.tokens);
    const std::vector<std::size_t> none;
    auto grid = nar_input_grid(it.grid, 0, 3, none);
    const auto l2 = bundle.nar.forward(nenc, it.semantic.language, it.semantic.ids, nar_input_grid(it.grid, 0, 2, none), 0, 2);
    const auto l3 = bundle.nar.forward(nenc, it.semantic.language, it.semantic.ids, grid, 0, 3);
    bool layer_differ = false;
    for (std::size_t i = 0; i < l2.size(); ++i) layer_differ = layer_differ || l2.values()[i] != l3.values()[i];
    CHECK(layer_differ);
}

TEST_CASE("teacher forced accuracy is a fraction") {
    ModelBundle bundle{tiny_options(10)};
    const double acc = ar_teacher_forced_accuracy(bundle, items(4, 11));
    CHECK((acc >= 0.0 && acc <= 1.0));
}
