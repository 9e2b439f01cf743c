#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mmcd/checkpoint.hpp"
#include "mmcd/errors.hpp"
#include "mmcd/gradcheck.hpp"
#include "mmcd/rng.hpp"
#include "mmcd/trainer.hpp"

using namespace mmcd;
using namespace mmcd::train;
using nlohmann::json;

namespace fs = std::filesystem;

namespace {

model::ModelConfig tiny_config() {
    model::ModelConfig c;
    c.tile_size = 32;
    c.base_channels = 2;
    c.depths = {1, 1, 1, 1};
    c.window = 2;
    c.adapter_reduction = 2;
    c.mlp_ratio = 2;
    c.decoder_channels = 4;
    c.num_classes = 3;
    c.connectivity = 4;
    return c;
}

scene::DatasetSample make_sample(std::uint64_t seed, long t, bool with_label = true) {
    scene::DatasetSample s;
    s.id = "s" + std::to_string(seed);
    s.optical = Tensor({3, t, t});
    s.sar = Tensor({4, t, t});
    Rng rng(seed);
    for (long i = 0; i < s.optical.numel(); ++i) s.optical[i] = rng.uniform(0.0, 1.0);
    for (long i = 0; i < s.sar.numel(); ++i) s.sar[i] = rng.uniform(0.0, 1.0);
    if (with_label) {
        s.label = IntTensor({t, t});
        // Learnable target: class follows the first optical channel.
        for (long i = 0; i < t * t; ++i) s.label[i] = s.optical[i] > 0.5 ? 1 : 0;
    }
    return s;
}

std::vector<scene::DatasetSample> make_split(std::uint64_t seed, long n, long t) {
    std::vector<scene::DatasetSample> out;
    for (long i = 0; i < n; ++i) out.push_back(make_sample(seed + static_cast<std::uint64_t>(i), t));
    return out;
}

scene::DatasetSample labeled(IntTensor lab) {
    scene::DatasetSample s;
    s.id = "labels_only";
    s.label = std::move(lab);
    return s;
}

std::vector<json> parse_log(const std::string& text) {
    std::vector<json> lines;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(json::parse(line));
    return lines;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream out;
    out << in.rdbuf();
    return out.str();
}

}  // namespace

TEST_CASE("inverse-frequency weights with cap, floor and absent classes") {
    // 100 pixels: 85 / 5 / 10 / 0 across four classes.
    IntTensor lab({10, 10});
    for (long i = 0; i < 100; ++i) lab[i] = i < 85 ? 0 : (i < 90 ? 1 : 2);
    const auto w = class_weights({labeled(std::move(lab))}, 4, "inverse");
    REQUIRE(w.size() == 4);
    CHECK(w[0] == doctest::Approx(25.0 / 85.0).epsilon(1e-12));
    CHECK(w[1] == 5.0);  // raw 5.0 sits exactly at the cap
    CHECK(w[2] == doctest::Approx(2.5).epsilon(1e-12));
    CHECK(w[3] == 5.0);  // absent class pinned at the cap

    // 700 pixels, 7 classes, one class at 600: raw 1/6 clips to the floor.
    IntTensor skew({70, 10});
    for (long i = 0; i < 700; ++i) skew[i] = i < 600 ? 0 : static_cast<std::int32_t>(1 + (i - 600) % 6);
    const auto w2 = class_weights({labeled(std::move(skew))}, 7, "inverse");
    CHECK(w2[0] == 0.2);
    for (int c = 1; c < 7; ++c) CHECK(w2[static_cast<std::size_t>(c)] == 5.0);

    // A uniform histogram weighs every class at one.
    IntTensor even({2, 2});
    even[0] = 0;
    even[1] = 1;
    even[2] = 2;
    even[3] = 3;
    const auto w3 = class_weights({labeled(std::move(even))}, 4, "inverse");
    for (const double v : w3) CHECK(v == 1.0);

    const auto w4 = class_weights({}, 5, "unit");
    REQUIRE(w4.size() == 5);
    for (const double v : w4) CHECK(v == 1.0);

    CHECK_THROWS_AS(class_weights({}, 3, "inverse"), InvalidArgument);
    CHECK_THROWS_AS(class_weights({}, 3, "median"), InvalidArgument);
    IntTensor bad({1, 1});
    bad[0] = 9;
    CHECK_THROWS_AS(class_weights({labeled(std::move(bad))}, 3, "inverse"), InvalidLabel);
}

TEST_CASE("fit reduces the loss and logs a parseable record per iteration") {
    model::Model m(tiny_config());
    m.initialize(301);
    const auto train_set = make_split(400, 8, 32);
    const auto ckpt = fs::temp_directory_path() / "mmcd_fit_smoke.bin";

    TrainConfig cfg;
    cfg.iterations = 30;
    cfg.batch_size = 4;
    cfg.lr = 3e-3;
    cfg.seed = 17;
    std::ostringstream log;
    const FitResult res = fit(m, train_set, {}, cfg, ckpt.string(), &log);

    CHECK(res.iterations == 30);
    CHECK(std::isfinite(res.final_loss));
    CHECK(std::isnan(res.final_val_miou));

    const auto lines = parse_log(log.str());
    REQUIRE(lines.size() >= 32);  // start + 30 iterations + final checkpoint
    CHECK(lines[0].at("event") == "start");
    CHECK(lines[0].at("variant") == "full");
    CHECK(lines[0].at("stages").size() == 7);
    CHECK(lines[0].at("class_weights").size() == 3);
    CHECK(lines[0].at("parameters_trainable").get<long>() <
          lines[0].at("parameters_total").get<long>());

    double first = 0.0, last = 0.0;
    long iters_seen = 0;
    for (const auto& l : lines) {
        if (!l.contains("iter") || l.contains("event")) continue;
        ++iters_seen;
        const double loss = l.at("loss").get<double>();
        CHECK(std::isfinite(loss));
        CHECK(l.at("wallclock_s").get<double>() >= 0.0);
        if (l.at("iter").get<long>() == 1) first = loss;
        if (l.at("iter").get<long>() == 30) last = loss;
    }
    CHECK(iters_seen == 30);
    CHECK(last < first);
    CHECK(lines.back().at("event") == "checkpoint");

    // The final checkpoint loads into a fresh model of the same shape.
    model::Model m2(tiny_config());
    m2.initialize(999);
    load_checkpoint(ckpt.string(), m2.cfg.hash(), m2.leaves());
    Graph ga, gb;
    const auto& sample = train_set.front();
    const Tensor pa = predict_logits(m, sample);
    const Tensor pb = predict_logits(m2, sample);
    CHECK(pa.same_shape(pb));
    for (long i = 0; i < pa.numel(); ++i) REQUIRE(pa[i] == pb[i]);

    fs::remove(ckpt);
}

TEST_CASE("training is deterministic end to end") {
    const auto train_set = make_split(500, 6, 32);
    const auto run = [&](const fs::path& path) {
        model::Model m(tiny_config());
        m.initialize(77);
        TrainConfig cfg;
        cfg.iterations = 12;
        cfg.batch_size = 3;
        cfg.lr = 1e-3;
        cfg.seed = 5;
        return fit(m, train_set, {}, cfg, path.string(), nullptr).final_loss;
    };
    const auto p1 = fs::temp_directory_path() / "mmcd_det_a.bin";
    const auto p2 = fs::temp_directory_path() / "mmcd_det_b.bin";
    const double l1 = run(p1);
    const double l2 = run(p2);
    CHECK(l1 == l2);
    CHECK(file_bytes(p1) == file_bytes(p2));
    fs::remove(p1);
    fs::remove(p2);
}

TEST_CASE("validation and checkpoint cadence") {
    model::Model m(tiny_config());
    m.initialize(303);
    const auto train_set = make_split(600, 4, 32);
    const auto val_set = make_split(700, 2, 32);
    const auto ckpt = fs::temp_directory_path() / "mmcd_fit_cadence.bin";

    TrainConfig cfg;
    cfg.iterations = 5;
    cfg.batch_size = 2;
    cfg.lr = 1e-3;
    cfg.val_every = 2;
    cfg.checkpoint_every = 2;
    std::ostringstream log;
    const FitResult res = fit(m, train_set, val_set, cfg, ckpt.string(), &log);
    CHECK(std::isfinite(res.final_val_miou));

    long ckpt_events = 0;
    for (const auto& l : parse_log(log.str())) {
        if (l.contains("event") && l.at("event") == "checkpoint") {
            ++ckpt_events;
            continue;
        }
        if (!l.contains("iter")) continue;
        const long it = l.at("iter").get<long>();
        // val runs on the cadence and always on the last iteration
        const bool expect_val = it % 2 == 0 || it == 5;
        CHECK(l.contains("val_miou") == expect_val);
    }
    CHECK(ckpt_events == 3);  // iterations 2 and 4, then the final write
    fs::remove(ckpt);
}

TEST_CASE("non-finite loss raises and is recorded") {
    model::Model m(tiny_config());
    m.initialize(305);
    // Poison one trainable weight; the first forward pass goes non-finite.
    for (Parameter* p : m.leaves())
        if (p->trainable && !p->buffer) {
            p->value[0] = std::numeric_limits<double>::quiet_NaN();
            break;
        }
    const auto train_set = make_split(800, 2, 32);
    TrainConfig cfg;
    cfg.iterations = 3;
    cfg.batch_size = 1;
    std::ostringstream log;
    CHECK_THROWS_AS(fit(m, train_set, {}, cfg, "", &log), TrainingDiverged);
    const auto lines = parse_log(log.str());
    REQUIRE(!lines.empty());
    CHECK(lines.back().at("event") == "diverged");
    CHECK(lines.back().at("iter") == 1);
    CHECK(lines.back().at("loss").is_null());
}

TEST_CASE("fit rejects unusable inputs up front") {
    model::Model m(tiny_config());
    m.initialize(307);
    TrainConfig cfg;
    cfg.iterations = 1;

    CHECK_THROWS_AS(fit(m, {}, {}, cfg, "", nullptr), InvalidArgument);
    CHECK_THROWS_AS(fit(m, make_split(1, 2, 64), {}, cfg, "", nullptr), InvalidArgument);
    CHECK_THROWS_AS(fit(m, {make_sample(1, 32, false)}, {}, cfg, "", nullptr), InvalidArgument);

    TrainConfig bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(fit(m, make_split(1, 2, 32), {}, bad, "", nullptr), InvalidArgument);
    bad = cfg;
    bad.lr = -1.0;
    CHECK_THROWS_AS(fit(m, make_split(1, 2, 32), {}, bad, "", nullptr), InvalidArgument);
    bad = cfg;
    bad.class_weighting = "sqrt";
    CHECK_THROWS_AS(fit(m, make_split(1, 2, 32), {}, bad, "", nullptr), InvalidArgument);
    bad = cfg;
    bad.iterations = 0;
    CHECK_THROWS_AS(fit(m, make_split(1, 2, 32), {}, bad, "", nullptr), InvalidArgument);
}

TEST_CASE("evaluation is batching-invariant and reports every pixel") {
    model::Model m(tiny_config());
    m.initialize(309);
    const auto samples = make_split(900, 5, 32);

    const metrics::Report r2 = evaluate(m, samples, 2);
    const metrics::Report r3 = evaluate(m, samples, 3);
    const metrics::Report r9 = evaluate(m, samples, 9);  // one oversized batch bound
    CHECK(r2.pixel_total == 5 * 32 * 32);
    CHECK(metrics::report_json(r2) == metrics::report_json(r3));
    CHECK(metrics::report_json(r2) == metrics::report_json(r9));
    CHECK(r2.oa >= 0.0);
    CHECK(r2.oa <= 1.0);

    const metrics::Report back = metrics::parse_report(metrics::report_json(r2));
    CHECK(back.oa == r2.oa);
    CHECK(back.pixel_total == r2.pixel_total);

    CHECK_THROWS_AS(evaluate(m, samples, 0), InvalidArgument);
    CHECK_THROWS_AS(evaluate(m, {}, 2), InvalidArgument);
}

TEST_CASE("prediction matches the evaluation path") {
    model::Model m(tiny_config());
    m.initialize(311);
    const auto sample = make_sample(950, 32);

    const IntTensor lab = predict_labels(m, sample);
    REQUIRE(lab.shape == Shape{32, 32});
    const Tensor logits = predict_logits(m, sample);
    REQUIRE(logits.shape() == Shape{1, 3, 32, 32});
    for (long p = 0; p < 32 * 32; ++p) {
        const long k = lab[p];
        CHECK(k >= 0);
        CHECK(k < 3);
        for (long c = 0; c < 3; ++c)
            CHECK(logits[c * 32 * 32 + p] <= logits[k * 32 * 32 + p]);
    }

    // A sample without a label map predicts fine but cannot be evaluated.
    const auto bare = make_sample(951, 32, false);
    CHECK(predict_labels(m, bare).numel() == 32 * 32);
    CHECK_THROWS_AS(evaluate(m, {bare}, 1), InvalidArgument);
}

TEST_CASE("gradient sweeps pass and the corrupted control is caught") {
    const auto cases = run_grad_checks(1234);
    REQUIRE(cases.size() == 9);
    bool saw_linear = false, saw_control = false;
    for (const auto& c : cases) {
        INFO(c.name, " err=", c.max_rel_err, " tol=", c.tolerance);
        CHECK(c.pass);
        CHECK(c.params > 0);
        CHECK(c.params <= 2000);
        if (c.name == "linear") {
            saw_linear = true;
            CHECK(c.tolerance == 1e-8);
            CHECK(c.max_rel_err <= 1e-8);
        }
        if (c.expect_mismatch) {
            saw_control = true;
            CHECK(c.name == "corrupted_control");
            CHECK(c.max_rel_err > c.tolerance);
        }
    }
    CHECK(saw_linear);
    CHECK(saw_control);
}
