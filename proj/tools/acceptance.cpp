// Acceptance gate. Eight product-level criteria, each printed as a single
// [PASS]/[FAIL] line with its measured numbers. Runs every criterion by
// default; `acceptance 3 7` runs a subset. Exits 0 only if every selected
// criterion passed.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "mmcd/checkpoint.hpp"
#include "mmcd/errors.hpp"
#include "mmcd/gradcheck.hpp"
#include "mmcd/graph.hpp"
#include "mmcd/metrics.hpp"
#include "mmcd/model.hpp"
#include "mmcd/nn.hpp"
#include "mmcd/rng.hpp"
#include "mmcd/scene.hpp"
#include "mmcd/trainer.hpp"

namespace fs = std::filesystem;
using namespace mmcd;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
    bool pass = false;
    std::string details;
};

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (long i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

std::string fmt(double v, int prec = 6) {
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

// Plain scalar-loop convolution, the oracle for every conv in the suite.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor& b, long stride, long pad) {
    const long B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const long O = w.dim(0), K = w.dim(2);
    const long HO = (H + 2 * pad - K) / stride + 1, WO = (W + 2 * pad - K) / stride + 1;
    Tensor y({B, O, HO, WO});
    for (long n = 0; n < B; ++n)
        for (long o = 0; o < O; ++o)
            for (long i = 0; i < HO; ++i)
                for (long j = 0; j < WO; ++j) {
                    double acc = b.numel() ? b[o] : 0.0;
                    for (long c = 0; c < C; ++c)
                        for (long ki = 0; ki < K; ++ki)
                            for (long kj = 0; kj < K; ++kj) {
                                const long py = i * stride + ki - pad, px = j * stride + kj - pad;
                                if (py < 0 || py >= H || px < 0 || px >= W) continue;
                                acc += x[((n * C + c) * H + py) * W + px] *
                                       w[((o * C + c) * K + ki) * K + kj];
                            }
                    y[((n * O + o) * HO + i) * WO + j] = acc;
                }
    return y;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    double m = 0.0;
    for (long i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

// --- criterion 1: forward equations vs scalar/dense oracles -----------------

double check_fim(std::uint64_t seed) {
    Rng rng(seed);
    const long B = 2, C = 5, H = 6, W = 7;
    model::FimBlock blk(C);
    nn::init_tree(blk, "fim", seed);
    const Tensor s_opt = random_tensor({B, C, H, W}, rng);
    const Tensor s_sar = random_tensor({B, C, H, W}, rng);

    Graph g;
    const auto out = blk.forward(g, g.constant(s_opt), g.constant(s_sar), true);

    const Tensor so = naive_conv(s_opt, blk.align_opt.w.value, blk.align_opt.b.value, 1, 0);
    const Tensor ss = naive_conv(s_sar, blk.align_sar.w.value, blk.align_sar.b.value, 1, 0);
    Tensor cat({B, 2 * C, H, W});
    for (long n = 0; n < B; ++n)
        for (long c = 0; c < 2 * C; ++c)
            for (long p = 0; p < H * W; ++p)
                cat[(n * 2 * C + c) * H * W + p] = c < C ? so[(n * C + c) * H * W + p]
                                                         : ss[(n * C + (c - C)) * H * W + p];
    const Tensor mixed = naive_conv(cat, blk.mix.w.value, blk.mix.b.value, 1, 1);
    // training-mode batch norm over the single channel, biased variance
    double mean = 0.0, var = 0.0;
    for (long i = 0; i < mixed.numel(); ++i) mean += mixed[i];
    mean /= static_cast<double>(mixed.numel());
    for (long i = 0; i < mixed.numel(); ++i) var += (mixed[i] - mean) * (mixed[i] - mean);
    var /= static_cast<double>(mixed.numel());
    const double gamma = blk.bn.gamma.value[0], beta = blk.bn.beta.value[0];
    Tensor attn(mixed.shape());
    for (long i = 0; i < mixed.numel(); ++i) {
        const double norm = (mixed[i] - mean) / std::sqrt(var + 1e-5);
        attn[i] = 1.0 / (1.0 + std::exp(-(gamma * norm + beta)));
    }
    Tensor c_opt(so.shape()), c_sar(ss.shape());
    for (long n = 0; n < B; ++n)
        for (long c = 0; c < C; ++c)
            for (long p = 0; p < H * W; ++p) {
                c_opt[(n * C + c) * H * W + p] = so[(n * C + c) * H * W + p] * attn[n * H * W + p];
                c_sar[(n * C + c) * H * W + p] = ss[(n * C + c) * H * W + p] * attn[n * H * W + p];
            }
    double err = max_abs_diff(g.val(out.attn), attn);
    err = std::max(err, max_abs_diff(g.val(out.c_opt), c_opt));
    return std::max(err, max_abs_diff(g.val(out.c_sar), c_sar));
}

double check_gsfm(std::uint64_t seed, int connectivity) {
    Rng rng(seed);
    const long B = 2, C = 4, H = 3, W = 3, N = H * W;
    model::GsfmBlock blk(C, false);
    nn::init_tree(blk, "gsfm", seed);
    const Tensor x = random_tensor({B, C, H, W}, rng);
    const auto adj = grid_adjacency(H, W, connectivity);

    Graph g;
    const Var out = blk.forward(g, g.constant(x), adj);

    // dense normalized adjacency with self loops
    const Tensor A = adj->dense();
    // bias lands after the adjacency multiply: A(XW) + b
    auto graph_layer = [&](const Tensor& tok, const Tensor& wmat, const Tensor& bias) {
        Tensor y({B, N, C});
        for (long n = 0; n < B; ++n)
            for (long t = 0; t < N; ++t)
                for (long c = 0; c < C; ++c) {
                    double acc = 0.0;
                    for (long k = 0; k < C; ++k) acc += tok[(n * N + t) * C + k] * wmat[k * C + c];
                    y[(n * N + t) * C + c] = acc;
                }
        Tensor z({B, N, C});
        for (long n = 0; n < B; ++n)
            for (long t = 0; t < N; ++t)
                for (long c = 0; c < C; ++c) {
                    double acc = bias[c];
                    for (long u = 0; u < N; ++u) acc += A[t * N + u] * y[(n * N + u) * C + c];
                    z[(n * N + t) * C + c] = acc;
                }
        return z;
    };
    Tensor tok({B, N, C});
    for (long n = 0; n < B; ++n)
        for (long c = 0; c < C; ++c)
            for (long t = 0; t < N; ++t) tok[(n * N + t) * C + c] = x[(n * C + c) * N + t];
    Tensor h1 = graph_layer(tok, blk.w1.value, blk.b1.value);
    for (long i = 0; i < h1.numel(); ++i) h1[i] -= tok[i];
    Tensor h2 = graph_layer(h1, blk.w2.value, blk.b2.value);
    for (long i = 0; i < h2.numel(); ++i) h2[i] = std::max(0.0, h2[i]);
    Tensor map({B, C, H, W});
    for (long n = 0; n < B; ++n)
        for (long c = 0; c < C; ++c)
            for (long t = 0; t < N; ++t) map[(n * C + c) * N + t] = h2[(n * N + t) * C + c];
    const Tensor want = naive_conv(map, blk.refine.w.value, blk.refine.b.value, 1, 1);
    return max_abs_diff(g.val(out), want);
}

double check_prior_distance(std::uint64_t seed) {
    Rng rng(seed);
    const long B = 2, C = 6, H = 4, W = 5;
    const Tensor a = random_tensor({B, C, H, W}, rng), b = random_tensor({B, C, H, W}, rng);
    Graph g;
    const Tensor& d = g.val(g.channel_l2_distance(g.constant(a), g.constant(b)));
    double err = 0.0;
    for (long n = 0; n < B; ++n)
        for (long p = 0; p < H * W; ++p) {
            double acc = 0.0;
            for (long c = 0; c < C; ++c) {
                const double diff = a[(n * C + c) * H * W + p] - b[(n * C + c) * H * W + p];
                acc += diff * diff;
            }
            err = std::max(err, std::abs(d[n * H * W + p] - std::sqrt(acc)));
        }
    return err;
}

double check_gated_fuse(std::uint64_t seed) {
    Rng rng(seed);
    const long B = 2, C = 4, H = 5, W = 4;
    model::PgffmBlock blk(C, false);
    nn::init_tree(blk, "pgffm", seed);
    blk.gate2.w.value = random_tensor(blk.gate2.w.value.shape(), rng);  // un-zero the gate
    const Tensor s_opt = random_tensor({B, C, H, W}, rng), s_sar = random_tensor({B, C, H, W}, rng);
    const Tensor c_opt = random_tensor({B, C, H, W}, rng), c_sar = random_tensor({B, C, H, W}, rng);
    const Tensor p_opt = random_tensor({B, 3, H, W}, rng), p_sar = random_tensor({B, 3, H, W}, rng);

    Graph g;
    const auto out = blk.forward(g, g.constant(s_opt), g.constant(s_sar), g.constant(c_opt),
                                 g.constant(c_sar), g.constant(p_opt), g.constant(p_sar));
    const Tensor& m = g.val(out.gate);
    const Tensor& fs = g.val(out.specific);
    const Tensor& fc = g.val(out.common);
    const Tensor& comb = g.val(out.combined);

    // specific path: shared projection of each modality, then the difference
    double err = 0.0;
    for (long n = 0; n < B; ++n)
        for (long t = 0; t < H * W; ++t)
            for (long c = 0; c < C; ++c) {
                double po = blk.spec_proj.b.value[c], ps = blk.spec_proj.b.value[c];
                for (long k = 0; k < C; ++k) {
                    po += s_opt[(n * C + k) * H * W + t] * blk.spec_proj.w.value[k * C + c];
                    ps += s_sar[(n * C + k) * H * W + t] * blk.spec_proj.w.value[k * C + c];
                }
                err = std::max(err, std::abs(fs[(n * C + c) * H * W + t] - (po - ps)));
            }
    // gated convex combination, gate broadcast over channels
    for (long n = 0; n < B; ++n)
        for (long c = 0; c < C; ++c)
            for (long t = 0; t < H * W; ++t) {
                const long i = (n * C + c) * H * W + t;
                const double want = m[n * H * W + t] * fs[i] + (1.0 - m[n * H * W + t]) * fc[i];
                err = std::max(err, std::abs(comb[i] - want));
            }
    // common path is the plain difference
    for (long i = 0; i < fc.numel(); ++i)
        err = std::max(err, std::abs(fc[i] - (c_opt[i] - c_sar[i])));
    return err;
}

double check_loss(std::uint64_t seed) {
    Rng rng(seed);
    const long B = 2, C = 7, H = 3, W = 4;
    const Tensor logits = random_tensor({B, C, H, W}, rng, -3.0, 3.0);
    IntTensor labels({B, H, W});
    std::vector<double> weights(C);
    for (long i = 0; i < labels.numel(); ++i)
        labels[i] = static_cast<std::int32_t>(rng.uniform_int(0, C - 1));
    for (auto& w : weights) w = rng.uniform(0.2, 5.0);

    Graph g;
    const double got = g.val(g.cross_entropy(g.constant(logits), labels, weights))[0];

    double acc = 0.0;
    for (long n = 0; n < B; ++n)
        for (long p = 0; p < H * W; ++p) {
            double mx = -1e300;
            for (long c = 0; c < C; ++c) mx = std::max(mx, logits[(n * C + c) * H * W + p]);
            double lse = 0.0;
            for (long c = 0; c < C; ++c) lse += std::exp(logits[(n * C + c) * H * W + p] - mx);
            const long y = labels[n * H * W + p];
            acc += weights[static_cast<std::size_t>(y)] *
                   (mx + std::log(lse) - logits[(n * C + y) * H * W + p]);
        }
    return std::abs(got - acc / static_cast<double>(B * H * W));
}

double check_metrics(std::uint64_t seed) {
    Rng rng(seed);
    const long C = 7, H = 8, W = 8;
    IntTensor pred({H, W}), truth({H, W});
    for (long i = 0; i < H * W; ++i) {
        pred[i] = static_cast<std::int32_t>(rng.uniform_int(0, C - 1));
        truth[i] = static_cast<std::int32_t>(rng.uniform_int(0, C - 1));
    }
    metrics::Confusion cm(C);
    cm.add(pred, truth);

    // counting oracle
    std::vector<long> counts(static_cast<std::size_t>(C * C), 0);
    for (long i = 0; i < H * W; ++i) ++counts[static_cast<std::size_t>(pred[i] * C + truth[i])];
    for (long i = 0; i < C * C; ++i)
        if (cm.counts[static_cast<std::size_t>(i)] != counts[static_cast<std::size_t>(i)])
            return 1.0;

    const metrics::Report rep = metrics::compute_report(cm);
    double err = 0.0;
    long diag = 0, total = 0;
    for (long i = 0; i < C; ++i) diag += counts[static_cast<std::size_t>(i * C + i)];
    for (long v : counts) total += v;
    err = std::max(err, std::abs(rep.oa - static_cast<double>(diag) / static_cast<double>(total)));

    double iou_sum = 0.0;
    long defined = 0;
    for (long i = 0; i < C; ++i) {
        long row = 0, col = 0;
        for (long j = 0; j < C; ++j) {
            row += counts[static_cast<std::size_t>(i * C + j)];
            col += counts[static_cast<std::size_t>(j * C + i)];
        }
        const long denom = row + col - counts[static_cast<std::size_t>(i * C + i)];
        if (denom == 0) {
            if (!std::isnan(rep.iou_per_class[static_cast<std::size_t>(i)])) return 1.0;
            continue;
        }
        const double iou = static_cast<double>(counts[static_cast<std::size_t>(i * C + i)]) /
                           static_cast<double>(denom);
        err = std::max(err, std::abs(rep.iou_per_class[static_cast<std::size_t>(i)] - iou));
        iou_sum += iou;
        ++defined;
    }
    err = std::max(err, std::abs(rep.miou - iou_sum / static_cast<double>(defined)));

    long tp = 0, fp = 0, fn = 0;
    for (long i = 1; i < C; ++i)
        for (long j = 1; j < C; ++j) tp += counts[static_cast<std::size_t>(i * C + j)];
    for (long i = 1; i < C; ++i) fp += counts[static_cast<std::size_t>(i * C)];
    for (long j = 1; j < C; ++j) fn += counts[static_cast<std::size_t>(j)];
    const double prec = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    const double rec = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    const double f1 =
        2 * tp + fp + fn ? 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn) : 0.0;
    err = std::max(err, std::abs(rep.precision_c - prec));
    err = std::max(err, std::abs(rep.recall_c - rec));
    err = std::max(err, std::abs(rep.f1_bcd - f1));

    double f1_sum = 0.0;
    for (long i = 0; i < C; ++i) {
        long row = 0, col = 0;
        for (long j = 0; j < C; ++j) {
            row += counts[static_cast<std::size_t>(i * C + j)];
            col += counts[static_cast<std::size_t>(j * C + i)];
        }
        const long x = counts[static_cast<std::size_t>(i * C + i)];
        const long denom = row + col;  // 2x_ii + FP_i + FN_i
        f1_sum += denom ? 2.0 * static_cast<double>(x) / static_cast<double>(denom) : 0.0;
    }
    return std::max(err, std::abs(rep.f1_clf - f1_sum / static_cast<double>(C)));
}

Outcome criterion1() {
    double err = 0.0;
    for (std::uint64_t s = 1; s <= 4; ++s) {
        err = std::max(err, check_fim(10 * s));
        err = std::max(err, check_gsfm(20 * s, s % 2 ? 8 : 4));
        err = std::max(err, check_prior_distance(30 * s));
        err = std::max(err, check_gated_fuse(40 * s));
        err = std::max(err, check_loss(50 * s));
        err = std::max(err, check_metrics(60 * s));
    }
    return {err <= 1e-6, "max abs deviation " + fmt(err, 3) + " (tolerance 1e-6)"};
}

// --- criterion 2: gradients vs central differences --------------------------

Outcome criterion2() {
    const auto cases = train::run_grad_checks(0);
    bool ok = true;
    double worst = 0.0;
    std::string failed;
    for (const auto& c : cases) {
        if (!c.pass) {
            ok = false;
            failed += (failed.empty() ? "" : ", ") + c.name;
        }
        if (!c.expect_mismatch) worst = std::max(worst, c.max_rel_err);
    }
    std::string d = std::to_string(cases.size()) + " subnets, worst rel err " + fmt(worst, 3);
    if (!failed.empty()) d += "; failed: " + failed;
    return {ok, d};
}

// --- criterion 3: gate convexity and saturation ------------------------------

Outcome criterion3() {
    Rng rng(33);
    double slack = 0.0;
    for (int trial = 0; trial < 1000; ++trial) {
        const long C = rng.uniform_int(1, 4), H = rng.uniform_int(2, 6), W = rng.uniform_int(2, 6);
        const Tensor m = random_tensor({1, 1, H, W}, rng, 0.0, 1.0);
        const Tensor f_s = random_tensor({1, C, H, W}, rng, -3.0, 3.0);
        const Tensor f_c = random_tensor({1, C, H, W}, rng, -3.0, 3.0);
        Graph g;
        const Var gate = g.constant(m);
        const Var comb = g.add(g.mul(g.constant(f_s), gate),
                               g.mul(g.constant(f_c), g.add_scalar(g.neg(gate), 1.0)));
        const Tensor& v = g.val(comb);
        for (long c = 0; c < C; ++c)
            for (long p = 0; p < H * W; ++p) {
                const long i = c * H * W + p;
                const double lo = std::min(f_s[i], f_c[i]), hi = std::max(f_s[i], f_c[i]);
                slack = std::max(slack, std::max(lo - v[i], v[i] - hi));
            }
        if (trial < 50) {  // endpoint exactness on a subset
            Graph g2;
            const Var one = g2.constant(Tensor::full({1, 1, H, W}, 1.0));
            const Var zero = g2.constant(Tensor::zeros({1, 1, H, W}));
            const Var at_one = g2.add(g2.mul(g2.constant(f_s), one),
                                      g2.mul(g2.constant(f_c), g2.add_scalar(g2.neg(one), 1.0)));
            const Var at_zero = g2.add(g2.mul(g2.constant(f_s), zero),
                                       g2.mul(g2.constant(f_c), g2.add_scalar(g2.neg(zero), 1.0)));
            for (long i = 0; i < f_s.numel(); ++i)
                if (g2.val(at_one)[i] != f_s[i] || g2.val(at_zero)[i] != f_c[i])
                    return {false, "endpoint mismatch at trial " + std::to_string(trial)};
        }
    }
    // block-level saturation: a huge gate bias pins the gate itself
    model::PgffmBlock blk(3, false);
    nn::init_tree(blk, "pgffm", 7);
    Rng rng2(34);
    const Tensor s_opt = random_tensor({1, 3, 4, 4}, rng2), s_sar = random_tensor({1, 3, 4, 4}, rng2);
    const Tensor p = random_tensor({1, 3, 4, 4}, rng2), q = random_tensor({1, 3, 4, 4}, rng2);
    double gate_err = 0.0;
    for (const double bias : {40.0, -40.0}) {
        blk.gate2.b.value.fill(bias);
        Graph g;
        const auto out = blk.forward(g, g.constant(s_opt), g.constant(s_sar), g.constant(s_opt),
                                     g.constant(s_sar), g.constant(p), g.constant(q));
        const Tensor& gv = g.val(out.gate);
        for (long i = 0; i < gv.numel(); ++i)
            gate_err = std::max(gate_err, bias > 0 ? std::abs(gv[i] - 1.0) : std::abs(gv[i]));
    }
    const bool ok = slack <= 1e-6 && gate_err <= 1e-12;
    return {ok, "1000 triples, worst bound slack " + fmt(slack, 3) + ", saturated gate err " +
                    fmt(gate_err, 3)};
}

// --- shared synthetic fixtures ----------------------------------------------

std::vector<scene::DatasetSample> make_tiles(long count, long size, std::uint64_t seed0) {
    scene::SceneConfig sc;
    sc.size = size;
    std::vector<scene::DatasetSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (long i = 0; i < count; ++i) {
        const auto s = scene::generate_sample(sc, seed0 + static_cast<std::uint64_t>(i));
        out.push_back({std::to_string(i), s.optical, s.sar, s.label});
    }
    return out;
}

// --- criterion 4: freeze invariance ------------------------------------------

Outcome criterion4() {
    model::ModelConfig cfg = model::ModelConfig::variant("full");
    cfg.tile_size = 32;
    model::Model m(cfg);
    m.initialize(5);
    const auto leaves = m.leaves();
    long frozen = 0;
    for (const auto* p : leaves)
        if (!p->trainable && !p->buffer) ++frozen;
    const std::string before = frozen_digest(leaves);

    const auto tiles = make_tiles(8, 32, 300);
    train::TrainConfig tc;
    tc.iterations = 100;
    tc.batch_size = 4;
    tc.lr = 1e-3;
    tc.seed = 2;
    const auto res = train::fit(m, tiles, {}, tc, "", nullptr);

    const std::string after = frozen_digest(m.leaves());
    const bool ok = before == after && frozen > 0 && std::isfinite(res.final_loss);
    return {ok, std::to_string(frozen) + " frozen leaves, digest " + before.substr(0, 12) +
                    (ok ? " unchanged over 100 iterations" : " CHANGED: " + after.substr(0, 12))};
}

// --- criterion 5: overfit surrogate -------------------------------------------

Outcome criterion5() {
    model::Model m(model::ModelConfig::variant("full"));
    m.initialize(5);
    const auto tiles = make_tiles(8, 64, 100);
    train::TrainConfig tc;
    tc.iterations = 500;
    tc.batch_size = 4;
    tc.lr = 1e-3;
    tc.seed = 1;
    train::fit(m, tiles, {}, tc, "", nullptr);
    const auto rep = train::evaluate(m, tiles, 4);
    return {rep.miou >= 0.95,
            "train-set mIoU " + fmt(rep.miou, 4) + " after 500 iterations (threshold 0.95)"};
}

// --- criterion 6: ablation ordering -------------------------------------------

Outcome criterion6() {
    const auto train_tiles = make_tiles(400, 64, 1000);
    const auto test_tiles = make_tiles(100, 64, 9000);
    const std::array<std::string, 4> variants = {"baseline", "v1", "v2", "full"};
    std::array<double, 4> mean{};
    std::string detail;
    for (std::size_t vi = 0; vi < variants.size(); ++vi) {
        double acc = 0.0;
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            model::Model m(model::ModelConfig::variant(variants[vi]));
            m.initialize(derive_seed(seed, "model"));
            train::TrainConfig tc;
            tc.iterations = 500;
            tc.batch_size = 4;
            tc.lr = 5e-4;
            tc.seed = seed;
            train::fit(m, train_tiles, {}, tc, "", nullptr);
            acc += train::evaluate(m, test_tiles, 4).miou;
        }
        mean[vi] = acc / 3.0;
        detail += (vi ? " <= " : "") + variants[vi] + " " + fmt(mean[vi], 4);
    }
    const bool ordered = mean[0] <= mean[1] && mean[1] <= mean[2] && mean[2] <= mean[3];
    const bool margin = mean[3] - mean[0] >= 0.02;
    return {ordered && margin, detail + "; full-baseline " + fmt(mean[3] - mean[0], 4) +
                                   (ordered ? "" : " (ordering violated)") +
                                   (margin ? "" : " (margin < 0.02)")};
}

// --- criterion 7: metric regression vectors -----------------------------------

Outcome criterion7() {
    double err = 0.0;

    metrics::Confusion oa_cm(2);
    oa_cm.at(0, 0) = 8;
    oa_cm.at(0, 1) = 2;
    oa_cm.at(1, 0) = 1;
    oa_cm.at(1, 1) = 9;
    err = std::max(err, std::abs(metrics::overall_accuracy(oa_cm) - 0.85));

    metrics::Confusion iou_cm(2);
    iou_cm.at(0, 0) = 5;
    iou_cm.at(0, 1) = 1;
    iou_cm.at(1, 0) = 2;
    iou_cm.at(1, 1) = 4;
    const auto ious = metrics::iou_per_class(iou_cm);
    err = std::max(err, std::abs(ious[0] - 5.0 / 8.0));
    err = std::max(err, std::abs(ious[1] - 4.0 / 7.0));
    err = std::max(err, std::abs(metrics::miou(iou_cm) - (5.0 / 8.0 + 4.0 / 7.0) / 2.0));
    err = std::max(err, std::abs(metrics::f1_clf(iou_cm) - (10.0 / 13.0 + 8.0 / 11.0) / 2.0));

    // binarized counts TP=6, FP=2, FN=3 over three classes
    metrics::Confusion bcd_cm(3);
    bcd_cm.at(0, 0) = 4;
    bcd_cm.at(0, 1) = 2;
    bcd_cm.at(0, 2) = 1;
    bcd_cm.at(1, 0) = 1;
    bcd_cm.at(1, 1) = 3;
    bcd_cm.at(1, 2) = 1;
    bcd_cm.at(2, 0) = 1;
    bcd_cm.at(2, 1) = 1;
    bcd_cm.at(2, 2) = 1;
    const auto b = metrics::f1_bcd(bcd_cm);
    err = std::max(err, std::abs(b.precision - 0.75));
    err = std::max(err, std::abs(b.recall - 2.0 / 3.0));
    err = std::max(err, std::abs(b.f1 - 12.0 / 17.0));

    return {err <= 1e-12, "max deviation from the five hand-derived vectors " + fmt(err, 3)};
}

// --- criterion 8: end-to-end determinism ---------------------------------------

Outcome criterion8(const fs::path& work) {
    const std::string cli = MMCD_CLI_PATH;
    auto shell = [&](const std::string& args) {
        const std::string cmd = cli + " " + args + " >/dev/null 2>&1";
        const int rc = std::system(cmd.c_str());
        return rc == 0;
    };
    auto bytes = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    };

    for (const char* run : {"a", "b"}) {
        const fs::path root = work / ("det_" + std::string(run));
        fs::remove_all(root);
        if (!shell("synth --count 12 --size 32 --seed 7 --out " + (root / "data").string()))
            return {false, "synth failed"};
        if (!shell("train --data " + (root / "data").string() + " --out " + (root / "run").string() +
                   " --variant full --iters 20 --batch-size 2 --seed 3"))
            return {false, "train failed"};
        if (!shell("eval --data " + (root / "data").string() + " --split train --model-config " +
                   (root / "run" / "model.json").string() + " --checkpoint " +
                   (root / "run" / "checkpoint.bin").string() + " --out " + (root / "eval").string()))
            return {false, "eval failed"};
    }
    const bool manifest_ok =
        bytes(work / "det_a/data/manifest.json") == bytes(work / "det_b/data/manifest.json");
    const bool report_ok =
        bytes(work / "det_a/eval/report.json") == bytes(work / "det_b/eval/report.json");
    const bool ckpt_ok =
        bytes(work / "det_a/run/checkpoint.bin") == bytes(work / "det_b/run/checkpoint.bin");
    std::string d = std::string("manifest ") + (manifest_ok ? "identical" : "DIFFERS") +
                    ", report " + (report_ok ? "identical" : "DIFFERS") + ", checkpoint " +
                    (ckpt_ok ? "identical" : "DIFFERS");
    return {manifest_ok && report_ok && ckpt_ok, d};
}

}  // namespace

int main(int argc, char** argv) {
    std::set<int> selected;
    fs::path work = fs::temp_directory_path() / ("acceptance_" + std::to_string(::getpid()));
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--work-dir" && i + 1 < argc) {
            work = argv[++i];
        } else if (!a.empty() && std::all_of(a.begin(), a.end(), ::isdigit)) {
            selected.insert(std::atoi(a.c_str()));
        } else {
            std::cerr << "usage: acceptance [--work-dir D] [criterion...]\n";
            return 2;
        }
    }
    if (selected.empty()) selected = {1, 2, 3, 4, 5, 6, 7, 8};
    fs::create_directories(work);

    const std::array<std::string, 8> titles = {
        "forward equations match scalar/dense oracles",
        "analytic gradients match central differences",
        "fusion gate is a convex combination with exact endpoints",
        "frozen leaves are bit-identical through training",
        "overfit surrogate reaches mIoU 0.95 on 8 tiles",
        "module ablations improve test mIoU monotonically",
        "metric regression vectors",
        "synth+train+eval is byte-deterministic",
    };

    int failures = 0;
    for (const int k : selected) {
        if (k < 1 || k > 8) {
            std::cerr << "no criterion " << k << "\n";
            return 2;
        }
        const auto t0 = Clock::now();
        Outcome o;
        try {
            switch (k) {
                case 1: o = criterion1(); break;
                case 2: o = criterion2(); break;
                case 3: o = criterion3(); break;
                case 4: o = criterion4(); break;
                case 5: o = criterion5(); break;
                case 6: o = criterion6(); break;
                case 7: o = criterion7(); break;
                default: o = criterion8(work); break;
            }
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double dt = std::chrono::duration<double>(Clock::now() - t0).count();
        std::cout << (o.pass ? "[PASS]" : "[FAIL]") << " criterion " << k << ": "
                  << titles[static_cast<std::size_t>(k - 1)] << " — " << o.details << " ("
                  << fmt(dt, 3) << "s)\n"
                  << std::flush;
        if (!o.pass) ++failures;
    }
    std::cout << (static_cast<int>(selected.size()) - failures) << "/" << selected.size()
              << " criteria passed\n";
    return failures == 0 ? 0 : 1;
}
