#include "mmcd/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "mmcd/errors.hpp"
#include "mmcd/model.hpp"
#include "mmcd/nn.hpp"
#include "mmcd/rng.hpp"

namespace mmcd::train {

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double std = 1.0) {
    Tensor t(std::move(s));
    Rng rng(seed);
    for (long i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std);
    return t;
}

using BuildFn = std::function<Var(Graph&)>;

// Scalar loss by projecting onto a fixed random direction, so every output
// element carries a distinct weight.
Var project(Graph& g, Var out, std::uint64_t seed) {
    Tensor r = random_tensor(g.val(out).shape(), seed);
    return g.sum_all(g.mul(out, g.constant(r)));
}

double eval_scalar(const BuildFn& f) {
    Graph g;
    return g.val(f(g))[0];
}

// Central differences over every element of every listed parameter. With
// `corrupt`, the largest analytic gradient entry is inflated by 10% first;
// the sweep must then report a mismatch.
double max_rel_err(const std::vector<Parameter*>& ps, const BuildFn& f, bool corrupt) {
    const double h = 1e-4;
    for (Parameter* p : ps) p->zero_grad();
    {
        Graph g;
        g.backward(f(g));
    }
    double gscale = 0.0;
    for (Parameter* p : ps)
        for (long i = 0; i < p->grad.numel(); ++i) gscale = std::max(gscale, std::abs(p->grad[i]));
    if (corrupt) {
        Parameter* bp = nullptr;
        long bi = 0;
        for (Parameter* p : ps)
            for (long i = 0; i < p->grad.numel(); ++i)
                if (bp == nullptr || std::abs(p->grad[i]) > std::abs(bp->grad[bi])) {
                    bp = p;
                    bi = i;
                }
        if (bp != nullptr) {
            bp->grad[bi] *= 1.1;
            gscale = std::max(gscale, std::abs(bp->grad[bi]));
        }
    }
    const double floor = std::max(1e-6, 1e-4 * gscale);
    double worst = 0.0;
    for (Parameter* p : ps) {
        for (long i = 0; i < p->value.numel(); ++i) {
            const double keep = p->value[i];
            p->value[i] = keep + h;
            const double fp = eval_scalar(f);
            p->value[i] = keep - h;
            const double fm = eval_scalar(f);
            p->value[i] = keep;
            const double fd = (fp - fm) / (2.0 * h);
            const double ga = p->grad[i];
            const double denom = std::max({floor, std::abs(fd), std::abs(ga)});
            worst = std::max(worst, std::abs(fd - ga) / denom);
        }
    }
    return worst;
}

long count_params(const std::vector<Parameter*>& ps) {
    long n = 0;
    for (const Parameter* p : ps)
        if (!p->buffer) n += p->value.numel();
    return n;
}

std::vector<Parameter*> non_buffer(std::vector<Parameter*> ps) {
    ps.erase(std::remove_if(ps.begin(), ps.end(), [](Parameter* p) { return p->buffer; }),
             ps.end());
    return ps;
}

GradCheckCase run_case(const std::string& name, const std::vector<Parameter*>& raw,
                       const BuildFn& f, double tol, bool corrupt) {
    const std::vector<Parameter*> ps = non_buffer(raw);
    GradCheckCase c;
    c.name = name;
    c.params = count_params(ps);
    if (c.params > 2000)
        throw InvalidArgument("gradient check instance '" + name + "' exceeds 2000 parameters");
    c.tolerance = tol;
    c.expect_mismatch = corrupt;
    c.max_rel_err = max_rel_err(ps, f, corrupt);
    c.pass = corrupt ? c.max_rel_err > tol : c.max_rel_err <= tol;
    return c;
}

}  // namespace

std::vector<GradCheckCase> run_grad_checks(std::uint64_t seed) {
    std::vector<GradCheckCase> out;
    const auto s = [seed](std::uint64_t k) { return derive_seed(seed, "gradcheck", k); };

    {
        nn::Linear lin(9, 7);
        nn::init_tree(lin, "lin", s(1));
        const Tensor x = random_tensor({4, 9}, s(2), 0.8);
        auto f = [&](Graph& g) { return project(g, lin.forward(g, g.constant(x)), s(3)); };
        out.push_back(run_case("linear", lin.leaves(), f, 1e-8, false));
    }
    {
        nn::Conv2d conv(2, 3, 3, 1, 1);
        nn::init_tree(conv, "conv", s(4));
        const Tensor x = random_tensor({1, 2, 5, 5}, s(5), 0.8);
        auto f = [&](Graph& g) { return project(g, conv.forward(g, g.constant(x)), s(6)); };
        out.push_back(run_case("conv", conv.leaves(), f, 1e-4, false));
    }
    {
        model::WindowBlock blk(2, 1, 4, 2, true);
        nn::init_tree(blk, "blk", s(7));
        const Tensor x = random_tensor({1, 16, 2}, s(8), 0.7);
        auto f = [&](Graph& g) { return project(g, blk.forward(g, g.constant(x), 4, 4), s(9)); };
        out.push_back(run_case("window_attention", blk.leaves(), f, 1e-4, false));
    }
    {
        model::FimBlock fim(2);
        nn::init_tree(fim, "fim", s(10));
        const Tensor a = random_tensor({1, 2, 4, 4}, s(11), 0.7);
        const Tensor b = random_tensor({1, 2, 4, 4}, s(12), 0.7);
        auto f = [&](Graph& g) {
            const auto o = fim.forward(g, g.constant(a), g.constant(b), true);
            return g.add(project(g, o.c_opt, s(13)), project(g, o.c_sar, s(14)));
        };
        out.push_back(run_case("cross_modal_gate", fim.leaves(), f, 1e-4, false));
    }
    {
        model::GsfmBlock blk(2, true);
        nn::init_tree(blk, "gsfm", s(15));
        const Tensor x = random_tensor({1, 2, 4, 4}, s(16), 0.8);
        const auto adj = grid_adjacency(2, 2, 8);
        auto f = [&](Graph& g) { return project(g, blk.forward(g, g.constant(x), adj), s(17)); };
        out.push_back(run_case("graph_refinement", blk.leaves(), f, 1e-4, false));
    }
    {
        model::PgffmBlock blk(2, false);
        nn::init_tree(blk, "pgffm", s(18));
        blk.gate2.w.init(random_tensor({1, 8, 3, 3}, s(19), 0.4));
        const Tensor so = random_tensor({1, 2, 2, 2}, s(20));
        const Tensor ss = random_tensor({1, 2, 2, 2}, s(21));
        const Tensor co = random_tensor({1, 2, 2, 2}, s(22));
        const Tensor cs = random_tensor({1, 2, 2, 2}, s(23));
        const Tensor po = random_tensor({1, 4, 2, 2}, s(24));
        const Tensor ps = random_tensor({1, 4, 2, 2}, s(25));
        auto f = [&](Graph& g) {
            const auto o = blk.forward(g, g.constant(so), g.constant(ss), g.constant(co),
                                       g.constant(cs), g.constant(po), g.constant(ps));
            return project(g, o.fused, s(26));
        };
        out.push_back(run_case("gated_fusion", blk.leaves(), f, 1e-4, false));
    }
    {
        model::ModelConfig cfg;
        cfg.tile_size = 32;
        cfg.base_channels = 2;
        cfg.decoder_channels = 4;
        cfg.num_classes = 3;
        model::Decoder dec(cfg);
        nn::init_tree(dec, "dec", s(27));
        const Tensor f0 = random_tensor({1, 2, 8, 8}, s(28), 0.6);
        const Tensor f1 = random_tensor({1, 4, 4, 4}, s(29), 0.6);
        const Tensor f2 = random_tensor({1, 8, 2, 2}, s(30), 0.6);
        const Tensor f3 = random_tensor({1, 16, 1, 1}, s(31), 0.6);
        auto f = [&](Graph& g) {
            const std::array<Var, 4> feats = {g.constant(f0), g.constant(f1), g.constant(f2),
                                              g.constant(f3)};
            return project(g, dec.forward(g, feats), s(32));
        };
        out.push_back(run_case("decoder", dec.leaves(), f, 1e-4, false));
    }
    {
        Parameter logits;
        logits.init(random_tensor({2, 7, 3, 3}, s(33), 1.5));
        IntTensor labels({2, 3, 3});
        Rng lr(s(34));
        for (long i = 0; i < labels.numel(); ++i)
            labels[i] = static_cast<std::int32_t>(lr.uniform_int(0, 6));
        const std::vector<double> w = {0.4, 1.0, 1.3, 0.7, 2.0, 5.0, 0.2};
        auto f = [&](Graph& g) { return g.cross_entropy(g.param(logits), labels, w); };
        out.push_back(run_case("weighted_loss", {&logits}, f, 1e-4, false));
    }
    {
        // Control: an inflated gradient entry must trip the sweep.
        model::FimBlock fim(2);
        nn::init_tree(fim, "fim", s(35));
        const Tensor a = random_tensor({1, 2, 4, 4}, s(36), 0.7);
        const Tensor b = random_tensor({1, 2, 4, 4}, s(37), 0.7);
        auto f = [&](Graph& g) {
            const auto o = fim.forward(g, g.constant(a), g.constant(b), true);
            return g.add(project(g, o.c_opt, s(38)), project(g, o.c_sar, s(39)));
        };
        out.push_back(run_case("corrupted_control", fim.leaves(), f, 1e-4, true));
    }
    return out;
}

}  // namespace mmcd::train
