#include "mmcd/nn.hpp"

#include <cmath>

#include "mmcd/rng.hpp"

namespace mmcd::nn {

void Module::reg(const std::string& name, Parameter& p, Init kind, double arg) {
    entries_.push_back({name, &p, kind, arg});
}

void Module::reg_buffer(const std::string& name, Parameter& p, double fill) {
    entries_.push_back({name, &p, fill == 1.0 ? Init::Ones : Init::Zeros, 0.0});
    p.buffer = true;
}

void Module::reg_child(const std::string& name, Module& m) { children_.push_back({name, &m}); }

void Module::visit(const std::string& prefix, const ParamVisitor& fn) {
    for (Entry& e : entries_) {
        if (e.p->name.empty()) e.p->name = prefix.empty() ? e.name : prefix + "." + e.name;
        fn(*e.p);
    }
    for (auto& [name, child] : children_) child->visit(prefix.empty() ? name : prefix + "." + name, fn);
}

std::vector<Parameter*> Module::leaves() {
    std::vector<Parameter*> out;
    visit("", [&](Parameter& p) { out.push_back(&p); });
    return out;
}

void Module::set_trainable(bool trainable) {
    visit("", [&](Parameter& p) {
        if (!p.buffer) p.trainable = trainable;
    });
}

namespace {

Tensor generate(const Shape& shape, Init kind, double arg, std::uint64_t seed) {
    Tensor t(shape);
    switch (kind) {
        case Init::Zeros:
            break;
        case Init::Ones:
            t.fill(1.0);
            break;
        case Init::Normal: {
            Rng rng(seed);
            for (long i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, arg);
            break;
        }
        case Init::KaimingConv: {
            // arg carries fan_in
            Rng rng(seed);
            const double std = std::sqrt(2.0 / arg);
            for (long i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std);
            break;
        }
        case Init::XavierLinear: {
            const double fan_in = static_cast<double>(shape[0]);
            const double fan_out = static_cast<double>(shape[1]);
            Rng rng(seed);
            const double std = std::sqrt(2.0 / (fan_in + fan_out));
            for (long i = 0; i < t.numel(); ++i) t[i] = rng.normal(0.0, std);
            break;
        }
    }
    return t;
}

}  // namespace

void init_tree(Module& root, const std::string& root_name, std::uint64_t seed) {
    // Naming pass first; values are then generated keyed by the final names.
    root.visit(root_name, [](Parameter&) {});
    std::function<void(Module&)> walk = [&](Module& m) {
        for (Module::Entry& e : m.entries_) {
            const bool was_buffer = e.p->buffer;
            Tensor v = generate(e.p->value.shape(), e.kind, e.arg, derive_seed(seed, e.p->name));
            e.p->init(std::move(v), e.p->trainable, was_buffer);
        }
        for (auto& [name, child] : m.children_) walk(*child);
    };
    walk(root);
}

Linear::Linear(long in, long out, const std::string&) {
    w.value = Tensor({in, out});
    b.value = Tensor({out});
    reg("w", w, Init::XavierLinear);
    reg("b", b, Init::Zeros);
}

Var Linear::forward(Graph& g, Var x) { return g.add(g.linear(x, g.param(w)), g.param(b)); }

Conv2d::Conv2d(long in, long out, int kernel, int stride_, int pad_, Init w_init)
    : stride(stride_), pad(pad_) {
    w.value = Tensor({out, in, kernel, kernel});
    b.value = Tensor({out});
    reg("w", w, w_init, static_cast<double>(in * kernel * kernel));
    reg("b", b, Init::Zeros);
}

Var Conv2d::forward(Graph& g, Var x) { return g.conv2d(x, g.param(w), g.param(b), stride, pad); }

LayerNorm::LayerNorm(long dim) {
    gamma.value = Tensor({dim});
    beta.value = Tensor({dim});
    reg("gamma", gamma, Init::Ones);
    reg("beta", beta, Init::Zeros);
}

Var LayerNorm::forward(Graph& g, Var x) { return g.layer_norm(x, g.param(gamma), g.param(beta)); }

BatchNorm2d::BatchNorm2d(long dim) {
    gamma.value = Tensor({dim});
    beta.value = Tensor({dim});
    run_mean.value = Tensor({dim});
    run_var.value = Tensor({dim});
    reg("gamma", gamma, Init::Ones);
    reg("beta", beta, Init::Zeros);
    reg_buffer("running_mean", run_mean, 0.0);
    reg_buffer("running_var", run_var, 1.0);
}

Var BatchNorm2d::forward(Graph& g, Var x, bool training) {
    return g.batch_norm2d(x, g.param(gamma), g.param(beta), run_mean, run_var, training);
}

Adapter::Adapter(long dim, long reduction) {
    const long r = std::max<long>(1, dim / reduction);
    down_w.value = Tensor({dim, r});
    down_b.value = Tensor({r});
    up_w.value = Tensor({r, dim});
    up_b.value = Tensor({dim});
    reg("down_w", down_w, Init::XavierLinear);
    reg("down_b", down_b, Init::Zeros);
    reg("up_w", up_w, Init::Zeros);
    reg("up_b", up_b, Init::Zeros);
}

Var Adapter::forward(Graph& g, Var x) {
    Var h = g.gelu(g.add(g.linear(x, g.param(down_w)), g.param(down_b)));
    Var u = g.add(g.linear(h, g.param(up_w)), g.param(up_b));
    return g.add(x, u);
}

Mlp::Mlp(long dim, long hidden) : fc1(dim, hidden), fc2(hidden, dim) {
    reg_child("fc1", fc1);
    reg_child("fc2", fc2);
}

Var Mlp::forward(Graph& g, Var x) { return fc2.forward(g, g.gelu(fc1.forward(g, x))); }

Attention::Attention(long dim, long heads_)
    : wq(dim, dim), wk(dim, dim), wv(dim, dim), wo(dim, dim), heads(heads_) {
    if (dim % heads != 0) throw InvalidArgument("attention heads must divide the channel width");
    reg_child("q", wq);
    reg_child("k", wk);
    reg_child("v", wv);
    reg_child("proj", wo);
}

Var Attention::forward(Graph& g, Var x, const Tensor* mask_groups, Tensor* attn_out) {
    const Shape& s = g.val(x).shape();
    const long bsz = s[0], t = s[1], c = s[2];
    const long d = c / heads;
    auto split = [&](Var q) {
        q = g.reshape(q, {bsz, t, heads, d});
        q = g.permute(q, {0, 2, 1, 3});
        return g.reshape(q, {bsz * heads, t, d});
    };
    Var q = split(wq.forward(g, x));
    Var k = split(wk.forward(g, x));
    Var vv = split(wv.forward(g, x));
    Var scores = g.scale(g.bmm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(d)));
    if (mask_groups != nullptr) {
        const long groups = mask_groups->dim(0);
        Var sc = g.reshape(scores, {bsz / groups, groups, heads, t, t});
        Var mk = g.constant(mask_groups->reshaped({1, groups, 1, t, t}));
        scores = g.reshape(g.add(sc, mk), {bsz * heads, t, t});
    }
    Var att = g.softmax_last(scores);
    if (attn_out != nullptr) *attn_out = g.val(att).clone();
    Var o = g.bmm(att, vv);
    o = g.reshape(o, {bsz, heads, t, d});
    o = g.permute(o, {0, 2, 1, 3});
    o = g.reshape(o, {bsz, t, c});
    return wo.forward(g, o);
}

TransformerBlock::TransformerBlock(long dim, long heads, long mlp_hidden)
    : ln1(dim), ln2(dim), att(dim, heads), mlp(dim, mlp_hidden) {
    reg_child("ln1", ln1);
    reg_child("attn", att);
    reg_child("ln2", ln2);
    reg_child("mlp", mlp);
}

Var TransformerBlock::forward(Graph& g, Var x, Tensor* attn_out) {
    x = g.add(x, att.forward(g, ln1.forward(g, x), nullptr, attn_out));
    return g.add(x, mlp.forward(g, ln2.forward(g, x)));
}

Adam::Adam(std::vector<Parameter*> params, AdamConfig cfg) : cfg_(cfg) {
    for (Parameter* p : params) {
        if (!p->trainable || p->buffer) continue;
        params_.push_back(p);
        m_.push_back(Tensor::zeros(p->value.shape()));
        v_.push_back(Tensor::zeros(p->value.shape()));
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Parameter& p = *params_[i];
        double* th = p.value.data();
        const double* g = p.grad.data();
        double* m = m_[i].data();
        double* v = v_[i].data();
        for (long k = 0; k < p.value.numel(); ++k) {
            m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
            v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            th[k] = snap_f32(th[k] - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
        }
    }
}

void Adam::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

}  // namespace mmcd::nn
