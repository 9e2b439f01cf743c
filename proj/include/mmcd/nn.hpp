#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mmcd/graph.hpp"
#include "mmcd/param.hpp"

namespace mmcd::nn {

enum class Init { Zeros, Ones, Normal, KaimingConv, XavierLinear };

// Base of the model tree. Leaves are registered with local names; init_tree()
// assigns hierarchical names and fills values deterministically, seeding each
// leaf from (master seed, full name) so values do not depend on construction
// or visitation order.
class Module {
public:
    virtual ~Module() = default;
    Module() = default;
    Module(const Module&) = delete;
    Module& operator=(const Module&) = delete;

    void visit(const std::string& prefix, const ParamVisitor& fn);
    std::vector<Parameter*> leaves();
    // Marks every non-buffer leaf of the subtree.
    void set_trainable(bool trainable);

protected:
    struct Entry {
        std::string name;
        Parameter* p;
        Init kind;
        double arg;  // stddev for Normal, unused otherwise
    };
    void reg(const std::string& name, Parameter& p, Init kind, double arg = 0.0);
    void reg_buffer(const std::string& name, Parameter& p, double fill);
    void reg_child(const std::string& name, Module& m);

private:
    friend void init_tree(Module&, const std::string&, std::uint64_t);
    std::vector<Entry> entries_;
    std::vector<std::pair<std::string, Module*>> children_;
};

void init_tree(Module& root, const std::string& root_name, std::uint64_t seed);

class Linear : public Module {
public:
    Linear(long in, long out, const std::string& name = "linear");
    Var forward(Graph& g, Var x);
    Parameter w, b;
};

class Conv2d : public Module {
public:
    Conv2d(long in, long out, int kernel, int stride, int pad, Init w_init = Init::KaimingConv);
    Var forward(Graph& g, Var x);
    Parameter w, b;
    int stride, pad;
};

class LayerNorm : public Module {
public:
    explicit LayerNorm(long dim);
    Var forward(Graph& g, Var x);
    Parameter gamma, beta;
};

class BatchNorm2d : public Module {
public:
    explicit BatchNorm2d(long dim);
    Var forward(Graph& g, Var x, bool training);
    Parameter gamma, beta, run_mean, run_var;
};

// Bottleneck residual adapter on token maps: x + up(gelu(down(x))).
// The up projection is zero-initialized, so a fresh adapter is an identity.
class Adapter : public Module {
public:
    Adapter(long dim, long reduction);
    Var forward(Graph& g, Var x);
    Parameter down_w, down_b, up_w, up_b;
};

class Mlp : public Module {
public:
    Mlp(long dim, long hidden);
    Var forward(Graph& g, Var x);
    Linear fc1, fc2;
};

// Multi-head self attention over (B, T, C) tokens. `mask_groups` carries an
// additive mask shaped (groups, T, T); scores are viewed as
// (B/groups, groups, heads, T, T) for the broadcast.
class Attention : public Module {
public:
    Attention(long dim, long heads);
    Var forward(Graph& g, Var x, const Tensor* mask_groups = nullptr, Tensor* attn_out = nullptr);
    Linear wq, wk, wv, wo;
    long heads;
};

// Pre-norm transformer block with full (global) attention.
class TransformerBlock : public Module {
public:
    TransformerBlock(long dim, long heads, long mlp_hidden);
    Var forward(Graph& g, Var x, Tensor* attn_out = nullptr);
    LayerNorm ln1, ln2;
    Attention att;
    Mlp mlp;
};

struct AdamConfig {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adam over the trainable leaves; frozen leaves and buffers are ignored.
// Updated values are snapped to float32-representable doubles so that
// checkpoints round-trip bitwise.
class Adam {
public:
    Adam(std::vector<Parameter*> params, AdamConfig cfg);
    void step();
    void zero_grad();
    const AdamConfig& config() const { return cfg_; }

private:
    std::vector<Parameter*> params_;
    std::vector<Tensor> m_, v_;
    AdamConfig cfg_;
    long t_ = 0;
};

}  // namespace mmcd::nn
