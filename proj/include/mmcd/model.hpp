#pragma once

#include <array>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mmcd/graph.hpp"
#include "mmcd/nn.hpp"

namespace mmcd::model {

// Architecture description. Everything that changes the parameter tree or the
// forward graph lives here; hash() keys checkpoints to it.
struct ModelConfig {
    long tile_size = 64;          // must be divisible by 32
    long base_channels = 16;      // stage widths are base * (1,2,4,8)
    std::array<long, 4> depths = {1, 1, 2, 1};
    long window = 4;              // SAR branch attention window
    long adapter_reduction = 4;
    long mlp_ratio = 4;
    long decoder_channels = 64;
    long num_classes = 7;
    int connectivity = 8;         // grid graph: 4 or 8 neighbors
    bool use_fim = true;
    bool use_gsfm = true;
    bool use_pgffm = true;
    bool concat_fusion = false;   // gated sum (default) vs concat of weighted paths
    std::uint64_t prior_seed = 416;  // fixed seed for the frozen prior trunk

    // baseline / v1 / v2 / full flag presets.
    static ModelConfig variant(const std::string& name);
    std::string variant_name() const;

    long width(int stage) const { return base_channels << stage; }  // stage 0..3
    long heads(int stage) const { return std::max<long>(1, width(stage) / 8); }
    long stage_size(int stage) const { return tile_size >> (stage + 2); }

    void validate() const;
    std::string canonical_json() const;
    std::string hash() const;  // sha256 of canonical_json()
    static ModelConfig parse_json(const std::string& text);
};

// (B,C,H,W) <-> (B,H*W,C) token views.
Var to_tokens(Graph& g, Var x);
Var to_map(Graph& g, Var tokens, long c, long h, long w);

// Transformer block with (optionally shifted) window attention over a
// spatial token grid. window >= grid collapses to one global window.
class WindowBlock : public nn::Module {
public:
    WindowBlock(long dim, long heads, long mlp_hidden, long window, bool shifted);
    Var forward(Graph& g, Var tokens, long h, long w);

    nn::LayerNorm ln1, ln2;
    nn::Attention att;
    nn::Mlp mlp;
    long window;
    bool shifted;
};

// One pyramid stage: strided patch-embedding conv, learned position table,
// then depth x (adapter?, attention block).
class EncoderStage : public nn::Module {
public:
    EncoderStage(long in_ch, long out_ch, int stride, long grid, long depth, long heads,
                 long mlp_ratio, long window /*0 = global attention*/, long adapter_reduction);
    Var forward(Graph& g, Var x);

    nn::Conv2d embed;
    Parameter pos;  // (out_ch, grid, grid)
    std::vector<std::unique_ptr<nn::Adapter>> adapters;       // empty unless adapter_reduction > 0
    std::vector<std::unique_ptr<nn::TransformerBlock>> blocks;  // global attention
    std::vector<std::unique_ptr<WindowBlock>> wblocks;          // windowed attention
    long grid;
};

// Four-stage feature pyramid at strides 4/8/16/32.
class PyramidEncoder : public nn::Module {
public:
    PyramidEncoder(long in_ch, const ModelConfig& cfg, bool windowed, bool with_adapters);
    std::array<Var, 4> forward(Graph& g, Var image);

    std::vector<std::unique_ptr<EncoderStage>> stages;
};

// Frozen prior trunk shared by both modalities; SAR enters through a fixed
// 4->3 polarization average.
class PriorGenerator : public nn::Module {
public:
    explicit PriorGenerator(const ModelConfig& cfg);
    std::array<Var, 4> forward(Graph& g, Var image);  // 3- or 4-channel input

    PyramidEncoder trunk;
    Parameter pol_proj;  // (4,3), frozen constant
};

// Cross-modal recalibration: one spatial gate from the concatenated aligned
// features, applied to both modalities.
class FimBlock : public nn::Module {
public:
    explicit FimBlock(long ch);
    struct Out {
        Var c_opt, c_sar, attn;  // attn: (B,1,H,W) in (0,1)
    };
    Out forward(Graph& g, Var s_opt, Var s_sar, bool training);

    nn::Conv2d align_opt, align_sar;  // 1x1, unshared
    nn::Conv2d mix;                   // 3x3, 2C -> 1
    nn::BatchNorm2d bn;
};

// Two-layer graph convolution over the pixel grid with a residual
// subtraction between the layers, then a 3x3 refinement conv. `pool` halves
// the grid before graph processing and upsamples after (finest scale only).
class GsfmBlock : public nn::Module {
public:
    GsfmBlock(long ch, bool pool);
    // (B,N,C) -> (B,N,C): relu(A((A(XW1)+b1 - X)W2)+b2)
    Var graph_stage(Graph& g, Var tokens, const std::shared_ptr<SparseMatrix>& adj);
    Var forward(Graph& g, Var x, const std::shared_ptr<SparseMatrix>& adj);

    Parameter w1, b1, w2, b2;
    nn::Conv2d refine;
    bool pool;
};

// Prior-gated dual-path fusion. The gate comes from the projected prior
// distance; the specific path shares one projection across modalities so the
// difference is antisymmetric.
class PgffmBlock : public nn::Module {
public:
    PgffmBlock(long ch, bool concat_mode);
    struct Out {
        Var fused;
        Var gate;      // (B,1,H,W)
        Var specific;  // pre-gate F_s
        Var common;    // pre-gate F_c
        Var combined;  // pre-refinement gated combination
    };
    Out forward(Graph& g, Var s_opt, Var s_sar, Var c_opt, Var c_sar, Var p_opt, Var p_sar);

    nn::Conv2d gate1, gate2;  // 3x3 1->k, k->1 (zero-init)
    nn::Linear spec_proj;     // shared channel projection
    nn::Conv2d fuse;          // 3x3 refinement
    bool concat_mode;
};

// Top-down pathway over the 4-scale pyramid, then 4x upsample + classifier.
class Decoder : public nn::Module {
public:
    Decoder(const ModelConfig& cfg);
    Var forward(Graph& g, const std::array<Var, 4>& feats);

    nn::Conv2d lat1, lat2, lat3, lat4;
    nn::Conv2d mix1, mix2, mix3;
    nn::Conv2d classifier;
};

// Optional tensors captured during a forward pass.
struct ForwardTrace {
    std::vector<Tensor> gates;  // fusion gate per scale, stride 4 first
};

class Model : public nn::Module {
public:
    explicit Model(ModelConfig cfg);

    // Deterministic parameter fill + freeze policy. The prior trunk is seeded
    // independently of `seed` so its weights are a fixed constant of the
    // architecture.
    void initialize(std::uint64_t seed);

    // optical: (B,3,H,W), sar: (B,4,H,W) -> logits (B,num_classes,H,W)
    Var forward(Graph& g, const Tensor& optical, const Tensor& sar, bool training,
                ForwardTrace* trace = nullptr);

    std::vector<std::string> stage_names() const;
    long parameter_count(bool trainable_only = false);
    // Swap in externally trained prior-trunk weights (stays frozen).
    void load_prior_weights(const std::string& path);
    void save_prior_weights(const std::string& path);

    const ModelConfig cfg;
    PyramidEncoder enc_opt;
    PyramidEncoder enc_sar;
    std::unique_ptr<PriorGenerator> prior;        // only when use_pgffm
    std::vector<std::unique_ptr<FimBlock>> fim;   // per scale when use_fim
    std::vector<std::unique_ptr<GsfmBlock>> gsfm_opt, gsfm_sar;
    std::vector<std::unique_ptr<PgffmBlock>> pgffm;
    Decoder dec;

private:
    std::shared_ptr<SparseMatrix> adjacency(long h, long w);
    std::map<std::pair<long, long>, std::shared_ptr<SparseMatrix>> adj_cache_;
};

}  // namespace mmcd::model
