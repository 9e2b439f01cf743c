#include "mmcd/model.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "mmcd/checkpoint.hpp"
#include "mmcd/errors.hpp"
#include "mmcd/sha256.hpp"

using nlohmann::json;

namespace mmcd::model {

ModelConfig ModelConfig::variant(const std::string& name) {
    ModelConfig c;
    if (name == "baseline") {
        c.use_fim = c.use_gsfm = c.use_pgffm = false;
    } else if (name == "v1") {
        c.use_fim = true;
        c.use_gsfm = c.use_pgffm = false;
    } else if (name == "v2") {
        c.use_fim = c.use_gsfm = true;
        c.use_pgffm = false;
    } else if (name == "full") {
        c.use_fim = c.use_gsfm = c.use_pgffm = true;
    } else {
        throw InvalidArgument("unknown variant '" + name + "' (valid: baseline, v1, v2, full)");
    }
    return c;
}

std::string ModelConfig::variant_name() const {
    if (!use_fim && !use_gsfm && !use_pgffm) return "baseline";
    if (use_fim && !use_gsfm && !use_pgffm) return "v1";
    if (use_fim && use_gsfm && !use_pgffm) return "v2";
    if (use_fim && use_gsfm && use_pgffm) return "full";
    return "custom";
}

void ModelConfig::validate() const {
    if (tile_size < 32 || tile_size % 32 != 0) throw InvalidArgument("tile size must be a positive multiple of 32");
    if (base_channels < 1) throw InvalidArgument("base channel width must be >= 1");
    for (const long d : depths)
        if (d < 1) throw InvalidArgument("every stage needs at least one block");
    if (window < 1) throw InvalidArgument("window size must be >= 1");
    if (adapter_reduction < 1 || mlp_ratio < 1) throw InvalidArgument("reduction ratios must be >= 1");
    if (decoder_channels < 1) throw InvalidArgument("decoder width must be >= 1");
    if (num_classes < 2) throw InvalidArgument("need at least two classes");
    if (connectivity != 4 && connectivity != 8) throw InvalidArgument("grid connectivity must be 4 or 8");
    if (use_gsfm && !use_fim) throw InvalidArgument("graph refinement consumes the interaction output; enable it too");
    if (use_pgffm && !use_fim) throw InvalidArgument("gated fusion needs the common-feature path; enable interaction too");
    for (int i = 0; i < 4; ++i) {
        if (width(i) % heads(i) != 0) throw InvalidArgument("head count must divide the stage width");
        if (stage_size(i) < 1) throw InvalidArgument("tile size too small for four scales");
    }
}

std::string ModelConfig::canonical_json() const {
    json j;
    j["tile_size"] = tile_size;
    j["base_channels"] = base_channels;
    j["depths"] = depths;
    j["window"] = window;
    j["adapter_reduction"] = adapter_reduction;
    j["mlp_ratio"] = mlp_ratio;
    j["decoder_channels"] = decoder_channels;
    j["num_classes"] = num_classes;
    j["connectivity"] = connectivity;
    j["use_fim"] = use_fim;
    j["use_gsfm"] = use_gsfm;
    j["use_pgffm"] = use_pgffm;
    j["concat_fusion"] = concat_fusion;
    j["prior_seed"] = prior_seed;
    return j.dump();
}

std::string ModelConfig::hash() const { return Sha256::hash_hex(canonical_json()); }

ModelConfig ModelConfig::parse_json(const std::string& text) {
    try {
        const json j = json::parse(text);
        ModelConfig c;
        c.tile_size = j.value("tile_size", c.tile_size);
        c.base_channels = j.value("base_channels", c.base_channels);
        if (j.contains("depths")) {
            const auto d = j.at("depths").get<std::vector<long>>();
            if (d.size() != 4) throw InvalidArgument("depths must list four stages");
            std::copy(d.begin(), d.end(), c.depths.begin());
        }
        c.window = j.value("window", c.window);
        c.adapter_reduction = j.value("adapter_reduction", c.adapter_reduction);
        c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
        c.decoder_channels = j.value("decoder_channels", c.decoder_channels);
        c.num_classes = j.value("num_classes", c.num_classes);
        c.connectivity = j.value("connectivity", c.connectivity);
        c.use_fim = j.value("use_fim", c.use_fim);
        c.use_gsfm = j.value("use_gsfm", c.use_gsfm);
        c.use_pgffm = j.value("use_pgffm", c.use_pgffm);
        c.concat_fusion = j.value("concat_fusion", c.concat_fusion);
        c.prior_seed = j.value("prior_seed", c.prior_seed);
        c.validate();
        return c;
    } catch (const json::exception& ex) {
        throw InvalidArgument(std::string("malformed model config: ") + ex.what());
    }
}

Var to_tokens(Graph& g, Var x) {
    const Shape s = g.val(x).shape();  // copied: adding nodes moves graph storage
    if (s.size() != 4) throw ShapeError("token view expects a (B,C,H,W) map");
    Var flat = g.reshape(x, {s[0], s[1], s[2] * s[3]});
    return g.permute(flat, {0, 2, 1});
}

Var to_map(Graph& g, Var tokens, long c, long h, long w) {
    const Shape s = g.val(tokens).shape();
    if (s.size() != 3 || s[1] != h * w || s[2] != c) throw ShapeError("token count does not match the map size");
    Var t = g.permute(tokens, {0, 2, 1});
    return g.reshape(t, {s[0], c, h, w});
}

// ---------------------------------------------------------------------------
// Window attention

WindowBlock::WindowBlock(long dim, long heads, long mlp_hidden, long window_, bool shifted_)
    : ln1(dim), ln2(dim), att(dim, heads), mlp(dim, mlp_hidden), window(window_), shifted(shifted_) {
    reg_child("ln1", ln1);
    reg_child("attn", att);
    reg_child("ln2", ln2);
    reg_child("mlp", mlp);
}

Var WindowBlock::forward(Graph& g, Var x, long h, long w) {
    const Shape& s = g.val(x).shape();
    const long b = s[0], t = s[1], c = s[2];
    if (t != h * w) throw ShapeError("token count does not match the window grid");
    const long win = std::min(window, std::min(h, w));
    if (h % win != 0 || w % win != 0) throw ShapeError("window must tile the token grid");
    const long sh = (shifted && (win < h || win < w)) ? win / 2 : 0;
    const long nwy = h / win, nwx = w / win, nw = nwy * nwx, wt = win * win;

    Var y = ln1.forward(g, x);
    auto part_idx = std::make_shared<std::vector<long>>(static_cast<std::size_t>(b * t * c));
    auto inv_idx = std::make_shared<std::vector<long>>(static_cast<std::size_t>(b * t * c));
    for (long bb = 0; bb < b; ++bb)
        for (long py = 0; py < h; ++py)
            for (long px = 0; px < w; ++px) {
                // partition-frame position (py,px) reads the cyclically shifted source
                const long ry = (py + sh) % h, rx = (px + sh) % w;
                const long k = (py / win) * nwx + px / win;
                const long tok = (py % win) * win + px % win;
                const long dst = ((bb * nw + k) * wt + tok) * c;
                const long src = ((bb * h + ry) * w + rx) * c;
                for (long ch = 0; ch < c; ++ch) {
                    (*part_idx)[static_cast<std::size_t>(dst + ch)] = src + ch;
                    (*inv_idx)[static_cast<std::size_t>(src + ch)] = dst + ch;
                }
            }
    Var part = g.index_map(y, part_idx, {b * nw, wt, c});

    Tensor mask;
    if (sh > 0) {
        // Tokens wrapped across the shift boundary must not attend to each
        // other; group them by pre-shift region id.
        auto region = [&](long v, long size) { return v < size - win ? 0L : (v < size - sh ? 1L : 2L); };
        mask = Tensor({nw, wt, wt});
        std::vector<long> ids(static_cast<std::size_t>(wt));
        for (long wy = 0; wy < nwy; ++wy)
            for (long wx = 0; wx < nwx; ++wx) {
                for (long ty = 0; ty < win; ++ty)
                    for (long tx = 0; tx < win; ++tx)
                        ids[static_cast<std::size_t>(ty * win + tx)] =
                            region(wy * win + ty, h) * 3 + region(wx * win + tx, w);
                const long k = wy * nwx + wx;
                for (long i = 0; i < wt; ++i)
                    for (long j = 0; j < wt; ++j)
                        if (ids[static_cast<std::size_t>(i)] != ids[static_cast<std::size_t>(j)])
                            mask.data()[(k * wt + i) * wt + j] = -1e9;
            }
    }
    Var o = att.forward(g, part, sh > 0 ? &mask : nullptr);
    Var merged = g.index_map(o, inv_idx, {b, t, c});
    x = g.add(x, merged);
    return g.add(x, mlp.forward(g, ln2.forward(g, x)));
}

// ---------------------------------------------------------------------------
// Encoder

EncoderStage::EncoderStage(long in_ch, long out_ch, int stride, long grid_, long depth, long heads,
                           long mlp_ratio, long window, long adapter_reduction)
    : embed(in_ch, out_ch, stride, stride, 0), grid(grid_) {
    reg_child("embed", embed);
    pos.value = Tensor({out_ch, grid, grid});
    reg("pos", pos, nn::Init::Normal, 0.02);
    for (long d = 0; d < depth; ++d) {
        const std::string suffix = std::to_string(d);
        if (adapter_reduction > 0) {
            adapters.push_back(std::make_unique<nn::Adapter>(out_ch, adapter_reduction));
            reg_child("ad" + suffix, *adapters.back());
        }
        if (window > 0) {
            wblocks.push_back(std::make_unique<WindowBlock>(out_ch, heads, out_ch * mlp_ratio, window, d % 2 == 1));
            reg_child("blk" + suffix, *wblocks.back());
        } else {
            blocks.push_back(std::make_unique<nn::TransformerBlock>(out_ch, heads, out_ch * mlp_ratio));
            reg_child("blk" + suffix, *blocks.back());
        }
    }
}

Var EncoderStage::forward(Graph& g, Var x) {
    x = embed.forward(g, x);
    const Shape s = g.val(x).shape();
    if (s[2] != grid || s[3] != grid)
        throw ShapeError("input spatial size does not match the configured tile size");
    x = g.add(x, g.param(pos));
    Var tok = to_tokens(g, x);
    const long depth = static_cast<long>(std::max(blocks.size(), wblocks.size()));
    for (long d = 0; d < depth; ++d) {
        if (!adapters.empty()) tok = adapters[static_cast<std::size_t>(d)]->forward(g, tok);
        if (!wblocks.empty())
            tok = wblocks[static_cast<std::size_t>(d)]->forward(g, tok, grid, grid);
        else
            tok = blocks[static_cast<std::size_t>(d)]->forward(g, tok);
    }
    return to_map(g, tok, s[1], grid, grid);
}

PyramidEncoder::PyramidEncoder(long in_ch, const ModelConfig& cfg, bool windowed, bool with_adapters) {
    for (int i = 0; i < 4; ++i) {
        const long in = i == 0 ? in_ch : cfg.width(i - 1);
        stages.push_back(std::make_unique<EncoderStage>(
            in, cfg.width(i), i == 0 ? 4 : 2, cfg.stage_size(i), cfg.depths[static_cast<std::size_t>(i)],
            cfg.heads(i), cfg.mlp_ratio, windowed ? cfg.window : 0,
            with_adapters ? cfg.adapter_reduction : 0));
        reg_child("s" + std::to_string(i + 1), *stages.back());
    }
}

std::array<Var, 4> PyramidEncoder::forward(Graph& g, Var image) {
    std::array<Var, 4> out;
    Var x = image;
    for (int i = 0; i < 4; ++i) {
        x = stages[static_cast<std::size_t>(i)]->forward(g, x);
        out[static_cast<std::size_t>(i)] = x;
    }
    return out;
}

PriorGenerator::PriorGenerator(const ModelConfig& cfg) : trunk(3, cfg, false, false) {
    reg_child("trunk", trunk);
    pol_proj.value = Tensor({4, 3});
    reg("pol_proj", pol_proj, nn::Init::Zeros);
}

std::array<Var, 4> PriorGenerator::forward(Graph& g, Var image) {
    const Shape s = g.val(image).shape();
    if (s.size() != 4) throw ShapeError("prior trunk expects a (B,C,H,W) image");
    Var x = image;
    if (s[1] == 4) {
        Var tok = to_tokens(g, x);
        tok = g.linear(tok, g.param(pol_proj));
        x = to_map(g, tok, 3, s[2], s[3]);
    } else if (s[1] != 3) {
        throw ShapeError("prior trunk accepts 3- or 4-channel imagery");
    }
    return trunk.forward(g, x);
}

// ---------------------------------------------------------------------------
// Interaction, graph refinement, gated fusion

FimBlock::FimBlock(long ch)
    : align_opt(ch, ch, 1, 1, 0), align_sar(ch, ch, 1, 1, 0), mix(2 * ch, 1, 3, 1, 1), bn(1) {
    reg_child("align_opt", align_opt);
    reg_child("align_sar", align_sar);
    reg_child("mix", mix);
    reg_child("bn", bn);
}

FimBlock::Out FimBlock::forward(Graph& g, Var s_opt, Var s_sar, bool training) {
    if (g.val(s_opt).shape() != g.val(s_sar).shape())
        throw ShapeError("modal features must share a shape before interaction");
    Var so = align_opt.forward(g, s_opt);
    Var ss = align_sar.forward(g, s_sar);
    Var a = g.sigmoid(bn.forward(g, mix.forward(g, g.concat({so, ss}, 1)), training));
    return {g.mul(so, a), g.mul(ss, a), a};
}

GsfmBlock::GsfmBlock(long ch, bool pool_) : refine(ch, ch, 3, 1, 1), pool(pool_) {
    w1.value = Tensor({ch, ch});
    b1.value = Tensor({ch});
    w2.value = Tensor({ch, ch});
    b2.value = Tensor({ch});
    reg("w1", w1, nn::Init::XavierLinear);
    reg("b1", b1, nn::Init::Zeros);
    reg("w2", w2, nn::Init::XavierLinear);
    reg("b2", b2, nn::Init::Zeros);
    reg_child("refine", refine);
}

Var GsfmBlock::graph_stage(Graph& g, Var tokens, const std::shared_ptr<SparseMatrix>& adj) {
    Var h1 = g.add(g.spmm(adj, g.linear(tokens, g.param(w1))), g.param(b1));
    Var r = g.sub(h1, tokens);
    return g.relu(g.add(g.spmm(adj, g.linear(r, g.param(w2))), g.param(b2)));
}

Var GsfmBlock::forward(Graph& g, Var x, const std::shared_ptr<SparseMatrix>& adj) {
    Var m = pool ? g.avg_pool2x2(x) : x;
    const Shape s = g.val(m).shape();
    Var out = graph_stage(g, to_tokens(g, m), adj);
    Var map = to_map(g, out, s[1], s[2], s[3]);
    if (pool) map = g.upsample_bilinear(map, 2);
    return refine.forward(g, map);
}

PgffmBlock::PgffmBlock(long ch, bool concat_mode_)
    : gate1(1, 8, 3, 1, 1),
      gate2(8, 1, 3, 1, 1, nn::Init::Zeros),
      spec_proj(ch, ch),
      fuse(concat_mode_ ? 2 * ch : ch, ch, 3, 1, 1),
      concat_mode(concat_mode_) {
    reg_child("gate1", gate1);
    reg_child("gate2", gate2);
    reg_child("spec_proj", spec_proj);
    reg_child("fuse", fuse);
}

PgffmBlock::Out PgffmBlock::forward(Graph& g, Var s_opt, Var s_sar, Var c_opt, Var c_sar,
                                    Var p_opt, Var p_sar) {
    Var d = g.channel_l2_distance(p_opt, p_sar);
    Var m = g.sigmoid(gate2.forward(g, g.relu(gate1.forward(g, d))));

    const Shape s = g.val(s_opt).shape();
    auto project = [&](Var x) {
        return to_map(g, spec_proj.forward(g, to_tokens(g, x)), s[1], s[2], s[3]);
    };
    Var f_s = g.sub(project(s_opt), project(s_sar));
    Var f_c = g.sub(c_opt, c_sar);

    Var inv = g.add_scalar(g.neg(m), 1.0);
    Var spec_w = g.mul(f_s, m);
    Var comm_w = g.mul(f_c, inv);
    Var combined = g.add(spec_w, comm_w);
    Var fused = concat_mode ? fuse.forward(g, g.concat({spec_w, comm_w}, 1)) : fuse.forward(g, combined);
    return {fused, m, f_s, f_c, combined};
}

// ---------------------------------------------------------------------------
// Decoder

Decoder::Decoder(const ModelConfig& cfg)
    : lat1(cfg.width(0), cfg.decoder_channels, 1, 1, 0),
      lat2(cfg.width(1), cfg.decoder_channels, 1, 1, 0),
      lat3(cfg.width(2), cfg.decoder_channels, 1, 1, 0),
      lat4(cfg.width(3), cfg.decoder_channels, 1, 1, 0),
      mix1(cfg.decoder_channels, cfg.decoder_channels, 3, 1, 1),
      mix2(cfg.decoder_channels, cfg.decoder_channels, 3, 1, 1),
      mix3(cfg.decoder_channels, cfg.decoder_channels, 3, 1, 1),
      classifier(cfg.decoder_channels, cfg.num_classes, 1, 1, 0) {
    reg_child("lat1", lat1);
    reg_child("lat2", lat2);
    reg_child("lat3", lat3);
    reg_child("lat4", lat4);
    reg_child("mix1", mix1);
    reg_child("mix2", mix2);
    reg_child("mix3", mix3);
    reg_child("classifier", classifier);
}

Var Decoder::forward(Graph& g, const std::array<Var, 4>& f) {
    Var p = lat4.forward(g, f[3]);
    p = mix3.forward(g, g.add(g.upsample_bilinear(p, 2), lat3.forward(g, f[2])));
    p = mix2.forward(g, g.add(g.upsample_bilinear(p, 2), lat2.forward(g, f[1])));
    p = mix1.forward(g, g.add(g.upsample_bilinear(p, 2), lat1.forward(g, f[0])));
    return classifier.forward(g, g.upsample_bilinear(p, 4));
}

// ---------------------------------------------------------------------------
// Full model

Model::Model(ModelConfig cfg_)
    : cfg((cfg_.validate(), std::move(cfg_))),
      enc_opt(3, cfg, false, true),
      enc_sar(4, cfg, true, false),
      dec(cfg) {
    reg_child("enc_opt", enc_opt);
    reg_child("enc_sar", enc_sar);
    if (cfg.use_fim)
        for (int i = 0; i < 4; ++i) {
            fim.push_back(std::make_unique<FimBlock>(cfg.width(i)));
            reg_child("fim" + std::to_string(i + 1), *fim.back());
        }
    if (cfg.use_gsfm)
        for (int i = 0; i < 4; ++i) {
            gsfm_opt.push_back(std::make_unique<GsfmBlock>(cfg.width(i), i == 0));
            gsfm_sar.push_back(std::make_unique<GsfmBlock>(cfg.width(i), i == 0));
            reg_child("gsfm_opt" + std::to_string(i + 1), *gsfm_opt.back());
            reg_child("gsfm_sar" + std::to_string(i + 1), *gsfm_sar.back());
        }
    if (cfg.use_pgffm) {
        prior = std::make_unique<PriorGenerator>(cfg);
        reg_child("spg", *prior);
        for (int i = 0; i < 4; ++i) {
            pgffm.push_back(std::make_unique<PgffmBlock>(cfg.width(i), cfg.concat_fusion));
            reg_child("pgffm" + std::to_string(i + 1), *pgffm.back());
        }
    }
    reg_child("dec", dec);
}

void Model::initialize(std::uint64_t seed) {
    nn::init_tree(*this, "model", seed);
    // Frozen trunk: weights are a function of the architecture, not the run.
    if (prior) {
        nn::init_tree(*prior, "model.spg", cfg.prior_seed);
        prior->pol_proj.init(
            Tensor::from({4, 3}, {1, 0, 0, 0, 0.5, 0, 0, 0.5, 0, 0, 0, 1}), false, false);
        prior->set_trainable(false);
    }
    enc_opt.set_trainable(false);
    for (auto& stage : enc_opt.stages)
        for (auto& ad : stage->adapters) ad->set_trainable(true);
}

std::shared_ptr<SparseMatrix> Model::adjacency(long h, long w) {
    const auto key = std::make_pair(h, w);
    auto it = adj_cache_.find(key);
    if (it != adj_cache_.end()) return it->second;
    auto adj = grid_adjacency(h, w, cfg.connectivity);
    adj_cache_.emplace(key, adj);
    return adj;
}

Var Model::forward(Graph& g, const Tensor& optical, const Tensor& sar, bool training,
                   ForwardTrace* trace) {
    if (optical.ndim() != 4 || optical.dim(1) != 3) throw ShapeError("optical input must be (B,3,H,W)");
    if (sar.ndim() != 4 || sar.dim(1) != 4) throw ShapeError("sar input must be (B,4,H,W)");
    if (optical.dim(0) != sar.dim(0) || optical.dim(2) != sar.dim(2) || optical.dim(3) != sar.dim(3))
        throw ShapeError("modal inputs disagree in batch or spatial size");

    Var opt_in = g.constant(optical);
    Var sar_in = g.constant(sar);
    const std::array<Var, 4> s_opt = enc_opt.forward(g, opt_in);
    const std::array<Var, 4> s_sar = enc_sar.forward(g, sar_in);
    std::array<Var, 4> p_opt, p_sar;
    if (prior) {
        p_opt = prior->forward(g, opt_in);
        p_sar = prior->forward(g, sar_in);
    }

    std::array<Var, 4> feats;
    for (int i = 0; i < 4; ++i) {
        const auto k = static_cast<std::size_t>(i);
        Var c_opt = s_opt[k], c_sar = s_sar[k];
        if (cfg.use_fim) {
            const FimBlock::Out fo = fim[k]->forward(g, s_opt[k], s_sar[k], training);
            c_opt = fo.c_opt;
            c_sar = fo.c_sar;
        }
        if (cfg.use_gsfm) {
            const long n = i == 0 ? cfg.stage_size(i) / 2 : cfg.stage_size(i);
            const auto adj = adjacency(n, n);
            c_opt = gsfm_opt[k]->forward(g, c_opt, adj);
            c_sar = gsfm_sar[k]->forward(g, c_sar, adj);
        }
        if (cfg.use_pgffm) {
            const PgffmBlock::Out po =
                pgffm[k]->forward(g, s_opt[k], s_sar[k], c_opt, c_sar, p_opt[k], p_sar[k]);
            feats[k] = po.fused;
            if (trace != nullptr) trace->gates.push_back(g.val(po.gate).clone());
        } else {
            feats[k] = g.sub(c_opt, c_sar);
        }
    }
    return dec.forward(g, feats);
}

std::vector<std::string> Model::stage_names() const {
    std::vector<std::string> s = {"encode_optical", "encode_sar"};
    if (cfg.use_pgffm) s.push_back("prior_pyramid");
    if (cfg.use_fim) s.push_back("fim");
    if (cfg.use_gsfm) s.push_back("gsfm");
    if (cfg.use_pgffm) s.push_back("pgffm");
    s.push_back("decode");
    return s;
}

long Model::parameter_count(bool trainable_only) {
    long n = 0;
    for (const Parameter* p : leaves()) {
        if (p->buffer) continue;
        if (trainable_only && !p->trainable) continue;
        n += p->value.numel();
    }
    return n;
}

namespace {

std::string prior_trunk_hash(const ModelConfig& cfg) {
    json j;
    j["kind"] = "prior_trunk";
    j["tile_size"] = cfg.tile_size;
    j["base_channels"] = cfg.base_channels;
    j["depths"] = cfg.depths;
    j["mlp_ratio"] = cfg.mlp_ratio;
    return Sha256::hash_hex(j.dump());
}

}  // namespace

void Model::load_prior_weights(const std::string& path) {
    if (!prior) throw InvalidArgument("this variant carries no prior trunk");
    load_checkpoint(path, prior_trunk_hash(cfg), prior->leaves());
    prior->set_trainable(false);
}

void Model::save_prior_weights(const std::string& path) {
    if (!prior) throw InvalidArgument("this variant carries no prior trunk");
    save_checkpoint(path, prior_trunk_hash(cfg), prior->leaves());
}

}  // namespace mmcd::model
