// Command-line front end: dataset synthesis, training, evaluation,
// prediction and prior-gate inspection. Config precedence, lowest to
// highest: built-in defaults, variant preset, --config file section,
// explicit flags. Exit codes: 0 ok, 2 bad arguments, 3 I/O failure,
// 4 training diverged, 5 incompatible checkpoint, 1 anything else.

#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mmcd/checkpoint.hpp"
#include "mmcd/errors.hpp"
#include "mmcd/metrics.hpp"
#include "mmcd/model.hpp"
#include "mmcd/png_io.hpp"
#include "mmcd/rng.hpp"
#include "mmcd/scene.hpp"
#include "mmcd/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mmcd;

namespace {

json read_config_file(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    try {
        json j;
        in >> j;
        if (!j.is_object()) throw InvalidArgument("config file must hold a JSON object: " + path);
        return j;
    } catch (const json::exception& e) {
        throw InvalidArgument("config file " + path + " is not valid JSON: " + e.what());
    }
}

json section(const json& cfg, const char* name) {
    auto it = cfg.find(name);
    if (it == cfg.end()) return json::object();
    if (!it->is_object())
        throw InvalidArgument(std::string("config section '") + name + "' must be an object");
    return *it;
}

// Each apply_* merges only the keys present in the section onto the base.
void apply_scene(scene::SceneConfig& c, const json& j) {
    c.size = j.value("size", c.size);
    c.buildings_min = j.value("buildings_min", c.buildings_min);
    c.buildings_max = j.value("buildings_max", c.buildings_max);
    c.roads_min = j.value("roads_min", c.roads_min);
    c.roads_max = j.value("roads_max", c.roads_max);
    c.water_min = j.value("water_min", c.water_min);
    c.water_max = j.value("water_max", c.water_max);
    c.building_side_min = j.value("building_side_min", c.building_side_min);
    c.building_side_max = j.value("building_side_max", c.building_side_max);
    c.road_half_width_min = j.value("road_half_width_min", c.road_half_width_min);
    c.road_half_width_max = j.value("road_half_width_max", c.road_half_width_max);
    c.water_radius_min = j.value("water_radius_min", c.water_radius_min);
    c.water_radius_max = j.value("water_radius_max", c.water_radius_max);
    c.events_min = j.value("events_min", c.events_min);
    c.events_max = j.value("events_max", c.events_max);
    c.optical_noise = j.value("optical_noise", c.optical_noise);
    c.speckle_variance = j.value("speckle_variance", c.speckle_variance);
}

void apply_model(model::ModelConfig& c, const json& j) {
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
}

void apply_train(train::TrainConfig& c, const json& j) {
    c.iterations = j.value("iterations", c.iterations);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.lr = j.value("lr", c.lr);
    c.val_every = j.value("val_every", c.val_every);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.seed = j.value("seed", c.seed);
    c.class_weighting = j.value("class_weighting", c.class_weighting);
}

std::string read_text(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return text;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path);
    out << text;
    if (!out) throw IoError("short write to " + path);
}

// The load overwrites every leaf; initialize() first so the freeze layout
// matches what the checkpoint expects.
void restore(model::Model& m, std::uint64_t seed, const std::string& checkpoint_path) {
    m.initialize(derive_seed(seed, "model"));
    load_checkpoint(checkpoint_path, m.cfg.hash(), m.leaves());
}

template <typename F>
int guarded(F&& body) {
    try {
        body();
        return 0;
    } catch (const IncompatibleCheckpoint& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 5;
    } catch (const TrainingDiverged& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    } catch (const IoError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const InvalidArgument& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bitemporal optical/SAR change detection toolkit"};
    app.require_subcommand(1);
    app.footer("Config file: one JSON object with \"scene\", \"model\" and \"train\" sections\n"
               "plus an optional top-level \"variant\". Flags override file values.");

    int rc = 0;

    // synth ------------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate a paired dataset");
    std::string sy_out, sy_config;
    long sy_count = 16, sy_size = 64;
    std::uint64_t sy_seed = 0;
    std::vector<double> sy_splits = {0.7, 0.15, 0.15};
    synth->add_option("--out", sy_out, "dataset root directory")->required();
    synth->add_option("--config", sy_config, "JSON config file");
    auto* sy_count_o = synth->add_option("--count", sy_count, "number of samples");
    auto* sy_size_o = synth->add_option("--size", sy_size, "tile size in pixels");
    auto* sy_seed_o = synth->add_option("--seed", sy_seed, "master seed");
    synth->add_option("--splits", sy_splits, "train/test/val ratios")->expected(3);
    synth->callback([&] {
        rc = guarded([&] {
            const json file = read_config_file(sy_config);
            const json ssec = section(file, "scene");
            scene::SceneConfig cfg;
            apply_scene(cfg, ssec);
            if (sy_count_o->count() == 0) sy_count = ssec.value("count", sy_count);
            if (sy_size_o->count()) cfg.size = sy_size;
            if (sy_seed_o->count() == 0) sy_seed = file.value("seed", sy_seed);
            if (sy_count < 1) throw InvalidArgument("--count must be at least 1");
            scene::build_dataset(sy_out, sy_count, cfg, {sy_splits[0], sy_splits[1], sy_splits[2]},
                                 sy_seed);
            std::cout << (fs::path(sy_out) / "manifest.json").string() << '\n';
        });
    });

    // train ------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "fit a model on a synthesized dataset");
    std::string tr_data, tr_out, tr_config, tr_variant = "full", tr_weighting;
    long tr_iters = 0, tr_batch = 0, tr_val_every = 0, tr_ckpt_every = 0;
    double tr_lr = 0;
    std::uint64_t tr_seed = 0;
    tr->add_option("--data", tr_data, "dataset root")->required();
    tr->add_option("--out", tr_out, "output directory")->required();
    tr->add_option("--config", tr_config, "JSON config file");
    auto* tr_variant_o = tr->add_option("--variant", tr_variant, "baseline|v1|v2|full");
    auto* tr_iters_o = tr->add_option("--iters", tr_iters, "training iterations");
    auto* tr_batch_o = tr->add_option("--batch-size", tr_batch, "batch size");
    auto* tr_lr_o = tr->add_option("--lr", tr_lr, "learning rate");
    auto* tr_val_o = tr->add_option("--val-every", tr_val_every, "validation cadence, 0 = never");
    auto* tr_ckpt_o = tr->add_option("--checkpoint-every", tr_ckpt_every, "checkpoint cadence, 0 = final only");
    auto* tr_weight_o = tr->add_option("--weighting", tr_weighting, "class weighting: inverse|unit");
    auto* tr_seed_o = tr->add_option("--seed", tr_seed, "master seed");
    tr->callback([&] {
        rc = guarded([&] {
            const json file = read_config_file(tr_config);
            std::string variant = file.value("variant", std::string("full"));
            if (tr_variant_o->count()) variant = tr_variant;
            const json msec = section(file, "model");
            model::ModelConfig mcfg = model::ModelConfig::variant(variant);
            apply_model(mcfg, msec);

            const scene::Manifest man = scene::read_manifest(tr_data);
            if (!msec.contains("tile_size")) mcfg.tile_size = man.size;
            mcfg.validate();

            train::TrainConfig tcfg;
            apply_train(tcfg, section(file, "train"));
            if (tr_iters_o->count()) tcfg.iterations = tr_iters;
            if (tr_batch_o->count()) tcfg.batch_size = tr_batch;
            if (tr_lr_o->count()) tcfg.lr = tr_lr;
            if (tr_val_o->count()) tcfg.val_every = tr_val_every;
            if (tr_ckpt_o->count()) tcfg.checkpoint_every = tr_ckpt_every;
            if (tr_weight_o->count()) tcfg.class_weighting = tr_weighting;
            if (tr_seed_o->count())
                tcfg.seed = tr_seed;
            else if (file.contains("seed"))
                tcfg.seed = file.value("seed", tcfg.seed);
            tcfg.validate();

            const auto train_s = scene::load_split(tr_data, "train");
            std::vector<scene::DatasetSample> val_s;
            if (tcfg.val_every > 0) val_s = scene::load_split(tr_data, "val");

            model::Model m(mcfg);
            m.initialize(derive_seed(tcfg.seed, "model"));

            fs::create_directories(tr_out);
            write_text((fs::path(tr_out) / "model.json").string(), mcfg.canonical_json() + "\n");
            const std::string log_path = (fs::path(tr_out) / "log.jsonl").string();
            std::ofstream log(log_path, std::ios::binary);
            if (!log) throw IoError("cannot write " + log_path);

            const auto res = train::fit(m, train_s, val_s, tcfg,
                                        (fs::path(tr_out) / "checkpoint.bin").string(), &log);
            std::cout << "trained " << res.iterations << " iterations, final loss " << res.final_loss;
            if (res.final_val_miou == res.final_val_miou)
                std::cout << ", val mIoU " << res.final_val_miou;
            std::cout << '\n' << res.checkpoint_path << '\n';
        });
    });

    // eval ---------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "score a checkpoint on a dataset split");
    std::string ev_data, ev_split = "test", ev_model, ev_ckpt, ev_out, ev_config;
    long ev_batch = 4;
    std::uint64_t ev_seed = 0;
    ev->add_option("--data", ev_data, "dataset root")->required();
    ev->add_option("--split", ev_split, "train|test|val");
    ev->add_option("--model-config", ev_model, "model.json written by train")->required();
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--out", ev_out, "output directory")->required();
    ev->add_option("--batch-size", ev_batch, "evaluation batch size");
    ev->add_option("--config", ev_config, "JSON config file (unused sections ignored)");
    ev->add_option("--seed", ev_seed, "inert once the checkpoint fixes the weights");
    ev->callback([&] {
        rc = guarded([&] {
            read_config_file(ev_config);
            model::Model m(model::ModelConfig::parse_json(read_text(ev_model)));
            restore(m, ev_seed, ev_ckpt);
            const auto samples = scene::load_split(ev_data, ev_split);
            const metrics::Report rep = train::evaluate(m, samples, ev_batch);
            fs::create_directories(ev_out);
            write_text((fs::path(ev_out) / "report.json").string(), metrics::report_json(rep) + "\n");
            std::cout << std::fixed << std::setprecision(4) << "OA " << rep.oa << "  mIoU " << rep.miou
                      << "  F1_bcd " << rep.f1_bcd << "  F1_clf " << rep.f1_clf << '\n'
                      << (fs::path(ev_out) / "report.json").string() << '\n';
        });
    });

    // predict ------------------------------------------------------------
    auto* pr = app.add_subcommand("predict", "label map for one sample directory");
    std::string pr_input, pr_model, pr_ckpt, pr_out, pr_config;
    std::uint64_t pr_seed = 0;
    pr->add_option("--input", pr_input, "sample directory (opt.png + sar_*.png)")->required();
    pr->add_option("--model-config", pr_model, "model.json written by train")->required();
    pr->add_option("--checkpoint", pr_ckpt, "checkpoint file")->required();
    pr->add_option("--out", pr_out, "output directory")->required();
    pr->add_option("--config", pr_config, "JSON config file (unused sections ignored)");
    pr->add_option("--seed", pr_seed, "inert once the checkpoint fixes the weights");
    pr->callback([&] {
        rc = guarded([&] {
            read_config_file(pr_config);
            model::Model m(model::ModelConfig::parse_json(read_text(pr_model)));
            restore(m, pr_seed, pr_ckpt);
            const scene::DatasetSample sample = scene::load_sample_dir(pr_input);
            const IntTensor labels = train::predict_labels(m, sample);
            Image8 img;
            img.height = labels.shape[0];
            img.width = labels.shape[1];
            img.channels = 1;
            img.pixels.resize(static_cast<std::size_t>(labels.numel()));
            for (long i = 0; i < labels.numel(); ++i)
                img.pixels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(labels[i]);
            fs::create_directories(pr_out);
            const std::string path = (fs::path(pr_out) / "pred.png").string();
            write_png(path, img);
            std::cout << path << '\n';
        });
    });

    // inspect-prior --------------------------------------------------------
    auto* ip = app.add_subcommand("inspect-prior", "export the per-scale prior gate maps");
    std::string ip_input, ip_out, ip_config, ip_model, ip_ckpt, ip_variant = "full";
    std::uint64_t ip_seed = 0;
    ip->add_option("--input", ip_input, "sample directory")->required();
    ip->add_option("--out", ip_out, "output directory")->required();
    ip->add_option("--config", ip_config, "JSON config file");
    ip->add_option("--model-config", ip_model, "model.json written by train (overrides --variant)");
    ip->add_option("--checkpoint", ip_ckpt, "optional checkpoint; omitted = freshly initialized weights");
    auto* ip_variant_o = ip->add_option("--variant", ip_variant, "baseline|v1|v2|full");
    auto* ip_seed_o = ip->add_option("--seed", ip_seed, "init seed when no checkpoint is given");
    ip->callback([&] {
        rc = guarded([&] {
            const json file = read_config_file(ip_config);
            const scene::DatasetSample sample = scene::load_sample_dir(ip_input);
            model::ModelConfig mcfg;
            if (!ip_model.empty()) {
                mcfg = model::ModelConfig::parse_json(read_text(ip_model));
            } else {
                std::string variant = file.value("variant", std::string("full"));
                if (ip_variant_o->count()) variant = ip_variant;
                const json msec = section(file, "model");
                mcfg = model::ModelConfig::variant(variant);
                apply_model(mcfg, msec);
                if (!msec.contains("tile_size")) mcfg.tile_size = sample.optical.dim(1);
                mcfg.validate();
            }
            if (!mcfg.use_pgffm)
                throw InvalidArgument("variant '" + mcfg.variant_name() + "' carries no prior trunk");

            if (ip_seed_o->count() == 0) ip_seed = file.value("seed", ip_seed);
            model::Model m(mcfg);
            m.initialize(derive_seed(ip_seed, "model"));
            if (!ip_ckpt.empty()) load_checkpoint(ip_ckpt, mcfg.hash(), m.leaves());

            Graph g;
            model::ForwardTrace trace;
            const Shape os = sample.optical.shape(), ss = sample.sar.shape();
            m.forward(g, sample.optical.reshaped({1, os[0], os[1], os[2]}),
                      sample.sar.reshaped({1, ss[0], ss[1], ss[2]}), false, &trace);

            fs::create_directories(ip_out);
            for (std::size_t k = 0; k < trace.gates.size(); ++k) {
                const Tensor& gmap = trace.gates[k];
                const Image8 img = quantize_chw(gmap.reshaped({1, gmap.dim(2), gmap.dim(3)}));
                const std::string path =
                    (fs::path(ip_out) / ("prior_s" + std::to_string(k + 1) + ".png")).string();
                write_png(path, img);
                std::cout << path << '\n';
            }
        });
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    return rc;
}
