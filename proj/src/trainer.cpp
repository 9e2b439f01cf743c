#include "mmcd/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>

#include "mmcd/checkpoint.hpp"
#include "mmcd/errors.hpp"
#include "mmcd/rng.hpp"

using nlohmann::json;

namespace mmcd::train {

namespace {

json finite_or_null(double v) {
    if (std::isfinite(v)) return v;
    return nullptr;
}

void check_samples(const std::vector<scene::DatasetSample>& samples, const model::ModelConfig& cfg,
                   bool need_labels, const char* what) {
    if (samples.empty()) throw InvalidArgument(std::string(what) + " split is empty");
    const long t = cfg.tile_size;
    for (const auto& s : samples) {
        if (s.optical.shape() != Shape{3, t, t} || s.sar.shape() != Shape{4, t, t})
            throw InvalidArgument("sample " + s.id + " does not match the model tile size");
        if (need_labels && s.label.shape != Shape{t, t})
            throw InvalidArgument("sample " + s.id + " carries no usable label map");
    }
}

void stack(const std::vector<scene::DatasetSample>& samples, const std::vector<long>& idx,
           Tensor& opt, Tensor& sar, IntTensor& lab, bool with_labels) {
    const long b = static_cast<long>(idx.size());
    const long t = samples.front().optical.dim(1);
    opt = Tensor({b, 3, t, t});
    sar = Tensor({b, 4, t, t});
    if (with_labels) lab = IntTensor({b, t, t});
    const long planes3 = 3 * t * t, planes4 = 4 * t * t, plane = t * t;
    for (long i = 0; i < b; ++i) {
        const auto& s = samples[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        std::copy_n(s.optical.data(), planes3, opt.data() + i * planes3);
        std::copy_n(s.sar.data(), planes4, sar.data() + i * planes4);
        if (with_labels)
            std::copy_n(s.label.v.data(), plane, lab.v.data() + i * plane);
    }
}

// (B,C,H,W) logits -> per-pixel argmax; first max wins ties.
IntTensor argmax_labels(const Tensor& logits) {
    const long b = logits.dim(0), c = logits.dim(1), plane = logits.dim(2) * logits.dim(3);
    IntTensor out({b, logits.dim(2), logits.dim(3)});
    for (long n = 0; n < b; ++n)
        for (long p = 0; p < plane; ++p) {
            long best = 0;
            double bv = logits[(n * c) * plane + p];
            for (long k = 1; k < c; ++k) {
                const double v = logits[(n * c + k) * plane + p];
                if (v > bv) {
                    bv = v;
                    best = k;
                }
            }
            out[n * plane + p] = static_cast<std::int32_t>(best);
        }
    return out;
}

}  // namespace

void TrainConfig::validate() const {
    if (iterations < 1) throw InvalidArgument("iteration count must be >= 1");
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    if (!(lr > 0.0) || !std::isfinite(lr)) throw InvalidArgument("learning rate must be positive");
    if (val_every < 0 || checkpoint_every < 0) throw InvalidArgument("intervals cannot be negative");
    if (class_weighting != "inverse" && class_weighting != "unit")
        throw InvalidArgument("class weighting must be 'inverse' or 'unit'");
}

std::vector<double> class_weights(const std::vector<scene::DatasetSample>& samples,
                                  long num_classes, const std::string& mode) {
    if (num_classes < 1) throw InvalidArgument("need at least one class");
    if (mode == "unit") return std::vector<double>(static_cast<std::size_t>(num_classes), 1.0);
    if (mode != "inverse") throw InvalidArgument("class weighting must be 'inverse' or 'unit'");
    if (samples.empty()) throw InvalidArgument("cannot weight classes from an empty split");

    std::vector<long> counts(static_cast<std::size_t>(num_classes), 0);
    long total = 0;
    for (const auto& s : samples) {
        for (long i = 0; i < s.label.numel(); ++i) {
            const std::int32_t y = s.label[i];
            if (y < 0 || y >= num_classes)
                throw InvalidLabel("label " + std::to_string(y) + " outside [0, " +
                                   std::to_string(num_classes) + ")");
            ++counts[static_cast<std::size_t>(y)];
            ++total;
        }
    }
    if (total == 0) throw InvalidArgument("cannot weight classes from unlabeled samples");

    std::vector<double> w(static_cast<std::size_t>(num_classes));
    const double ref = static_cast<double>(total) / static_cast<double>(num_classes);
    for (long c = 0; c < num_classes; ++c) {
        const long n = counts[static_cast<std::size_t>(c)];
        const double raw = n > 0 ? ref / static_cast<double>(n)
                                 : 5.0;  // absent class: pinned at the cap
        w[static_cast<std::size_t>(c)] = std::clamp(raw, 0.2, 5.0);
    }
    return w;
}

FitResult fit(model::Model& m, const std::vector<scene::DatasetSample>& train,
              const std::vector<scene::DatasetSample>& val, const TrainConfig& cfg,
              const std::string& checkpoint_path, std::ostream* log) {
    cfg.validate();
    check_samples(train, m.cfg, true, "train");
    if (!val.empty()) check_samples(val, m.cfg, true, "validation");

    const std::vector<double> weights = class_weights(train, m.cfg.num_classes, cfg.class_weighting);

    nn::AdamConfig ac;
    ac.lr = cfg.lr;
    nn::Adam adam(m.leaves(), ac);
    Rng batch_rng(derive_seed(cfg.seed, "batches"));

    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    auto emit = [log](const json& j) {
        if (log != nullptr) *log << j.dump() << "\n";
    };

    {
        json j;
        j["event"] = "start";
        j["model"] = json::parse(m.cfg.canonical_json());
        j["variant"] = m.cfg.variant_name();
        j["stages"] = m.stage_names();
        j["parameters_total"] = m.parameter_count(false);
        j["parameters_trainable"] = m.parameter_count(true);
        j["train_samples"] = train.size();
        j["val_samples"] = val.size();
        j["iterations"] = cfg.iterations;
        j["batch_size"] = cfg.batch_size;
        j["lr"] = cfg.lr;
        j["seed"] = cfg.seed;
        j["class_weights"] = weights;
        emit(j);
    }

    FitResult res;
    res.checkpoint_path = checkpoint_path;
    std::vector<long> idx(static_cast<std::size_t>(cfg.batch_size));
    Tensor opt, sar;
    IntTensor lab;
    for (long it = 1; it <= cfg.iterations; ++it) {
        for (auto& i : idx)
            i = batch_rng.uniform_int(0, static_cast<std::int64_t>(train.size()) - 1);
        stack(train, idx, opt, sar, lab, true);

        Graph g;
        Var logits = m.forward(g, opt, sar, true);
        Var loss = g.cross_entropy(logits, lab, weights);
        const double lv = g.val(loss)[0];
        if (!std::isfinite(lv)) {
            json j;
            j["event"] = "diverged";
            j["iter"] = it;
            j["loss"] = finite_or_null(lv);
            emit(j);
            throw TrainingDiverged("loss became non-finite at iteration " + std::to_string(it));
        }
        adam.zero_grad();
        g.backward(loss);
        adam.step();

        res.iterations = it;
        res.final_loss = lv;

        json j;
        j["iter"] = it;
        j["loss"] = lv;
        j["lr"] = cfg.lr;
        if (!val.empty() && cfg.val_every > 0 &&
            (it % cfg.val_every == 0 || it == cfg.iterations)) {
            const metrics::Report r = evaluate(m, val, cfg.batch_size);
            res.final_val_miou = r.miou;
            j["val_miou"] = finite_or_null(r.miou);
        }
        j["wallclock_s"] = elapsed();
        emit(j);

        if (!checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
            it % cfg.checkpoint_every == 0 && it != cfg.iterations) {
            save_checkpoint(checkpoint_path, m.cfg.hash(), m.leaves());
            json c;
            c["event"] = "checkpoint";
            c["iter"] = it;
            c["path"] = checkpoint_path;
            emit(c);
        }
    }

    if (!checkpoint_path.empty()) {
        save_checkpoint(checkpoint_path, m.cfg.hash(), m.leaves());
        json c;
        c["event"] = "checkpoint";
        c["iter"] = cfg.iterations;
        c["path"] = checkpoint_path;
        emit(c);
    }
    return res;
}

metrics::Report evaluate(model::Model& m, const std::vector<scene::DatasetSample>& samples,
                         long batch_size) {
    if (batch_size < 1) throw InvalidArgument("batch size must be >= 1");
    check_samples(samples, m.cfg, true, "evaluation");

    metrics::Confusion cm(m.cfg.num_classes);
    const long n = static_cast<long>(samples.size());
    Tensor opt, sar;
    IntTensor lab;
    for (long at = 0; at < n; at += batch_size) {
        const long b = std::min(batch_size, n - at);
        std::vector<long> idx(static_cast<std::size_t>(b));
        for (long i = 0; i < b; ++i) idx[static_cast<std::size_t>(i)] = at + i;
        stack(samples, idx, opt, sar, lab, true);
        Graph g;
        const Tensor& logits = g.val(m.forward(g, opt, sar, false));
        cm.add(argmax_labels(logits), lab);
    }
    return metrics::compute_report(cm);
}

Tensor predict_logits(model::Model& m, const scene::DatasetSample& sample) {
    check_samples({sample}, m.cfg, false, "prediction");
    Tensor opt({1, 3, sample.optical.dim(1), sample.optical.dim(2)});
    Tensor sar({1, 4, sample.sar.dim(1), sample.sar.dim(2)});
    std::copy_n(sample.optical.data(), sample.optical.numel(), opt.data());
    std::copy_n(sample.sar.data(), sample.sar.numel(), sar.data());
    Graph g;
    return g.val(m.forward(g, opt, sar, false)).clone();
}

IntTensor predict_labels(model::Model& m, const scene::DatasetSample& sample) {
    const Tensor logits = predict_logits(m, sample);
    IntTensor batched = argmax_labels(logits);
    IntTensor out({logits.dim(2), logits.dim(3)});
    out.v = std::move(batched.v);
    return out;
}

}  // namespace mmcd::train
