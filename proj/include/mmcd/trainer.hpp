#pragma once

#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "mmcd/metrics.hpp"
#include "mmcd/model.hpp"
#include "mmcd/scene.hpp"

namespace mmcd::train {

struct TrainConfig {
    long iterations = 500;
    long batch_size = 4;
    double lr = 5e-4;
    long val_every = 0;         // 0 = never score the validation split
    long checkpoint_every = 0;  // 0 = final write only
    std::uint64_t seed = 0;
    std::string class_weighting = "inverse";  // "inverse" | "unit"

    void validate() const;
};

// Inverse-frequency weights from the split's label histogram, clipped to
// [0.2, 5]; a uniform histogram maps to all-ones. "unit" skips the counting.
std::vector<double> class_weights(const std::vector<scene::DatasetSample>& samples,
                                  long num_classes, const std::string& mode);

struct FitResult {
    long iterations = 0;
    double final_loss = 0.0;
    double final_val_miou = std::numeric_limits<double>::quiet_NaN();
    std::string checkpoint_path;
};

// Adam over the trainable leaves. Writes one JSONL record per iteration to
// `log` (first line describes the run), checkpoints into `checkpoint_path`,
// and throws TrainingDiverged the moment the loss leaves the reals.
// Deterministic for a fixed (model seed, cfg.seed, data) triple.
FitResult fit(model::Model& m, const std::vector<scene::DatasetSample>& train,
              const std::vector<scene::DatasetSample>& val, const TrainConfig& cfg,
              const std::string& checkpoint_path, std::ostream* log);

// Confusion over every pixel of the split, batched forward in eval mode.
metrics::Report evaluate(model::Model& m, const std::vector<scene::DatasetSample>& samples,
                         long batch_size);

// Argmax label map for one sample, (H,W) in [0, num_classes).
IntTensor predict_labels(model::Model& m, const scene::DatasetSample& sample);
Tensor predict_logits(model::Model& m, const scene::DatasetSample& sample);

}  // namespace mmcd::train
