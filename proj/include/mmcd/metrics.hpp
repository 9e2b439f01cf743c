#pragma once

#include <string>
#include <vector>

#include "mmcd/tensor.hpp"

namespace mmcd::metrics {

// Square count matrix with rows = predicted class, columns = true class.
struct Confusion {
    long num_classes = 0;
    std::vector<long> counts;  // row-major, num_classes^2

    Confusion() = default;
    explicit Confusion(long nc) : num_classes(nc), counts(static_cast<std::size_t>(nc * nc), 0) {
        if (nc < 1) throw InvalidArgument("confusion matrix needs at least one class");
    }

    long& at(long pred, long truth) { return counts[static_cast<std::size_t>(pred * num_classes + truth)]; }
    long at(long pred, long truth) const { return counts[static_cast<std::size_t>(pred * num_classes + truth)]; }
    long total() const;
    long row_sum(long i) const;
    long col_sum(long j) const;

    // Per-pixel increments; out-of-range values raise InvalidLabel.
    void add(const IntTensor& pred, const IntTensor& truth);
    Confusion& operator+=(const Confusion& o);
};

double overall_accuracy(const Confusion& cm);

// IoU_i = x_ii / (row_i + col_i - x_ii); classes absent from both prediction
// and truth come back as NaN and are skipped by miou().
std::vector<double> iou_per_class(const Confusion& cm);
double miou(const Confusion& cm);

struct BinaryChangeScore {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Collapses classes >= 1 into a single "change" class first.
BinaryChangeScore f1_bcd(const Confusion& cm);

// Macro F1 over all classes, per-class 0/0 counted as 0.
double f1_clf(const Confusion& cm);

struct Report {
    double oa = 0.0;
    double miou = 0.0;
    std::vector<double> iou_per_class;  // NaN where undefined
    double precision_c = 0.0;
    double recall_c = 0.0;
    double f1_bcd = 0.0;
    double f1_clf = 0.0;
    long pixel_total = 0;
};

Report compute_report(const Confusion& cm);
// Pretty JSON; undefined per-class IoUs serialize as null.
std::string report_json(const Report& r);
Report parse_report(const std::string& json_text);

}  // namespace mmcd::metrics
