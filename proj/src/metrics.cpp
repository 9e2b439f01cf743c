#include "mmcd/metrics.hpp"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "mmcd/errors.hpp"

using nlohmann::json;

namespace mmcd::metrics {

long Confusion::total() const {
    long t = 0;
    for (const long c : counts) t += c;
    return t;
}

long Confusion::row_sum(long i) const {
    long t = 0;
    for (long j = 0; j < num_classes; ++j) t += at(i, j);
    return t;
}

long Confusion::col_sum(long j) const {
    long t = 0;
    for (long i = 0; i < num_classes; ++i) t += at(i, j);
    return t;
}

void Confusion::add(const IntTensor& pred, const IntTensor& truth) {
    if (pred.shape != truth.shape) throw ShapeError("prediction and truth shapes differ");
    // Validate everything first so a throw leaves the counts untouched.
    for (long k = 0; k < pred.numel(); ++k) {
        const long p = pred[k], t = truth[k];
        if (p < 0 || p >= num_classes || t < 0 || t >= num_classes)
            throw InvalidLabel("label outside [0, " + std::to_string(num_classes) + ")");
    }
    for (long k = 0; k < pred.numel(); ++k) ++at(pred[k], truth[k]);
}

Confusion& Confusion::operator+=(const Confusion& o) {
    if (o.num_classes != num_classes) throw ShapeError("confusion matrices differ in class count");
    for (std::size_t k = 0; k < counts.size(); ++k) counts[k] += o.counts[k];
    return *this;
}

double overall_accuracy(const Confusion& cm) {
    const long t = cm.total();
    if (t == 0) throw UndefinedMetric("overall accuracy of an empty matrix");
    long diag = 0;
    for (long i = 0; i < cm.num_classes; ++i) diag += cm.at(i, i);
    return static_cast<double>(diag) / static_cast<double>(t);
}

std::vector<double> iou_per_class(const Confusion& cm) {
    if (cm.total() == 0) throw UndefinedMetric("IoU of an empty matrix");
    std::vector<double> out(static_cast<std::size_t>(cm.num_classes));
    for (long i = 0; i < cm.num_classes; ++i) {
        const long denom = cm.row_sum(i) + cm.col_sum(i) - cm.at(i, i);
        out[static_cast<std::size_t>(i)] =
            denom == 0 ? std::numeric_limits<double>::quiet_NaN()
                       : static_cast<double>(cm.at(i, i)) / static_cast<double>(denom);
    }
    return out;
}

double miou(const Confusion& cm) {
    const auto ious = iou_per_class(cm);
    double sum = 0.0;
    long n = 0;
    for (const double v : ious)
        if (!std::isnan(v)) {
            sum += v;
            ++n;
        }
    if (n == 0) throw UndefinedMetric("every class IoU is undefined");
    return sum / static_cast<double>(n);
}

BinaryChangeScore f1_bcd(const Confusion& cm) {
    if (cm.total() == 0) throw UndefinedMetric("binary change score of an empty matrix");
    long tp = 0, fp = 0, fn = 0;
    for (long i = 1; i < cm.num_classes; ++i) {
        fp += cm.at(i, 0);
        fn += cm.at(0, i);
        for (long j = 1; j < cm.num_classes; ++j) tp += cm.at(i, j);
    }
    BinaryChangeScore s;
    s.precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    s.recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    s.f1 = 2 * tp + fp + fn == 0 ? 0.0
                                 : static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
    return s;
}

double f1_clf(const Confusion& cm) {
    if (cm.total() == 0) throw UndefinedMetric("classification F1 of an empty matrix");
    double sum = 0.0;
    for (long i = 0; i < cm.num_classes; ++i) {
        const long tp = cm.at(i, i);
        const long fp = cm.row_sum(i) - tp;
        const long fn = cm.col_sum(i) - tp;
        sum += 2 * tp + fp + fn == 0
                   ? 0.0
                   : static_cast<double>(2 * tp) / static_cast<double>(2 * tp + fp + fn);
    }
    return sum / static_cast<double>(cm.num_classes);
}

Report compute_report(const Confusion& cm) {
    Report r;
    r.oa = overall_accuracy(cm);
    r.iou_per_class = iou_per_class(cm);
    r.miou = miou(cm);
    const BinaryChangeScore b = f1_bcd(cm);
    r.precision_c = b.precision;
    r.recall_c = b.recall;
    r.f1_bcd = b.f1;
    r.f1_clf = f1_clf(cm);
    r.pixel_total = cm.total();
    return r;
}

std::string report_json(const Report& r) {
    json j;
    j["oa"] = r.oa;
    j["miou"] = r.miou;
    json ious = json::array();
    for (const double v : r.iou_per_class) {
        if (std::isnan(v))
            ious.push_back(nullptr);
        else
            ious.push_back(v);
    }
    j["iou_per_class"] = std::move(ious);
    j["precision_c"] = r.precision_c;
    j["recall_c"] = r.recall_c;
    j["f1_bcd"] = r.f1_bcd;
    j["f1_clf"] = r.f1_clf;
    j["pixel_total"] = r.pixel_total;
    return j.dump(2) + "\n";
}

Report parse_report(const std::string& text) {
    try {
        const json j = json::parse(text);
        Report r;
        r.oa = j.at("oa").get<double>();
        r.miou = j.at("miou").get<double>();
        for (const json& v : j.at("iou_per_class"))
            r.iou_per_class.push_back(v.is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                  : v.get<double>());
        r.precision_c = j.at("precision_c").get<double>();
        r.recall_c = j.at("recall_c").get<double>();
        r.f1_bcd = j.at("f1_bcd").get<double>();
        r.f1_clf = j.at("f1_clf").get<double>();
        r.pixel_total = j.at("pixel_total").get<long>();
        return r;
    } catch (const json::exception& ex) {
        throw IoError(std::string("malformed metrics report: ") + ex.what());
    }
}

}  // namespace mmcd::metrics
