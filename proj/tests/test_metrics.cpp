#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "mmcd/errors.hpp"
#include "mmcd/metrics.hpp"
#include "mmcd/rng.hpp"

using namespace mmcd;
using namespace mmcd::metrics;

namespace {

Confusion from_rows(long nc, const std::vector<std::vector<long>>& rows) {
    Confusion cm(nc);
    for (long i = 0; i < nc; ++i)
        for (long j = 0; j < nc; ++j) cm.at(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    return cm;
}

IntTensor labels(Shape s, const std::vector<int>& v) {
    IntTensor t(std::move(s));
    for (long i = 0; i < t.numel(); ++i) t[i] = v[static_cast<std::size_t>(i)];
    return t;
}

IntTensor random_labels(Shape s, long nc, Rng& rng) {
    IntTensor t(std::move(s));
    for (long i = 0; i < t.numel(); ++i) t[i] = static_cast<int>(rng.uniform_int(0, nc - 1));
    return t;
}

}  // namespace

TEST_CASE("accumulation counts pixels and validates labels") {
    Confusion cm(7);
    const IntTensor zeros(Shape{4, 4});
    cm.add(zeros, zeros);
    CHECK(cm.at(0, 0) == 16);
    CHECK(cm.total() == 16);

    cm.add(labels({1, 3}, {1, 2, 0}), labels({1, 3}, {1, 5, 6}));
    CHECK(cm.at(1, 1) == 1);
    CHECK(cm.at(2, 5) == 1);
    CHECK(cm.at(0, 6) == 1);
    CHECK(cm.total() == 19);

    CHECK_THROWS_AS(cm.add(labels({1, 1}, {7}), labels({1, 1}, {0})), InvalidLabel);
    CHECK_THROWS_AS(cm.add(labels({1, 1}, {0}), labels({1, 1}, {-1})), InvalidLabel);
    // Bad label mid-tensor: nothing is counted.
    CHECK_THROWS_AS(cm.add(labels({1, 3}, {0, 9, 0}), labels({1, 3}, {0, 0, 0})), InvalidLabel);
    CHECK_THROWS_AS(cm.add(zeros, labels({1, 1}, {0})), ShapeError);
    CHECK(cm.total() == 19);  // a rejected add leaves the counts untouched
}

TEST_CASE("two-tile accumulation equals concatenated accumulation and merge") {
    Rng rng(3);
    const IntTensor p1 = random_labels({8, 8}, 7, rng), t1 = random_labels({8, 8}, 7, rng);
    const IntTensor p2 = random_labels({8, 8}, 7, rng), t2 = random_labels({8, 8}, 7, rng);

    Confusion both(7);
    both.add(p1, t1);
    both.add(p2, t2);

    Confusion a(7), b(7);
    a.add(p1, t1);
    b.add(p2, t2);
    a += b;
    CHECK(a.counts == both.counts);

    // Scalar counting oracle.
    Confusion oracle(7);
    for (long k = 0; k < 64; ++k) {
        ++oracle.at(p1[k], t1[k]);
        ++oracle.at(p2[k], t2[k]);
    }
    CHECK(oracle.counts == both.counts);

    Confusion five(5);
    CHECK_THROWS_AS(a += five, ShapeError);
}

TEST_CASE("overall accuracy") {
    CHECK(overall_accuracy(from_rows(2, {{8, 2}, {1, 9}})) == doctest::Approx(0.85).epsilon(1e-15));
    CHECK(overall_accuracy(from_rows(3, {{4, 0, 0}, {0, 5, 0}, {0, 0, 6}})) == 1.0);
    CHECK(overall_accuracy(from_rows(2, {{0, 3}, {4, 0}})) == 0.0);
    CHECK_THROWS_AS(overall_accuracy(Confusion(4)), UndefinedMetric);
}

TEST_CASE("per-class IoU and mIoU with undefined classes excluded") {
    const Confusion cm = from_rows(2, {{5, 1}, {2, 4}});
    const auto iou = iou_per_class(cm);
    CHECK(iou[0] == doctest::Approx(5.0 / 8.0).epsilon(1e-15));
    CHECK(iou[1] == doctest::Approx(4.0 / 7.0).epsilon(1e-15));
    CHECK(miou(cm) == doctest::Approx(0.5982142857142857).epsilon(1e-12));

    // A class missing from both sides is NaN and does not drag the mean down.
    Confusion three(3);
    three.at(0, 0) = 10;
    three.at(1, 1) = 10;
    const auto iou3 = iou_per_class(three);
    CHECK(iou3[0] == 1.0);
    CHECK(iou3[1] == 1.0);
    CHECK(std::isnan(iou3[2]));
    CHECK(miou(three) == 1.0);

    Confusion perfect(3);
    for (long i = 0; i < 3; ++i) perfect.at(i, i) = 5;
    for (const double v : iou_per_class(perfect)) CHECK(v == 1.0);

    CHECK_THROWS_AS(iou_per_class(Confusion(3)), UndefinedMetric);
}

TEST_CASE("binary change score") {
    // TP=6 (including cross-change confusion), FP=2, FN=3.
    Confusion cm(7);
    cm.at(0, 0) = 10;
    cm.at(1, 1) = 3;
    cm.at(2, 5) = 3;
    cm.at(1, 0) = 2;
    cm.at(0, 2) = 3;
    const BinaryChangeScore s = f1_bcd(cm);
    CHECK(s.precision == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(s.recall == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    CHECK(s.f1 == doctest::Approx(12.0 / 17.0).epsilon(1e-15));

    // Moving the cross-change mass onto the diagonal changes nothing binary.
    Confusion cm2 = cm;
    cm2.at(2, 5) = 0;
    cm2.at(5, 5) = 3;
    const BinaryChangeScore s2 = f1_bcd(cm2);
    CHECK(s2.f1 == s.f1);
    CHECK(s2.precision == s.precision);
    CHECK(s2.recall == s.recall);

    // No change anywhere -> 0 by convention.
    Confusion quiet(7);
    quiet.at(0, 0) = 50;
    const BinaryChangeScore q = f1_bcd(quiet);
    CHECK(q.precision == 0.0);
    CHECK(q.recall == 0.0);
    CHECK(q.f1 == 0.0);
}

TEST_CASE("macro classification F1") {
    CHECK(f1_clf(from_rows(2, {{5, 1}, {2, 4}})) == doctest::Approx(107.0 / 143.0).epsilon(1e-15));

    Confusion perfect(7);
    for (long i = 0; i < 7; ++i) perfect.at(i, i) = 3;
    CHECK(f1_clf(perfect) == 1.0);

    // Consistent relabeling is a symmetry.
    Rng rng(11);
    Confusion cm(4);
    for (long i = 0; i < 4; ++i)
        for (long j = 0; j < 4; ++j) cm.at(i, j) = rng.uniform_int(0, 9);
    const long perm[4] = {2, 0, 3, 1};
    Confusion pcm(4);
    for (long i = 0; i < 4; ++i)
        for (long j = 0; j < 4; ++j) pcm.at(perm[i], perm[j]) = cm.at(i, j);
    CHECK(f1_clf(pcm) == doctest::Approx(f1_clf(cm)).epsilon(1e-15));
    CHECK(overall_accuracy(pcm) == doctest::Approx(overall_accuracy(cm)).epsilon(1e-15));
    CHECK(miou(pcm) == doctest::Approx(miou(cm)).epsilon(1e-12));
}

TEST_CASE("metrics match a brute-force oracle on random label maps") {
    Rng rng(29);
    for (int trial = 0; trial < 100; ++trial) {
        const IntTensor pred = random_labels({16, 16}, 7, rng);
        const IntTensor truth = random_labels({16, 16}, 7, rng);
        Confusion cm(7);
        cm.add(pred, truth);

        long agree = 0;
        for (long k = 0; k < 256; ++k)
            if (pred[k] == truth[k]) ++agree;
        CHECK(overall_accuracy(cm) == static_cast<double>(agree) / 256.0);

        double iou_sum = 0.0, f1_sum = 0.0;
        long iou_n = 0;
        const auto iou = iou_per_class(cm);
        for (long c = 0; c < 7; ++c) {
            long tp = 0, fp = 0, fn = 0;
            for (long k = 0; k < 256; ++k) {
                if (pred[k] == c && truth[k] == c) ++tp;
                if (pred[k] == c && truth[k] != c) ++fp;
                if (pred[k] != c && truth[k] == c) ++fn;
            }
            if (tp + fp + fn == 0) {
                CHECK(std::isnan(iou[static_cast<std::size_t>(c)]));
            } else {
                const double want = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
                CHECK(iou[static_cast<std::size_t>(c)] == doctest::Approx(want).epsilon(1e-12));
                iou_sum += want;
                ++iou_n;
            }
            f1_sum += 2 * tp + fp + fn == 0 ? 0.0 : 2.0 * tp / static_cast<double>(2 * tp + fp + fn);
        }
        CHECK(miou(cm) == doctest::Approx(iou_sum / iou_n).epsilon(1e-12));
        CHECK(f1_clf(cm) == doctest::Approx(f1_sum / 7.0).epsilon(1e-12));

        long btp = 0, bfp = 0, bfn = 0;
        for (long k = 0; k < 256; ++k) {
            const bool pc = pred[k] != 0, tc = truth[k] != 0;
            if (pc && tc) ++btp;
            if (pc && !tc) ++bfp;
            if (!pc && tc) ++bfn;
        }
        const BinaryChangeScore s = f1_bcd(cm);
        CHECK(s.f1 == doctest::Approx(2.0 * btp / std::max<long>(1, 2 * btp + bfp + bfn)).epsilon(1e-12));

        const Report r = compute_report(cm);
        CHECK(r.pixel_total == 256);
        for (const double v :
             {r.oa, r.miou, r.precision_c, r.recall_c, r.f1_bcd, r.f1_clf}) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        double mean = 0.0;
        long n = 0;
        for (const double v : r.iou_per_class)
            if (!std::isnan(v)) mean += v, ++n;
        CHECK(r.miou == doctest::Approx(mean / n).epsilon(1e-9));
    }
}

TEST_CASE("flipping a correct pixel to incorrect never raises accuracy") {
    Rng rng(31);
    const IntTensor truth = random_labels({12, 12}, 7, rng);
    IntTensor pred = truth;
    Confusion cm(7);
    cm.add(pred, truth);
    double prev = overall_accuracy(cm);
    for (int step = 0; step < 40; ++step) {
        const long k = rng.uniform_int(0, pred.numel() - 1);
        if (pred[k] != truth[k]) continue;
        pred[k] = static_cast<int>((pred[k] + 1 + rng.uniform_int(0, 5)) % 7);
        Confusion next(7);
        next.add(pred, truth);
        const double oa = overall_accuracy(next);
        CHECK(oa <= prev);
        prev = oa;
    }
}

TEST_CASE("report serializes to JSON and round-trips, with null for undefined IoU") {
    Confusion cm(3);
    cm.at(0, 0) = 8;
    cm.at(1, 0) = 2;
    cm.at(0, 1) = 1;
    cm.at(1, 1) = 9;  // class 2 untouched -> undefined
    const Report r = compute_report(cm);
    const std::string text = report_json(r);
    CHECK(text.find("\"iou_per_class\"") != std::string::npos);
    CHECK(text.find("null") != std::string::npos);
    CHECK(text.find("\"pixel_total\": 20") != std::string::npos);

    const Report back = parse_report(text);
    CHECK(back.oa == r.oa);
    CHECK(back.miou == r.miou);
    CHECK(back.f1_bcd == r.f1_bcd);
    CHECK(back.f1_clf == r.f1_clf);
    CHECK(back.pixel_total == 20);
    REQUIRE(back.iou_per_class.size() == 3);
    CHECK(back.iou_per_class[0] == r.iou_per_class[0]);
    CHECK(std::isnan(back.iou_per_class[2]));

    CHECK_THROWS_AS(parse_report("{not json"), IoError);
}
