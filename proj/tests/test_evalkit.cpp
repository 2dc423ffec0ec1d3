#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "camseg/evalkit.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace camseg;
using Catch::Matchers::WithinAbs;

namespace {

LabelImage labels_from(std::initializer_list<uint8_t> values, int rows, int cols) {
    LabelImage img(rows, cols);
    std::copy(values.begin(), values.end(), img.labels.begin());
    return img;
}

}  // namespace

TEST_CASE("miou basics") {
    SECTION("identical masks score 1.0") {
        LabelImage a = labels_from({0, 1, 1, 2, 0, 2, 1, 0, 2}, 3, 3);
        IoUReport rep = miou({a}, {a}, 3);
        for (const auto& [id, iou] : rep.per_class) CHECK_THAT(iou, WithinAbs(1.0, 1e-12));
        CHECK_THAT(rep.miou, WithinAbs(1.0, 1e-12));
    }
    SECTION("disjoint prediction scores 0 for that class") {
        LabelImage pred = labels_from({1, 1, 0, 0}, 2, 2);
        LabelImage gt = labels_from({0, 0, 1, 1}, 2, 2);
        IoUReport rep = miou({pred}, {gt}, 2);
        CHECK_THAT(rep.per_class.at(1), WithinAbs(0.0, 1e-12));
        CHECK_THAT(rep.per_class.at(0), WithinAbs(0.0, 1e-12));
        CHECK_THAT(rep.miou, WithinAbs(0.0, 1e-12));
    }
    SECTION("2x2 regions overlapping in 2 pixels give IoU 2/6") {
        // 4x4 grid; truth: rows 0-1 x cols 0-1; prediction: rows 1-2 x cols 0-1
        LabelImage gt(4, 4, 0);
        gt.at(0, 0) = gt.at(0, 1) = gt.at(1, 0) = gt.at(1, 1) = 1;
        LabelImage pred(4, 4, 0);
        pred.at(1, 0) = pred.at(1, 1) = pred.at(2, 0) = pred.at(2, 1) = 1;
        IoUReport rep = miou({pred}, {gt}, 2);
        CHECK_THAT(rep.per_class.at(1), WithinAbs(2.0 / 6.0, 1e-9));

        // brute-force pixel counting oracle agrees
        auto brute = oracles::brute_force_iou({pred}, {gt}, 2);
        CHECK(brute.tp[1] == 2);
        CHECK(brute.fp[1] == 2);
        CHECK(brute.fn[1] == 2);
        CHECK_THAT(rep.per_class.at(1),
                   WithinAbs(double(brute.tp[1]) / (brute.tp[1] + brute.fp[1] + brute.fn[1]),
                             1e-12));
    }
}

TEST_CASE("miou equals the brute-force counting oracle on random masks") {
    SplitMix64 rng(7777);
    std::vector<LabelImage> preds, gts;
    const int num_classes = 5;
    for (int n = 0; n < 6; ++n) {
        LabelImage pred(10, 10), gt(10, 10);
        for (size_t i = 0; i < pred.labels.size(); ++i) {
            pred.labels[i] = uint8_t(rng.next() % num_classes);
            gt.labels[i] = rng.uniform01() < 0.1 ? kIgnoreLabel : uint8_t(rng.next() % num_classes);
        }
        preds.push_back(pred);
        gts.push_back(gt);
    }
    IoUReport rep = miou(preds, gts, num_classes);
    auto brute = oracles::brute_force_iou(preds, gts, num_classes);
    double mean = 0.0;
    int present = 0;
    for (int c = 0; c < num_classes; ++c) {
        const int64_t denom = brute.tp[c] + brute.fp[c] + brute.fn[c];
        if (denom == 0) {
            CHECK(!rep.per_class.count(c));
            continue;
        }
        const double expect = double(brute.tp[c]) / double(denom);
        CHECK_THAT(rep.per_class.at(c), WithinAbs(expect, 1e-12));
        mean += expect;
        ++present;
    }
    CHECK_THAT(rep.miou, WithinAbs(mean / present, 1e-12));
}

TEST_CASE("miou ignores 255 ground-truth pixels and is order invariant") {
    LabelImage pred1 = labels_from({1, 1, 0, 0}, 2, 2);
    LabelImage gt1 = labels_from({1, 255, 0, 255}, 2, 2);
    LabelImage pred2 = labels_from({0, 1, 1, 0}, 2, 2);
    LabelImage gt2 = labels_from({0, 1, 255, 0}, 2, 2);

    IoUReport fwd = miou({pred1, pred2}, {gt1, gt2}, 2);
    IoUReport rev = miou({pred2, pred1}, {gt2, gt1}, 2);
    CHECK(fwd.confusion == rev.confusion);
    CHECK_THAT(fwd.miou, WithinAbs(rev.miou, 1e-15));

    // ignored pixels contribute nothing: gt1 pixel 1 (pred 1, gt 255) is out
    IoUReport only = miou({pred1}, {gt1}, 2);
    CHECK(only.confusion_at(1, 1) == 1);
    CHECK(only.confusion_at(0, 0) == 1);
    CHECK(only.confusion_at(0, 1) == 0);
}

TEST_CASE("miou consistency under a permutation of class ids") {
    // swapping labels 1 and 2 everywhere permutes per-class scores
    LabelImage pred(4, 4), gt(4, 4);
    SplitMix64 rng(31);
    for (size_t i = 0; i < pred.labels.size(); ++i) {
        pred.labels[i] = uint8_t(rng.next() % 3);
        gt.labels[i] = uint8_t(rng.next() % 3);
    }
    IoUReport base = miou({pred}, {gt}, 3);
    auto swap_labels = [](LabelImage img) {
        for (auto& v : img.labels) v = v == 1 ? 2 : (v == 2 ? 1 : v);
        return img;
    };
    IoUReport swapped = miou({swap_labels(pred)}, {swap_labels(gt)}, 3);
    CHECK_THAT(base.per_class.at(1), WithinAbs(swapped.per_class.at(2), 1e-12));
    CHECK_THAT(base.per_class.at(2), WithinAbs(swapped.per_class.at(1), 1e-12));
    CHECK_THAT(base.miou, WithinAbs(swapped.miou, 1e-12));
}

TEST_CASE("predicted ignore pixels count as false negatives, never false positives") {
    // truth has class 1 in two pixels; the prediction abstains on one of them
    LabelImage pred = labels_from({1, 255, 0, 255}, 2, 2);
    LabelImage gt = labels_from({1, 1, 0, 0}, 2, 2);
    IoUReport rep = miou({pred}, {gt}, 2);
    // class 1: TP 1, FN 1 (abstained), FP 0 -> 1/2
    CHECK_THAT(rep.per_class.at(1), WithinAbs(0.5, 1e-12));
    // class 0: TP 1, FN 1 (abstained), FP 0 -> 1/2
    CHECK_THAT(rep.per_class.at(0), WithinAbs(0.5, 1e-12));
    // matches the brute-force oracle, which treats 255 as "not class c"
    auto brute = oracles::brute_force_iou({pred}, {gt}, 2);
    for (int c = 0; c < 2; ++c)
        CHECK_THAT(rep.per_class.at(c),
                   WithinAbs(double(brute.tp[c]) / (brute.tp[c] + brute.fp[c] + brute.fn[c]),
                             1e-12));
}

TEST_CASE("miou validates shapes and label ranges") {
    LabelImage a(2, 2), b(2, 3);
    CHECK_THROWS_AS(miou({a}, {b}, 2), std::invalid_argument);
    LabelImage bad(2, 2);
    bad.labels = {0, 1, 9, 0};
    CHECK_THROWS_AS(miou({bad}, {a}, 2), std::invalid_argument);
    CHECK_THROWS_AS(miou({a, a}, {a}, 2), std::invalid_argument);
}

TEST_CASE("confidence histogram") {
    SECTION("all values in the top bin") {
        MapD m(4, 4, 0.96);
        auto bins = confidence_histogram({m}, {0.5, 0.8, 0.95, 1.0});
        REQUIRE(bins.size() == 3);
        CHECK_THAT(bins[0].frequency, WithinAbs(0.0, 1e-12));
        CHECK_THAT(bins[1].frequency, WithinAbs(0.0, 1e-12));
        CHECK_THAT(bins[2].frequency, WithinAbs(1.0, 1e-12));
    }
    SECTION("frequencies sum to one across mixed maps") {
        MapD a(2, 2), b(1, 4);
        a.data = {0.55, 0.81, 0.99, 1.0};
        b.data = {0.5, 0.7, 0.96, 0.94};
        auto bins = confidence_histogram({a, b}, {0.5, 0.8, 0.95, 1.0});
        double total = 0;
        for (const auto& bin : bins) total += bin.frequency;
        CHECK_THAT(total, WithinAbs(1.0, 1e-9));
        CHECK_THAT(bins[0].frequency, WithinAbs(3.0 / 8.0, 1e-12));  // 0.55, 0.5, 0.7
        CHECK_THAT(bins[1].frequency, WithinAbs(2.0 / 8.0, 1e-12));  // 0.81, 0.94
        CHECK_THAT(bins[2].frequency, WithinAbs(3.0 / 8.0, 1e-12));  // 0.99, 1.0, 0.96
    }
    SECTION("empty input and out-of-range values are rejected") {
        CHECK_THROWS_AS(confidence_histogram({}, {0.5, 1.0}), std::invalid_argument);
        MapD bad(1, 1, 1.5);
        CHECK_THROWS_AS(confidence_histogram({bad}, {0.5, 1.0}), std::invalid_argument);
    }
}

TEST_CASE("cgl fixtures") {
    SECTION("mu = 0.5 equals the plain mean because confidence never drops below 0.5") {
        MapD loss(1, 4), conf(1, 4);
        loss.data = {1.0, 2.0, 3.0, 4.0};
        conf.data = {0.5, 0.7, 0.9, 1.0};
        CglResult res = cgl(loss, conf, 0.5);
        CHECK(res.kept == 4);
        CHECK(res.masked_loss.data == loss.data);
        CHECK_THAT(res.mean, WithinAbs(2.5, 1e-12));
    }
    SECTION("the three-pixel fixture averages to 2.0") {
        MapD loss(1, 3), conf(1, 3);
        conf.data = {0.96, 0.9, 0.99};
        loss.data = {1.0, 2.0, 3.0};
        CglResult res = cgl(loss, conf, 0.95);
        CHECK(res.masked_loss.data == std::vector<double>{1.0, 0.0, 3.0});
        CHECK_THAT(res.mean, WithinAbs(2.0, 1e-12));
        CHECK(res.kept == 2);
    }
    SECTION("everything below mu gives zero mean over zero kept pixels") {
        MapD loss(1, 2, 5.0), conf(1, 2, 0.6);
        CglResult res = cgl(loss, conf, 0.99);
        CHECK(res.kept == 0);
        CHECK_THAT(res.mean, WithinAbs(0.0, 1e-12));
    }
    SECTION("shape mismatch and bad mu are rejected") {
        MapD loss(1, 2), conf(2, 1);
        CHECK_THROWS_AS(cgl(loss, conf, 0.9), std::invalid_argument);
        MapD ok(1, 2);
        CHECK_THROWS_AS(cgl(ok, ok, 1.5), std::invalid_argument);
    }
}

TEST_CASE("cgl kept set and masked sum are non-increasing in mu") {
    SplitMix64 rng(606);
    MapD loss(8, 8), conf(8, 8);
    for (auto& v : loss.data) v = rng.uniform01() * 3.0;  // non-negative losses
    for (auto& v : conf.data) v = 0.5 + 0.5 * rng.uniform01();
    int64_t prev_kept = std::numeric_limits<int64_t>::max();
    double prev_sum = std::numeric_limits<double>::max();
    for (double mu : {0.5, 0.6, 0.7, 0.8, 0.9, 0.99}) {
        CglResult res = cgl(loss, conf, mu);
        const double sum =
            std::accumulate(res.masked_loss.data.begin(), res.masked_loss.data.end(), 0.0);
        CHECK(res.kept <= prev_kept);
        CHECK(sum <= prev_sum + 1e-12);
        prev_kept = res.kept;
        prev_sum = sum;
    }
}

TEST_CASE("confidence lower bound holds on a million random stacks") {
    // per-pixel stacks drawn uniformly; Conf = max(1 - m, m) >= 0.5 always,
    // with equality exactly at m = 0.5
    std::mt19937_64 rng(12345);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);
    double min_conf = 1.0;
    for (int i = 0; i < 1000000; ++i) {
        const int k = 1 + int(rng() % 4);
        double m = 0.0;
        for (int c = 0; c < k; ++c) m = std::max(m, uniform(rng));
        const double conf = std::max(1.0 - m, m);
        min_conf = std::min(min_conf, conf);
        if (conf < 0.5) FAIL("confidence below 0.5");
    }
    CHECK(min_conf >= 0.5);
}

TEST_CASE("the ignore-stamping route and the loss-map route agree") {
    // Route A: finalize() stamps 255 where conf < mu, cross-entropy averaged
    // over surviving pixels. Route B: cgl() masks the same loss map. Both
    // implement the same gate, so the scalars must match exactly.
    SplitMix64 rng(9191);
    CamStack cams;
    cams.class_ids = {0, 1};
    cams.maps.assign(2, MapD(9, 9));
    for (auto& m : cams.maps)
        for (auto& v : m.data) v = rng.uniform01();
    cams.normalized = true;
    ProbabilityStack stack = to_probabilities(cams);
    MapD conf = confidence_map(stack);

    // synthetic per-pixel loss: cross-entropy of a fake prediction against
    // the argmax label
    MapD loss(9, 9);
    for (auto& v : loss.data) v = rng.uniform01() * 2.0;

    for (double mu : {0.5, 0.75, 0.9}) {
        PseudoMask mask = finalize(stack, mu);
        double sum_a = 0;
        int64_t kept_a = 0;
        for (size_t i = 0; i < mask.labels.labels.size(); ++i) {
            if (mask.labels.labels[i] == kIgnoreLabel) continue;
            sum_a += loss.data[i];
            ++kept_a;
        }
        const double mean_a = sum_a / double(std::max<int64_t>(1, kept_a));

        CglResult res = cgl(loss, conf, mu);
        CHECK(res.kept == kept_a);
        CHECK_THAT(res.mean, WithinAbs(mean_a, 1e-12));
    }
}
