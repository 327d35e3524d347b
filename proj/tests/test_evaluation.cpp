#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "xcam/evaluation.hpp"
#include "xcam/rng.hpp"

using namespace xcam;

namespace {

// Brute-force average precision: for every distinct score taken as a
// threshold (descending, ties grouped), precision at that cut weighted by the
// recall gained there.
double auprc_brute_force(const std::vector<double>& scores, const std::vector<int>& labels) {
    std::vector<double> uniq(scores);
    std::sort(uniq.begin(), uniq.end(), std::greater<double>());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    long total_pos = 0;
    for (int y : labels) total_pos += y;
    double area = 0.0, prev_recall = 0.0;
    for (double th : uniq) {
        long tp = 0, fp = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= th) (labels[i] == 1 ? tp : fp) += 1;
        }
        const double recall = static_cast<double>(tp) / total_pos;
        const double precision = static_cast<double>(tp) / (tp + fp);
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    return area;
}

ConfusionCounts confusion_brute_force(const std::vector<double>& s, const std::vector<int>& y,
                                      double th) {
    ConfusionCounts c;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const bool pred = s[i] >= th;
        if (pred && y[i] == 1) ++c.tp;
        else if (pred && y[i] == 0) ++c.fp;
        else if (!pred && y[i] == 1) ++c.fn;
        else ++c.tn;
    }
    return c;
}

} // namespace

TEST_CASE("confusion counts with ties at the threshold counted positive") {
    std::vector<double> s = {0.9, 0.5, 0.499999, 0.1};
    std::vector<int> y = {1, 0, 1, 0};
    ConfusionCounts c = confusion(s, y);
    CHECK(c.tp == 1);
    CHECK(c.fp == 1);  // the exact 0.5 negative
    CHECK(c.fn == 1);
    CHECK(c.tn == 1);
}

TEST_CASE("confusion matches a brute-force recount on random inputs") {
    Rng rng(1);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> s(20);
        std::vector<int> y(20);
        for (int i = 0; i < 20; ++i) {
            s[i] = std::round(rng.uniform() * 10.0) / 10.0;  // force ties
            y[i] = rng.below(2) ? 1 : 0;
        }
        const double th = rng.uniform();
        ConfusionCounts a = confusion(s, y, th);
        ConfusionCounts b = confusion_brute_force(s, y, th);
        CHECK(a.tp == b.tp);
        CHECK(a.fp == b.fp);
        CHECK(a.fn == b.fn);
        CHECK(a.tn == b.tn);
        CHECK(a.total() == 20);
    }
}

TEST_CASE("metrics from a hand-checked confusion") {
    ConfusionCounts c{6, 2, 2, 6};
    MetricsRecord m = metrics_from_confusion(c);
    CHECK(*m.accuracy == doctest::Approx(75.0));
    CHECK(*m.sensitivity == doctest::Approx(75.0));
    CHECK(*m.specificity == doctest::Approx(75.0));
    CHECK(*m.ppv == doctest::Approx(75.0));
    CHECK(*m.npv == doctest::Approx(75.0));
    CHECK(*m.f1 == doctest::Approx(75.0));
}

TEST_CASE("perfect and degenerate classifiers") {
    MetricsRecord perfect = metrics_from_confusion({5, 0, 0, 5});
    CHECK(*perfect.accuracy == 100.0);
    CHECK(*perfect.f1 == 100.0);

    // all predicted negative: PPV and F1 undefined, not zero
    MetricsRecord m = metrics_from_confusion({0, 0, 4, 6});
    CHECK(*m.accuracy == doctest::Approx(60.0));
    CHECK(!m.ppv.has_value());
    CHECK(!m.f1.has_value());
    CHECK(*m.sensitivity == 0.0);
    CHECK(*m.specificity == 100.0);

    // no negatives in the fold: specificity undefined; NPV is 0/1 = 0 here
    MetricsRecord p = metrics_from_confusion({3, 0, 1, 0});
    CHECK(!p.specificity.has_value());
    CHECK(*p.npv == 0.0);

    // nothing predicted negative at all: NPV undefined too
    MetricsRecord q = metrics_from_confusion({3, 2, 0, 0});
    CHECK(!q.npv.has_value());
    CHECK(*q.specificity == 0.0);  // 0 / (0 + 2)
}

TEST_CASE("f1 is the harmonic mean of ppv and sensitivity") {
    ConfusionCounts c{8, 4, 2, 6};
    MetricsRecord m = metrics_from_confusion(c);
    const double ppv = 8.0 / 12.0, sens = 8.0 / 10.0;
    CHECK(*m.f1 == doctest::Approx(100.0 * 2.0 * ppv * sens / (ppv + sens)).epsilon(1e-12));
}

TEST_CASE("pr_curve on a hand-worked example") {
    // scores (desc): 0.9(+), 0.8(-), 0.7(+), 0.1(-)
    std::vector<double> s = {0.9, 0.8, 0.7, 0.1};
    std::vector<int> y = {1, 0, 1, 0};
    PrCurve c = pr_curve(s, y);
    REQUIRE(c.points.size() == 4);
    CHECK(c.points[0].recall == doctest::Approx(0.5));
    CHECK(c.points[0].precision == doctest::Approx(1.0));
    CHECK(c.points[2].recall == doctest::Approx(1.0));
    CHECK(c.points[2].precision == doctest::Approx(2.0 / 3.0));
    // AP = 0.5*1 + 0*.5 + 0.5*(2/3) + 0*(2/4)
    CHECK(c.auprc == doctest::Approx(0.8333333333).epsilon(1e-9));
}

TEST_CASE("pr_curve groups tied scores into one threshold") {
    std::vector<double> s = {0.7, 0.7, 0.7, 0.2};
    std::vector<int> y = {1, 0, 1, 0};
    PrCurve c = pr_curve(s, y);
    REQUIRE(c.points.size() == 2);
    CHECK(c.points[0].threshold == 0.7);
    CHECK(c.points[0].recall == doctest::Approx(1.0));
    CHECK(c.points[0].precision == doctest::Approx(2.0 / 3.0));
    CHECK(c.auprc == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("pr_curve matches exhaustive enumeration for every labelling up to n = 12") {
    for (int n = 1; n <= 12; ++n) {
        std::vector<double> scores(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) scores[i] = (i % 5) * 0.2 + (i / 5) * 0.01;
        for (unsigned mask = 1; mask < (1u << n); ++mask) {  // need >= 1 positive
            std::vector<int> labels(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) labels[i] = (mask >> i) & 1u;
            PrCurve c = pr_curve(scores, labels);
            const double ref = auprc_brute_force(scores, labels);
            CHECK(std::abs(c.auprc - ref) < 1e-12);
        }
    }
}

TEST_CASE("auprc is invariant under strictly increasing score transforms") {
    Rng rng(2);
    std::vector<double> s(25);
    std::vector<int> y(25);
    for (int i = 0; i < 25; ++i) {
        s[i] = rng.uniform();
        y[i] = rng.below(2) ? 1 : 0;
    }
    y[0] = 1;
    std::vector<double> t(s);
    for (double& v : t) v = std::tanh(3.0 * v) + 2.0;
    CHECK(pr_curve(s, y).auprc == doctest::Approx(pr_curve(t, y).auprc).epsilon(1e-12));
}

TEST_CASE("auprc of a random scorer concentrates near prevalence") {
    Rng rng(3);
    const int n = 4000;
    std::vector<double> s(n);
    std::vector<int> y(n);
    int pos = 0;
    for (int i = 0; i < n; ++i) {
        s[i] = rng.uniform();
        y[i] = rng.uniform() < 0.3 ? 1 : 0;
        pos += y[i];
    }
    const double prevalence = static_cast<double>(pos) / n;
    CHECK(std::abs(pr_curve(s, y).auprc - prevalence) < 0.05);
}

TEST_CASE("pr_curve requires a positive label") {
    CHECK_THROWS_AS(pr_curve({0.3, 0.4}, {0, 0}), ValidationError);
}

TEST_CASE("stratified folds of an 88/65 cohort") {
    std::vector<int> labels(153);
    for (int i = 0; i < 88; ++i) labels[i] = 1;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        FoldPlan plan = stratified_kfold(labels, 10, seed);
        REQUIRE(plan.folds.size() == 10);
        std::vector<std::size_t> all;
        for (const auto& fold : plan.folds) {
            CHECK(fold.size() >= 15);
            CHECK(fold.size() <= 16);
            int pos = 0, neg = 0;
            for (std::size_t i : fold) (labels[i] == 1 ? pos : neg) += 1;
            CHECK(pos >= 8);
            CHECK(pos <= 9);
            CHECK(neg >= 6);
            CHECK(neg <= 7);
            all.insert(all.end(), fold.begin(), fold.end());
        }
        std::sort(all.begin(), all.end());
        REQUIRE(all.size() == 153);
        for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);  // exact partition
    }
}

TEST_CASE("k = n folds degenerate to leave-one-out") {
    std::vector<int> labels = {1, 1, 0, 0, 1, 0};
    FoldPlan plan = stratified_kfold(labels, 6, 9);
    CHECK(plan.folds.size() == 6);
    for (const auto& fold : plan.folds) CHECK(fold.size() == 1);
}

TEST_CASE("fold plans partition arbitrary label vectors") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        const int n = 20 + static_cast<int>(rng.below(60));
        std::vector<int> labels(static_cast<std::size_t>(n));
        for (int& y : labels) y = rng.below(2) ? 1 : 0;
        labels[0] = 1;
        labels[1] = 0;
        const int k = 2 + static_cast<int>(rng.below(6));
        FoldPlan plan = stratified_kfold(labels, k, trial);
        std::set<std::size_t> seen;
        std::size_t min_sz = static_cast<std::size_t>(n), max_sz = 0;
        for (const auto& fold : plan.folds) {
            min_sz = std::min(min_sz, fold.size());
            max_sz = std::max(max_sz, fold.size());
            for (std::size_t i : fold) CHECK(seen.insert(i).second);
        }
        CHECK(seen.size() == static_cast<std::size_t>(n));
        CHECK(max_sz - min_sz <= 1);
    }
}

TEST_CASE("fold plans depend on the seed but are reproducible") {
    std::vector<int> labels(40);
    for (int i = 0; i < 18; ++i) labels[i] = 1;
    FoldPlan a = stratified_kfold(labels, 5, 1);
    FoldPlan b = stratified_kfold(labels, 5, 1);
    FoldPlan c = stratified_kfold(labels, 5, 2);
    CHECK(a.folds == b.folds);
    CHECK(a.folds != c.folds);
}

TEST_CASE("kfold validation errors") {
    std::vector<int> labels = {1, 0, 1, 0};
    CHECK_THROWS_AS(stratified_kfold(labels, 1, 0), ConfigError);
    CHECK_THROWS_AS(stratified_kfold(labels, 5, 0), ConfigError);  // k > class count
    CHECK_THROWS_AS(stratified_kfold({1, 1, 1}, 2, 0), ValidationError);
}

namespace {

std::vector<Sample> blob_samples(int n_per_class, int size, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<Sample> out;
    for (int cls = 0; cls < 2; ++cls)
        for (int i = 0; i < n_per_class; ++i) {
            Sample s;
            s.label = cls;
            s.image = Grid(size, size);
            for (int y = 0; y < size; ++y)
                for (int x = 0; x < size; ++x) {
                    double v = 0.1 + 0.05 * rng.uniform();
                    const double dy = y - size / 2.0, dx = x - size / 2.0;
                    if (cls == 1 && dy * dy + dx * dx < size * size / 16.0) v += 0.6;
                    s.image.at(y, x) = v;
                }
            out.push_back(std::move(s));
        }
    return out;
}

} // namespace

TEST_CASE("cross_validate pools every held-out prediction exactly once") {
    auto data = blob_samples(8, 16, 5);
    CrossValConfig cfg;
    cfg.family = Family::vgg;
    cfg.build.input_size = 16;
    cfg.build.width_multiplier = 0.25;
    cfg.schedule.total_epochs = 4;
    cfg.schedule.batch_size = 8;
    cfg.k = 2;
    CrossValResult res = cross_validate(data, cfg, 11);
    CHECK(res.folds.size() == 2);
    CHECK(res.pooled_confusion.total() == 16);
    long fold_total = 0;
    for (const FoldResult& f : res.folds) {
        CHECK(f.scores.size() == f.test_indices.size());
        fold_total += f.counts.total();
        for (double p : f.scores) {
            CHECK(p >= 0.0);
            CHECK(p <= 1.0);
        }
    }
    CHECK(fold_total == res.pooled_confusion.total());
    CHECK(res.pooled.accuracy.has_value());
    CHECK(res.pooled.auprc.has_value());
    CHECK(res.pooled_curve.points.size() > 0);

    // determinism across reruns
    CrossValResult res2 = cross_validate(data, cfg, 11);
    for (std::size_t f = 0; f < res.folds.size(); ++f)
        CHECK(res.folds[f].scores == res2.folds[f].scores);
}

TEST_CASE("render_report formats a fixed fixture") {
    MetricsRecord a;
    a.accuracy = 72.88;
    a.f1 = 78.26;
    a.sensitivity = 82.64;
    a.specificity = 58.12;
    a.ppv = 76.35;
    a.npv = 68.63;
    a.auprc = 0.864;
    MetricsRecord b;
    b.accuracy = 65.31;
    b.f1 = 70.00;
    b.sensitivity = 90.00;
    b.specificity = 40.00;
    b.ppv = 60.00;
    b.auprc = 0.643;
    const std::string table = render_report({{"SE-ResNext50", a}, {"VGG16", b}});

    CHECK(table.find("72.88 *") != std::string::npos);
    CHECK(table.find("90.00 *") != std::string::npos);  // best sensitivity is VGG
    CHECK(table.find("0.864 *") != std::string::npos);
    CHECK(table.find("—") != std::string::npos);  // missing NPV rendered as em dash
    CHECK(table.find("Accuracy") != std::string::npos);
    CHECK(table.find("F1 score") != std::string::npos);
    CHECK(table.find("Sensitivity") != std::string::npos);
    CHECK(table.find("Specificity") != std::string::npos);
    CHECK(table.find("Precision (PPV)") != std::string::npos);
    CHECK(table.find("NPV") != std::string::npos);
    CHECK(table.find("AUPRC") != std::string::npos);
    CHECK(table.find("SE-ResNext50") != std::string::npos);
}

TEST_CASE("render_report stars the first argmax of each row") {
    Rng rng(6);
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<std::pair<std::string, MetricsRecord>> recs;
        std::vector<double> accs;
        for (int c = 0; c < 4; ++c) {
            MetricsRecord m;
            m.accuracy = std::round(rng.uniform(50.0, 99.0) * 100.0) / 100.0;
            accs.push_back(*m.accuracy);
            recs.emplace_back("net" + std::to_string(c), m);
        }
        const std::string table = render_report(recs);
        const std::size_t best =
            static_cast<std::size_t>(std::max_element(accs.begin(), accs.end()) - accs.begin());
        int starred = 0;
        std::size_t pos = table.find('\n');
        // one star on the accuracy row, attached to the best column's value
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f *", accs[best]);
        CHECK(table.find(buf) != std::string::npos);
        for (char ch : table)
            if (ch == '*') ++starred;
        CHECK(starred == 2);  // the flag plus the legend line
        (void)pos;
    }
}

TEST_CASE("metrics_json carries nulls for undefined metrics") {
    MetricsRecord m = metrics_from_confusion({0, 0, 4, 6});
    ConfusionCounts c{0, 0, 4, 6};
    const std::string js = metrics_json("vgg", "pooled", m, &c);
    CHECK(js.find("\"network\": \"vgg\"") != std::string::npos);
    CHECK(js.find("\"ppv\": null") != std::string::npos);
    CHECK(js.find("\"tn\": 6") != std::string::npos);
    CHECK(js.find("\"accuracy\": 60.0") != std::string::npos);
}

TEST_CASE("pr_curve_csv round-trips the points at full precision") {
    PrCurve c = pr_curve({0.9, 0.8, 0.7, 0.1}, {1, 0, 1, 0});
    const std::string csv = pr_curve_csv(c);
    CHECK(csv.rfind("threshold,recall,precision\n", 0) == 0);
    std::size_t lines = std::count(csv.begin(), csv.end(), '\n');
    CHECK(lines == c.points.size() + 1);
}
