#include "xcam/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "xcam/error.hpp"
#include "xcam/rng.hpp"

namespace xcam {

ConfusionCounts confusion(const std::vector<double>& scores, const std::vector<int>& labels,
                          double threshold) {
    if (scores.size() != labels.size() || scores.empty())
        throw ValidationError("confusion requires equal-length non-empty score/label vectors");
    ConfusionCounts c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1)
            throw ValidationError("label at index " + std::to_string(i) + " must be 0 or 1");
        const bool pred = scores[i] >= threshold;
        if (pred && labels[i] == 1) ++c.tp;
        else if (pred && labels[i] == 0) ++c.fp;
        else if (!pred && labels[i] == 1) ++c.fn;
        else ++c.tn;
    }
    return c;
}

namespace {
std::optional<double> ratio_pct(long num, long den) {
    if (den == 0) return std::nullopt;
    return 100.0 * static_cast<double>(num) / static_cast<double>(den);
}
} // namespace

MetricsRecord metrics_from_confusion(const ConfusionCounts& c) {
    if (c.total() <= 0) throw ValidationError("confusion counts are empty");
    MetricsRecord m;
    m.accuracy = ratio_pct(c.tp + c.tn, c.total());
    m.sensitivity = ratio_pct(c.tp, c.tp + c.fn);
    m.specificity = ratio_pct(c.tn, c.tn + c.fp);
    m.ppv = ratio_pct(c.tp, c.tp + c.fp);
    m.npv = ratio_pct(c.tn, c.tn + c.fn);
    if (m.ppv && m.sensitivity && (*m.ppv + *m.sensitivity) > 0.0)
        m.f1 = 2.0 * *m.ppv * *m.sensitivity / (*m.ppv + *m.sensitivity);
    return m;
}

PrCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size() || scores.empty())
        throw ValidationError("pr_curve requires equal-length non-empty score/label vectors");
    long positives = 0;
    for (int l : labels) {
        if (l != 0 && l != 1) throw ValidationError("pr_curve labels must be 0 or 1");
        positives += l;
    }
    if (positives == 0) throw ValidationError("pr_curve requires at least one positive label");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    PrCurve curve;
    long tp = 0, fp = 0;
    double prev_recall = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        const double threshold = scores[order[i]];
        // All samples tied at this score share the threshold.
        while (i < order.size() && scores[order[i]] == threshold) {
            (labels[order[i]] == 1 ? tp : fp) += 1;
            ++i;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(positives);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        curve.auprc += (recall - prev_recall) * precision;
        curve.points.push_back({threshold, recall, precision});
        prev_recall = recall;
    }
    return curve;
}

FoldPlan stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed) {
    if (k < 2) throw ConfigError("k-fold requires k >= 2");
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1) pos.push_back(i);
        else if (labels[i] == 0) neg.push_back(i);
        else throw ValidationError("fold labels must be 0 or 1");
    }
    if (pos.empty() || neg.empty())
        throw ValidationError("fold labels must contain both classes (have " +
                              std::to_string(pos.size()) + " positive, " +
                              std::to_string(neg.size()) + " negative)");
    if (static_cast<std::size_t>(k) > labels.size())
        throw ConfigError("k=" + std::to_string(k) + " exceeds the sample count " +
                          std::to_string(labels.size()));

    FoldPlan plan;
    plan.k = k;
    plan.folds.assign(static_cast<std::size_t>(k), {});
    std::vector<std::size_t> load(static_cast<std::size_t>(k), 0);

    // Larger class first so its remainder seeds the size balancing.
    std::vector<std::pair<std::vector<std::size_t>*, std::uint64_t>> classes;
    if (pos.size() >= neg.size()) classes = {{&pos, 1}, {&neg, 0}};
    else classes = {{&neg, 0}, {&pos, 1}};

    for (auto& [members, stream] : classes) {
        Rng rng = Rng::derive(seed, stream);
        rng.shuffle(*members);

        const std::size_t base = members->size() / static_cast<std::size_t>(k);
        const std::size_t extra = members->size() % static_cast<std::size_t>(k);
        std::vector<std::size_t> quota(static_cast<std::size_t>(k), base);

        // Hand remainders to the folds with the smallest running size,
        // lowest index first on ties.
        std::vector<std::size_t> fold_order(static_cast<std::size_t>(k));
        std::iota(fold_order.begin(), fold_order.end(), std::size_t{0});
        std::stable_sort(fold_order.begin(), fold_order.end(),
                         [&](std::size_t a, std::size_t b) { return load[a] < load[b]; });
        for (std::size_t e = 0; e < extra; ++e) quota[fold_order[e]] += 1;

        std::size_t cursor = 0;
        for (std::size_t f = 0; f < static_cast<std::size_t>(k); ++f) {
            for (std::size_t q = 0; q < quota[f]; ++q)
                plan.folds[f].push_back((*members)[cursor++]);
            load[f] += quota[f];
        }
    }
    for (auto& fold : plan.folds) std::sort(fold.begin(), fold.end());
    return plan;
}

std::vector<double> score_samples(Model& model, const std::vector<Sample>& samples,
                                  const std::vector<std::size_t>& indices, int batch_size) {
    std::vector<double> scores;
    scores.reserve(indices.size());
    for (std::size_t start = 0; start < indices.size();
         start += static_cast<std::size_t>(batch_size)) {
        const std::size_t stop =
            std::min(indices.size(), start + static_cast<std::size_t>(batch_size));
        std::vector<std::size_t> idx(indices.begin() + static_cast<std::ptrdiff_t>(start),
                                     indices.begin() + static_cast<std::ptrdiff_t>(stop));
        Model::ForwardResult fr = model.forward(make_batch(samples, idx), false);
        for (double p : positive_probability(fr.logits)) scores.push_back(p);
    }
    return scores;
}

namespace {

std::optional<double> mean_defined(const std::vector<std::optional<double>>& values) {
    double sum = 0.0;
    int n = 0;
    for (const auto& v : values)
        if (v) { sum += *v; ++n; }
    if (n == 0) return std::nullopt;
    return sum / n;
}

} // namespace

CrossValResult cross_validate(const std::vector<Sample>& samples, const CrossValConfig& cfg,
                              std::uint64_t seed) {
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const Sample& s : samples) labels.push_back(s.label);

    CrossValResult result;
    result.plan = stratified_kfold(labels, cfg.k, seed);

    std::vector<double> pooled_scores;
    std::vector<int> pooled_labels;

    for (int f = 0; f < cfg.k; ++f) {
        const std::vector<std::size_t>& test_idx = result.plan.folds[static_cast<std::size_t>(f)];
        std::vector<bool> held(samples.size(), false);
        for (std::size_t i : test_idx) held[i] = true;
        std::vector<Sample> train_split;
        train_split.reserve(samples.size() - test_idx.size());
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (!held[i]) train_split.push_back(samples[i]);

        const std::uint64_t model_seed = Rng::derive(seed, 1000 + static_cast<std::uint64_t>(f)).next_u64();
        const std::uint64_t train_seed = Rng::derive(seed, 2000 + static_cast<std::uint64_t>(f)).next_u64();
        Model model = build_network(cfg.family, cfg.build, model_seed);

        FoldResult fr;
        fr.fold = f;
        fr.test_indices = test_idx;
        fr.manifest = train(model, train_split, cfg.adam, cfg.schedule, train_seed);
        fr.scores = score_samples(model, samples, test_idx, cfg.schedule.batch_size);

        std::vector<int> test_labels;
        test_labels.reserve(test_idx.size());
        for (std::size_t i : test_idx) test_labels.push_back(samples[i].label);
        fr.counts = confusion(fr.scores, test_labels);
        fr.metrics = metrics_from_confusion(fr.counts);
        try {
            fr.metrics.auprc = pr_curve(fr.scores, test_labels).auprc;
        } catch (const ValidationError&) {
            fr.metrics.auprc = std::nullopt;
        }

        pooled_scores.insert(pooled_scores.end(), fr.scores.begin(), fr.scores.end());
        pooled_labels.insert(pooled_labels.end(), test_labels.begin(), test_labels.end());
        result.folds.push_back(std::move(fr));
        if (cfg.keep_models) result.models.push_back(std::move(model));
    }

    result.pooled_confusion = confusion(pooled_scores, pooled_labels);
    result.pooled = metrics_from_confusion(result.pooled_confusion);
    result.pooled_curve = pr_curve(pooled_scores, pooled_labels);
    result.pooled.auprc = result.pooled_curve.auprc;

    auto collect = [&](auto member) {
        std::vector<std::optional<double>> vs;
        for (const FoldResult& fr : result.folds) vs.push_back(fr.metrics.*member);
        return mean_defined(vs);
    };
    result.averaged.accuracy = collect(&MetricsRecord::accuracy);
    result.averaged.f1 = collect(&MetricsRecord::f1);
    result.averaged.sensitivity = collect(&MetricsRecord::sensitivity);
    result.averaged.specificity = collect(&MetricsRecord::specificity);
    result.averaged.ppv = collect(&MetricsRecord::ppv);
    result.averaged.npv = collect(&MetricsRecord::npv);
    result.averaged.auprc = collect(&MetricsRecord::auprc);
    return result;
}

namespace {

struct ReportRow {
    const char* name;
    std::optional<double> MetricsRecord::*member;
    int decimals;
};

constexpr ReportRow kRows[] = {
    {"Accuracy", &MetricsRecord::accuracy, 2},
    {"F1 score", &MetricsRecord::f1, 2},
    {"Sensitivity", &MetricsRecord::sensitivity, 2},
    {"Specificity", &MetricsRecord::specificity, 2},
    {"Precision (PPV)", &MetricsRecord::ppv, 2},
    {"NPV", &MetricsRecord::npv, 2},
    {"AUPRC", &MetricsRecord::auprc, 3},
};

std::string format_value(const std::optional<double>& v, int decimals) {
    if (!v) return "—";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, *v);
    return buf;
}

} // namespace

std::string render_report(const std::vector<std::pair<std::string, MetricsRecord>>& records) {
    if (records.empty()) throw ValidationError("report needs at least one record");

    bool any_auprc = false;
    for (const auto& [name, m] : records)
        if (m.auprc) any_auprc = true;

    std::vector<std::vector<std::string>> cells;  // rows x (1 + columns)
    std::vector<std::string> header{"Metric"};
    for (const auto& [name, m] : records) header.push_back(name);
    cells.push_back(header);

    for (const ReportRow& row : kRows) {
        if (row.member == &MetricsRecord::auprc && !any_auprc) continue;
        std::vector<std::string> line{row.name};
        // Best column by arithmetic argmax over defined values, first wins.
        int best = -1;
        double best_v = 0.0;
        for (std::size_t c = 0; c < records.size(); ++c) {
            const auto& v = records[c].second.*(row.member);
            if (v && (best < 0 || *v > best_v)) {
                best = static_cast<int>(c);
                best_v = *v;
            }
        }
        for (std::size_t c = 0; c < records.size(); ++c) {
            std::string s = format_value(records[c].second.*(row.member), row.decimals);
            if (static_cast<int>(c) == best) s += " *";
            line.push_back(std::move(s));
        }
        cells.push_back(std::move(line));
    }

    std::vector<std::size_t> width(cells[0].size(), 0);
    for (const auto& line : cells)
        for (std::size_t c = 0; c < line.size(); ++c)
            width[c] = std::max(width[c], line[c].size());

    std::ostringstream os;
    for (std::size_t r = 0; r < cells.size(); ++r) {
        for (std::size_t c = 0; c < cells[r].size(); ++c) {
            if (c) os << " | ";
            os << cells[r][c];
            for (std::size_t pad = cells[r][c].size(); pad < width[c]; ++pad) os << ' ';
        }
        os << "\n";
        if (r == 0) {
            std::size_t total = 0;
            for (std::size_t c = 0; c < width.size(); ++c) total += width[c] + (c ? 3 : 0);
            os << std::string(total, '-') << "\n";
        }
    }
    os << "* best value in row\n";
    return os.str();
}

std::string metrics_json(const std::string& network, const std::string& scope,
                         const MetricsRecord& m, const ConfusionCounts* counts) {
    nlohmann::ordered_json j;
    j["network"] = network;
    j["scope"] = scope;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) j["metrics"][key] = *v;
        else j["metrics"][key] = nullptr;
    };
    put("accuracy", m.accuracy);
    put("f1", m.f1);
    put("sensitivity", m.sensitivity);
    put("specificity", m.specificity);
    put("ppv", m.ppv);
    put("npv", m.npv);
    put("auprc", m.auprc);
    if (counts)
        j["confusion"] = {{"tp", counts->tp}, {"fp", counts->fp}, {"fn", counts->fn}, {"tn", counts->tn}};
    return j.dump(2);
}

std::string pr_curve_csv(const PrCurve& curve) {
    std::ostringstream os;
    os << "threshold,recall,precision\n";
    os.precision(17);
    for (const PrPoint& p : curve.points)
        os << p.threshold << "," << p.recall << "," << p.precision << "\n";
    return os.str();
}

} // namespace xcam
