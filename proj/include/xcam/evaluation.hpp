#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "xcam/blocks.hpp"
#include "xcam/training.hpp"

namespace xcam {

struct ConfusionCounts {
    long tp = 0, fp = 0, fn = 0, tn = 0;
    long total() const { return tp + fp + fn + tn; }
};

// Percentages in [0, 100]; auprc in [0, 1]. nullopt marks a 0/0 metric.
struct MetricsRecord {
    std::optional<double> accuracy, f1, sensitivity, specificity, ppv, npv;
    std::optional<double> auprc;
};

// Predict positive iff score >= threshold (ties count positive).
ConfusionCounts confusion(const std::vector<double>& scores, const std::vector<int>& labels,
                          double threshold = 0.5);

MetricsRecord metrics_from_confusion(const ConfusionCounts& c);

struct PrPoint {
    double threshold = 0.0, recall = 0.0, precision = 0.0;
};

struct PrCurve {
    std::vector<PrPoint> points;  // thresholds strictly decreasing
    double auprc = 0.0;
};

// Sweeps unique score thresholds descending; AUPRC by step interpolation
// (average-precision convention). Requires at least one positive label.
PrCurve pr_curve(const std::vector<double>& scores, const std::vector<int>& labels);

struct FoldPlan {
    int k = 10;
    std::vector<std::vector<std::size_t>> folds;  // held-out indices per fold
};

// Per-class shuffled round-robin; class remainders go to the folds with the
// smallest running size so total fold sizes stay within 1 of each other.
FoldPlan stratified_kfold(const std::vector<int>& labels, int k, std::uint64_t seed);

struct CrossValConfig {
    Family family = Family::se_resnext;
    BuildOptions build;
    AdamConfig adam;
    ScheduleConfig schedule;
    int k = 10;
    bool keep_models = false;
};

struct FoldResult {
    int fold = 0;
    std::vector<std::size_t> test_indices;
    std::vector<double> scores;
    ConfusionCounts counts;
    MetricsRecord metrics;
    RunManifest manifest;
};

struct CrossValResult {
    FoldPlan plan;
    std::vector<FoldResult> folds;
    ConfusionCounts pooled_confusion;
    MetricsRecord pooled;    // from all held-out scores together
    MetricsRecord averaged;  // per-metric mean over folds, undefined excluded
    PrCurve pooled_curve;
    std::vector<Model> models;  // populated when cfg.keep_models
};

// Trains one model per fold and evaluates it on the held-out fold.
// Deterministic given seed.
CrossValResult cross_validate(const std::vector<Sample>& samples, const CrossValConfig& cfg,
                              std::uint64_t seed);

// Eval-mode positive-class scores for a slice of the sample set.
std::vector<double> score_samples(Model& model, const std::vector<Sample>& samples,
                                  const std::vector<std::size_t>& indices, int batch_size);

// Plain-text table: metrics as rows, networks as columns, best value per row
// flagged with '*', two-decimal percentages, undefined values as em dash.
std::string render_report(const std::vector<std::pair<std::string, MetricsRecord>>& records);

std::string metrics_json(const std::string& network, const std::string& scope,
                         const MetricsRecord& m, const ConfusionCounts* counts = nullptr);

std::string pr_curve_csv(const PrCurve& curve);

} // namespace xcam
