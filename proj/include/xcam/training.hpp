#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xcam/blocks.hpp"
#include "xcam/tensor.hpp"

namespace xcam {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr0 = 1e-3;

    void validate() const;
};

struct ScheduleConfig {
    int step_epochs = 30;
    double decay_factor = 0.1;
    int total_epochs = 120;
    int batch_size = 32;

    void validate() const;
};

struct OptimizerState {
    std::vector<std::vector<double>> m, v;
    long long t = 0;

    static OptimizerState init(const std::vector<ParamRef>& params);
};

// Mean binary cross-entropy with probability clamp at [1e-7, 1-1e-7].
// d_probability, when non-null, receives the gradient of the mean.
double bce_loss(const std::vector<double>& probability, const std::vector<int>& label,
                std::vector<double>* d_probability = nullptr);

// Bias-corrected Adam update; increments state.t once per call.
void adam_step(std::vector<ParamRef>& params, OptimizerState& state, const AdamConfig& cfg,
               double lr);

// Step schedule: lr0 * decay^floor(epoch / step_epochs).
double lr_at(int epoch, const AdamConfig& adam, const ScheduleConfig& sched);

// Per-sample probability of the positive class. Single-logit heads apply a
// sigmoid; two-logit heads a softmax over (negative, positive).
std::vector<double> positive_probability(const Mat& logits);
// Gradient of mean BCE w.r.t. the logits, for either head mode.
Mat bce_logit_grad(const Mat& logits, const std::vector<double>& probability,
                   const std::vector<double>& d_probability);

struct Sample {
    Grid image;   // values in [0, 1], model input resolution
    int label = 0;
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double mean_loss = 0.0;
};

struct RunManifest {
    std::uint64_t seed = 0;
    AdamConfig adam;
    ScheduleConfig schedule;
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0;

    std::string to_json() const;
};

// Runs the full recipe on the split; deterministic given seed (per-epoch
// shuffles come from streams derived from (seed, epoch)).
RunManifest train(Model& model, const std::vector<Sample>& split, const AdamConfig& adam,
                  const ScheduleConfig& sched, std::uint64_t seed);

// Assembles samples[indices] into a (n, 1, h, w) batch.
Tensor4 make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices);

} // namespace xcam
