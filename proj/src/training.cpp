#include "xcam/training.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include <nlohmann/json.hpp>

#include "xcam/error.hpp"
#include "xcam/rng.hpp"

namespace xcam {

namespace {
constexpr double kProbClamp = 1e-7;
}

void AdamConfig::validate() const {
    if (!(beta1 > 0.0 && beta1 < beta2 && beta2 < 1.0))
        throw ConfigError("adam requires 0 < beta1 < beta2 < 1");
    if (eps <= 0.0) throw ConfigError("adam eps must be > 0");
    if (lr0 <= 0.0) throw ConfigError("initial learning rate must be > 0");
}

void ScheduleConfig::validate() const {
    if (step_epochs < 1 || total_epochs < 1)
        throw ConfigError("schedule requires step_epochs >= 1 and total_epochs >= 1");
    if (!(decay_factor > 0.0 && decay_factor < 1.0))
        throw ConfigError("decay factor must be in (0, 1)");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
}

OptimizerState OptimizerState::init(const std::vector<ParamRef>& params) {
    OptimizerState s;
    s.m.reserve(params.size());
    s.v.reserve(params.size());
    for (const ParamRef& p : params) {
        s.m.emplace_back(p.size, 0.0);
        s.v.emplace_back(p.size, 0.0);
    }
    return s;
}

double bce_loss(const std::vector<double>& probability, const std::vector<int>& label,
                std::vector<double>* d_probability) {
    if (probability.size() != label.size() || probability.empty())
        throw ValidationError("bce_loss requires equal-length non-empty vectors");
    const double n = static_cast<double>(probability.size());
    if (d_probability) d_probability->assign(probability.size(), 0.0);
    double loss = 0.0;
    for (std::size_t i = 0; i < probability.size(); ++i) {
        if (label[i] != 0 && label[i] != 1)
            throw ValidationError("bce_loss label at index " + std::to_string(i) +
                                  " must be 0 or 1, got " + std::to_string(label[i]));
        const double p = probability[i];
        const double pc = p < kProbClamp ? kProbClamp : (p > 1.0 - kProbClamp ? 1.0 - kProbClamp : p);
        loss += label[i] == 1 ? -std::log(pc) : -std::log(1.0 - pc);
        if (d_probability && p == pc)
            (*d_probability)[i] = (pc - static_cast<double>(label[i])) / (pc * (1.0 - pc)) / n;
    }
    return loss / n;
}

void adam_step(std::vector<ParamRef>& params, OptimizerState& state, const AdamConfig& cfg,
               double lr) {
    if (params.size() != state.m.size())
        throw ShapeError("optimizer state has " + std::to_string(state.m.size()) +
                         " slots, got " + std::to_string(params.size()) + " parameters");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < params.size(); ++i) {
        ParamRef& p = params[i];
        if (state.m[i].size() != p.size)
            throw ShapeError("optimizer slot " + std::to_string(i) + " size mismatch");
        double* m = state.m[i].data();
        double* v = state.v[i].data();
        for (std::size_t j = 0; j < p.size; ++j) {
            const double g = p.grad[j];
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p.value[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
        }
    }
}

double lr_at(int epoch, const AdamConfig& adam, const ScheduleConfig& sched) {
    if (epoch < 0 || epoch >= sched.total_epochs)
        throw ValidationError("epoch " + std::to_string(epoch) + " outside [0, " +
                              std::to_string(sched.total_epochs) + ")");
    return adam.lr0 * std::pow(sched.decay_factor, static_cast<double>(epoch / sched.step_epochs));
}

std::vector<double> positive_probability(const Mat& logits) {
    std::vector<double> p(static_cast<std::size_t>(logits.rows));
    if (logits.cols == 1) {
        for (int i = 0; i < logits.rows; ++i) p[i] = sigmoid_scalar(logits.at(i, 0));
    } else if (logits.cols == 2) {
        for (int i = 0; i < logits.rows; ++i)
            p[i] = sigmoid_scalar(logits.at(i, 1) - logits.at(i, 0));
    } else {
        throw ShapeError("expected 1 or 2 logits, got " + std::to_string(logits.cols));
    }
    return p;
}

Mat bce_logit_grad(const Mat& logits, const std::vector<double>& probability,
                   const std::vector<double>& d_probability) {
    Mat d(logits.rows, logits.cols);
    for (int i = 0; i < logits.rows; ++i) {
        const double dz = d_probability[i] * probability[i] * (1.0 - probability[i]);
        if (logits.cols == 1) {
            d.at(i, 0) = dz;
        } else {
            d.at(i, 1) = dz;
            d.at(i, 0) = -dz;
        }
    }
    return d;
}

Tensor4 make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& indices) {
    if (indices.empty()) throw ValidationError("empty batch");
    const Grid& first = samples[indices[0]].image;
    Tensor4 batch(static_cast<int>(indices.size()), 1, first.h, first.w);
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const Grid& g = samples[indices[i]].image;
        if (g.h != first.h || g.w != first.w)
            throw ShapeError("batch images disagree on size");
        std::copy(g.v.begin(), g.v.end(),
                  batch.data.begin() + static_cast<std::ptrdiff_t>(i * g.v.size()));
    }
    return batch;
}

std::string RunManifest::to_json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["config"] = {
        {"adam", {{"beta1", adam.beta1}, {"beta2", adam.beta2}, {"eps", adam.eps}, {"lr0", adam.lr0}}},
        {"schedule",
         {{"step_epochs", schedule.step_epochs},
          {"decay_factor", schedule.decay_factor},
          {"total_epochs", schedule.total_epochs},
          {"batch_size", schedule.batch_size}}}};
    j["epochs"] = nlohmann::ordered_json::array();
    for (const EpochRecord& e : epochs)
        j["epochs"].push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"mean_loss", e.mean_loss}});
    j["wall_seconds"] = wall_seconds;
    return j.dump(2);
}

RunManifest train(Model& model, const std::vector<Sample>& split, const AdamConfig& adam,
                  const ScheduleConfig& sched, std::uint64_t seed) {
    adam.validate();
    sched.validate();
    if (split.empty()) throw ValidationError("training split is empty");
    bool has_pos = false, has_neg = false;
    for (const Sample& s : split) {
        if (s.label == 1) has_pos = true;
        else if (s.label == 0) has_neg = true;
        else throw ValidationError("training label must be 0 or 1");
    }
    if (!has_pos || !has_neg)
        throw ValidationError("training split must contain both classes");

    const auto t0 = std::chrono::steady_clock::now();
    RunManifest manifest;
    manifest.seed = seed;
    manifest.adam = adam;
    manifest.schedule = sched;

    std::vector<ParamRef> params = model.trainable();
    OptimizerState state = OptimizerState::init(params);

    std::vector<std::size_t> order(split.size());
    std::iota(order.begin(), order.end(), std::size_t{0});

    for (int epoch = 0; epoch < sched.total_epochs; ++epoch) {
        const double lr = lr_at(epoch, adam, sched);
        Rng shuffle_rng = Rng::derive(seed, static_cast<std::uint64_t>(epoch));
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle_rng.shuffle(order);

        double loss_sum = 0.0;
        int batch_index = 0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(sched.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(sched.batch_size));
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(stop));
            Tensor4 batch = make_batch(split, idx);
            std::vector<int> labels;
            labels.reserve(idx.size());
            for (std::size_t i : idx) labels.push_back(split[i].label);

            Model::ForwardResult fr = model.forward(batch, true);
            std::vector<double> p = positive_probability(fr.logits);
            std::vector<double> dp;
            const double loss = bce_loss(p, labels, &dp);
            if (!std::isfinite(loss))
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index));

            model.zero_grad();
            model.backward(bce_logit_grad(fr.logits, p, dp));
            adam_step(params, state, adam, lr);

            loss_sum += loss * static_cast<double>(idx.size());
            ++batch_index;
        }
        manifest.epochs.push_back({epoch, lr, loss_sum / static_cast<double>(split.size())});
    }

    manifest.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return manifest;
}

} // namespace xcam
