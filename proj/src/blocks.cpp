#include "xcam/blocks.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

namespace xcam {

namespace {

double kaiming_std(int fan_in) { return std::sqrt(2.0 / static_cast<double>(fan_in)); }

void fill_normal(std::vector<double>& v, double stddev, Rng& rng) {
    for (double& x : v) x = stddev * rng.normal();
}

int largest_divisor_at_most(int value, int cap) {
    for (int d = std::min(value, cap); d >= 1; --d)
        if (value % d == 0) return d;
    return 1;
}

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

} // namespace

// ---- NetworkSpec ----

void NetworkSpec::validate() const {
    if (stem.out_channels < 1) throw ConfigError("stem channels must be >= 1");
    if (head.logits != 1 && head.logits != 2)
        throw ConfigError("head logits must be 1 or 2, got " + std::to_string(head.logits));
    if (input_size < 8) throw ConfigError("input size must be >= 8");
    int ch = stem.out_channels;
    int size = input_size / stem.stride;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const BlockSpec& b = blocks[i];
        if (b.channels_in != ch)
            throw ConfigError("block " + std::to_string(i) + " expects " +
                              std::to_string(b.channels_in) + " input channels, chain has " +
                              std::to_string(ch));
        if (b.stride != 1 && b.stride != 2)
            throw ConfigError("block stride must be 1 or 2");
        ch = b.channels_out;
        size /= b.stride;
        if (size < 1) throw ConfigError("network downsamples input below 1x1");
    }
}

std::string NetworkSpec::canonical() const {
    std::ostringstream os;
    os << "family=" << family << ";stem=" << stem.out_channels << "," << stem.kernel << ","
       << stem.stride << ";";
    for (const BlockSpec& b : blocks) {
        os << "block=" << static_cast<int>(b.kind) << "," << b.channels_in << ","
           << b.channels_out << "," << b.stride << "," << b.cardinality << ","
           << b.se_reduction << ";";
    }
    os << "logits=" << head.logits << ";input=" << input_size;
    return os.str();
}

std::uint64_t NetworkSpec::digest() const { return fnv1a64(canonical()); }

// ---- ConvLayer ----

ConvLayer::ConvLayer(int in_ch, int out_ch, int ksize, int stride, int padding, int groups,
                     Rng& rng) {
    p.kernel = Tensor4(out_ch, in_ch / groups, ksize, ksize);
    p.bias.assign(static_cast<std::size_t>(out_ch), 0.0);
    p.stride = stride;
    p.padding = padding;
    p.groups = groups;
    if (in_ch % groups != 0)
        throw ConfigError("conv in channels " + std::to_string(in_ch) +
                          " not divisible by groups " + std::to_string(groups));
    p.validate();
    fill_normal(p.kernel.data, kaiming_std((in_ch / groups) * ksize * ksize), rng);
    d_kernel = Tensor4(out_ch, in_ch / groups, ksize, ksize);
    d_bias.assign(p.bias.size(), 0.0);
}

Tensor4 ConvLayer::forward(const Tensor4& x, bool) {
    cached_input_ = x;
    return conv2d(x, p);
}

Tensor4 ConvLayer::backward(const Tensor4& upstream) {
    ConvGrads g = conv2d_grad(cached_input_, p, upstream);
    for (std::size_t i = 0; i < d_kernel.size(); ++i) d_kernel.data[i] += g.d_kernel.data[i];
    for (std::size_t i = 0; i < d_bias.size(); ++i) d_bias[i] += g.d_bias[i];
    return std::move(g.d_input);
}

void ConvLayer::collect_trainable(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".weight", p.kernel.data.data(), d_kernel.data.data(),
                   {p.kernel.n, p.kernel.c, p.kernel.h, p.kernel.w}, p.kernel.size()});
    out.push_back({prefix + ".bias", p.bias.data(), d_bias.data(),
                   {static_cast<int>(p.bias.size())}, p.bias.size()});
}

// ---- BatchNormLayer ----

BatchNormLayer::BatchNormLayer(int channels) : p(channels) {
    d_gamma.assign(static_cast<std::size_t>(channels), 0.0);
    d_beta.assign(static_cast<std::size_t>(channels), 0.0);
}

Tensor4 BatchNormLayer::forward(const Tensor4& x, bool training) {
    cached_input_ = x;
    return batchnorm(x, p, training, &cache_);
}

Tensor4 BatchNormLayer::backward(const Tensor4& upstream) {
    BatchNormGrads g = batchnorm_grad(cached_input_, p, cache_, upstream);
    for (std::size_t i = 0; i < d_gamma.size(); ++i) d_gamma[i] += g.d_gamma[i];
    for (std::size_t i = 0; i < d_beta.size(); ++i) d_beta[i] += g.d_beta[i];
    return std::move(g.d_input);
}

void BatchNormLayer::collect_trainable(const std::string& prefix, std::vector<ParamRef>& out) {
    const int c = p.channels();
    out.push_back({prefix + ".gamma", p.gamma.data(), d_gamma.data(), {c}, p.gamma.size()});
    out.push_back({prefix + ".beta", p.beta.data(), d_beta.data(), {c}, p.beta.size()});
}

void BatchNormLayer::collect_state(const std::string& prefix, std::vector<ParamRef>& out) {
    collect_trainable(prefix, out);
    const int c = p.channels();
    out.push_back({prefix + ".running_mean", p.running_mean.data(), nullptr, {c},
                   p.running_mean.size()});
    out.push_back({prefix + ".running_var", p.running_var.data(), nullptr, {c},
                   p.running_var.size()});
}

// ---- ReluLayer ----

Tensor4 ReluLayer::forward(const Tensor4& x, bool) {
    cached_input_ = x;
    return relu(x);
}

Tensor4 ReluLayer::backward(const Tensor4& upstream) {
    return relu_grad(cached_input_, upstream);
}

// ---- SeGate ----

SeGate::SeGate(int channels_, int reduction, Rng& rng) : channels(channels_) {
    if (reduction < 1 || channels_ % reduction != 0)
        throw ConfigError("SE reduction " + std::to_string(reduction) +
                          " does not divide channels " + std::to_string(channels_));
    hidden = channels_ / reduction;
    w1 = Mat(hidden, channels_);
    b1.assign(static_cast<std::size_t>(hidden), 0.0);
    w2 = Mat(channels_, hidden);
    b2.assign(static_cast<std::size_t>(channels_), 0.0);
    fill_normal(w1.data, kaiming_std(channels_), rng);
    fill_normal(w2.data, kaiming_std(hidden), rng);
    d_w1 = Mat(hidden, channels_);
    d_w2 = Mat(channels_, hidden);
    d_b1.assign(b1.size(), 0.0);
    d_b2.assign(b2.size(), 0.0);
}

Tensor4 SeGate::forward(const Tensor4& x, bool) {
    if (x.c != channels)
        throw ShapeError("SE gate built for " + std::to_string(channels) +
                         " channels, got input " + x.shape_str());
    cached_input_ = x;
    pooled_ = gap(x);
    pre1_ = linear(pooled_, w1, b1);
    act1_ = pre1_;
    for (double& v : act1_.data) v = v > 0.0 ? v : 0.0;
    Mat pre2 = linear(act1_, w2, b2);
    scales_ = pre2;
    for (double& v : scales_.data) v = sigmoid_scalar(v);

    Tensor4 out(x.n, x.c, x.h, x.w);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int ni = 0; ni < x.n; ++ni) {
        for (int ci = 0; ci < x.c; ++ci) {
            const double s = scales_.at(ni, ci);
            const double* src = &x.data[(static_cast<std::size_t>(ni) * x.c + ci) * plane];
            double* dst = &out.data[(static_cast<std::size_t>(ni) * x.c + ci) * plane];
            for (std::size_t i = 0; i < plane; ++i) dst[i] = s * src[i];
        }
    }
    return out;
}

Tensor4 SeGate::backward(const Tensor4& upstream) {
    const Tensor4& x = cached_input_;
    if (!x.same_shape(upstream))
        throw ShapeError("SE upstream shape " + upstream.shape_str() + " != input " + x.shape_str());

    Tensor4 d_x(x.n, x.c, x.h, x.w);
    Mat d_s(x.n, x.c);
    const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
    for (int ni = 0; ni < x.n; ++ni) {
        for (int ci = 0; ci < x.c; ++ci) {
            const double s = scales_.at(ni, ci);
            const double* u = &upstream.data[(static_cast<std::size_t>(ni) * x.c + ci) * plane];
            const double* xv = &x.data[(static_cast<std::size_t>(ni) * x.c + ci) * plane];
            double* d = &d_x.data[(static_cast<std::size_t>(ni) * x.c + ci) * plane];
            double acc = 0.0;
            for (std::size_t i = 0; i < plane; ++i) {
                d[i] = s * u[i];
                acc += u[i] * xv[i];
            }
            d_s.at(ni, ci) = acc;
        }
    }

    Mat d_pre2 = d_s;
    for (std::size_t i = 0; i < d_pre2.data.size(); ++i)
        d_pre2.data[i] *= scales_.data[i] * (1.0 - scales_.data[i]);

    LinearGrads g2 = linear_grad(act1_, w2, d_pre2);
    for (std::size_t i = 0; i < d_w2.data.size(); ++i) d_w2.data[i] += g2.d_weights.data[i];
    for (std::size_t i = 0; i < d_b2.size(); ++i) d_b2[i] += g2.d_bias[i];

    Mat d_pre1 = g2.d_input;
    for (std::size_t i = 0; i < d_pre1.data.size(); ++i)
        if (pre1_.data[i] <= 0.0) d_pre1.data[i] = 0.0;

    LinearGrads g1 = linear_grad(pooled_, w1, d_pre1);
    for (std::size_t i = 0; i < d_w1.data.size(); ++i) d_w1.data[i] += g1.d_weights.data[i];
    for (std::size_t i = 0; i < d_b1.size(); ++i) d_b1[i] += g1.d_bias[i];

    Tensor4 d_pool = gap_grad(g1.d_input, x.h, x.w);
    for (std::size_t i = 0; i < d_x.size(); ++i) d_x.data[i] += d_pool.data[i];
    return d_x;
}

void SeGate::collect_trainable(const std::string& prefix, std::vector<ParamRef>& out) {
    out.push_back({prefix + ".w1", w1.data.data(), d_w1.data.data(), {w1.rows, w1.cols}, w1.data.size()});
    out.push_back({prefix + ".b1", b1.data(), d_b1.data(), {static_cast<int>(b1.size())}, b1.size()});
    out.push_back({prefix + ".w2", w2.data.data(), d_w2.data.data(), {w2.rows, w2.cols}, w2.data.size()});
    out.push_back({prefix + ".b2", b2.data(), d_b2.data(), {static_cast<int>(b2.size())}, b2.size()});
}

// ---- Sequential ----

void Sequential::add(const std::string& name, std::unique_ptr<Layer> layer) {
    layers_.emplace_back(name, std::move(layer));
}

Tensor4 Sequential::forward(const Tensor4& x, bool training) {
    Tensor4 cur = x;
    for (auto& [name, layer] : layers_) cur = layer->forward(cur, training);
    return cur;
}

Tensor4 Sequential::backward(const Tensor4& upstream) {
    Tensor4 cur = upstream;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) cur = it->second->backward(cur);
    return cur;
}

void Sequential::collect_trainable(const std::string& prefix, std::vector<ParamRef>& out) {
    for (auto& [name, layer] : layers_)
        layer->collect_trainable(prefix.empty() ? name : prefix + "." + name, out);
}

void Sequential::collect_state(const std::string& prefix, std::vector<ParamRef>& out) {
    for (auto& [name, layer] : layers_)
        layer->collect_state(prefix.empty() ? name : prefix + "." + name, out);
}

// ---- ResidualAdd ----

ResidualAdd::ResidualAdd(std::unique_ptr<Sequential> branch, std::unique_ptr<SeGate> se,
                         std::unique_ptr<Sequential> shortcut)
    : branch_(std::move(branch)), se_(std::move(se)), shortcut_(std::move(shortcut)) {}

Tensor4 ResidualAdd::forward(const Tensor4& x, bool training) {
    Tensor4 b = branch_->forward(x, training);
    if (se_) b = se_->forward(b, training);
    Tensor4 sc = shortcut_ ? shortcut_->forward(x, training) : x;
    if (!b.same_shape(sc))
        throw ShapeError("residual branch shape " + b.shape_str() + " != shortcut shape " +
                         sc.shape_str());
    for (std::size_t i = 0; i < b.size(); ++i) b.data[i] += sc.data[i];
    return b;
}

Tensor4 ResidualAdd::backward(const Tensor4& upstream) {
    Tensor4 d_branch = se_ ? se_->backward(upstream) : upstream;
    Tensor4 dx = branch_->backward(d_branch);
    if (shortcut_) {
        Tensor4 dx2 = shortcut_->backward(upstream);
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += dx2.data[i];
    } else {
        for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] += upstream.data[i];
    }
    return dx;
}

void ResidualAdd::collect_trainable(const std::string& prefix, std::vector<ParamRef>& out) {
    branch_->collect_trainable(prefix + ".branch", out);
    if (se_) se_->collect_trainable(prefix + ".se", out);
    if (shortcut_) shortcut_->collect_trainable(prefix + ".shortcut", out);
}

void ResidualAdd::collect_state(const std::string& prefix, std::vector<ParamRef>& out) {
    branch_->collect_state(prefix + ".branch", out);
    if (se_) se_->collect_state(prefix + ".se", out);
    if (shortcut_) shortcut_->collect_state(prefix + ".shortcut", out);
}

// ---- blocks ----

Tensor4 depthwise_separable(const Tensor4& x, const ConvParams& depthwise,
                            const ConvParams& pointwise) {
    return conv2d(conv2d(x, depthwise), pointwise);
}

namespace {

std::unique_ptr<Sequential> make_projection(const BlockSpec& spec, Rng& rng) {
    if (spec.stride == 1 && spec.channels_in == spec.channels_out) return nullptr;
    auto sc = std::make_unique<Sequential>();
    sc->add("conv", std::make_unique<ConvLayer>(spec.channels_in, spec.channels_out, 1,
                                                spec.stride, 0, 1, rng));
    sc->add("bn", std::make_unique<BatchNormLayer>(spec.channels_out));
    return sc;
}

std::unique_ptr<SeGate> make_se(const BlockSpec& spec, Rng& rng) {
    if (spec.se_reduction <= 0) return nullptr;
    return std::make_unique<SeGate>(spec.channels_out, spec.se_reduction, rng);
}

std::unique_ptr<Layer> make_plain_block(const BlockSpec& spec, Rng& rng) {
    auto seq = std::make_unique<Sequential>();
    seq->add("conv", std::make_unique<ConvLayer>(spec.channels_in, spec.channels_out, 3,
                                                 spec.stride, 1, 1, rng));
    seq->add("bn", std::make_unique<BatchNormLayer>(spec.channels_out));
    seq->add("relu", std::make_unique<ReluLayer>());
    return seq;
}

std::unique_ptr<Layer> make_bottleneck(const BlockSpec& spec, Rng& rng) {
    const int width = std::max(1, spec.channels_out / 2);
    if (spec.cardinality < 1 || width % spec.cardinality != 0)
        throw ConfigError("cardinality " + std::to_string(spec.cardinality) +
                          " does not divide bottleneck width " + std::to_string(width));
    auto branch = std::make_unique<Sequential>();
    branch->add("conv1", std::make_unique<ConvLayer>(spec.channels_in, width, 1, 1, 0, 1, rng));
    branch->add("bn1", std::make_unique<BatchNormLayer>(width));
    branch->add("relu1", std::make_unique<ReluLayer>());
    branch->add("conv2", std::make_unique<ConvLayer>(width, width, 3, spec.stride, 1,
                                                     spec.cardinality, rng));
    branch->add("bn2", std::make_unique<BatchNormLayer>(width));
    branch->add("relu2", std::make_unique<ReluLayer>());
    branch->add("conv3", std::make_unique<ConvLayer>(width, spec.channels_out, 1, 1, 0, 1, rng));
    branch->add("bn3", std::make_unique<BatchNormLayer>(spec.channels_out));
    return std::make_unique<ResidualAdd>(std::move(branch), make_se(spec, rng),
                                         make_projection(spec, rng));
}

std::unique_ptr<Layer> make_separable_block(const BlockSpec& spec, Rng& rng) {
    auto branch = std::make_unique<Sequential>();
    branch->add("dw", std::make_unique<ConvLayer>(spec.channels_in, spec.channels_in, 3,
                                                  spec.stride, 1, spec.channels_in, rng));
    branch->add("bn1", std::make_unique<BatchNormLayer>(spec.channels_in));
    branch->add("relu", std::make_unique<ReluLayer>());
    branch->add("pw", std::make_unique<ConvLayer>(spec.channels_in, spec.channels_out, 1, 1, 0, 1,
                                                  rng));
    branch->add("bn2", std::make_unique<BatchNormLayer>(spec.channels_out));
    return std::make_unique<ResidualAdd>(std::move(branch), make_se(spec, rng),
                                         make_projection(spec, rng));
}

} // namespace

std::unique_ptr<Layer> make_block(const BlockSpec& spec, Rng& rng) {
    if (spec.channels_in < 1 || spec.channels_out < 1)
        throw ConfigError("block channel counts must be >= 1");
    if (spec.stride != 1 && spec.stride != 2) throw ConfigError("block stride must be 1 or 2");
    switch (spec.kind) {
        case BlockKind::plain_conv: return make_plain_block(spec, rng);
        case BlockKind::residual_bottleneck:
        case BlockKind::resnext_bottleneck: return make_bottleneck(spec, rng);
        case BlockKind::depthwise_separable: return make_separable_block(spec, rng);
    }
    throw ConfigError("unknown block kind");
}

// ---- families ----

Family family_from_string(const std::string& name) {
    if (name == "vgg") return Family::vgg;
    if (name == "xception") return Family::xception;
    if (name == "resnet") return Family::resnet;
    if (name == "resnext") return Family::resnext;
    if (name == "se_resnet") return Family::se_resnet;
    if (name == "se_resnext") return Family::se_resnext;
    throw ConfigError("unknown network family '" + name + "'");
}

std::string family_to_string(Family f) {
    switch (f) {
        case Family::vgg: return "vgg";
        case Family::xception: return "xception";
        case Family::resnet: return "resnet";
        case Family::resnext: return "resnext";
        case Family::se_resnet: return "se_resnet";
        case Family::se_resnext: return "se_resnext";
    }
    return "?";
}

const std::vector<std::string>& all_family_names() {
    static const std::vector<std::string> names = {"vgg",     "xception",  "resnet",
                                                   "resnext", "se_resnet", "se_resnext"};
    return names;
}

NetworkSpec make_network_spec(Family family, const BuildOptions& opts) {
    if (opts.depth_multiplier < 0.125 || opts.width_multiplier < 0.125)
        throw ConfigError("scale multipliers must be >= 1/8");

    NetworkSpec spec;
    spec.family = family_to_string(family);
    spec.input_size = opts.input_size;
    spec.head.logits = opts.logits;
    spec.stem.out_channels = std::max(1, static_cast<int>(std::lround(16.0 * opts.width_multiplier)));
    spec.stem.kernel = 3;
    spec.stem.stride = 1;

    const bool grouped = family == Family::resnext || family == Family::se_resnext;
    const bool gated = family == Family::se_resnet || family == Family::se_resnext;

    BlockKind kind = BlockKind::plain_conv;
    switch (family) {
        case Family::vgg: kind = BlockKind::plain_conv; break;
        case Family::xception: kind = BlockKind::depthwise_separable; break;
        case Family::resnet:
        case Family::se_resnet: kind = BlockKind::residual_bottleneck; break;
        case Family::resnext:
        case Family::se_resnext: kind = BlockKind::resnext_bottleneck; break;
    }

    const int stages = 2;
    const int per_stage = std::max(1, static_cast<int>(std::lround(2.0 * opts.depth_multiplier)));
    int ch = spec.stem.out_channels;
    for (int s = 0; s < stages; ++s) {
        const int out_ch = spec.stem.out_channels * (1 << s);
        for (int b = 0; b < per_stage; ++b) {
            BlockSpec bs;
            bs.kind = kind;
            bs.channels_in = ch;
            bs.channels_out = out_ch;
            bs.stride = (b == 0) ? 2 : 1;
            if (grouped) {
                const int width = std::max(1, out_ch / 2);
                bs.cardinality = std::gcd(opts.cardinality, width);
            }
            if (gated) bs.se_reduction = largest_divisor_at_most(out_ch, opts.se_reduction);
            spec.blocks.push_back(bs);
            ch = out_ch;
        }
    }
    spec.validate();
    return spec;
}

// ---- Model ----

Model::Model(const NetworkSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(seed);
    body_ = std::make_unique<Sequential>();

    auto stem = std::make_unique<Sequential>();
    stem->add("conv", std::make_unique<ConvLayer>(1, spec_.stem.out_channels, spec_.stem.kernel,
                                                  spec_.stem.stride, spec_.stem.kernel / 2, 1, rng));
    stem->add("bn", std::make_unique<BatchNormLayer>(spec_.stem.out_channels));
    stem->add("relu", std::make_unique<ReluLayer>());
    body_->add("stem", std::move(stem));

    for (std::size_t i = 0; i < spec_.blocks.size(); ++i)
        body_->add("block" + std::to_string(i), make_block(spec_.blocks[i], rng));

    const int feat = spec_.feature_channels();
    head_w_ = Mat(spec_.head.logits, feat);
    head_b_.assign(static_cast<std::size_t>(spec_.head.logits), 0.0);
    for (double& v : head_w_.data) v = kaiming_std(feat) * rng.normal();
    d_head_w = Mat(spec_.head.logits, feat);
    d_head_b.assign(head_b_.size(), 0.0);
}

Model::ForwardResult Model::forward(const Tensor4& batch, bool training) {
    if (batch.h != spec_.input_size || batch.w != spec_.input_size || batch.c != 1)
        throw ShapeError("model expects (n, 1, " + std::to_string(spec_.input_size) + ", " +
                         std::to_string(spec_.input_size) + "), got " + batch.shape_str());
    features_ = body_->forward(batch, training);
    pooled_ = gap(features_);
    return {linear(pooled_, head_w_, head_b_), features_};
}

void Model::backward(const Mat& d_logits) {
    LinearGrads g = linear_grad(pooled_, head_w_, d_logits);
    for (std::size_t i = 0; i < d_head_w.data.size(); ++i) d_head_w.data[i] += g.d_weights.data[i];
    for (std::size_t i = 0; i < d_head_b.size(); ++i) d_head_b[i] += g.d_bias[i];
    body_->backward(gap_grad(g.d_input, features_.h, features_.w));
}

std::vector<ParamRef> Model::trainable() {
    std::vector<ParamRef> out;
    body_->collect_trainable("", out);
    out.push_back({"head.weight", head_w_.data.data(), d_head_w.data.data(),
                   {head_w_.rows, head_w_.cols}, head_w_.data.size()});
    out.push_back({"head.bias", head_b_.data(), d_head_b.data(),
                   {static_cast<int>(head_b_.size())}, head_b_.size()});
    return out;
}

std::vector<ParamRef> Model::state() {
    std::vector<ParamRef> out;
    body_->collect_state("", out);
    out.push_back({"head.weight", head_w_.data.data(), d_head_w.data.data(),
                   {head_w_.rows, head_w_.cols}, head_w_.data.size()});
    out.push_back({"head.bias", head_b_.data(), d_head_b.data(),
                   {static_cast<int>(head_b_.size())}, head_b_.size()});
    return out;
}

void Model::zero_grad() {
    for (ParamRef& r : trainable())
        std::memset(r.grad, 0, r.size * sizeof(double));
}

std::size_t Model::param_count() {
    std::size_t total = 0;
    for (const ParamRef& r : trainable()) total += r.size;
    return total;
}

Model build_network(Family family, const BuildOptions& opts, std::uint64_t seed) {
    return Model(make_network_spec(family, opts), seed);
}

// ---- weight container ----

namespace {
constexpr char kMagic[6] = {'X', 'C', 'A', 'M', 'W', '1'};

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t read_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    if (!is) throw ValidationError("weight file truncated");
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint64_t read_u64(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    if (!is) throw ValidationError("weight file truncated");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}
} // namespace

void save_weights(const std::string& path, Model& model) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot open weight file for writing: " + path);
    os.write(kMagic, 6);
    write_u64(os, model.spec().digest());
    std::vector<ParamRef> refs = model.state();
    write_u32(os, static_cast<std::uint32_t>(refs.size()));
    for (const ParamRef& r : refs) {
        write_u32(os, static_cast<std::uint32_t>(r.name.size()));
        os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
        write_u32(os, static_cast<std::uint32_t>(r.dims.size()));
        for (int d : r.dims) write_u32(os, static_cast<std::uint32_t>(d));
        os.write(reinterpret_cast<const char*>(r.value),
                 static_cast<std::streamsize>(r.size * sizeof(double)));
    }
    if (!os) throw ValidationError("failed writing weight file: " + path);
}

std::uint64_t peek_weights_digest(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open weight file: " + path);
    char magic[6];
    is.read(magic, 6);
    if (!is || std::memcmp(magic, kMagic, 6) != 0)
        throw ValidationError("not a weight file (bad magic): " + path);
    return read_u64(is);
}

void load_weights(const std::string& path, Model& model) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open weight file: " + path);
    char magic[6];
    is.read(magic, 6);
    if (!is || std::memcmp(magic, kMagic, 6) != 0)
        throw ValidationError("not a weight file (bad magic): " + path);
    const std::uint64_t digest = read_u64(is);
    if (digest != model.spec().digest())
        throw ValidationError("weight file spec digest mismatch for " + path);

    std::vector<ParamRef> refs = model.state();
    const std::uint32_t count = read_u32(is);
    if (count != refs.size())
        throw ValidationError("weight file has " + std::to_string(count) + " records, model has " +
                              std::to_string(refs.size()));
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = read_u32(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const std::uint32_t dim_count = read_u32(is);
        std::vector<int> dims(dim_count);
        std::size_t total = 1;
        for (std::uint32_t d = 0; d < dim_count; ++d) {
            dims[d] = static_cast<int>(read_u32(is));
            total *= static_cast<std::size_t>(dims[d]);
        }
        // Records are written in model state order, so match positionally.
        ParamRef& r = refs[i];
        if (name != r.name || dims != r.dims || total != r.size)
            throw ValidationError("weight record '" + name + "' does not match model parameter '" +
                                  r.name + "'");
        is.read(reinterpret_cast<char*>(r.value),
                static_cast<std::streamsize>(r.size * sizeof(double)));
        if (!is) throw ValidationError("weight file truncated in record '" + name + "'");
    }
}

} // namespace xcam
