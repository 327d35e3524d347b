#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "xcam/rng.hpp"
#include "xcam/tensor.hpp"

namespace xcam {

enum class BlockKind {
    plain_conv,
    residual_bottleneck,
    resnext_bottleneck,
    depthwise_separable,
};

struct BlockSpec {
    BlockKind kind = BlockKind::plain_conv;
    int channels_in = 0;
    int channels_out = 0;
    int stride = 1;           // 1 or 2
    int cardinality = 1;      // resnext only
    int se_reduction = 0;     // 0 = no SE gate; otherwise wraps the block
};

struct StemSpec {
    int out_channels = 16;
    int kernel = 3;
    int stride = 1;
};

struct HeadSpec {
    int logits = 1;           // 1 or 2
};

struct NetworkSpec {
    std::string family;
    StemSpec stem;
    std::vector<BlockSpec> blocks;
    HeadSpec head;
    int input_size = 64;

    void validate() const;
    // Canonical text form; hashed into the weight-file digest.
    std::string canonical() const;
    std::uint64_t digest() const;
    int feature_channels() const {
        return blocks.empty() ? stem.out_channels : blocks.back().channels_out;
    }
};

// Named view into a parameter (or persistent state) buffer owned by a layer.
struct ParamRef {
    std::string name;
    double* value = nullptr;
    double* grad = nullptr;   // null for non-trainable state (running stats)
    std::vector<int> dims;
    std::size_t size = 0;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor4 forward(const Tensor4& x, bool training) = 0;
    // Consumes the cache left by the last forward; accumulates param grads.
    virtual Tensor4 backward(const Tensor4& upstream) = 0;
    virtual void collect_trainable(const std::string& prefix, std::vector<ParamRef>& out) = 0;
    virtual void collect_state(const std::string& prefix, std::vector<ParamRef>& out) {
        collect_trainable(prefix, out);
    }
};

class ConvLayer : public Layer {
public:
    ConvLayer(int in_ch, int out_ch, int ksize, int stride, int padding, int groups, Rng& rng);

    Tensor4 forward(const Tensor4& x, bool training) override;
    Tensor4 backward(const Tensor4& upstream) override;
    void collect_trainable(const std::string& prefix, std::vector<ParamRef>& out) override;

    ConvParams p;
    Tensor4 d_kernel;
    std::vector<double> d_bias;

private:
    Tensor4 cached_input_;
};

class BatchNormLayer : public Layer {
public:
    explicit BatchNormLayer(int channels);

    Tensor4 forward(const Tensor4& x, bool training) override;
    Tensor4 backward(const Tensor4& upstream) override;
    void collect_trainable(const std::string& prefix, std::vector<ParamRef>& out) override;
    void collect_state(const std::string& prefix, std::vector<ParamRef>& out) override;

    BatchNormParams p;
    std::vector<double> d_gamma, d_beta;

private:
    Tensor4 cached_input_;
    BatchNormCache cache_;
};

class ReluLayer : public Layer {
public:
    Tensor4 forward(const Tensor4& x, bool training) override;
    Tensor4 backward(const Tensor4& upstream) override;
    void collect_trainable(const std::string&, std::vector<ParamRef>&) override {}

private:
    Tensor4 cached_input_;
};

// Squeeze-and-excitation channel gate:
// s = sigmoid(W2 relu(W1 gap(x) + b1) + b2), output channel i = s_i * x_i.
class SeGate : public Layer {
public:
    SeGate(int channels, int reduction, Rng& rng);

    Tensor4 forward(const Tensor4& x, bool training) override;
    Tensor4 backward(const Tensor4& upstream) override;
    void collect_trainable(const std::string& prefix, std::vector<ParamRef>& out) override;

    // Gate scales from the last forward, one row per sample.
    const Mat& scales() const { return scales_; }

    Mat w1, w2;
    std::vector<double> b1, b2;
    Mat d_w1, d_w2;
    std::vector<double> d_b1, d_b2;
    int channels = 0, hidden = 0;

private:
    Tensor4 cached_input_;
    Mat pooled_, pre1_, act1_, scales_;
};

class Sequential : public Layer {
public:
    void add(const std::string& name, std::unique_ptr<Layer> layer);

    Tensor4 forward(const Tensor4& x, bool training) override;
    Tensor4 backward(const Tensor4& upstream) override;
    void collect_trainable(const std::string& prefix, std::vector<ParamRef>& out) override;
    void collect_state(const std::string& prefix, std::vector<ParamRef>& out) override;

    std::size_t size() const { return layers_.size(); }
    Layer& at(std::size_t i) { return *layers_[i].second; }

private:
    std::vector<std::pair<std::string, std::unique_ptr<Layer>>> layers_;
};

// Branch + shortcut addition, optionally with an SE gate on the branch output
// before the add. Covers bottleneck and depthwise-separable residual blocks.
class ResidualAdd : public Layer {
public:
    ResidualAdd(std::unique_ptr<Sequential> branch,
                std::unique_ptr<SeGate> se,
                std::unique_ptr<Sequential> shortcut);

    Tensor4 forward(const Tensor4& x, bool training) override;
    Tensor4 backward(const Tensor4& upstream) override;
    void collect_trainable(const std::string& prefix, std::vector<ParamRef>& out) override;
    void collect_state(const std::string& prefix, std::vector<ParamRef>& out) override;

    Sequential& branch() { return *branch_; }
    SeGate* se() { return se_.get(); }
    Sequential* shortcut() { return shortcut_.get(); }

private:
    std::unique_ptr<Sequential> branch_;
    std::unique_ptr<SeGate> se_;
    std::unique_ptr<Sequential> shortcut_;
};

// Standalone composition: depthwise conv (groups = channels) then 1x1
// pointwise mixing.
Tensor4 depthwise_separable(const Tensor4& x, const ConvParams& depthwise,
                            const ConvParams& pointwise);

// Block factories. Each validates its BlockSpec and draws parameters from rng
// in a fixed order.
std::unique_ptr<Layer> make_block(const BlockSpec& spec, Rng& rng);

// ---- whole networks ----

enum class Family { vgg, xception, resnet, resnext, se_resnet, se_resnext };

Family family_from_string(const std::string& name);
std::string family_to_string(Family f);
const std::vector<std::string>& all_family_names();

struct BuildOptions {
    double depth_multiplier = 1.0;   // scales blocks per stage
    double width_multiplier = 1.0;   // scales channel counts
    int input_size = 64;
    int logits = 1;
    int cardinality = 4;             // resnext families
    int se_reduction = 16;           // se families
};

NetworkSpec make_network_spec(Family family, const BuildOptions& opts);

class Model {
public:
    Model() = default;
    Model(const NetworkSpec& spec, std::uint64_t seed);

    struct ForwardResult {
        Mat logits;        // (n, logits)
        Tensor4 features;  // pre-GAP feature maps of the last block
    };
    ForwardResult forward(const Tensor4& batch, bool training);
    // Backpropagates d(loss)/d(logits); call after forward(training=true).
    void backward(const Mat& d_logits);

    std::vector<ParamRef> trainable();
    std::vector<ParamRef> state();   // trainable + batch-norm running stats
    void zero_grad();
    std::size_t param_count();

    const NetworkSpec& spec() const { return spec_; }
    const Mat& head_weights() const { return head_w_; }
    const std::vector<double>& head_bias() const { return head_b_; }

    Mat d_head_w;
    std::vector<double> d_head_b;

private:
    NetworkSpec spec_;
    std::unique_ptr<Sequential> body_;
    Mat head_w_;
    std::vector<double> head_b_;
    Tensor4 features_;
    Mat pooled_;
};

Model build_network(Family family, const BuildOptions& opts, std::uint64_t seed);

// ---- weight container ----
// Binary layout: magic "XCAMW1", u64 LE spec digest, u32 LE record count,
// then per record: u32 name length, name bytes, u32 dim count, u32 dims,
// little-endian IEEE f64 values in row-major order.
void save_weights(const std::string& path, Model& model);
// Loads into a model built from the same spec; digest or shape mismatch
// raises ValidationError.
void load_weights(const std::string& path, Model& model);
// Reads just the digest, for compatibility checks before building.
std::uint64_t peek_weights_digest(const std::string& path);

} // namespace xcam
