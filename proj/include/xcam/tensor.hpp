#pragma once

#include <string>
#include <vector>

#include "xcam/error.hpp"

namespace xcam {

// Dense rank-4 array (batch, channel, height, width), row-major, doubles.
struct Tensor4 {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> data;

    Tensor4() = default;
    Tensor4(int n_, int c_, int h_, int w_, double fill = 0.0)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {
        if (n_ < 1 || c_ < 1 || h_ < 1 || w_ < 1)
            throw ShapeError("Tensor4 dims must all be >= 1, got " + shape_str());
    }

    std::size_t size() const { return data.size(); }

    double& at(int i, int j, int y, int x) {
        return data[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
    }
    double at(int i, int j, int y, int x) const {
        return data[((static_cast<std::size_t>(i) * c + j) * h + y) * w + x];
    }

    bool same_shape(const Tensor4& o) const {
        return n == o.n && c == o.c && h == o.h && w == o.w;
    }
    std::string shape_str() const;
};

// Batch of per-sample vectors, row-major (rows, cols).
struct Mat {
    int rows = 0, cols = 0;
    std::vector<double> data;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0)
        : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

    double& at(int r, int c_) { return data[static_cast<std::size_t>(r) * cols + c_]; }
    double at(int r, int c_) const { return data[static_cast<std::size_t>(r) * cols + c_]; }
};

// Single-channel spatial grid (CAM maps, grayscale images).
struct Grid {
    int h = 0, w = 0;
    std::vector<double> v;

    Grid() = default;
    Grid(int h_, int w_, double fill = 0.0)
        : h(h_), w(w_), v(static_cast<std::size_t>(h_) * w_, fill) {}

    double& at(int y, int x) { return v[static_cast<std::size_t>(y) * w + x]; }
    double at(int y, int x) const { return v[static_cast<std::size_t>(y) * w + x]; }
};

struct ConvParams {
    Tensor4 kernel;             // (out_ch, in_ch/groups, kh, kw)
    std::vector<double> bias;   // length out_ch
    int stride = 1;
    int padding = 0;
    int groups = 1;

    void validate() const;
    int out_channels() const { return kernel.n; }
    int in_channels() const { return kernel.c * groups; }
};

struct BatchNormParams {
    std::vector<double> gamma, beta, running_mean, running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    explicit BatchNormParams(int channels = 0)
        : gamma(channels, 1.0), beta(channels, 0.0),
          running_mean(channels, 0.0), running_var(channels, 1.0) {}
    int channels() const { return static_cast<int>(gamma.size()); }
};

// ---- convolution ----

// Output spatial dims for a padded strided convolution.
void conv2d_out_shape(const Tensor4& input, const ConvParams& p, int& out_h, int& out_w);

Tensor4 conv2d(const Tensor4& input, const ConvParams& p);

struct ConvGrads {
    Tensor4 d_input;
    Tensor4 d_kernel;
    std::vector<double> d_bias;
};
ConvGrads conv2d_grad(const Tensor4& input, const ConvParams& p, const Tensor4& upstream);

// ---- batch normalization ----

struct BatchNormCache {
    std::vector<double> mean, inv_std;  // per channel, stats used by forward
    bool training = false;
};

// Training mode normalizes with batch statistics over (n, h, w) and updates
// running stats in p; eval mode uses the stored running stats.
Tensor4 batchnorm(const Tensor4& input, BatchNormParams& p, bool training,
                  BatchNormCache* cache = nullptr);

struct BatchNormGrads {
    Tensor4 d_input;
    std::vector<double> d_gamma, d_beta;
};
BatchNormGrads batchnorm_grad(const Tensor4& input, const BatchNormParams& p,
                              const BatchNormCache& cache, const Tensor4& upstream);

// ---- elementwise activations ----

Tensor4 relu(const Tensor4& input);
Tensor4 relu_grad(const Tensor4& input, const Tensor4& upstream);

Tensor4 sigmoid(const Tensor4& input);
// Takes the forward *output*; dσ/dx = σ(1-σ).
Tensor4 sigmoid_grad(const Tensor4& output, const Tensor4& upstream);

double sigmoid_scalar(double x);

// ---- pooling / head ----

// Global average pooling: (n, c, h, w) -> (n, c) of spatial means.
Mat gap(const Tensor4& input);
Tensor4 gap_grad(const Mat& upstream, int h, int w);

// Affine map, weights (out, in), bias length out.
Mat linear(const Mat& input, const Mat& weights, const std::vector<double>& bias);

struct LinearGrads {
    Mat d_input;
    Mat d_weights;
    std::vector<double> d_bias;
};
LinearGrads linear_grad(const Mat& input, const Mat& weights, const Mat& upstream);

// ---- resampling ----

// Corner-aligned bilinear interpolation.
Grid bilinear_resize(const Grid& map, int out_h, int out_w);

bool all_finite(const Tensor4& t);

} // namespace xcam
