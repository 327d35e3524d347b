#include "xcam/tensor.hpp"

#include <Eigen/Dense>

#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>

#include "xcam/threading.hpp"

namespace xcam {

namespace {
std::atomic<int> g_threads{1};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
} // namespace

int num_threads() { return g_threads.load(std::memory_order_relaxed); }
void set_num_threads(int t) { g_threads.store(t < 1 ? 1 : t, std::memory_order_relaxed); }

std::string Tensor4::shape_str() const {
    std::ostringstream os;
    os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
    return os.str();
}

void ConvParams::validate() const {
    if (kernel.n < 1 || kernel.c < 1) throw ShapeError("conv kernel has empty dims " + kernel.shape_str());
    if (kernel.h % 2 == 0 || kernel.w % 2 == 0)
        throw ConfigError("conv kernel dims must be odd, got " + kernel.shape_str());
    if (stride < 1) throw ConfigError("conv stride must be >= 1");
    if (padding < 0) throw ConfigError("conv padding must be >= 0");
    if (groups < 1) throw ConfigError("conv groups must be >= 1");
    if (kernel.n % groups != 0)
        throw ConfigError("conv out channels " + std::to_string(kernel.n) +
                          " not divisible by groups " + std::to_string(groups));
    if (bias.size() != static_cast<std::size_t>(kernel.n))
        throw ShapeError("conv bias length " + std::to_string(bias.size()) +
                         " != out channels " + std::to_string(kernel.n));
}

void conv2d_out_shape(const Tensor4& input, const ConvParams& p, int& out_h, int& out_w) {
    p.validate();
    if (input.c != p.in_channels())
        throw ShapeError("conv input shape " + input.shape_str() + " incompatible with kernel " +
                         p.kernel.shape_str() + " at groups " + std::to_string(p.groups));
    const int eh = input.h + 2 * p.padding;
    const int ew = input.w + 2 * p.padding;
    if (eh < p.kernel.h || ew < p.kernel.w)
        throw ShapeError("conv input " + input.shape_str() + " smaller than kernel " +
                         p.kernel.shape_str() + " after padding");
    out_h = (eh - p.kernel.h) / p.stride + 1;
    out_w = (ew - p.kernel.w) / p.stride + 1;
}

namespace {

// Unpacks the receptive fields of one sample's group-slice into a
// (c_per_group*kh*kw) x (out_h*out_w) column matrix.
void im2col(const Tensor4& input, int sample, int ch_begin, int ch_count,
            int kh, int kw, int stride, int pad, int out_h, int out_w, double* col) {
    const int ohw = out_h * out_w;
    for (int cc = 0; cc < ch_count; ++cc) {
        const double* src = &input.data[((static_cast<std::size_t>(sample) * input.c + ch_begin + cc) *
                                         input.h) * input.w];
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                double* dst = col + (static_cast<std::size_t>(cc) * kh * kw + ky * kw + kx) * ohw;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= input.h) {
                        std::memset(dst + static_cast<std::size_t>(oy) * out_w, 0,
                                    sizeof(double) * static_cast<std::size_t>(out_w));
                        continue;
                    }
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        dst[static_cast<std::size_t>(oy) * out_w + ox] =
                            (ix < 0 || ix >= input.w) ? 0.0 : src[static_cast<std::size_t>(iy) * input.w + ix];
                    }
                }
            }
        }
    }
}

// Scatters a column matrix back, accumulating overlapping positions.
void col2im_add(const double* col, int sample, int ch_begin, int ch_count,
                int kh, int kw, int stride, int pad, int out_h, int out_w, Tensor4& dst) {
    const int ohw = out_h * out_w;
    for (int cc = 0; cc < ch_count; ++cc) {
        double* out = &dst.data[((static_cast<std::size_t>(sample) * dst.c + ch_begin + cc) *
                                 dst.h) * dst.w];
        for (int ky = 0; ky < kh; ++ky) {
            for (int kx = 0; kx < kw; ++kx) {
                const double* src = col + (static_cast<std::size_t>(cc) * kh * kw + ky * kw + kx) * ohw;
                for (int oy = 0; oy < out_h; ++oy) {
                    const int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= dst.h) continue;
                    for (int ox = 0; ox < out_w; ++ox) {
                        const int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= dst.w) continue;
                        out[static_cast<std::size_t>(iy) * dst.w + ix] +=
                            src[static_cast<std::size_t>(oy) * out_w + ox];
                    }
                }
            }
        }
    }
}

} // namespace

Tensor4 conv2d(const Tensor4& input, const ConvParams& p) {
    int oh = 0, ow = 0;
    conv2d_out_shape(input, p, oh, ow);
    const int groups = p.groups;
    const int cpg = input.c / groups;
    const int opg = p.kernel.n / groups;
    const int rows = cpg * p.kernel.h * p.kernel.w;
    const int ohw = oh * ow;

    Tensor4 out(input.n, p.kernel.n, oh, ow);
    // All GEMM operands live in Eigen's own aligned storage so the kernels'
    // vectorized reduction order never depends on heap addresses; results
    // stay bit-identical across runs.
    parallel_for(static_cast<std::size_t>(input.n), [&](std::size_t ni) {
        RowMat col(rows, ohw);
        RowMat K(opg, rows), O(opg, ohw);
        for (int g = 0; g < groups; ++g) {
            im2col(input, static_cast<int>(ni), g * cpg, cpg,
                   p.kernel.h, p.kernel.w, p.stride, p.padding, oh, ow, col.data());
            K = CMapMat(&p.kernel.data[static_cast<std::size_t>(g) * opg * rows], opg, rows);
            O.noalias() = K * col;
            for (int o = 0; o < opg; ++o)
                O.row(o).array() += p.bias[static_cast<std::size_t>(g) * opg + o];
            MapMat(&out.data[((ni * out.c) + static_cast<std::size_t>(g) * opg) *
                             static_cast<std::size_t>(ohw)], opg, ohw) = O;
        }
    });
    return out;
}

ConvGrads conv2d_grad(const Tensor4& input, const ConvParams& p, const Tensor4& upstream) {
    int oh = 0, ow = 0;
    conv2d_out_shape(input, p, oh, ow);
    if (upstream.n != input.n || upstream.c != p.kernel.n || upstream.h != oh || upstream.w != ow)
        throw ShapeError("conv upstream shape " + upstream.shape_str() + " != expected (" +
                         std::to_string(input.n) + ", " + std::to_string(p.kernel.n) + ", " +
                         std::to_string(oh) + ", " + std::to_string(ow) + ")");

    const int groups = p.groups;
    const int cpg = input.c / groups;
    const int opg = p.kernel.n / groups;
    const int rows = cpg * p.kernel.h * p.kernel.w;
    const int ohw = oh * ow;

    ConvGrads g;
    g.d_input = Tensor4(input.n, input.c, input.h, input.w);
    g.d_kernel = Tensor4(p.kernel.n, p.kernel.c, p.kernel.h, p.kernel.w);
    g.d_bias.assign(p.bias.size(), 0.0);

    // Per-sample kernel/bias grads go into private buffers and are reduced in
    // sample order afterwards so the result is independent of thread count.
    std::vector<std::vector<double>> dk(static_cast<std::size_t>(input.n));
    std::vector<std::vector<double>> db(static_cast<std::size_t>(input.n));

    parallel_for(static_cast<std::size_t>(input.n), [&](std::size_t ni) {
        dk[ni].assign(g.d_kernel.size(), 0.0);
        db[ni].assign(g.d_bias.size(), 0.0);
        // Aligned Eigen buffers keep the vectorized kernels bit-deterministic
        // regardless of where the surrounding std::vectors landed on the heap.
        RowMat col(rows, ohw), dcol(rows, ohw);
        RowMat K(opg, rows), U(opg, ohw), DK(opg, rows);
        for (int gi = 0; gi < groups; ++gi) {
            im2col(input, static_cast<int>(ni), gi * cpg, cpg,
                   p.kernel.h, p.kernel.w, p.stride, p.padding, oh, ow, col.data());
            K = CMapMat(&p.kernel.data[static_cast<std::size_t>(gi) * opg * rows], opg, rows);
            U = CMapMat(&upstream.data[((ni * upstream.c) + static_cast<std::size_t>(gi) * opg) *
                                       static_cast<std::size_t>(ohw)], opg, ohw);
            DK.noalias() = U * col.transpose();
            MapMat(&dk[ni][static_cast<std::size_t>(gi) * opg * rows], opg, rows) = DK;
            for (int o = 0; o < opg; ++o)
                db[ni][static_cast<std::size_t>(gi) * opg + o] = U.row(o).sum();
            dcol.noalias() = K.transpose() * U;
            col2im_add(dcol.data(), static_cast<int>(ni), gi * cpg, cpg,
                       p.kernel.h, p.kernel.w, p.stride, p.padding, oh, ow, g.d_input);
        }
    });

    for (int ni = 0; ni < input.n; ++ni) {
        for (std::size_t i = 0; i < g.d_kernel.size(); ++i) g.d_kernel.data[i] += dk[ni][i];
        for (std::size_t i = 0; i < g.d_bias.size(); ++i) g.d_bias[i] += db[ni][i];
    }
    return g;
}

Tensor4 batchnorm(const Tensor4& input, BatchNormParams& p, bool training, BatchNormCache* cache) {
    if (p.channels() != input.c)
        throw ShapeError("batchnorm channels " + std::to_string(p.channels()) +
                         " != input channels " + std::to_string(input.c) + " of " + input.shape_str());

    const int chn = input.c;
    const std::size_t plane = static_cast<std::size_t>(input.h) * input.w;
    const double m = static_cast<double>(input.n) * static_cast<double>(plane);

    std::vector<double> mean(chn), var(chn);
    if (training) {
        for (int ci = 0; ci < chn; ++ci) {
            double s = 0.0, s2 = 0.0;
            for (int ni = 0; ni < input.n; ++ni) {
                const double* src = &input.data[(static_cast<std::size_t>(ni) * chn + ci) * plane];
                for (std::size_t i = 0; i < plane; ++i) { s += src[i]; s2 += src[i] * src[i]; }
            }
            mean[ci] = s / m;
            var[ci] = s2 / m - mean[ci] * mean[ci];
            if (var[ci] < 0.0) var[ci] = 0.0; // numerical floor
            p.running_mean[ci] = (1.0 - p.momentum) * p.running_mean[ci] + p.momentum * mean[ci];
            p.running_var[ci] = (1.0 - p.momentum) * p.running_var[ci] + p.momentum * var[ci];
        }
    } else {
        mean = p.running_mean;
        var = p.running_var;
    }

    Tensor4 out(input.n, input.c, input.h, input.w);
    std::vector<double> inv_std(chn);
    for (int ci = 0; ci < chn; ++ci) inv_std[ci] = 1.0 / std::sqrt(var[ci] + p.eps);

    parallel_for(static_cast<std::size_t>(chn), [&](std::size_t ci) {
        const double a = p.gamma[ci] * inv_std[ci];
        const double b = p.beta[ci] - a * mean[ci];
        for (int ni = 0; ni < input.n; ++ni) {
            const double* src = &input.data[(static_cast<std::size_t>(ni) * chn + ci) * plane];
            double* dst = &out.data[(static_cast<std::size_t>(ni) * chn + ci) * plane];
            for (std::size_t i = 0; i < plane; ++i) dst[i] = a * src[i] + b;
        }
    });

    if (cache) {
        cache->mean = std::move(mean);
        cache->inv_std = std::move(inv_std);
        cache->training = training;
    }
    return out;
}

BatchNormGrads batchnorm_grad(const Tensor4& input, const BatchNormParams& p,
                              const BatchNormCache& cache, const Tensor4& upstream) {
    if (!input.same_shape(upstream))
        throw ShapeError("batchnorm upstream shape " + upstream.shape_str() +
                         " != input shape " + input.shape_str());

    const int chn = input.c;
    const std::size_t plane = static_cast<std::size_t>(input.h) * input.w;
    const double m = static_cast<double>(input.n) * static_cast<double>(plane);

    BatchNormGrads g;
    g.d_input = Tensor4(input.n, input.c, input.h, input.w);
    g.d_gamma.assign(chn, 0.0);
    g.d_beta.assign(chn, 0.0);

    parallel_for(static_cast<std::size_t>(chn), [&](std::size_t ci) {
        const double mu = cache.mean[ci];
        const double istd = cache.inv_std[ci];
        double sum_u = 0.0, sum_ux = 0.0;
        for (int ni = 0; ni < input.n; ++ni) {
            const double* x = &input.data[(static_cast<std::size_t>(ni) * chn + ci) * plane];
            const double* u = &upstream.data[(static_cast<std::size_t>(ni) * chn + ci) * plane];
            for (std::size_t i = 0; i < plane; ++i) {
                sum_u += u[i];
                sum_ux += u[i] * (x[i] - mu) * istd;
            }
        }
        g.d_gamma[ci] = sum_ux;
        g.d_beta[ci] = sum_u;

        const double gam = p.gamma[ci];
        if (cache.training) {
            for (int ni = 0; ni < input.n; ++ni) {
                const double* x = &input.data[(static_cast<std::size_t>(ni) * chn + ci) * plane];
                const double* u = &upstream.data[(static_cast<std::size_t>(ni) * chn + ci) * plane];
                double* d = &g.d_input.data[(static_cast<std::size_t>(ni) * chn + ci) * plane];
                for (std::size_t i = 0; i < plane; ++i) {
                    const double xh = (x[i] - mu) * istd;
                    d[i] = gam * istd / m * (m * u[i] - sum_u - xh * sum_ux);
                }
            }
        } else {
            const double a = gam * istd;
            for (int ni = 0; ni < input.n; ++ni) {
                const double* u = &upstream.data[(static_cast<std::size_t>(ni) * chn + ci) * plane];
                double* d = &g.d_input.data[(static_cast<std::size_t>(ni) * chn + ci) * plane];
                for (std::size_t i = 0; i < plane; ++i) d[i] = a * u[i];
            }
        }
    });
    return g;
}

Tensor4 relu(const Tensor4& input) {
    Tensor4 out = input;
    for (double& x : out.data) x = x > 0.0 ? x : 0.0;
    return out;
}

Tensor4 relu_grad(const Tensor4& input, const Tensor4& upstream) {
    if (!input.same_shape(upstream))
        throw ShapeError("relu upstream shape " + upstream.shape_str() +
                         " != input shape " + input.shape_str());
    Tensor4 out = upstream;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (input.data[i] <= 0.0) out.data[i] = 0.0;
    return out;
}

double sigmoid_scalar(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

Tensor4 sigmoid(const Tensor4& input) {
    Tensor4 out = input;
    for (double& x : out.data) x = sigmoid_scalar(x);
    return out;
}

Tensor4 sigmoid_grad(const Tensor4& output, const Tensor4& upstream) {
    if (!output.same_shape(upstream))
        throw ShapeError("sigmoid upstream shape " + upstream.shape_str() +
                         " != output shape " + output.shape_str());
    Tensor4 out = upstream;
    for (std::size_t i = 0; i < out.size(); ++i)
        out.data[i] *= output.data[i] * (1.0 - output.data[i]);
    return out;
}

Mat gap(const Tensor4& input) {
    Mat out(input.n, input.c);
    const std::size_t plane = static_cast<std::size_t>(input.h) * input.w;
    for (int ni = 0; ni < input.n; ++ni) {
        for (int ci = 0; ci < input.c; ++ci) {
            const double* src = &input.data[(static_cast<std::size_t>(ni) * input.c + ci) * plane];
            double s = 0.0;
            for (std::size_t i = 0; i < plane; ++i) s += src[i];
            out.at(ni, ci) = s / static_cast<double>(plane);
        }
    }
    return out;
}

Tensor4 gap_grad(const Mat& upstream, int h, int w) {
    Tensor4 out(upstream.rows, upstream.cols, h, w);
    const double scale = 1.0 / (static_cast<double>(h) * w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ni = 0; ni < upstream.rows; ++ni) {
        for (int ci = 0; ci < upstream.cols; ++ci) {
            double* dst = &out.data[(static_cast<std::size_t>(ni) * upstream.cols + ci) * plane];
            const double v = upstream.at(ni, ci) * scale;
            for (std::size_t i = 0; i < plane; ++i) dst[i] = v;
        }
    }
    return out;
}

Mat linear(const Mat& input, const Mat& weights, const std::vector<double>& bias) {
    if (input.cols != weights.cols)
        throw ShapeError("linear input features " + std::to_string(input.cols) +
                         " != weight features " + std::to_string(weights.cols));
    if (bias.size() != static_cast<std::size_t>(weights.rows))
        throw ShapeError("linear bias length " + std::to_string(bias.size()) +
                         " != outputs " + std::to_string(weights.rows));
    Mat out(input.rows, weights.rows);
    for (int r = 0; r < input.rows; ++r) {
        for (int o = 0; o < weights.rows; ++o) {
            double s = bias[o];
            for (int f = 0; f < input.cols; ++f) s += weights.at(o, f) * input.at(r, f);
            out.at(r, o) = s;
        }
    }
    return out;
}

LinearGrads linear_grad(const Mat& input, const Mat& weights, const Mat& upstream) {
    if (upstream.rows != input.rows || upstream.cols != weights.rows)
        throw ShapeError("linear upstream (" + std::to_string(upstream.rows) + ", " +
                         std::to_string(upstream.cols) + ") != expected (" +
                         std::to_string(input.rows) + ", " + std::to_string(weights.rows) + ")");
    LinearGrads g;
    g.d_input = Mat(input.rows, input.cols);
    g.d_weights = Mat(weights.rows, weights.cols);
    g.d_bias.assign(static_cast<std::size_t>(weights.rows), 0.0);
    for (int r = 0; r < input.rows; ++r) {
        for (int o = 0; o < weights.rows; ++o) {
            const double u = upstream.at(r, o);
            g.d_bias[o] += u;
            for (int f = 0; f < input.cols; ++f) {
                g.d_input.at(r, f) += u * weights.at(o, f);
                g.d_weights.at(o, f) += u * input.at(r, f);
            }
        }
    }
    return g;
}

Grid bilinear_resize(const Grid& map, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("bilinear_resize output dims must be >= 1");
    Grid out(out_h, out_w);
    const double sy = (out_h > 1 && map.h > 1) ? static_cast<double>(map.h - 1) / (out_h - 1) : 0.0;
    const double sx = (out_w > 1 && map.w > 1) ? static_cast<double>(map.w - 1) / (out_w - 1) : 0.0;
    for (int y = 0; y < out_h; ++y) {
        const double fy = y * sy;
        const int y0 = static_cast<int>(fy);
        const int y1 = y0 + 1 < map.h ? y0 + 1 : y0;
        const double ty = fy - y0;
        for (int x = 0; x < out_w; ++x) {
            const double fx = x * sx;
            const int x0 = static_cast<int>(fx);
            const int x1 = x0 + 1 < map.w ? x0 + 1 : x0;
            const double tx = fx - x0;
            out.at(y, x) = (1.0 - ty) * ((1.0 - tx) * map.at(y0, x0) + tx * map.at(y0, x1)) +
                           ty * ((1.0 - tx) * map.at(y1, x0) + tx * map.at(y1, x1));
        }
    }
    return out;
}

bool all_finite(const Tensor4& t) {
    for (double x : t.data)
        if (!std::isfinite(x)) return false;
    return true;
}

} // namespace xcam
