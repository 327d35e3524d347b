#include "xcam/cam.hpp"

#include <algorithm>
#include <cmath>

#include "xcam/error.hpp"

namespace xcam {

CamMap compute_cam(const Tensor4& last_feature_maps, const std::vector<double>& class_weights,
                   int class_index, int sample) {
    if (class_weights.size() != static_cast<std::size_t>(last_feature_maps.c))
        throw ShapeError("CAM weights length " + std::to_string(class_weights.size()) +
                         " != feature channels " + std::to_string(last_feature_maps.c));
    if (sample < 0 || sample >= last_feature_maps.n)
        throw ShapeError("CAM sample index " + std::to_string(sample) + " out of range");

    CamMap m;
    m.class_index = class_index;
    m.source = "last_conv";
    m.raw = Grid(last_feature_maps.h, last_feature_maps.w);
    for (int k = 0; k < last_feature_maps.c; ++k) {
        const double wk = class_weights[static_cast<std::size_t>(k)];
        for (int y = 0; y < m.raw.h; ++y)
            for (int x = 0; x < m.raw.w; ++x)
                m.raw.at(y, x) += wk * last_feature_maps.at(sample, k, y, x);
    }
    return m;
}

Grid normalize_cam(const CamMap& m) {
    const auto [lo_it, hi_it] = std::minmax_element(m.raw.v.begin(), m.raw.v.end());
    const double lo = *lo_it, hi = *hi_it;
    Grid out(m.raw.h, m.raw.w);
    if (hi == lo) return out;  // constant map -> all zeros
    const double scale = 1.0 / (hi - lo);
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = (m.raw.v[i] - lo) * scale;
    return out;
}

std::array<double, 3> cam_colormap(double v) {
    v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    if (v <= 0.5) return {2.0 * v, 0.0, 0.0};
    return {1.0, 2.0 * (v - 0.5), 0.0};
}

RgbImage render_overlay(const Grid& image, const Grid& cam, double alpha) {
    if (image.h != cam.h || image.w != cam.w)
        throw ShapeError("overlay image " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                         " and CAM " + std::to_string(cam.h) + "x" + std::to_string(cam.w) +
                         " dims differ");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("overlay alpha must be in [0, 1]");
    RgbImage out;
    out.h = image.h;
    out.w = image.w;
    out.rgb.resize(static_cast<std::size_t>(image.h) * image.w * 3);
    for (std::size_t i = 0; i < image.v.size(); ++i) {
        const double gray = image.v[i];
        const std::array<double, 3> c = cam_colormap(cam.v[i]);
        for (int ch = 0; ch < 3; ++ch) {
            double v = (1.0 - alpha) * gray + alpha * c[static_cast<std::size_t>(ch)];
            v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
            out.rgb[i * 3 + static_cast<std::size_t>(ch)] =
                static_cast<std::uint8_t>(std::lround(255.0 * v));
        }
    }
    return out;
}

std::vector<double> class_weights_for(const Model& model, int class_index) {
    const Mat& w = model.head_weights();
    if (w.rows == 1) {
        if (class_index != 0 && class_index != 1)
            throw ConfigError("class index must be 0 or 1 for a binary head");
        std::vector<double> out(static_cast<std::size_t>(w.cols));
        const double sign = class_index == 1 ? 1.0 : -1.0;
        for (int f = 0; f < w.cols; ++f) out[static_cast<std::size_t>(f)] = sign * w.at(0, f);
        return out;
    }
    if (class_index < 0 || class_index >= w.rows)
        throw ConfigError("class index " + std::to_string(class_index) + " out of range");
    std::vector<double> out(static_cast<std::size_t>(w.cols));
    for (int f = 0; f < w.cols; ++f) out[static_cast<std::size_t>(f)] = w.at(class_index, f);
    return out;
}

double class_bias_for(const Model& model, int class_index) {
    const std::vector<double>& b = model.head_bias();
    if (b.size() == 1) return class_index == 1 ? b[0] : -b[0];
    return b.at(static_cast<std::size_t>(class_index));
}

CamRendering cam_for_model(Model& model, const Grid& image, int class_index, double alpha) {
    if (image.h != model.spec().input_size || image.w != model.spec().input_size)
        throw ShapeError("image " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                         " does not match model input size " +
                         std::to_string(model.spec().input_size));
    Tensor4 batch(1, 1, image.h, image.w);
    batch.data = image.v;
    Model::ForwardResult fr = model.forward(batch, false);

    CamRendering r;
    r.map = compute_cam(fr.features, class_weights_for(model, class_index), class_index);
    r.normalized = normalize_cam(r.map);
    r.upsampled = bilinear_resize(r.normalized, image.h, image.w);
    r.overlay = render_overlay(image, r.upsampled, alpha);
    return r;
}

} // namespace xcam
