#pragma once

#include <array>
#include <string>
#include <vector>

#include "xcam/blocks.hpp"
#include "xcam/imageio.hpp"
#include "xcam/tensor.hpp"

namespace xcam {

// Per-class spatial activation map at feature-map resolution.
struct CamMap {
    int class_index = 0;
    Grid raw;
    std::string source;  // layer identifier the features came from
};

struct CamRendering {
    CamMap map;
    Grid normalized;    // [0, 1], zeros when raw is constant
    Grid upsampled;     // input resolution
    RgbImage overlay;
};

// Weighted channel sum of one sample's feature maps.
CamMap compute_cam(const Tensor4& last_feature_maps, const std::vector<double>& class_weights,
                   int class_index, int sample = 0);

// Min-max normalization to [0, 1]; a constant map becomes all zeros.
Grid normalize_cam(const CamMap& m);

// Piecewise-linear black -> red -> yellow colormap, breakpoints at
// v = 0 (0,0,0), v = 0.5 (1,0,0), v = 1 (1,1,0).
std::array<double, 3> cam_colormap(double v);

// pixel = (1 - alpha) * gray + alpha * colormap(cam), quantized to 8 bits.
// image values in [0, 1], cam already normalized and at image resolution.
RgbImage render_overlay(const Grid& image, const Grid& cam, double alpha);

// Head weights (and bias) seen by class `class_index`. For a single-logit
// head, class 0 uses the negated class-1 weights.
std::vector<double> class_weights_for(const Model& model, int class_index);
double class_bias_for(const Model& model, int class_index);

// forward -> compute_cam -> normalize -> upsample -> overlay.
CamRendering cam_for_model(Model& model, const Grid& image, int class_index, double alpha = 0.5);

} // namespace xcam
