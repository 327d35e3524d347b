#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xcam/tensor.hpp"

namespace xcam {

struct ManifestRow {
    std::string path;     // as written in the CSV
    int label = 0;        // KD = 1, non-KD = 0
    std::string subject;
};

struct DatasetManifest {
    std::vector<ManifestRow> rows;
    int count_positive = 0;
    int count_negative = 0;
};

struct Dataset {
    DatasetManifest manifest;
    std::vector<Grid> images;  // 8-bit grayscale as doubles in [0, 255]
};

// CSV with header "path,label,subject"; image paths resolve relative to the
// manifest's directory. Every problem is reported with the offending row.
Dataset load_dataset(const std::string& manifest_path);

// Centered window of the given size; offsets floor((dim - size) / 2).
Grid center_crop(const Grid& image, int size = 512);

// Bilinear resize to target x target, then scale intensities to [0, 1].
Grid resize_to_input(const Grid& image, int target);

struct SynthConfig {
    int n_per_class = 100;
    int image_size = 64;
    double radius_min = 0.28;  // fraction of image size
    double radius_max = 0.38;
    double dilation = 1.8;     // KD ring thickness multiplier, > 1
    double noise = 0.15;       // multiplicative speckle level in [0, 1]
    std::uint64_t seed = 7;

    void validate() const;
    // Baseline (non-KD) ring thickness in pixels.
    double base_thickness() const { return image_size / 16.0; }
};

struct SynthDataset {
    std::vector<Grid> images;  // [0, 255], integer-valued
    std::vector<int> labels;
    std::vector<Grid> masks;   // 1 inside the ring annulus, else 0
};

// Deterministic given cfg. KD-class images carry a ring dilated by
// cfg.dilation; the mask marks the noise-free annulus.
SynthDataset generate_synthetic(const SynthConfig& cfg);

// Writes images, masks and manifest.csv under dir; returns the manifest path.
std::string write_synthetic(const std::string& dir, const SynthConfig& cfg);

} // namespace xcam
