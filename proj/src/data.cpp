#include "xcam/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "xcam/error.hpp"
#include "xcam/imageio.hpp"
#include "xcam/rng.hpp"

namespace fs = std::filesystem;

namespace xcam {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    fields.push_back(cur);
    return fields;
}

} // namespace

Dataset load_dataset(const std::string& manifest_path) {
    std::ifstream is(manifest_path);
    if (!is) throw ValidationError("cannot open manifest: " + manifest_path);
    const fs::path base = fs::path(manifest_path).parent_path();

    std::string line;
    if (!std::getline(is, line)) throw ValidationError("empty manifest: " + manifest_path);
    if (split_csv_line(line) != std::vector<std::string>{"path", "label", "subject"})
        throw ValidationError("manifest header must be 'path,label,subject', got '" + line + "'");

    Dataset ds;
    std::set<std::string> seen;
    int row_no = 1;
    while (std::getline(is, line)) {
        ++row_no;
        if (line.empty() || line == "\r") continue;
        const std::vector<std::string> f = split_csv_line(line);
        if (f.size() != 3)
            throw ValidationError("manifest row " + std::to_string(row_no) + " has " +
                                  std::to_string(f.size()) + " fields, expected 3");
        ManifestRow row;
        row.path = f[0];
        row.subject = f[2];
        if (f[1] == "0") row.label = 0;
        else if (f[1] == "1") row.label = 1;
        else
            throw ValidationError("manifest row " + std::to_string(row_no) + ": label '" + f[1] +
                                  "' must be 0 or 1");
        if (!seen.insert(row.path).second)
            throw ValidationError("manifest row " + std::to_string(row_no) + ": duplicate path '" +
                                  row.path + "'");
        const fs::path full = fs::path(row.path).is_absolute() ? fs::path(row.path) : base / row.path;
        try {
            ds.images.push_back(load_image(full.string()));
        } catch (const ValidationError& e) {
            throw ValidationError("manifest row " + std::to_string(row_no) + ": " + e.what());
        }
        (row.label == 1 ? ds.manifest.count_positive : ds.manifest.count_negative) += 1;
        ds.manifest.rows.push_back(std::move(row));
    }
    if (ds.manifest.count_positive == 0 || ds.manifest.count_negative == 0)
        throw ValidationError("manifest must contain both classes (have " +
                              std::to_string(ds.manifest.count_positive) + " positive, " +
                              std::to_string(ds.manifest.count_negative) + " negative)");
    return ds;
}

Grid center_crop(const Grid& image, int size) {
    if (image.h < size || image.w < size)
        throw ValidationError("image " + std::to_string(image.h) + "x" + std::to_string(image.w) +
                              " smaller than crop size " + std::to_string(size));
    const int oy = (image.h - size) / 2;
    const int ox = (image.w - size) / 2;
    Grid out(size, size);
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) out.at(y, x) = image.at(oy + y, ox + x);
    return out;
}

Grid resize_to_input(const Grid& image, int target) {
    if (target < 8) throw ConfigError("model input size must be >= 8");
    Grid out = bilinear_resize(image, target, target);
    for (double& v : out.v) v /= 255.0;
    return out;
}

void SynthConfig::validate() const {
    if (n_per_class < 1) throw ConfigError("synthetic n per class must be >= 1");
    if (image_size < 32) throw ConfigError("synthetic image size must be >= 32");
    if (dilation <= 1.0) throw ConfigError("ring dilation factor must be > 1");
    if (noise < 0.0 || noise > 1.0) throw ConfigError("speckle noise level must be in [0, 1]");
    if (!(radius_min > 0.0 && radius_min <= radius_max && radius_max < 0.5))
        throw ConfigError("ring radius range must satisfy 0 < min <= max < 0.5");
}

namespace {

constexpr double kBackground = 30.0;
constexpr double kForeground = 220.0;

// Soft-edged annulus coverage: 1 well inside the ring band, 0 outside,
// linear over a one-pixel transition.
double ring_coverage(double dist_to_ring, double thickness) {
    const double c = thickness / 2.0 + 0.5 - dist_to_ring;
    return c < 0.0 ? 0.0 : (c > 1.0 ? 1.0 : c);
}

} // namespace

SynthDataset generate_synthetic(const SynthConfig& cfg) {
    cfg.validate();
    SynthDataset out;
    const int size = cfg.image_size;
    const int total = 2 * cfg.n_per_class;
    out.images.reserve(static_cast<std::size_t>(total));
    out.labels.reserve(static_cast<std::size_t>(total));
    out.masks.reserve(static_cast<std::size_t>(total));

    for (int idx = 0; idx < total; ++idx) {
        const int label = idx < cfg.n_per_class ? 1 : 0;  // KD first, then non-KD
        Rng rng = Rng::derive(cfg.seed, static_cast<std::uint64_t>(idx));

        const double r = rng.uniform(cfg.radius_min, cfg.radius_max) * size;
        const double jitter = size / 16.0;
        const double cy = size / 2.0 + rng.uniform(-jitter, jitter);
        const double cx = size / 2.0 + rng.uniform(-jitter, jitter);
        const double t = cfg.base_thickness() * (label == 1 ? cfg.dilation : 1.0);

        Grid img(size, size);
        Grid mask(size, size);
        for (int y = 0; y < size; ++y) {
            for (int x = 0; x < size; ++x) {
                const double dy = y + 0.5 - cy;
                const double dx = x + 0.5 - cx;
                const double d = std::abs(std::sqrt(dy * dy + dx * dx) - r);
                const double cov = ring_coverage(d, t);
                double v = kBackground + (kForeground - kBackground) * cov;
                v *= 1.0 + cfg.noise * (2.0 * rng.uniform() - 1.0);
                v = v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v);
                img.at(y, x) = std::round(v);
                mask.at(y, x) = cov > 0.0 ? 1.0 : 0.0;
            }
        }
        out.images.push_back(std::move(img));
        out.labels.push_back(label);
        out.masks.push_back(std::move(mask));
    }
    return out;
}

std::string write_synthetic(const std::string& dir, const SynthConfig& cfg) {
    const SynthDataset ds = generate_synthetic(cfg);
    fs::create_directories(dir);
    fs::create_directories(fs::path(dir) / "masks");

    std::ostringstream manifest;
    manifest << "path,label,subject\n";
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s_%04zu.pgm", ds.labels[i] == 1 ? "kd" : "nonkd", i);
        const Grid& img = ds.images[i];
        std::vector<std::uint8_t> bytes(img.v.size());
        for (std::size_t j = 0; j < img.v.size(); ++j)
            bytes[j] = static_cast<std::uint8_t>(img.v[j]);
        write_pgm((fs::path(dir) / name).string(), img.h, img.w, bytes.data());

        const Grid& mask = ds.masks[i];
        std::vector<std::uint8_t> mbytes(mask.v.size());
        for (std::size_t j = 0; j < mask.v.size(); ++j)
            mbytes[j] = mask.v[j] > 0.0 ? 255 : 0;
        write_pgm((fs::path(dir) / "masks" / name).string(), mask.h, mask.w, mbytes.data());

        manifest << name << "," << ds.labels[i] << ",s" << i << "\n";
    }
    const std::string manifest_path = (fs::path(dir) / "manifest.csv").string();
    std::ofstream os(manifest_path, std::ios::binary);
    if (!os) throw ValidationError("cannot write manifest: " + manifest_path);
    os << manifest.str();
    return manifest_path;
}

} // namespace xcam
