#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "xcam/data.hpp"
#include "xcam/error.hpp"
#include "xcam/imageio.hpp"

using namespace xcam;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

void write_flat_pgm(const fs::path& p, int h, int w, std::uint8_t value) {
    std::vector<std::uint8_t> bytes(static_cast<std::size_t>(h) * w, value);
    write_pgm(p.string(), h, w, bytes.data());
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::binary);
    os << text;
}

} // namespace

TEST_CASE("load_dataset reads a two-row manifest with relative paths") {
    TempDir dir("xcam_data_load");
    write_flat_pgm(dir.path / "a.pgm", 8, 8, 200);
    write_flat_pgm(dir.path / "b.pgm", 8, 8, 10);
    write_text(dir.path / "manifest.csv",
               "path,label,subject\na.pgm,1,s1\nb.pgm,0,s2\n");
    Dataset ds = load_dataset((dir.path / "manifest.csv").string());
    CHECK(ds.manifest.rows.size() == 2);
    CHECK(ds.manifest.count_positive == 1);
    CHECK(ds.manifest.count_negative == 1);
    CHECK(ds.manifest.rows[0].subject == "s1");
    CHECK(ds.images[0].at(0, 0) == 200.0);
    CHECK(ds.images[1].at(3, 4) == 10.0);

    // recount oracle: per-class totals equal a direct pass over the rows
    int pos = 0, neg = 0;
    for (const ManifestRow& r : ds.manifest.rows) (r.label == 1 ? pos : neg) += 1;
    CHECK(pos == ds.manifest.count_positive);
    CHECK(neg == ds.manifest.count_negative);
}

TEST_CASE("load_dataset reports the offending row") {
    TempDir dir("xcam_data_bad");
    write_flat_pgm(dir.path / "a.pgm", 8, 8, 1);
    write_flat_pgm(dir.path / "b.pgm", 8, 8, 1);

    SUBCASE("bad label") {
        write_text(dir.path / "manifest.csv",
                   "path,label,subject\na.pgm,1,s1\nb.pgm,KD,s2\n");
        try {
            load_dataset((dir.path / "manifest.csv").string());
            FAIL("expected ValidationError");
        } catch (const ValidationError& e) {
            CHECK(std::string(e.what()).find("row 3") != std::string::npos);
        }
    }
    SUBCASE("duplicate path") {
        write_text(dir.path / "manifest.csv",
                   "path,label,subject\na.pgm,1,s1\na.pgm,0,s2\n");
        CHECK_THROWS_AS(load_dataset((dir.path / "manifest.csv").string()), ValidationError);
    }
    SUBCASE("missing image") {
        write_text(dir.path / "manifest.csv",
                   "path,label,subject\na.pgm,1,s1\nmissing.pgm,0,s2\n");
        CHECK_THROWS_AS(load_dataset((dir.path / "manifest.csv").string()), ValidationError);
    }
    SUBCASE("wrong header") {
        write_text(dir.path / "manifest.csv", "file,y,id\na.pgm,1,s1\n");
        CHECK_THROWS_AS(load_dataset((dir.path / "manifest.csv").string()), ValidationError);
    }
    SUBCASE("single class") {
        write_text(dir.path / "manifest.csv",
                   "path,label,subject\na.pgm,1,s1\nb.pgm,1,s2\n");
        CHECK_THROWS_AS(load_dataset((dir.path / "manifest.csv").string()), ValidationError);
    }
}

TEST_CASE("center_crop") {
    SUBCASE("512 window of a 512 image is the image itself") {
        Grid img(512, 512);
        for (std::size_t i = 0; i < img.v.size(); ++i) img.v[i] = static_cast<double>(i % 251);
        Grid out = center_crop(img);
        CHECK(out.v == img.v);
    }
    SUBCASE("708x1016 crops at offsets (98, 252)") {
        Grid img(708, 1016);
        for (int y = 0; y < 708; ++y)
            for (int x = 0; x < 1016; ++x) img.at(y, x) = y * 10000.0 + x;
        Grid out = center_crop(img);
        CHECK(out.h == 512);
        CHECK(out.w == 512);
        CHECK(out.at(0, 0) == 98 * 10000.0 + 252);
        CHECK(out.at(511, 511) == (98 + 511) * 10000.0 + 252 + 511);
    }
    SUBCASE("odd remainders floor the offset") {
        Grid img(515, 514);
        for (int y = 0; y < 515; ++y)
            for (int x = 0; x < 514; ++x) img.at(y, x) = y * 1000.0 + x;
        Grid out = center_crop(img);
        CHECK(out.at(0, 0) == 1 * 1000.0 + 1);
    }
    SUBCASE("cropping an already-cropped image is a no-op") {
        Grid img(600, 700);
        for (std::size_t i = 0; i < img.v.size(); ++i) img.v[i] = static_cast<double>(i % 97);
        Grid once = center_crop(img);
        Grid twice = center_crop(once);
        CHECK(once.v == twice.v);
    }
    SUBCASE("undersized input rejected") {
        Grid img(300, 600);
        CHECK_THROWS_AS(center_crop(img), ValidationError);
    }
}

TEST_CASE("resize_to_input maps 8-bit range to [0, 1]") {
    Grid img(32, 32, 128.0);
    Grid out = resize_to_input(img, 16);
    CHECK(out.h == 16);
    for (double v : out.v) CHECK(v == doctest::Approx(128.0 / 255.0).epsilon(1e-12));

    Grid ramp(16, 16);
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) ramp.at(y, x) = (y * 16 + x% 256);
    Grid r = resize_to_input(ramp, 24);
    for (double v : r.v) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    CHECK_THROWS_AS(resize_to_input(img, 4), ConfigError);
}

TEST_CASE("synthetic generation is deterministic and integer-valued") {
    SynthConfig cfg;
    cfg.n_per_class = 5;
    SynthDataset a = generate_synthetic(cfg);
    SynthDataset b = generate_synthetic(cfg);
    REQUIRE(a.images.size() == 10);
    CHECK(a.labels == b.labels);
    for (std::size_t i = 0; i < a.images.size(); ++i) {
        CHECK(a.images[i].v == b.images[i].v);
        CHECK(a.masks[i].v == b.masks[i].v);
        for (double v : a.images[i].v) {
            CHECK(v == std::round(v));
            CHECK(v >= 0.0);
            CHECK(v <= 255.0);
        }
    }
    // KD block first, then non-KD
    for (int i = 0; i < 5; ++i) CHECK(a.labels[i] == 1);
    for (int i = 5; i < 10; ++i) CHECK(a.labels[i] == 0);

    SynthConfig other = cfg;
    other.seed = 8;
    SynthDataset c = generate_synthetic(other);
    CHECK(c.images[0].v != a.images[0].v);
}

TEST_CASE("KD masks are thicker than non-KD masks by roughly the dilation factor") {
    SynthConfig cfg;
    cfg.n_per_class = 20;
    cfg.noise = 0.0;
    SynthDataset ds = generate_synthetic(cfg);
    double kd_area = 0.0, nk_area = 0.0;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        double area = 0.0;
        for (double v : ds.masks[i].v) area += v;
        (ds.labels[i] == 1 ? kd_area : nk_area) += area;
    }
    // annulus area ~ 2*pi*r*(t+1), same radius distribution for both classes
    const double t = cfg.base_thickness();
    const double expect = (t * cfg.dilation + 1.0) / (t + 1.0);
    const double got = kd_area / nk_area;
    CHECK(got == doctest::Approx(expect).epsilon(0.08));
}

TEST_CASE("noise-free classes separate perfectly on mask area") {
    SynthConfig cfg;
    cfg.n_per_class = 50;
    cfg.noise = 0.0;
    cfg.seed = 3;
    SynthDataset ds = generate_synthetic(cfg);
    // foreground pixel count per unit radius removes the radius confound
    std::vector<double> score(ds.images.size());
    double best_split = 0.0;
    std::vector<std::pair<double, int>> pairs;
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        double area = 0.0;
        double per = 0.0;
        for (double v : ds.images[i].v)
            if (v > 120.0) area += 1.0;
        // estimate radius from the mask's bounding box
        int ymin = 1 << 20, ymax = -1, xmin = 1 << 20, xmax = -1;
        for (int y = 0; y < ds.masks[i].h; ++y)
            for (int x = 0; x < ds.masks[i].w; ++x)
                if (ds.masks[i].at(y, x) > 0.0) {
                    ymin = std::min(ymin, y);
                    ymax = std::max(ymax, y);
                    xmin = std::min(xmin, x);
                    xmax = std::max(xmax, x);
                }
        per = area / std::max(1, (ymax - ymin) + (xmax - xmin));
        pairs.emplace_back(per, ds.labels[i]);
        (void)best_split;
        (void)score;
    }
    std::sort(pairs.begin(), pairs.end());
    // some threshold must separate the classes completely
    int best_correct = 0;
    for (std::size_t cut = 0; cut <= pairs.size(); ++cut) {
        int correct = 0;
        for (std::size_t i = 0; i < pairs.size(); ++i)
            correct += (i < cut ? pairs[i].second == 0 : pairs[i].second == 1) ? 1 : 0;
        best_correct = std::max(best_correct, correct);
    }
    CHECK(best_correct == static_cast<int>(pairs.size()));
}

TEST_CASE("masks ignore speckle noise") {
    SynthConfig quiet, noisy;
    quiet.n_per_class = 5;
    quiet.noise = 0.0;
    noisy = quiet;
    noisy.noise = 0.15;
    // Note: noise draws are interleaved with geometry draws per pixel only in
    // the image; the geometry (radius, center) uses the first three draws, so
    // masks agree whenever geometry agrees.
    SynthDataset a = generate_synthetic(quiet);
    SynthDataset b = generate_synthetic(noisy);
    for (std::size_t i = 0; i < a.masks.size(); ++i) CHECK(a.masks[i].v == b.masks[i].v);
}

TEST_CASE("write_synthetic emits a loadable dataset with aligned masks") {
    TempDir dir("xcam_synth_out");
    SynthConfig cfg;
    cfg.n_per_class = 3;
    const std::string manifest = write_synthetic(dir.path.string(), cfg);
    Dataset ds = load_dataset(manifest);
    CHECK(ds.manifest.rows.size() == 6);
    CHECK(ds.manifest.count_positive == 3);

    SynthDataset mem = generate_synthetic(cfg);
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        CHECK(ds.manifest.rows[i].label == mem.labels[i]);
        CHECK(ds.images[i].v == mem.images[i].v);
        Grid mask = load_image((dir.path / "masks" / fs::path(ds.manifest.rows[i].path)).string());
        for (std::size_t j = 0; j < mask.v.size(); ++j)
            CHECK((mask.v[j] > 0.0) == (mem.masks[i].v[j] > 0.0));
    }
}

TEST_CASE("synthetic config validation") {
    SynthConfig cfg;
    cfg.image_size = 16;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = SynthConfig{};
    cfg.dilation = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = SynthConfig{};
    cfg.noise = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = SynthConfig{};
    cfg.radius_min = 0.4;
    cfg.radius_max = 0.3;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
