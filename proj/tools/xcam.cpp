// Command-line front end: synthesize data, train, cross-validate, render CAMs.
//
// Exit codes: 0 success, 2 configuration/validation error, 3 numerical
// failure at runtime.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "xcam/cam.hpp"
#include "xcam/data.hpp"
#include "xcam/error.hpp"
#include "xcam/evaluation.hpp"
#include "xcam/imageio.hpp"
#include "xcam/threading.hpp"
#include "xcam/training.hpp"

namespace fs = std::filesystem;
using namespace xcam;

namespace {

struct CommonConfig {
    std::string family = "se_resnext";
    double depth_multiplier = 1.0;
    double width_multiplier = 1.0;
    int input_size = 64;
    int logits = 1;
    int cardinality = 4;
    int se_reduction = 16;
    AdamConfig adam;
    ScheduleConfig schedule;
    std::uint64_t seed = 0;
    int jobs = 1;
    bool print_config = false;

    BuildOptions build() const {
        BuildOptions b;
        b.depth_multiplier = depth_multiplier;
        b.width_multiplier = width_multiplier;
        b.input_size = input_size;
        b.logits = logits;
        b.cardinality = cardinality;
        b.se_reduction = se_reduction;
        return b;
    }
};

void add_model_flags(CLI::App* cmd, CommonConfig& c) {
    cmd->add_option("--family", c.family, "Network family: " + [] {
            std::string s;
            for (const std::string& n : all_family_names()) s += (s.empty() ? "" : ", ") + n;
            return s;
        }())
        ->capture_default_str();
    cmd->add_option("--depth-mult", c.depth_multiplier, "Depth scale multiplier")
        ->capture_default_str();
    cmd->add_option("--width-mult", c.width_multiplier, "Width scale multiplier")
        ->capture_default_str();
    cmd->add_option("--input-size", c.input_size, "Model input resolution")->capture_default_str();
    cmd->add_option("--logits", c.logits, "Classifier head width (1 or 2)")->capture_default_str();
    cmd->add_option("--cardinality", c.cardinality, "Grouped-conv path count")
        ->capture_default_str();
    cmd->add_option("--se-reduction", c.se_reduction, "Squeeze-excitation reduction")
        ->capture_default_str();
}

void add_recipe_flags(CLI::App* cmd, CommonConfig& c) {
    cmd->add_option("--lr0", c.adam.lr0, "Initial learning rate")->capture_default_str();
    cmd->add_option("--beta1", c.adam.beta1, "Adam beta1")->capture_default_str();
    cmd->add_option("--beta2", c.adam.beta2, "Adam beta2")->capture_default_str();
    cmd->add_option("--eps", c.adam.eps, "Adam epsilon")->capture_default_str();
    cmd->add_option("--epochs", c.schedule.total_epochs, "Training epochs")
        ->capture_default_str();
    cmd->add_option("--step-epochs", c.schedule.step_epochs, "Epochs between lr decays")
        ->capture_default_str();
    cmd->add_option("--decay", c.schedule.decay_factor, "Learning-rate decay factor")
        ->capture_default_str();
    cmd->add_option("--batch", c.schedule.batch_size, "Batch size")->capture_default_str();
}

void add_run_flags(CLI::App* cmd, CommonConfig& c) {
    cmd->add_option("--seed", c.seed, "Run seed (or set XCAM_SEED)")
        ->envname("XCAM_SEED")
        ->required();
    cmd->add_option("--jobs", c.jobs, "Worker threads")->capture_default_str();
    cmd->add_flag("--print-config", c.print_config,
                  "Print the resolved configuration and exit");
}

// Flat `key = value` config file; keys are long flag names (dashes or
// underscores). Expanded into argv ahead of parsing, skipping any key the
// command line already sets, so precedence is defaults < file < flags.
std::vector<std::string> expand_config_args(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    std::string config_path;
    for (std::size_t i = 0; i < args.size();) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw ValidationError("--config needs a file path");
            config_path = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
        } else if (args[i].rfind("--config=", 0) == 0) {
            config_path = args[i].substr(9);
            args.erase(args.begin() + static_cast<long>(i));
        } else {
            ++i;
        }
    }
    if (config_path.empty()) return args;

    std::ifstream is(config_path);
    if (!is) throw ValidationError("cannot open config file: " + config_path);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto strip = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            const auto e = s.find_last_not_of(" \t\r");
            return s.substr(b, e - b + 1);
        };
        if (strip(line).empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("config line " + std::to_string(line_no) +
                                  " is not 'key = value': " + line);
        std::string key = strip(line.substr(0, eq));
        const std::string value = strip(line.substr(eq + 1));
        if (key.empty() || value.empty())
            throw ValidationError("config line " + std::to_string(line_no) +
                                  " is not 'key = value': " + line);
        for (char& ch : key)
            if (ch == '_') ch = '-';
        const std::string flag = "--" + key;
        bool on_cli = false;
        for (const std::string& a : args)
            if (a == flag || a.rfind(flag + "=", 0) == 0) on_cli = true;
        if (!on_cli) {
            args.push_back(flag);
            args.push_back(value);
        }
    }
    return args;
}

// Resolved configuration echo; ordered map keeps the output deterministic.
void print_resolved(const std::map<std::string, std::string>& kv) {
    for (const auto& [k, v] : kv) std::cout << k << " = " << v << "\n";
}

std::map<std::string, std::string> config_echo(const CommonConfig& c) {
    std::ostringstream lr;
    lr << c.adam.lr0;
    auto num = [](double v) {
        std::ostringstream os;
        os << v;
        return os.str();
    };
    return {
        {"family", c.family},
        {"depth_mult", num(c.depth_multiplier)},
        {"width_mult", num(c.width_multiplier)},
        {"input_size", std::to_string(c.input_size)},
        {"logits", std::to_string(c.logits)},
        {"cardinality", std::to_string(c.cardinality)},
        {"se_reduction", std::to_string(c.se_reduction)},
        {"lr0", num(c.adam.lr0)},
        {"beta1", num(c.adam.beta1)},
        {"beta2", num(c.adam.beta2)},
        {"eps", num(c.adam.eps)},
        {"epochs", std::to_string(c.schedule.total_epochs)},
        {"step_epochs", std::to_string(c.schedule.step_epochs)},
        {"decay", num(c.schedule.decay_factor)},
        {"batch", std::to_string(c.schedule.batch_size)},
        {"seed", std::to_string(c.seed)},
        {"jobs", std::to_string(c.jobs)},
    };
}

// Square-crop non-square frames, then rescale to the model input resolution.
std::vector<Sample> prepare_samples(const Dataset& ds, int input_size) {
    std::vector<Sample> out;
    out.reserve(ds.images.size());
    for (std::size_t i = 0; i < ds.images.size(); ++i) {
        Grid img = ds.images[i];
        if (img.h != img.w) img = center_crop(img, std::min(img.h, img.w));
        Sample s;
        s.image = resize_to_input(img, input_size);
        s.label = ds.manifest.rows[i].label;
        out.push_back(std::move(s));
    }
    return out;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ValidationError("cannot write " + path.string());
    os << text;
}

int cmd_synth(const SynthConfig& cfg, const std::string& out_dir, bool print_only) {
    cfg.validate();
    if (print_only) {
        print_resolved({{"n_per_class", std::to_string(cfg.n_per_class)},
                        {"image_size", std::to_string(cfg.image_size)},
                        {"radius_min", std::to_string(cfg.radius_min)},
                        {"radius_max", std::to_string(cfg.radius_max)},
                        {"dilation", std::to_string(cfg.dilation)},
                        {"noise", std::to_string(cfg.noise)},
                        {"seed", std::to_string(cfg.seed)},
                        {"out", out_dir}});
        return 0;
    }
    const std::string manifest = write_synthetic(out_dir, cfg);
    std::cout << "wrote " << 2 * cfg.n_per_class << " images and masks; manifest at " << manifest
              << "\n";
    return 0;
}

int cmd_train(const CommonConfig& c, const std::string& manifest, const std::string& out_dir) {
    c.adam.validate();
    c.schedule.validate();
    const Family fam = family_from_string(c.family);
    if (c.print_config) {
        auto kv = config_echo(c);
        kv["manifest"] = manifest;
        kv["out"] = out_dir;
        print_resolved(kv);
        return 0;
    }
    Dataset ds = load_dataset(manifest);
    std::vector<Sample> samples = prepare_samples(ds, c.input_size);
    set_num_threads(c.jobs);

    Model model = build_network(fam, c.build(), c.seed);
    std::cerr << "training " << c.family << " (" << model.param_count() << " parameters) on "
              << samples.size() << " samples\n";
    RunManifest rm = train(model, samples, c.adam, c.schedule, c.seed);

    fs::create_directories(out_dir);
    save_weights((fs::path(out_dir) / "weights.bin").string(), model);
    write_file(fs::path(out_dir) / "run_manifest.json", rm.to_json());
    std::cerr << "final epoch loss " << rm.epochs.back().mean_loss << ", wall " << rm.wall_seconds
              << " s\n";
    std::cout << "wrote " << (fs::path(out_dir) / "weights.bin").string() << "\n";
    return 0;
}

int cmd_crossval(const CommonConfig& c, const std::string& manifest, const std::string& out_dir,
                 int k) {
    c.adam.validate();
    c.schedule.validate();
    CrossValConfig cfg;
    cfg.family = family_from_string(c.family);
    cfg.build = c.build();
    cfg.adam = c.adam;
    cfg.schedule = c.schedule;
    cfg.k = k;
    if (c.print_config) {
        auto kv = config_echo(c);
        kv["k"] = std::to_string(k);
        kv["manifest"] = manifest;
        kv["out"] = out_dir;
        print_resolved(kv);
        return 0;
    }
    Dataset ds = load_dataset(manifest);
    std::vector<Sample> samples = prepare_samples(ds, c.input_size);
    set_num_threads(c.jobs);

    CrossValResult res = cross_validate(samples, cfg, c.seed);

    fs::create_directories(out_dir);
    for (const FoldResult& f : res.folds) {
        char name[32];
        std::snprintf(name, sizeof(name), "fold_%02d.json", f.fold);
        write_file(fs::path(out_dir) / name,
                   metrics_json(c.family, "fold " + std::to_string(f.fold), f.metrics, &f.counts));
        std::cerr << "fold " << f.fold << ": " << f.test_indices.size() << " held out\n";
    }
    write_file(fs::path(out_dir) / "pooled.json",
               metrics_json(c.family, "pooled", res.pooled, &res.pooled_confusion));
    write_file(fs::path(out_dir) / "pr_curve.csv", pr_curve_csv(res.pooled_curve));
    const std::string report = render_report({{c.family, res.pooled}});
    write_file(fs::path(out_dir) / "report.txt", report);
    std::cout << report;
    return 0;
}

int cmd_cam(const CommonConfig& c, const std::string& weights, const std::string& image_path,
            int class_index, double alpha, const std::string& out_dir) {
    const Family fam = family_from_string(c.family);
    if (class_index < 0 || class_index > 1)
        throw ValidationError("--class must be 0 or 1");
    if (alpha < 0.0 || alpha > 1.0) throw ValidationError("--alpha must be in [0, 1]");
    if (c.print_config) {
        auto kv = config_echo(c);
        kv["weights"] = weights;
        kv["image"] = image_path;
        kv["class"] = std::to_string(class_index);
        kv["alpha"] = std::to_string(alpha);
        kv["out"] = out_dir;
        print_resolved(kv);
        return 0;
    }
    Grid raw = load_image(image_path);
    Model model = build_network(fam, c.build(), 0);
    load_weights(weights, model);

    if (raw.h != raw.w) raw = center_crop(raw, std::min(raw.h, raw.w));
    Grid input = resize_to_input(raw, c.input_size);

    CamRendering r = cam_for_model(model, input, class_index, alpha);

    fs::create_directories(out_dir);
    const std::vector<std::uint8_t> cam_bytes = quantize_unit(r.upsampled);
    write_pgm((fs::path(out_dir) / "cam.pgm").string(), r.upsampled.h, r.upsampled.w,
              cam_bytes.data());
    write_ppm((fs::path(out_dir) / "overlay.ppm").string(), r.overlay);
    std::cout << "wrote " << (fs::path(out_dir) / "cam.pgm").string() << " and "
              << (fs::path(out_dir) / "overlay.ppm").string() << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Explainable CNN pipeline: synthetic data, training, cross-validation, CAMs"};
    app.require_subcommand(1);

    // synth
    SynthConfig synth_cfg;
    std::string synth_out;
    bool synth_print = false;
    CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic ring dataset");
    synth->add_option("--n", synth_cfg.n_per_class, "Images per class")->capture_default_str();
    synth->add_option("--size", synth_cfg.image_size, "Image size in pixels")
        ->capture_default_str();
    synth->add_option("--radius-min", synth_cfg.radius_min, "Min ring radius (fraction of size)")
        ->capture_default_str();
    synth->add_option("--radius-max", synth_cfg.radius_max, "Max ring radius (fraction of size)")
        ->capture_default_str();
    synth->add_option("--dilation", synth_cfg.dilation, "Positive-class thickness multiplier")
        ->capture_default_str();
    synth->add_option("--noise", synth_cfg.noise, "Multiplicative speckle level")
        ->capture_default_str();
    synth->add_option("--seed", synth_cfg.seed, "Generator seed (or set XCAM_SEED)")
        ->envname("XCAM_SEED")
        ->required();
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_flag("--print-config", synth_print, "Print the resolved configuration and exit");

    // train
    CommonConfig train_cfg;
    std::string train_manifest, train_out = "run";
    CLI::App* train = app.add_subcommand("train", "Train one model on a manifest");
    train->add_option("--manifest", train_manifest, "Dataset manifest CSV")->required();
    train->add_option("--out", train_out, "Output directory")->capture_default_str();
    add_model_flags(train, train_cfg);
    add_recipe_flags(train, train_cfg);
    add_run_flags(train, train_cfg);

    // crossval
    CommonConfig cv_cfg;
    std::string cv_manifest, cv_out = "crossval";
    int cv_k = 10;
    CLI::App* crossval = app.add_subcommand("crossval", "Stratified k-fold cross-validation");
    crossval->add_option("--manifest", cv_manifest, "Dataset manifest CSV")->required();
    crossval->add_option("--out", cv_out, "Output directory")->capture_default_str();
    crossval->add_option("--k", cv_k, "Number of folds")->capture_default_str();
    add_model_flags(crossval, cv_cfg);
    add_recipe_flags(crossval, cv_cfg);
    add_run_flags(crossval, cv_cfg);

    // cam
    CommonConfig cam_cfg;
    std::string cam_weights, cam_image, cam_out = "cam";
    int cam_class = 1;
    double cam_alpha = 0.5;
    CLI::App* cam = app.add_subcommand("cam", "Render a class activation map overlay");
    cam->add_option("--weights", cam_weights, "Trained weight file")->required();
    cam->add_option("--image", cam_image, "Input image (PGM or PNG)")->required();
    cam->add_option("--class", cam_class, "Class index (0 or 1)")->capture_default_str();
    cam->add_option("--alpha", cam_alpha, "Overlay blend weight")->capture_default_str();
    cam->add_option("--out", cam_out, "Output directory")->capture_default_str();
    add_model_flags(cam, cam_cfg);
    cam->add_flag("--print-config", cam_cfg.print_config,
                  "Print the resolved configuration and exit");

    for (CLI::App* sub : {synth, train, crossval, cam})
        sub->footer("Options may also come from --config FILE (flat key = value lines; "
                    "explicit flags win).");

    try {
        std::vector<std::string> args = expand_config_args(argc, argv);
        std::reverse(args.begin(), args.end());  // CLI11 vector parse convention
        app.parse(args);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(synth_cfg, synth_out, synth_print);
        if (train->parsed()) return cmd_train(train_cfg, train_manifest, train_out);
        if (crossval->parsed()) return cmd_crossval(cv_cfg, cv_manifest, cv_out, cv_k);
        if (cam->parsed())
            return cmd_cam(cam_cfg, cam_weights, cam_image, cam_class, cam_alpha, cam_out);
    } catch (const NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << "\n";
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "shape error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
