// polarfuse: polarization-guided depth enhancement experiments.
//
// Subcommands: decode, simulate, train, eval, pointcloud. Exit codes:
// 0 ok, 2 input error, 3 numeric failure, 4 config error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "polarfuse/model.hpp"
#include "polarfuse/pipeline.hpp"
#include "polarfuse/simulate.hpp"
#include "polarfuse/tensor_io.hpp"

namespace pf = polarfuse;
namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitConfig = 4;

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& m) : std::runtime_error(m) {}
};

struct Cfg {
    std::uint64_t seed = 1;
    std::string config_path;
    std::string out = "out";
    std::string ablation = "ppft";
    std::string channels = "8,16,32";
    std::size_t stages = 0;  // 0 = number of entries in channels
    std::size_t steps = 200;
    double lr = 0.02;
    double clip_norm = 1.0;
    std::string degradation = "mixed";
    std::size_t scenes = 16;
    std::size_t resolution = 64;
    double threshold_base = 1.25;
    double dropout = 0.1;
    double lambda_init = 1.0;
    double d_max = 10000.0;
    double hole_rate = 0.15;
    double depth_noise = 6.0;
    double transparent_offset = 25.0;
    std::size_t crop_margin = 0;  // 0 = resolution/8
    double noise_sigma = 0.01;
    std::string freeze;
    std::string foundation;
    std::string manifest;
    std::string checkpoint;
    std::string input;
    std::string intrinsics;
    std::size_t index = 0;
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Binds CLI options to Cfg fields, merges --config file values for options
// that were not passed on the command line, and echoes the effective set.
class OptionRegistry {
public:
    void bind_u64(CLI::App* cmd, const std::string& flag, std::uint64_t& field,
                  const std::string& desc) {
        add(flag, cmd->add_option("--" + flag, field, desc),
            [&field](const std::string& v) { field = std::stoull(v); },
            [&field] { return std::to_string(field); });
    }
    void bind_size(CLI::App* cmd, const std::string& flag, std::size_t& field,
                   const std::string& desc) {
        add(flag, cmd->add_option("--" + flag, field, desc),
            [&field](const std::string& v) { field = std::stoull(v); },
            [&field] { return std::to_string(field); });
    }
    void bind_double(CLI::App* cmd, const std::string& flag, double& field,
                     const std::string& desc) {
        add(flag, cmd->add_option("--" + flag, field, desc),
            [&field](const std::string& v) { field = std::stod(v); },
            [&field] { return fmt_double(field); });
    }
    void bind_string(CLI::App* cmd, const std::string& flag, std::string& field,
                     const std::string& desc) {
        add(flag, cmd->add_option("--" + flag, field, desc),
            [&field](const std::string& v) { field = v; },
            [&field] { return field; });
    }

    void merge_config_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file '" + path + "'");
        std::map<std::string, std::string> kv;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config file '" + path + "': expected key=value, got '" +
                                  line + "'");
            kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
        for (Entry& e : entries_) {
            auto it = kv.find(e.key);
            if (it == kv.end()) continue;
            if (e.opt->count() == 0) {  // command line wins when present
                try {
                    e.set(it->second);
                } catch (const std::exception&) {
                    throw ConfigError("config file '" + path + "': bad value for key '" + e.key +
                                      "'");
                }
            }
            kv.erase(it);
        }
        for (const auto& [key, value] : kv) {
            (void)value;
            throw ConfigError("config file '" + path + "': unknown key '" + key + "'");
        }
    }

    void echo(const std::string& path) const {
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw pf::IoError("cannot write effective config '" + path + "'");
        std::map<std::string, std::string> sorted;
        for (const Entry& e : entries_) sorted[e.key] = e.get();
        for (const auto& [k, v] : sorted) os << k << "=" << v << "\n";
    }

private:
    struct Entry {
        std::string key;
        CLI::Option* opt;
        std::function<void(const std::string&)> set;
        std::function<std::string()> get;
    };
    std::vector<Entry> entries_;

    void add(const std::string& key, CLI::Option* opt, std::function<void(const std::string&)> set,
             std::function<std::string()> get) {
        entries_.push_back(Entry{key, opt, std::move(set), std::move(get)});
    }
};

std::vector<std::size_t> parse_widths(const std::string& channels) {
    std::vector<std::size_t> widths;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= channels.size(); ++i) {
        if (i == channels.size() || channels[i] == ',') {
            const std::string tok = channels.substr(start, i - start);
            if (!tok.empty()) {
                try {
                    widths.push_back(std::stoull(tok));
                } catch (const std::exception&) {
                    throw ConfigError("bad channel width '" + tok + "'");
                }
            }
            start = i + 1;
        }
    }
    if (widths.empty()) throw ConfigError("empty channel list");
    return widths;
}

std::vector<std::string> parse_prefixes(const std::string& csv) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= csv.size(); ++i) {
        if (i == csv.size() || csv[i] == ',') {
            const std::string tok = csv.substr(start, i - start);
            if (!tok.empty()) out.push_back(tok);
            start = i + 1;
        }
    }
    return out;
}

pf::ModelConfig model_config_from(const Cfg& cfg) {
    pf::ModelConfig mc;
    mc.widths = parse_widths(cfg.channels);
    if (cfg.stages != 0 && cfg.stages != mc.widths.size())
        throw ConfigError("--stages (" + std::to_string(cfg.stages) +
                          ") disagrees with --channels (" + std::to_string(mc.widths.size()) +
                          " entries)");
    try {
        mc.ablation = pf::ablation_from_string(cfg.ablation);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    mc.dropout_p = cfg.dropout;
    mc.lambda_init = cfg.lambda_init;
    mc.d_max = cfg.d_max;
    mc.freeze_prefixes = parse_prefixes(cfg.freeze);
    try {
        mc.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return mc;
}

std::size_t worker_threads() {
    const char* env = std::getenv("POLARFUSE_THREADS");
    if (!env) return 1;
    const long v = std::strtol(env, nullptr, 10);
    return v > 0 ? static_cast<std::size_t>(v) : 1;
}

pf::DatasetOptions dataset_options_from(const Cfg& cfg) {
    pf::DatasetOptions o;
    o.count = cfg.scenes;
    o.seed = cfg.seed;
    o.out_dir = cfg.out;
    o.threads = worker_threads();
    o.scenes.height = o.scenes.width = cfg.resolution;
    o.scenes.noise_sigma = cfg.noise_sigma;
    o.degradations.hole_rate = cfg.hole_rate;
    o.degradations.depth_sigma = cfg.depth_noise;
    o.degradations.transparent_offset = cfg.transparent_offset;
    o.degradations.crop_margin = cfg.crop_margin;
    if (cfg.degradation != "mixed") {
        try {
            o.degradations.cycle = {pf::degradation_from_string(cfg.degradation)};
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string(e.what()) + " (expected mixed or a mode name)");
        }
    }
    return o;
}

int cmd_decode(const Cfg& cfg, const OptionRegistry& reg) {
    pf::Tensor raw;
    pf::CameraIntrinsics k;
    try {
        raw = pf::read_pft1(cfg.input);
        k = pf::read_intrinsics(cfg.intrinsics);
    } catch (const std::exception& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    }
    try {
        pf::DofpCapture capture{std::move(raw)};
        capture.validate();
        auto [stokes, state] = pf::decode_dofp(capture);
        (void)stokes;
        pf::ViewingField view = pf::viewing_field(k, capture.height(), capture.width());
        pf::GuidanceTensor guidance = pf::build_guidance(state, view);
        pf::write_pft1(cfg.out + "_intensity.pft", state.intensity);
        pf::write_pft1(cfg.out + "_aolp.pft", state.aolp);
        pf::write_pft1(cfg.out + "_dolp.pft", state.dolp);
        pf::write_pft1(cfg.out + "_guidance.pft", guidance.data);
        reg.echo(cfg.out + "_config.txt");
    } catch (const std::invalid_argument& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const pf::IoError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    }
    return kExitOk;
}

int cmd_simulate(const Cfg& cfg, const OptionRegistry& reg) {
    pf::DatasetOptions o = dataset_options_from(cfg);
    fs::create_directories(cfg.out);
    auto rows = pf::generate_dataset(o);
    reg.echo((fs::path(cfg.out) / "config.txt").string());
    std::cout << "wrote " << rows.size() << " samples under " << cfg.out << "\n";
    return kExitOk;
}

int cmd_train(const Cfg& cfg, const OptionRegistry& reg) {
    pf::TrainRunOptions opt;
    opt.model = model_config_from(cfg);
    opt.sgd.lr = cfg.lr;
    opt.sgd.clip_norm = cfg.clip_norm;
    opt.steps = cfg.steps;
    opt.seed = cfg.seed;
    opt.foundation = cfg.foundation;

    std::vector<pf::SampleRecord> samples;
    try {
        samples = pf::load_samples(cfg.manifest);
    } catch (const std::exception& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    }
    pf::TrainRunResult result = pf::train_run(samples, opt);
    fs::create_directories(cfg.out);
    pf::write_pwa1((fs::path(cfg.out) / "checkpoint.pwa1").string(), result.params);
    pf::write_loss_csv((fs::path(cfg.out) / "loss.csv").string(), result.log);
    reg.echo((fs::path(cfg.out) / "config.txt").string());
    if (!cfg.foundation.empty())
        std::cout << "foundation: loaded " << result.load_report.loaded.size() << ", missing "
                  << result.load_report.skipped_missing.size() << ", shape-mismatch "
                  << result.load_report.skipped_shape_mismatch.size() << ", frozen "
                  << result.load_report.frozen.size() << "\n";
    std::cout << "final step loss " << (result.log.empty() ? 0.0 : result.log.back().loss_value)
              << " over " << result.log.size() << " steps\n";
    return kExitOk;
}

int cmd_eval(const Cfg& cfg, const OptionRegistry& reg) {
    pf::ModelConfig mc = model_config_from(cfg);
    std::vector<pf::SampleRecord> samples;
    pf::ParamStore params;
    try {
        samples = pf::load_samples(cfg.manifest);
        params = pf::read_pwa1(cfg.checkpoint);
    } catch (const std::exception& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    }
    auto rows = pf::eval_run(samples, params, mc, cfg.threshold_base);
    fs::create_directories(cfg.out);
    pf::write_metrics_csv((fs::path(cfg.out) / "metrics.csv").string(), rows);
    reg.echo((fs::path(cfg.out) / "config.txt").string());
    std::printf("%-18s %10s %10s %8s %8s %8s %10s\n", "mode", "RMSE(mm)", "MAE(mm)", "d1", "d2",
                "d3", "pixels");
    for (const auto& r : rows)
        std::printf("%-18s %10.2f %10.2f %8.4f %8.4f %8.4f %10zu\n", r.mode.c_str(),
                    r.metrics.rmse, r.metrics.mae, r.metrics.delta1, r.metrics.delta2,
                    r.metrics.delta3, r.metrics.n_pixels);
    return kExitOk;
}

int cmd_pointcloud(const Cfg& cfg, const OptionRegistry& reg) {
    pf::ModelConfig mc = model_config_from(cfg);
    pf::SampleRecord sample;
    pf::ParamStore params;
    pf::CameraIntrinsics k;
    try {
        auto rows = pf::read_manifest(cfg.manifest);
        if (cfg.index >= rows.size())
            throw pf::IoError("sample index " + std::to_string(cfg.index) +
                              " out of range (manifest has " + std::to_string(rows.size()) +
                              " rows)");
        const std::string base = fs::path(cfg.manifest).parent_path().string();
        sample = pf::load_sample(base.empty() ? "." : base, rows[cfg.index]);
        params = pf::read_pwa1(cfg.checkpoint);
        k = pf::read_intrinsics((fs::path(cfg.manifest).parent_path() / "intrinsics.txt")
                                    .string());
    } catch (const std::exception& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    }
    pf::DepthMap pred = pf::enhance(sample.guidance, sample.sensor, params, mc);
    fs::create_directories(cfg.out);
    pf::write_ply((fs::path(cfg.out) / "sensor.ply").string(),
                  pf::backproject(sample.sensor, k));
    pf::write_ply((fs::path(cfg.out) / "gt.ply").string(), pf::backproject(sample.gt, k));
    pf::write_ply((fs::path(cfg.out) / "pred.ply").string(), pf::backproject(pred, k));
    reg.echo((fs::path(cfg.out) / "config.txt").string());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"polarization-guided depth enhancement toolkit"};
    app.require_subcommand(1);

    Cfg cfg;
    // one registry per subcommand, so config-file merging only touches the
    // options of the command actually being run
    OptionRegistry regs[5];
    OptionRegistry& reg_decode = regs[0];
    OptionRegistry& reg_simulate = regs[1];
    OptionRegistry& reg_train = regs[2];
    OptionRegistry& reg_eval = regs[3];
    OptionRegistry& reg_pc = regs[4];

    auto add_common = [&](CLI::App* cmd, OptionRegistry& reg) {
        reg.bind_u64(cmd, "seed", cfg.seed, "RNG seed");
        cmd->add_option("--config", cfg.config_path, "key=value config file");
        reg.bind_string(cmd, "out", cfg.out, "output directory (decode: output prefix)");
    };
    auto add_model = [&](CLI::App* cmd, OptionRegistry& reg) {
        reg.bind_string(cmd, "ablation", cfg.ablation,
                        "ppft|no-ppft|rgb-guidance|early-fusion|shallow-ppfb");
        reg.bind_string(cmd, "channels", cfg.channels, "per-stage widths, e.g. 8,16,32");
        reg.bind_size(cmd, "stages", cfg.stages, "stage count (must match channels)");
        reg.bind_double(cmd, "dropout", cfg.dropout, "fusion-block dropout p");
        reg.bind_double(cmd, "lambda-init", cfg.lambda_init, "initial attention scale");
        reg.bind_double(cmd, "d-max", cfg.d_max, "depth clamp in mm");
    };

    CLI::App* decode = app.add_subcommand("decode", "DoFP capture -> polarization state");
    add_common(decode, reg_decode);
    reg_decode.bind_string(decode, "input", cfg.input, "PFT1 [4,H,W] capture");
    reg_decode.bind_string(decode, "intrinsics", cfg.intrinsics, "fx/fy/cx/cy key=value file");
    decode->get_option("--input")->required();
    decode->get_option("--intrinsics")->required();

    CLI::App* simulate = app.add_subcommand("simulate", "generate a synthetic dataset");
    add_common(simulate, reg_simulate);
    reg_simulate.bind_size(simulate, "scenes", cfg.scenes, "sample count");
    reg_simulate.bind_size(simulate, "resolution", cfg.resolution, "square image size");
    reg_simulate.bind_string(simulate, "degradation", cfg.degradation,
                             "mixed|stereo-holes|dtof-transparent|itof-fov-crop");
    reg_simulate.bind_double(simulate, "hole-rate", cfg.hole_rate, "stereo hole fraction");
    reg_simulate.bind_double(simulate, "depth-noise", cfg.depth_noise,
                             "sensor depth sigma (mm)");
    reg_simulate.bind_double(simulate, "transparent-offset", cfg.transparent_offset,
                             "see-through depth offset (mm)");
    reg_simulate.bind_size(simulate, "crop-margin", cfg.crop_margin,
                           "itof border (0 = resolution/8)");
    reg_simulate.bind_double(simulate, "noise-sigma", cfg.noise_sigma,
                             "capture intensity noise");

    CLI::App* train = app.add_subcommand("train", "train the enhancement model");
    add_common(train, reg_train);
    add_model(train, reg_train);
    reg_train.bind_string(train, "manifest", cfg.manifest, "dataset manifest.csv");
    reg_train.bind_size(train, "steps", cfg.steps, "gradient steps");
    reg_train.bind_double(train, "lr", cfg.lr, "learning rate");
    reg_train.bind_double(train, "clip-norm", cfg.clip_norm, "global grad clip (<=0 off)");
    reg_train.bind_string(train, "foundation", cfg.foundation, "PWA1 warm-start archive");
    reg_train.bind_string(train, "freeze", cfg.freeze, "comma list of frozen name prefixes");
    train->get_option("--manifest")->required();

    CLI::App* eval_cmd = app.add_subcommand("eval", "per-degradation-mode metrics");
    add_common(eval_cmd, reg_eval);
    add_model(eval_cmd, reg_eval);
    reg_eval.bind_string(eval_cmd, "manifest", cfg.manifest, "dataset manifest.csv");
    reg_eval.bind_string(eval_cmd, "checkpoint", cfg.checkpoint, "PWA1 checkpoint");
    reg_eval.bind_double(eval_cmd, "threshold-base", cfg.threshold_base,
                         "delta threshold base");
    eval_cmd->get_option("--manifest")->required();
    eval_cmd->get_option("--checkpoint")->required();

    CLI::App* pointcloud = app.add_subcommand("pointcloud", "PLY export of sensor/gt/pred");
    add_common(pointcloud, reg_pc);
    add_model(pointcloud, reg_pc);
    reg_pc.bind_string(pointcloud, "manifest", cfg.manifest, "dataset manifest.csv");
    reg_pc.bind_string(pointcloud, "checkpoint", cfg.checkpoint, "PWA1 checkpoint");
    reg_pc.bind_size(pointcloud, "index", cfg.index, "sample index");
    pointcloud->get_option("--manifest")->required();
    pointcloud->get_option("--checkpoint")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    OptionRegistry* reg = nullptr;
    if (decode->parsed()) reg = &reg_decode;
    else if (simulate->parsed()) reg = &reg_simulate;
    else if (train->parsed()) reg = &reg_train;
    else if (eval_cmd->parsed()) reg = &reg_eval;
    else if (pointcloud->parsed()) reg = &reg_pc;
    if (!reg) return kExitConfig;

    try {
        if (!cfg.config_path.empty()) reg->merge_config_file(cfg.config_path);

        if (decode->parsed()) return cmd_decode(cfg, *reg);
        if (simulate->parsed()) return cmd_simulate(cfg, *reg);
        if (train->parsed()) return cmd_train(cfg, *reg);
        if (eval_cmd->parsed()) return cmd_eval(cfg, *reg);
        return cmd_pointcloud(cfg, *reg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const pf::IoError& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::invalid_argument& e) {
        std::cerr << "input error: " << e.what() << "\n";
        return kExitInput;
    } catch (const std::runtime_error& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return kExitNumeric;
    }
}
