#include "rimr/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <thread>

#include "rimr/error.hpp"
#include "rimr/io.hpp"
#include "rimr/pipeline.hpp"

namespace rimr::cli {

namespace fs = std::filesystem;

namespace {

bool deterministic_env() {
    const char* v = std::getenv("RIMR_DETERMINISTIC");
    return v && std::string(v) == "1";
}

std::size_t worker_count(std::size_t requested) {
    if (deterministic_env()) return 1;
    if (requested) return requested;
    return std::max(1u, std::thread::hardware_concurrency());
}

// Reads a key=value config file; a "seed" key is split off and returned.
kv::Map read_config(const std::string& path, std::optional<std::uint64_t>& seed) {
    if (path.empty()) return {};
    kv::Map m;
    try {
        m = io::decode_config(io::read_text(path));
    } catch (const IoError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(path + ": " + e.what());
    }
    if (auto it = m.find("seed"); it != m.end()) {
        seed = kv::to_uint("seed", it->second);
        m.erase(it);
    }
    return m;
}

std::string join(const kv::Map& m) {
    std::string s;
    for (const auto& [k, v] : m) s += k + "=" + v + "\n";
    return s;
}

struct TrainArgs {
    std::string config, data = "data/manifest.tsv", out, resume, stage1_checkpoint;
    std::optional<std::uint64_t> seed, epochs;
    bool no_discriminator = false, no_iou = false;
};

pipeline::TrainConfig load_train_config(const TrainArgs& a, int stage) {
    std::optional<std::uint64_t> seed;
    auto m = read_config(a.config, seed);
    if (auto it = m.find("stage"); it != m.end() && it->second != std::to_string(stage)) {
        throw ConfigError(a.config + " is a stage-" + it->second + " config, expected stage " + std::to_string(stage));
    }
    m["stage"] = std::to_string(stage);
    if (seed) m["seed"] = std::to_string(*seed);
    if (a.seed) m["seed"] = std::to_string(*a.seed);
    if (a.epochs) m["epochs"] = std::to_string(*a.epochs);
    if (a.no_discriminator) m["no_discriminator"] = "true";
    if (a.no_iou) m["no_iou"] = "true";
    if (!a.stage1_checkpoint.empty()) {
        m["coarse_source"] = "stage1";
        m["stage1_checkpoint"] = a.stage1_checkpoint;
    }
    try {
        return pipeline::TrainConfig::from_key_values(join(m));
    } catch (const Error& e) {
        throw ConfigError((a.config.empty() ? std::string("train config") : a.config) + ": " + e.what());
    }
}

void print_epoch(std::ostream& out, const pipeline::EpochLog& row) {
    out << "epoch " << row.epoch;
    for (const auto& [k, v] : row.values) out << "  " << k << "=" << v;
    out << std::endl;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Radar-to-3D reconstruction toolkit", "rimr"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for every subcommand");

    std::string synth_config, synth_out = "data";
    std::optional<std::uint64_t> synth_seed;
    std::size_t threads = 0;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic radar/depth/point-cloud dataset");
    synth->add_option("--config", synth_config, "Scene config (key=value)")->check(CLI::ExistingFile);
    synth->add_option("--out", synth_out, "Output directory")->capture_default_str();
    synth->add_option("--seed", synth_seed, "Seed (overrides the config)");
    synth->add_option("--threads", threads, "Worker threads (0 = all cores)");

    TrainArgs t1, t2;
    t1.out = "runs/stage1";
    t2.out = "runs/stage2";
    auto add_train = [&](CLI::App* sub, TrainArgs& a) {
        sub->add_option("--config", a.config, "Training config (key=value)")->check(CLI::ExistingFile);
        sub->add_option("--data", a.data, "Dataset manifest")->capture_default_str();
        sub->add_option("--out", a.out, "Run directory")->capture_default_str();
        sub->add_option("--seed", a.seed, "Seed (overrides the config)");
        sub->add_option("--epochs", a.epochs, "Epochs (overrides the config)");
        sub->add_option("--resume", a.resume, "Continue from this checkpoint");
    };
    auto* train1 = app.add_subcommand("train-stage1", "Train the radar-to-depth GAN");
    add_train(train1, t1);
    auto* train2 = app.add_subcommand("train-stage2", "Train the point-cloud refinement GAN");
    add_train(train2, t2);
    train2->add_flag("--no-discriminator", t2.no_discriminator, "DPN baseline: no adversarial term");
    train2->add_flag("--no-iou", t2.no_iou, "CLN baseline: IoU reported but not optimized");
    train2->add_option("--stage1-checkpoint", t2.stage1_checkpoint,
                       "Build coarse clouds from this Stage-1 model instead of ground-truth depths");

    std::string data = "data/manifest.tsv", ckpt1 = "runs/stage1/checkpoint.rimrckpt",
                ckpt2 = "runs/stage2/checkpoint.rimrckpt", sample_id, recon_out, report_out = "eval/report.txt";
    pipeline::EvalConfig eval_cfg;
    auto add_models = [&](CLI::App* sub) {
        sub->add_option("--data", data, "Dataset manifest")->capture_default_str();
        sub->add_option("--stage1", ckpt1, "Stage-1 checkpoint")->capture_default_str();
        sub->add_option("--stage2", ckpt2, "Stage-2 checkpoint")->capture_default_str();
    };
    auto* recon = app.add_subcommand("reconstruct", "Run the full pipeline on one sample");
    add_models(recon);
    recon->add_option("--sample", sample_id, "Sample id from the manifest")->required();
    recon->add_option("--out", recon_out, "Output directory (default recon/<sample>)");

    auto* eval = app.add_subcommand("eval", "Reconstruct and score every sample of a split");
    add_models(eval);
    eval->add_option("--out", report_out, "Report path")->capture_default_str();
    eval->add_option("--split", eval_cfg.split, "Manifest split")->capture_default_str();
    eval->add_option("--voxel", eval_cfg.voxel_size, "IoU voxel size (m)")->capture_default_str();
    eval->add_option("--tau", eval_cfg.tau, "F-score threshold (m)")->capture_default_str();
    eval->add_option("--threads", threads, "Worker threads (0 = all cores)");

    std::string inspect_path;
    auto* inspect = app.add_subcommand("inspect", "Summarize a RIMRVOL, RIMRCKPT, PLY, PGM, manifest or config file");
    inspect->add_option("file", inspect_path, "File to inspect")->required();

    if (!args.empty() && args[0] != "-h" && args[0] != "--help" && args[0] != "--help-all" &&
        !app.get_subcommand_no_throw(args[0])) {
        err << "rimr: unknown subcommand or option '" << args[0] << "'\n" << app.help();
        return kExitUsage;
    }

    std::vector<std::string> argv_store{"rimr"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, err, err);
        err << app.help();
        return kExitUsage;
    }

    try {
        if (synth->parsed()) {
            std::optional<std::uint64_t> cfg_seed;
            const auto m = read_config(synth_config, cfg_seed);
            pipeline::SceneConfig cfg;
            try {
                cfg = pipeline::SceneConfig::from_key_values(join(m));
            } catch (const Error& e) {
                throw ConfigError((synth_config.empty() ? std::string("scene config") : synth_config) + ": " + e.what());
            }
            const std::uint64_t seed = synth_seed ? *synth_seed : cfg_seed.value_or(0);
            const auto manifest = pipeline::build_dataset(cfg, synth_out, seed, worker_count(threads));
            out << "wrote " << cfg.train_samples + cfg.test_samples << " samples (" << cfg.train_samples << " train, "
                << cfg.test_samples << " test) to " << manifest.string() << std::endl;
        } else if (train1->parsed() || train2->parsed()) {
            const int stage = train1->parsed() ? 1 : 2;
            const TrainArgs& a = stage == 1 ? t1 : t2;
            const auto cfg = load_train_config(a, stage);
            pipeline::TrainOptions opts;
            if (!a.resume.empty()) opts.resume = a.resume;
            opts.on_epoch = [&](const pipeline::EpochLog& row) { print_epoch(out, row); };
            const auto result = stage == 1 ? pipeline::train_stage1(a.data, cfg, a.out, opts)
                                           : pipeline::train_stage2(a.data, cfg, a.out, opts);
            out << "checkpoint: " << result.checkpoint.string() << std::endl;
        } else if (recon->parsed()) {
            const auto g1 = pipeline::load_stage1_generator(ckpt1);
            const auto g2 = pipeline::load_stage2_generator(ckpt2);
            const double min_depth = pipeline::load_checkpoint(ckpt2).config.min_depth;
            const auto ds = pipeline::load_manifest(data);
            std::size_t index = ds.records.size();
            for (std::size_t i = 0; i < ds.records.size(); ++i)
                if (ds.records[i].id == sample_id) index = i;
            if (index == ds.records.size()) throw ConfigError("sample '" + sample_id + "' is not in " + data);
            const auto sample = pipeline::load_sample(ds, index);
            const auto r = pipeline::reconstruct(sample, *g1, *g2, min_depth);
            const fs::path dir = recon_out.empty() ? fs::path("recon") / sample_id : fs::path(recon_out);
            for (std::size_t v = 0; v < r.depths.size(); ++v) {
                const fs::path p = dir / ("depth_v" + std::to_string(v) + ".pgm");
                io::write_file(p, io::encode_pgm(r.depths[v]));
                io::write_text(p.string() + ".cam", io::encode_camera(r.depths[v].camera));
            }
            io::write_text(dir / "coarse.ply", io::encode_ply(r.coarse));
            io::write_text(dir / "refined.ply", io::encode_ply(r.refined));
            out << "coarse points: " << r.coarse.size() << "\nrefined points: " << r.refined.size() << "\nwritten to "
                << dir.string() << std::endl;
        } else if (eval->parsed()) {
            eval_cfg.threads = worker_count(threads);
            const auto report = pipeline::evaluate(data, ckpt1, ckpt2, eval_cfg);
            io::write_text(report_out, report.to_text());
            out << "samples: " << report.samples.size() << '\n';
            for (const auto& [name, s] : report.aggregate.fields) {
                out << name << ": mean " << s.mean << ", std " << s.std << '\n';
            }
            out << "report: " << report_out << std::endl;
        } else if (inspect->parsed()) {
            out << io::inspect(inspect_path);
        }
    } catch (const NumericError& e) {
        err << "rimr: numerical error: " << e.what() << std::endl;
        return kExitNumeric;
    } catch (const std::exception& e) {
        err << "rimr: " << e.what() << std::endl;
        return kExitData;
    }
    return kExitOk;
}

int run(int argc, char** argv) { return run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr); }

}  // namespace rimr::cli
