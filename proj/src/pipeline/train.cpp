#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "keys.hpp"
#include "rimr/error.hpp"
#include "rimr/pipeline.hpp"

namespace rimr::pipeline {

using tensor::NamedArray;
using tensor::Tensor;

// ---- train config -----------------------------------------------------------

void TrainConfig::validate() const {
    if (stage != 1 && stage != 2) throw ConfigError("train config: stage must be 1 or 2");
    if (epochs == 0 || batch_size == 0) throw ConfigError("train config: epochs and batch_size must be positive");
    if (checkpoint_every == 0) throw ConfigError("train config: checkpoint_every must be positive");
    if (!(adam.lr >= 0) || !(adam.beta1 >= 0 && adam.beta1 < 1) || !(adam.beta2 >= 0 && adam.beta2 < 1) ||
        !(adam.eps > 0)) {
        throw ConfigError("train config: invalid optimizer settings");
    }
    if (!(corruption_probability >= 0 && corruption_probability <= 1)) {
        throw ConfigError("train config: corruption_probability must be in [0, 1]");
    }
    if (!(corruption_magnitude >= 0 && corruption_magnitude < 1)) {
        throw ConfigError("train config: corruption_magnitude must be in [0, 1)");
    }
    if (!(stage2_weights.voxel_size > 0)) throw ConfigError("train config: voxel_size must be positive");
    if (stage == 2 && coarse_source == CoarseSource::Stage1 && stage1_checkpoint.empty()) {
        throw ConfigError("train config: coarse_source=stage1 needs stage1_checkpoint");
    }
    stage1.validate();
    stage2.validate();
}

std::string TrainConfig::to_key_values() const {
    kv::Map m;
    m["stage"] = std::to_string(stage);
    m["epochs"] = std::to_string(epochs);
    m["batch_size"] = std::to_string(batch_size);
    m["seed"] = std::to_string(seed);
    m["lr"] = kv::format_double(adam.lr);
    m["beta1"] = kv::format_double(adam.beta1);
    m["beta2"] = kv::format_double(adam.beta2);
    m["adam_eps"] = kv::format_double(adam.eps);
    m["lambda_1"] = kv::format_double(stage1_weights.lambda_1);
    m["lambda_p"] = kv::format_double(stage1_weights.lambda_p);
    m["lambda_cf"] = kv::format_double(stage2_weights.lambda_cf);
    m["lambda_iou"] = kv::format_double(stage2_weights.lambda_iou);
    m["voxel_size"] = kv::format_double(stage2_weights.voxel_size);
    m["no_discriminator"] = no_discriminator ? "true" : "false";
    m["no_iou"] = no_iou ? "true" : "false";
    m["checkpoint_every"] = std::to_string(checkpoint_every);
    m["split"] = split;
    m["max_samples"] = std::to_string(max_samples);
    m["coarse_source"] = coarse_source == CoarseSource::Stage1 ? "stage1" : "gt-depth";
    if (!stage1_checkpoint.empty()) m["stage1_checkpoint"] = stage1_checkpoint;
    m["corruption_probability"] = kv::format_double(corruption_probability);
    m["corruption_magnitude"] = kv::format_double(corruption_magnitude);
    m["min_depth"] = kv::format_double(min_depth);
    detail::merge_prefixed(m, "stage1.", stage1.to_key_values());
    detail::merge_prefixed(m, "stage2.", stage2.to_key_values());
    return detail::join(m);
}

TrainConfig TrainConfig::from_key_values(const std::string& text) {
    const auto m = kv::parse(text, "train config");
    detail::KeyReader r(m, "train config");
    TrainConfig c;
    c.stage = static_cast<int>(r.get_uint("stage", static_cast<std::uint64_t>(c.stage)));
    c.epochs = r.get_uint("epochs", c.epochs);
    c.batch_size = r.get_uint("batch_size", c.batch_size);
    c.seed = r.get_uint("seed", c.seed);
    c.adam.lr = r.get_double("lr", c.adam.lr);
    c.adam.beta1 = r.get_double("beta1", c.adam.beta1);
    c.adam.beta2 = r.get_double("beta2", c.adam.beta2);
    c.adam.eps = r.get_double("adam_eps", c.adam.eps);
    c.stage1_weights.lambda_1 = r.get_double("lambda_1", c.stage1_weights.lambda_1);
    c.stage1_weights.lambda_p = r.get_double("lambda_p", c.stage1_weights.lambda_p);
    c.stage2_weights.lambda_cf = r.get_double("lambda_cf", c.stage2_weights.lambda_cf);
    c.stage2_weights.lambda_iou = r.get_double("lambda_iou", c.stage2_weights.lambda_iou);
    c.stage2_weights.voxel_size = r.get_double("voxel_size", c.stage2_weights.voxel_size);
    c.no_discriminator = r.get_bool("no_discriminator", c.no_discriminator);
    c.no_iou = r.get_bool("no_iou", c.no_iou);
    c.checkpoint_every = r.get_uint("checkpoint_every", c.checkpoint_every);
    c.split = r.get_string("split", c.split);
    c.max_samples = r.get_uint("max_samples", c.max_samples);
    const auto source = r.get_string("coarse_source", "gt-depth");
    if (source == "stage1") {
        c.coarse_source = CoarseSource::Stage1;
    } else if (source != "gt-depth") {
        throw ConfigError("train config: coarse_source must be gt-depth or stage1, got '" + source + "'");
    }
    c.stage1_checkpoint = r.get_string("stage1_checkpoint", "");
    c.corruption_probability = r.get_double("corruption_probability", c.corruption_probability);
    c.corruption_magnitude = r.get_double("corruption_magnitude", c.corruption_magnitude);
    c.min_depth = r.get_double("min_depth", c.min_depth);
    c.stage1 = stage1::Stage1Config::from_key_values(r.section("stage1."));
    c.stage2 = stage2::Stage2Config::from_key_values(r.section("stage2."));
    r.reject_unknown();
    c.validate();
    return c;
}

// ---- loss log ---------------------------------------------------------------

double EpochLog::get(const std::string& column) const {
    for (const auto& [k, v] : values)
        if (k == column) return v;
    throw ConfigError("loss log has no column '" + column + "'");
}

std::vector<std::string> log_columns(const TrainConfig& cfg) {
    if (cfg.stage == 1) return {"L_D", "L_GAN", "L_1", "L_p"};
    if (cfg.no_discriminator) return {"L_GAN", "L_cf", "L_iou"};
    return {"L_D", "L_GAN", "L_cf", "L_iou"};
}

std::string format_log(const std::vector<std::string>& columns, const std::vector<EpochLog>& rows) {
    std::string s = "epoch";
    for (const auto& c : columns) s += "\t" + c;
    s += "\n";
    for (const auto& row : rows) {
        s += std::to_string(row.epoch);
        for (const auto& c : columns) s += "\t" + kv::format_double(row.get(c));
        s += "\n";
    }
    return s;
}

std::vector<EpochLog> parse_log(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("loss log: missing header line");
    auto split = [](const std::string& l) {
        std::vector<std::string> out;
        std::size_t start = 0;
        while (true) {
            const auto tab = l.find('\t', start);
            out.push_back(l.substr(start, tab - start));
            if (tab == std::string::npos) return out;
            start = tab + 1;
        }
    };
    const auto header = split(line);
    if (header.empty() || header[0] != "epoch") throw FormatError("loss log: header must start with 'epoch'");
    std::vector<EpochLog> rows;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        const auto cells = split(line);
        if (cells.size() != header.size()) {
            throw FormatError("loss log line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                              " fields, got " + std::to_string(cells.size()));
        }
        EpochLog row;
        row.epoch = kv::to_uint("epoch", cells[0]);
        for (std::size_t i = 1; i < cells.size(); ++i) row.values.emplace_back(header[i], kv::to_double(header[i], cells[i]));
        rows.push_back(std::move(row));
    }
    return rows;
}

// ---- checkpoints ------------------------------------------------------------

namespace {

fs::path sidecar(const fs::path& checkpoint) { return fs::path(checkpoint.string() + ".cfg"); }

NamedArray scalar_array(const std::string& name, double v) {
    return {name, {1}, {static_cast<float>(v)}, {0.0f}, {0.0f}};
}

std::uint64_t read_scalar(const std::vector<NamedArray>& arrays, const std::string& name) {
    for (const auto& a : arrays)
        if (a.name == name && a.data.size() == 1) return static_cast<std::uint64_t>(a.data[0]);
    throw FormatError("checkpoint has no training-state entry '" + name + "'");
}

}  // namespace

void save_checkpoint(const fs::path& path, const TrainConfig& cfg, const std::vector<NamedArray>& arrays) {
    io::write_file(path, io::encode_checkpoint(arrays));
    io::write_text(sidecar(path), io::encode_config(kv::parse(cfg.to_key_values())));
}

LoadedCheckpoint load_checkpoint(const fs::path& path) {
    LoadedCheckpoint out;
    const auto bytes = io::read_file(path);
    const auto cfg_text = io::read_text(sidecar(path));
    try {
        out.arrays = io::decode_checkpoint(bytes);
        out.config = TrainConfig::from_key_values(detail::join(io::decode_config(cfg_text)));
    } catch (const IoError&) {
        throw;
    } catch (const Error& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return out;
}

std::unique_ptr<stage1::Stage1Generator<float>> load_stage1_generator(const fs::path& checkpoint) {
    auto ck = load_checkpoint(checkpoint);
    if (ck.config.stage != 1) throw ConfigError(checkpoint.string() + " is not a stage-1 checkpoint");
    auto g = std::make_unique<stage1::Stage1Generator<float>>(ck.config.stage1, 0);
    g->params().import_arrays(ck.arrays);
    return g;
}

std::unique_ptr<stage2::Stage2Generator<float>> load_stage2_generator(const fs::path& checkpoint) {
    auto ck = load_checkpoint(checkpoint);
    if (ck.config.stage != 2) throw ConfigError(checkpoint.string() + " is not a stage-2 checkpoint");
    auto g = std::make_unique<stage2::Stage2Generator<float>>(ck.config.stage2, 0);
    g->params().import_arrays(ck.arrays);
    return g;
}

// ---- coarse clouds ----------------------------------------------------------

geometry::DepthImage corrupt_depth(const geometry::DepthImage& img, double magnitude, rng::Engine& eng) {
    const double a0 = rng::uniform(eng, -1, 1), a1 = rng::uniform(eng, -1, 1), a2 = rng::uniform(eng, -1, 1);
    const double norm = std::abs(a0) + std::abs(a1) + std::abs(a2);
    geometry::DepthImage out = img;
    if (norm == 0) return out;
    const double hw = std::max(1.0, 0.5 * static_cast<double>(img.width - 1));
    const double hh = std::max(1.0, 0.5 * static_cast<double>(img.height - 1));
    for (std::size_t v = 0; v < img.height; ++v) {
        for (std::size_t u = 0; u < img.width; ++u) {
            const double x = (static_cast<double>(u) - hw) / hw, y = (static_cast<double>(v) - hh) / hh;
            out.at(u, v) *= 1 + magnitude * (a0 + a1 * x + a2 * y) / norm;
        }
    }
    return out;
}

PointCloud bootstrap_coarse_cloud(const Sample& sample, const TrainConfig& cfg, std::size_t sample_index) {
    auto eng = rng::stream(cfg.seed, "bootstrap-corruption", sample_index);
    PointCloud out;
    for (const auto& depth : sample.depths) {
        const bool corrupt = rng::uniform(eng) < cfg.corruption_probability;
        const auto pts = geometry::backproject(corrupt ? corrupt_depth(depth, cfg.corruption_magnitude, eng) : depth);
        out.points.insert(out.points.end(), pts.points.begin(), pts.points.end());
    }
    return out;
}

// ---- training loops ---------------------------------------------------------

namespace {

std::vector<std::size_t> training_indices(const Dataset& data, const TrainConfig& cfg) {
    auto idx = data.select(cfg.split);
    if (cfg.max_samples && idx.size() > cfg.max_samples) idx.resize(cfg.max_samples);
    if (idx.empty()) throw ConfigError("manifest has no samples in split '" + cfg.split + "'");
    return idx;
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed, int stage, std::size_t epoch) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    auto eng = rng::stream(seed, stage == 1 ? "stage1-shuffle" : "stage2-shuffle", epoch);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng::below(eng, i)]);
    return order;
}

std::string checkpoint_name(std::size_t epoch) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "checkpoint_e%04zu.rimrckpt", epoch);
    return buf;
}

void require_finite(double v, const char* what, std::size_t epoch, std::size_t batch, const std::vector<std::string>& ids) {
    if (std::isfinite(v)) return;
    std::string list;
    for (const auto& id : ids) list += (list.empty() ? "" : ",") + id;
    throw NumericError("non-finite " + std::string(what) + " at epoch " + std::to_string(epoch) + ", batch " +
                       std::to_string(batch) + " (samples " + list + ")");
}

// Shared bookkeeping: resume, per-epoch log writing and checkpoint cadence.
class Run {
public:
    Run(const TrainConfig& cfg, const fs::path& out_dir, const TrainOptions& options,
        std::vector<tensor::ParameterStore<float>*> stores, tensor::Adam<float>& g_opt, tensor::Adam<float>& d_opt)
        : cfg_(cfg), out_dir_(out_dir), options_(options), stores_(std::move(stores)), g_opt_(g_opt), d_opt_(d_opt) {
        columns_ = log_columns(cfg);
        if (options.resume) {
            auto ck = load_checkpoint(*options.resume);
            if (ck.config.stage != cfg.stage || ck.config.stage1.to_key_values() != cfg.stage1.to_key_values() ||
                ck.config.stage2.to_key_values() != cfg.stage2.to_key_values()) {
                throw ConfigError("cannot resume from " + options.resume->string() +
                                  ": it was written for a different stage or network config");
            }
            for (auto* s : stores_) s->import_arrays(ck.arrays);
            start_epoch_ = read_scalar(ck.arrays, "train.epoch");
            g_opt_.set_steps(read_scalar(ck.arrays, "train.g_steps"));
            d_opt_.set_steps(read_scalar(ck.arrays, "train.d_steps"));
            const fs::path log_path = out_dir_ / "log.tsv";
            if (fs::exists(log_path)) {
                for (auto& row : parse_log(io::read_text(log_path)))
                    if (row.epoch <= start_epoch_) log_.push_back(std::move(row));
            }
        }
        io::write_text(out_dir_ / "train.cfg", io::encode_config(kv::parse(cfg.to_key_values())));
    }

    std::size_t start_epoch() const { return start_epoch_; }

    void finish_epoch(EpochLog row) {
        log_.push_back(std::move(row));
        io::write_text(out_dir_ / "log.tsv", format_log(columns_, log_));
        if (options_.on_epoch) options_.on_epoch(log_.back());
        const std::size_t epoch = log_.back().epoch;
        if (epoch % cfg_.checkpoint_every == 0 && epoch != cfg_.epochs) save(out_dir_ / checkpoint_name(epoch), epoch);
    }

    TrainResult finish() {
        const fs::path final_path = out_dir_ / "checkpoint.rimrckpt";
        save(final_path, cfg_.epochs);
        if (cfg_.epochs % cfg_.checkpoint_every == 0) save(out_dir_ / checkpoint_name(cfg_.epochs), cfg_.epochs);
        if (log_.empty() || log_.back().epoch != cfg_.epochs) io::write_text(out_dir_ / "log.tsv", format_log(columns_, log_));
        return {final_path, log_};
    }

private:
    void save(const fs::path& path, std::size_t epoch) {
        std::vector<NamedArray> arrays;
        for (auto* s : stores_) {
            auto a = s->export_arrays();
            arrays.insert(arrays.end(), std::make_move_iterator(a.begin()), std::make_move_iterator(a.end()));
        }
        arrays.push_back(scalar_array("train.epoch", static_cast<double>(epoch)));
        arrays.push_back(scalar_array("train.g_steps", static_cast<double>(g_opt_.steps())));
        arrays.push_back(scalar_array("train.d_steps", static_cast<double>(d_opt_.steps())));
        save_checkpoint(path, cfg_, arrays);
    }

    const TrainConfig& cfg_;
    fs::path out_dir_;
    const TrainOptions& options_;
    std::vector<tensor::ParameterStore<float>*> stores_;
    tensor::Adam<float>& g_opt_;
    tensor::Adam<float>& d_opt_;
    std::vector<std::string> columns_;
    std::vector<EpochLog> log_;
    std::size_t start_epoch_ = 0;
};

}  // namespace

TrainResult train_stage1(const fs::path& manifest, const TrainConfig& cfg, const fs::path& out_dir,
                         const TrainOptions& options) {
    cfg.validate();
    if (cfg.stage != 1) throw ConfigError("train_stage1 needs a config with stage=1");
    const Dataset data = load_manifest(manifest);
    const auto indices = training_indices(data, cfg);

    // Every view is one training pair.
    std::vector<radar::IntensityMap> maps;
    std::vector<geometry::DepthImage> depths;
    std::vector<std::string> ids;
    for (auto i : indices) {
        auto s = load_sample(data, i);
        for (std::size_t v = 0; v < kViews; ++v) {
            maps.push_back(std::move(s.maps[v]));
            depths.push_back(std::move(s.depths[v]));
            ids.push_back(s.record.id + "_v" + std::to_string(v));
        }
    }
    const auto all_maps = stage1::maps_to_tensor<float>(maps, cfg.stage1);
    const auto all_depths = stage1::depths_to_tensor<float>(depths, cfg.stage1);

    stage1::Stage1Model<float> model(cfg.stage1, cfg.seed);
    tensor::Adam<float> g_opt(cfg.adam), d_opt(cfg.adam);
    Run run(cfg, out_dir, options, {&model.generator.params(), &model.discriminator.params()}, g_opt, d_opt);

    const std::size_t n = maps.size();
    for (std::size_t epoch = run.start_epoch() + 1; epoch <= cfg.epochs; ++epoch) {
        const auto order = shuffled_order(n, cfg.seed, 1, epoch);
        double sum_d = 0, sum_gan = 0, sum_l1 = 0, sum_p = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<std::string> batch_ids;
            for (auto r : rows) batch_ids.push_back(ids[r]);
            const auto x = tensor::gather_rows(all_maps, rows);
            const auto real = tensor::gather_rows(all_depths, rows);

            const auto fake = model.generator(x, tensor::Mode::Train);
            model.discriminator.params().zero_grad();
            auto d_loss = stage1::stage1_d_loss(model, x, fake, real);
            require_finite(d_loss.item(), "discriminator loss", epoch, batches, batch_ids);
            d_loss.backward();
            d_opt.step(model.discriminator.params());

            model.generator.params().zero_grad();
            auto g = stage1::stage1_g_loss(model, x, fake, real, cfg.stage1_weights);
            require_finite(g.total.item(), "generator loss", epoch, batches, batch_ids);
            g.total.backward();
            g_opt.step(model.generator.params());

            sum_d += d_loss.item();
            sum_gan += g.gan.item();
            sum_l1 += g.l1.item();
            sum_p += g.perceptual.item();
            ++batches;
        }
        const double b = static_cast<double>(batches);
        run.finish_epoch({epoch, {{"L_D", sum_d / b}, {"L_GAN", sum_gan / b}, {"L_1", sum_l1 / b}, {"L_p", sum_p / b}}});
    }
    return run.finish();
}

TrainResult train_stage2(const fs::path& manifest, const TrainConfig& cfg, const fs::path& out_dir,
                         const TrainOptions& options) {
    cfg.validate();
    if (cfg.stage != 2) throw ConfigError("train_stage2 needs a config with stage=2");
    const Dataset data = load_manifest(manifest);
    const auto indices = training_indices(data, cfg);

    std::unique_ptr<stage1::Stage1Generator<float>> g1;
    if (cfg.coarse_source == CoarseSource::Stage1) g1 = load_stage1_generator(cfg.stage1_checkpoint);

    const auto& net = cfg.stage2;
    std::vector<PointCloud> coarse, truths;
    std::vector<std::string> ids;
    for (auto i : indices) {
        const auto s = load_sample(data, i);
        coarse.push_back(g1 ? stage1_coarse_cloud(s, *g1, cfg.min_depth, nullptr) : bootstrap_coarse_cloud(s, cfg, i));
        if (coarse.back().empty()) throw ShapeError("sample " + s.record.id + " yields an empty coarse cloud");
        truths.push_back(stage2::canonical_resample(s.cloud, net.output_points, net.resample_seed));
        ids.push_back(s.record.id);
    }
    const auto all_coarse = stage2::clouds_to_tensor<float>(coarse, net.input_points, net.resample_seed);
    const auto all_real = stage2::clouds_to_tensor<float>(truths, net.output_points, net.resample_seed);

    stage2::Stage2Model<float> model(net, cfg.seed);
    tensor::Adam<float> g_opt(cfg.adam), d_opt(cfg.adam);
    Run run(cfg, out_dir, options, {&model.generator.params(), &model.discriminator.params()}, g_opt, d_opt);

    auto weights = cfg.stage2_weights;
    weights.adversarial = !cfg.no_discriminator;
    weights.use_iou = !cfg.no_iou;

    const std::size_t n = coarse.size();
    for (std::size_t epoch = run.start_epoch() + 1; epoch <= cfg.epochs; ++epoch) {
        const auto order = shuffled_order(n, cfg.seed, 2, epoch);
        double sum_d = 0, sum_gan = 0, sum_cf = 0, sum_iou = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            const std::size_t end = std::min(n, start + cfg.batch_size);
            std::vector<std::size_t> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                          order.begin() + static_cast<std::ptrdiff_t>(end));
            std::vector<std::string> batch_ids;
            std::vector<PointCloud> batch_truths;
            for (auto r : rows) {
                batch_ids.push_back(ids[r]);
                batch_truths.push_back(truths[r]);
            }
            const auto x = tensor::gather_rows(all_coarse, rows);
            const auto fake = model.generator(x);

            if (weights.adversarial) {
                const auto real = tensor::gather_rows(all_real, rows);
                model.discriminator.params().zero_grad();
                auto d_loss = stage2::stage2_d_loss(model, x, fake, real);
                require_finite(d_loss.item(), "discriminator loss", epoch, batches, batch_ids);
                d_loss.backward();
                d_opt.step(model.discriminator.params());
                sum_d += d_loss.item();
            }

            model.generator.params().zero_grad();
            auto g = stage2::stage2_g_loss(model, x, fake, batch_truths, weights);
            require_finite(g.total.item(), "generator loss", epoch, batches, batch_ids);
            g.total.backward();
            g_opt.step(model.generator.params());

            sum_gan += g.gan.item();
            sum_cf += g.chamfer.item();
            sum_iou += g.iou.item();
            ++batches;
        }
        const double b = static_cast<double>(batches);
        EpochLog row{epoch, {}};
        if (weights.adversarial) row.values.emplace_back("L_D", sum_d / b);
        row.values.emplace_back("L_GAN", sum_gan / b);
        row.values.emplace_back("L_cf", sum_cf / b);
        row.values.emplace_back("L_iou", sum_iou / b);
        run.finish_epoch(std::move(row));
    }
    return run.finish();
}

}  // namespace rimr::pipeline
