#pragma once

// Dataset construction, the two training loops, end-to-end reconstruction and
// batch evaluation.
//
// On-disk layout of a dataset directory:
//   manifest.tsv         one record per sample, paths relative to this file
//   scene.cfg            the scene configuration and seed that produced it
//   maps/<id>_v<k>.rimrvol, depth/<id>_v<k>.pgm (+ .cam), clouds/<id>.ply
//
// A training run directory holds log.tsv, train.cfg, checkpoint.rimrckpt and
// periodic checkpoint_e<epoch>.rimrckpt snapshots. Every checkpoint has a
// <checkpoint>.cfg sidecar with the training config that produced it.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rimr/geometry.hpp"
#include "rimr/io.hpp"
#include "rimr/metrics.hpp"
#include "rimr/radar.hpp"
#include "rimr/stage1.hpp"
#include "rimr/stage2.hpp"

namespace rimr::pipeline {

namespace fs = std::filesystem;
using geometry::PointCloud;
using geometry::ShapeKind;
using geometry::Vec3;

inline constexpr std::size_t kViews = 4;

struct SceneConfig {
    std::size_t train_samples = 60;
    std::size_t test_samples = 20;
    std::vector<ShapeKind> kinds{ShapeKind::Box, ShapeKind::LBox, ShapeKind::CarLike};
    Vec3 size_min{0.8, 0.5, 0.4};  // object extent (x, y, z) in meters
    Vec3 size_max{1.8, 1.0, 0.9};
    double position_jitter = 0.2;  // uniform xy offset of the object centre
    double view_distance = 3.0;    // sensor to object centre, horizontal
    double sensor_height = 0.0;
    double reflector_density = 300;  // radar reflectors per square meter
    double cloud_density = 4000;     // ground-truth points per square meter
    double snr_db = 20;              // <= 0 disables noise
    double specular_cutoff_deg = 75; // 0 disables specular dropout
    std::vector<std::size_t> snapshot_rows{31, 32};
    radar::RadarConfig radar;
    std::array<std::size_t, 3> map_dims{64, 64, 256};
    double map_half_width = 1.6;  // sensor-frame x and z half extent of the Cartesian grid
    geometry::CameraModel camera;  // intrinsics only; poses follow the sensors

    void validate() const;
    std::string to_key_values() const;
    // Radar keys are prefixed with "radar."; unknown keys are rejected.
    static SceneConfig from_key_values(const std::string& text);

    // 4x4x16 maps and 8x8 depth images, matching Stage1Config::tiny().
    static SceneConfig tiny();
};

// Sensor and camera poses of view k for an object centred at `centre`.
geometry::RigidTransform view_sensor_pose(const SceneConfig& cfg, const Vec3& centre, std::size_t view);
geometry::CameraModel view_camera(const SceneConfig& cfg, const geometry::RigidTransform& sensor_pose);

struct Sample {
    io::ManifestRecord record;
    std::vector<radar::IntensityMap> maps;     // kViews, Cartesian
    std::vector<geometry::DepthImage> depths;  // kViews
    PointCloud cloud;                          // ground truth, world frame
};

// Generates one sample in memory; fully determined by (cfg, seed, index).
Sample generate_sample(const SceneConfig& cfg, std::uint64_t seed, std::size_t index);

// Writes every sample and the manifest; returns the manifest path. Samples are
// generated on `threads` workers but written identically for any count.
fs::path build_dataset(const SceneConfig& cfg, const fs::path& out_dir, std::uint64_t seed, std::size_t threads = 1);

struct Dataset {
    fs::path root;
    std::vector<io::ManifestRecord> records;

    // Indices of the records in `split`; an empty split selects everything.
    std::vector<std::size_t> select(const std::string& split) const;
};

Dataset load_manifest(const fs::path& manifest);
Sample load_sample(const Dataset& data, std::size_t index);

// ---- training ----

enum class CoarseSource {
    GroundTruthDepth,  // bootstrap: back-projected ground-truth depths, partly corrupted
    Stage1,            // back-projected Stage-1 predictions
};

struct TrainConfig {
    int stage = 1;
    std::size_t epochs = 200;
    std::size_t batch_size = 4;
    std::uint64_t seed = 0;
    tensor::AdamConfig adam;
    stage1::Stage1LossWeights stage1_weights;
    stage2::Stage2LossWeights stage2_weights;
    bool no_discriminator = false;  // DPN
    bool no_iou = false;            // CLN
    std::size_t checkpoint_every = 25;
    std::string split = "train";
    std::size_t max_samples = 0;  // 0: every sample of the split

    CoarseSource coarse_source = CoarseSource::GroundTruthDepth;
    std::string stage1_checkpoint;  // required for CoarseSource::Stage1
    double corruption_probability = 0.2;
    double corruption_magnitude = 0.1;
    double min_depth = 0.1;  // meters; shallower predicted pixels are dropped

    stage1::Stage1Config stage1;
    stage2::Stage2Config stage2;

    void validate() const;
    // Network keys are prefixed with "stage1." / "stage2."; unknown keys are
    // rejected.
    std::string to_key_values() const;
    static TrainConfig from_key_values(const std::string& text);
};

struct EpochLog {
    std::size_t epoch = 0;
    // Stage 1: L_D, L_GAN, L_1, L_p. Stage 2: L_D, L_GAN, L_cf, L_iou.
    std::vector<std::pair<std::string, double>> values;

    double get(const std::string& column) const;
};

std::vector<std::string> log_columns(const TrainConfig& cfg);
std::string format_log(const std::vector<std::string>& columns, const std::vector<EpochLog>& rows);
std::vector<EpochLog> parse_log(const std::string& text);

struct TrainOptions {
    // Continue from this checkpoint (written by the same config); the log is
    // truncated to the checkpoint's epoch and extended from there.
    std::optional<fs::path> resume;
    // Called after every epoch.
    std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
    fs::path checkpoint;
    std::vector<EpochLog> log;
};

// One D step then one G step per batch. Throws NumericError naming the batch
// when a loss becomes non-finite.
TrainResult train_stage1(const fs::path& manifest, const TrainConfig& cfg, const fs::path& out_dir,
                         const TrainOptions& options = {});
TrainResult train_stage2(const fs::path& manifest, const TrainConfig& cfg, const fs::path& out_dir,
                         const TrainOptions& options = {});

// Smooth multiplicative range error: depth *= 1 + b(u, v), with b a random
// plane over the image whose magnitude never exceeds `magnitude`.
geometry::DepthImage corrupt_depth(const geometry::DepthImage& img, double magnitude, rng::Engine& eng);

// Union of back-projected ground-truth depths; each view is corrupted with
// probability cfg.corruption_probability, drawn from stream (seed, sample).
PointCloud bootstrap_coarse_cloud(const Sample& sample, const TrainConfig& cfg, std::size_t sample_index);

// ---- checkpoints ----

void save_checkpoint(const fs::path& path, const TrainConfig& cfg, const std::vector<tensor::NamedArray>& arrays);
struct LoadedCheckpoint {
    TrainConfig config;
    std::vector<tensor::NamedArray> arrays;
};
LoadedCheckpoint load_checkpoint(const fs::path& path);

std::unique_ptr<stage1::Stage1Generator<float>> load_stage1_generator(const fs::path& checkpoint);
std::unique_ptr<stage2::Stage2Generator<float>> load_stage2_generator(const fs::path& checkpoint);

// ---- inference and evaluation ----

struct Reconstruction {
    std::vector<geometry::DepthImage> depths;  // one per view
    PointCloud coarse;                         // union of back-projections
    PointCloud refined;                        // m points
};

// Union of the back-projected Stage-1 depth predictions (pixels shallower than
// min_depth dropped). Falls back to the per-view radar intensity peaks when no
// pixel survives. The predicted images are stored in `depths` when given.
PointCloud stage1_coarse_cloud(const Sample& sample, const stage1::Stage1Generator<float>& g1, double min_depth,
                               std::vector<geometry::DepthImage>* depths = nullptr);

Reconstruction reconstruct(const Sample& sample, const stage1::Stage1Generator<float>& g1,
                           const stage2::Stage2Generator<float>& g2, double min_depth = 0.1);

struct EvalConfig {
    double voxel_size = 0.1;
    double tau = 0.05;
    std::string split = "test";
    std::size_t threads = 1;
};

struct EvalReport {
    std::vector<std::pair<std::string, metrics::MetricReport>> samples;
    metrics::Aggregate aggregate;

    // "sample.<id>.<field>=v" lines followed by "aggregate.<field>.<stat>=v".
    std::string to_text() const;
};

// Predictions are scored against the ground-truth cloud canonically resampled
// to the Stage-2 output size, the same target the generator is trained on.
EvalReport evaluate(const fs::path& manifest, const fs::path& stage1_checkpoint, const fs::path& stage2_checkpoint,
                    const EvalConfig& cfg);

// Scores precomputed predictions; used by evaluate and for oracle checks.
EvalReport evaluate_clouds(const std::vector<std::string>& ids, const std::vector<PointCloud>& predictions,
                           const std::vector<PointCloud>& truths, const std::vector<Vec3>& sensor_origins,
                           const EvalConfig& cfg);

// Runs fn(i) for i in [0, count) on up to `threads` workers. After a failure
// no new indices are started; the lowest-index exception is rethrown once the
// running calls finish.
void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn);

}  // namespace rimr::pipeline
