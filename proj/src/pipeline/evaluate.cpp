#include <algorithm>
#include <sstream>

#include "keys.hpp"
#include "rimr/error.hpp"
#include "rimr/pipeline.hpp"

namespace rimr::pipeline {

namespace {

// World position of the strongest voxel of a Cartesian map.
Vec3 intensity_peak(const radar::IntensityMap& map) {
    const auto it = std::max_element(map.values.begin(), map.values.end());
    const auto flat = static_cast<std::size_t>(it - map.values.begin());
    const std::size_t k = flat % map.dims[2], j = (flat / map.dims[2]) % map.dims[1], i = flat / (map.dims[1] * map.dims[2]);
    return map.sensor_pose.inverse().apply(radar::cartesian_voxel_center(map, i, j, k));
}

}  // namespace

PointCloud stage1_coarse_cloud(const Sample& sample, const stage1::Stage1Generator<float>& g1, double min_depth,
                               std::vector<geometry::DepthImage>* depths) {
    if (sample.maps.size() != kViews || sample.depths.size() != kViews) {
        throw ShapeError("sample " + sample.record.id + ": expected " + std::to_string(kViews) + " views, got " +
                         std::to_string(sample.maps.size()));
    }
    PointCloud coarse;
    for (std::size_t v = 0; v < kViews; ++v) {
        auto depth = stage1::g_r2i_forward(sample.maps[v], g1, sample.depths[v].camera);
        const auto pts = geometry::backproject(depth, min_depth);
        coarse.points.insert(coarse.points.end(), pts.points.begin(), pts.points.end());
        if (depths) depths->push_back(std::move(depth));
    }
    if (coarse.empty())
        for (const auto& m : sample.maps) coarse.points.push_back(intensity_peak(m));
    return coarse;
}

Reconstruction reconstruct(const Sample& sample, const stage1::Stage1Generator<float>& g1,
                           const stage2::Stage2Generator<float>& g2, double min_depth) {
    Reconstruction r;
    r.coarse = stage1_coarse_cloud(sample, g1, min_depth, &r.depths);
    r.refined = stage2::g_p2p_forward(r.coarse, g2);
    return r;
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    os << "# rimr-eval samples=" << samples.size() << '\n';
    for (const auto& [id, report] : samples) {
        std::istringstream lines(report.to_key_values());
        std::string line;
        while (std::getline(lines, line)) os << "sample." << id << '.' << line << '\n';
    }
    std::istringstream lines(aggregate.to_key_values());
    std::string line;
    while (std::getline(lines, line)) os << "aggregate." << line << '\n';
    return os.str();
}

EvalReport evaluate_clouds(const std::vector<std::string>& ids, const std::vector<PointCloud>& predictions,
                           const std::vector<PointCloud>& truths, const std::vector<Vec3>& sensor_origins,
                           const EvalConfig& cfg) {
    if (ids.empty()) throw ConfigError("evaluation needs at least one sample");
    if (predictions.size() != ids.size() || truths.size() != ids.size() || sensor_origins.size() != ids.size()) {
        throw ShapeError("evaluate_clouds: argument lengths differ");
    }
    EvalReport out;
    out.samples.resize(ids.size());
    parallel_for(ids.size(), cfg.threads, [&](std::size_t i) {
        out.samples[i] = {ids[i], metrics::full_report(predictions[i], truths[i], cfg.voxel_size, cfg.tau, sensor_origins[i])};
    });
    std::vector<metrics::MetricReport> reports;
    for (const auto& [id, r] : out.samples) reports.push_back(r);
    out.aggregate = metrics::aggregate(reports);
    return out;
}

EvalReport evaluate(const fs::path& manifest, const fs::path& stage1_checkpoint, const fs::path& stage2_checkpoint,
                    const EvalConfig& cfg) {
    const auto g1 = load_stage1_generator(stage1_checkpoint);
    const auto g2 = load_stage2_generator(stage2_checkpoint);
    const double min_depth = load_checkpoint(stage2_checkpoint).config.min_depth;
    const Dataset data = load_manifest(manifest);
    const auto indices = data.select(cfg.split);
    if (indices.empty()) throw ConfigError(manifest.string() + " has no samples in split '" + cfg.split + "'");

    const std::size_t n = indices.size();
    std::vector<std::string> ids(n);
    std::vector<PointCloud> preds(n), truths(n);
    std::vector<Vec3> origins(n);
    parallel_for(n, cfg.threads, [&](std::size_t i) {
        auto s = load_sample(data, indices[i]);
        ids[i] = s.record.id;
        preds[i] = reconstruct(s, *g1, *g2, min_depth).refined;
        origins[i] = s.maps[0].sensor_pose.inverse().translation;
        truths[i] = stage2::canonical_resample(s.cloud, g2->config().output_points, g2->config().resample_seed);
    });
    return evaluate_clouds(ids, preds, truths, origins, cfg);
}

}  // namespace rimr::pipeline
