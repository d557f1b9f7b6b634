#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <mutex>
#include <numbers>
#include <thread>

#include "keys.hpp"
#include "rimr/error.hpp"
#include "rimr/pipeline.hpp"

namespace rimr::pipeline {

using geometry::RigidTransform;

// ---- scene config -----------------------------------------------------------

void SceneConfig::validate() const {
    if (train_samples + test_samples == 0) throw ConfigError("scene config: no samples requested");
    if (kinds.empty()) throw ConfigError("scene config: kinds must not be empty");
    for (int a = 0; a < 3; ++a) {
        if (!(size_min[a] > 0) || !(size_max[a] >= size_min[a])) {
            throw ConfigError("scene config: size ranges need 0 < size_min <= size_max");
        }
    }
    if (!(position_jitter >= 0)) throw ConfigError("scene config: position_jitter must be non-negative");
    if (!(reflector_density > 0) || !(cloud_density > 0)) throw ConfigError("scene config: densities must be positive");
    if (!(specular_cutoff_deg >= 0)) throw ConfigError("scene config: specular_cutoff_deg must be non-negative");
    if (!(map_half_width > 0)) throw ConfigError("scene config: map_half_width must be positive");
    if (map_dims[0] == 0 || map_dims[1] == 0 || map_dims[2] == 0) throw ConfigError("scene config: empty map grid");
    radar.validate();
    camera.validate();
    if (snapshot_rows.size() != radar.snapshot_count) {
        throw ConfigError("scene config: " + std::to_string(snapshot_rows.size()) + " snapshot rows listed, radar.snapshot_count is " +
                          std::to_string(radar.snapshot_count));
    }
    for (auto r : snapshot_rows)
        if (r >= radar.elevation_elements) throw ConfigError("scene config: snapshot row " + std::to_string(r) + " out of range");
    const double reach = view_distance + 0.5 * size_max.norm() + position_jitter;
    if (!(view_distance > 0.5 * size_max.norm()) || !(reach < radar.max_range())) {
        throw ConfigError("scene config: objects must lie between the sensor and the radar's maximum range (" +
                          kv::format_double(radar.max_range()) + " m)");
    }
}

std::string SceneConfig::to_key_values() const {
    kv::Map m;
    m["train_samples"] = std::to_string(train_samples);
    m["test_samples"] = std::to_string(test_samples);
    std::string k;
    for (std::size_t i = 0; i < kinds.size(); ++i) k += (i ? "," : "") + std::string(geometry::to_string(kinds[i]));
    m["kinds"] = k;
    const char* axes = "xyz";
    for (int a = 0; a < 3; ++a) {
        m[std::string("size_min_") + axes[a]] = kv::format_double(size_min[a]);
        m[std::string("size_max_") + axes[a]] = kv::format_double(size_max[a]);
    }
    m["position_jitter"] = kv::format_double(position_jitter);
    m["view_distance"] = kv::format_double(view_distance);
    m["sensor_height"] = kv::format_double(sensor_height);
    m["reflector_density"] = kv::format_double(reflector_density);
    m["cloud_density"] = kv::format_double(cloud_density);
    m["snr_db"] = kv::format_double(snr_db);
    m["specular_cutoff_deg"] = kv::format_double(specular_cutoff_deg);
    m["snapshot_rows"] = kv::format_list(snapshot_rows);
    m["map_dims"] = kv::format_list({map_dims[0], map_dims[1], map_dims[2]});
    m["map_half_width"] = kv::format_double(map_half_width);
    m["camera_focal"] = kv::format_double(camera.focal);
    m["camera_cx"] = kv::format_double(camera.cx);
    m["camera_cy"] = kv::format_double(camera.cy);
    m["camera_width"] = std::to_string(camera.width);
    m["camera_height"] = std::to_string(camera.height);
    detail::merge_prefixed(m, "radar.", radar.to_key_values());
    return detail::join(m);
}

SceneConfig SceneConfig::from_key_values(const std::string& text) {
    const auto m = kv::parse(text, "scene config");
    detail::KeyReader r(m, "scene config");
    SceneConfig c;
    c.train_samples = r.get_uint("train_samples", c.train_samples);
    c.test_samples = r.get_uint("test_samples", c.test_samples);
    if (r.has("kinds")) {
        c.kinds.clear();
        std::string list = r.get_string("kinds", "");
        std::size_t start = 0;
        while (start <= list.size()) {
            const auto comma = list.find(',', start);
            const auto end = comma == std::string::npos ? list.size() : comma;
            c.kinds.push_back(geometry::shape_kind_from_string(std::string(kv::trim(list.substr(start, end - start)))));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
    }
    const char* axes = "xyz";
    for (int a = 0; a < 3; ++a) {
        c.size_min[a] = r.get_double(std::string("size_min_") + axes[a], c.size_min[a]);
        c.size_max[a] = r.get_double(std::string("size_max_") + axes[a], c.size_max[a]);
    }
    c.position_jitter = r.get_double("position_jitter", c.position_jitter);
    c.view_distance = r.get_double("view_distance", c.view_distance);
    c.sensor_height = r.get_double("sensor_height", c.sensor_height);
    c.reflector_density = r.get_double("reflector_density", c.reflector_density);
    c.cloud_density = r.get_double("cloud_density", c.cloud_density);
    c.snr_db = r.get_double("snr_db", c.snr_db);
    c.specular_cutoff_deg = r.get_double("specular_cutoff_deg", c.specular_cutoff_deg);
    c.snapshot_rows = r.get_list("snapshot_rows", c.snapshot_rows);
    const auto dims = r.get_list("map_dims", {c.map_dims[0], c.map_dims[1], c.map_dims[2]});
    if (dims.size() != 3) throw ConfigError("scene config: map_dims needs three extents");
    c.map_dims = {dims[0], dims[1], dims[2]};
    c.map_half_width = r.get_double("map_half_width", c.map_half_width);
    c.camera.focal = r.get_double("camera_focal", c.camera.focal);
    c.camera.cx = r.get_double("camera_cx", c.camera.cx);
    c.camera.cy = r.get_double("camera_cy", c.camera.cy);
    c.camera.width = r.get_uint("camera_width", c.camera.width);
    c.camera.height = r.get_uint("camera_height", c.camera.height);

    auto radar_keys = kv::parse(c.radar.to_key_values());
    for (const auto& [k, v] : kv::parse(r.section("radar."))) {
        if (!radar_keys.count(k)) throw ConfigError("scene config: unknown key 'radar." + k + "'");
        radar_keys[k] = v;
    }
    c.radar = radar::RadarConfig::from_key_values(detail::join(radar_keys));
    r.reject_unknown();
    c.validate();
    return c;
}

SceneConfig SceneConfig::tiny() {
    SceneConfig c;
    c.train_samples = 2;
    c.test_samples = 1;
    c.reflector_density = 60;
    c.cloud_density = 400;
    c.radar.samples_per_chirp = 16;
    c.radar.bandwidth = radar::kSpeedOfLight / (2 * 0.6);  // 0.6 m bins, 9.6 m reach
    c.radar.azimuth_elements = 4;
    c.radar.elevation_elements = 4;
    c.radar.fft_sizes = {4, 4, 16};
    c.snapshot_rows = {1, 2};
    c.map_dims = {4, 4, 16};
    c.camera.focal = 8;
    c.camera.cx = 4;
    c.camera.cy = 4;
    c.camera.width = 8;
    c.camera.height = 8;
    return c;
}

// ---- sample generation ------------------------------------------------------

RigidTransform view_sensor_pose(const SceneConfig& cfg, const Vec3& centre, std::size_t view) {
    const double a = 2 * std::numbers::pi * static_cast<double>(view) / static_cast<double>(kViews);
    const Vec3 eye = centre + Vec3(cfg.view_distance * std::cos(a), cfg.view_distance * std::sin(a), cfg.sensor_height);
    return geometry::sensor_look_at(eye, centre);
}

geometry::CameraModel view_camera(const SceneConfig& cfg, const RigidTransform& sensor_pose) {
    geometry::CameraModel cam = cfg.camera;
    cam.pose = geometry::camera_from_sensor(sensor_pose);
    return cam;
}

namespace {

std::string sample_id(std::size_t index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "s%04zu", index);
    return buf;
}

}  // namespace

Sample generate_sample(const SceneConfig& cfg, std::uint64_t seed, std::size_t index) {
    cfg.validate();
    auto eng = rng::stream(seed, "sample", index);
    Sample s;
    auto& rec = s.record;
    rec.id = sample_id(index);
    rec.split = index < cfg.train_samples ? "train" : "test";
    rec.kind = cfg.kinds[index % cfg.kinds.size()];
    for (int a = 0; a < 3; ++a) rec.size[a] = rng::uniform(eng, cfg.size_min[a], cfg.size_max[a]);
    rec.yaw = rng::uniform(eng, 0, 2 * std::numbers::pi);
    rec.position = Vec3(rng::uniform(eng, -cfg.position_jitter, cfg.position_jitter),
                        rng::uniform(eng, -cfg.position_jitter, cfg.position_jitter), 0);
    const auto object_pose = RigidTransform::yaw(rec.yaw, rec.position);

    auto surface = geometry::sample_surface(rec.kind, rec.size, cfg.reflector_density,
                                            rng::stream_seed(seed, "reflectors", index));
    std::vector<radar::Reflector> reflectors;
    std::vector<Vec3> normals;
    for (std::size_t i = 0; i < surface.cloud.size(); ++i) {
        reflectors.push_back({object_pose.apply(surface.cloud.points[i]), 1.0});
        normals.push_back(object_pose.rotation * surface.normals[i]);
    }
    s.cloud = geometry::transform(
        geometry::generate_shape(rec.kind, rec.size, cfg.cloud_density, rng::stream_seed(seed, "cloud", index)),
        object_pose);

    const geometry::Bounds bounds{Vec3(-cfg.map_half_width, 0, -cfg.map_half_width),
                                  Vec3(cfg.map_half_width, cfg.radar.max_range(), cfg.map_half_width)};
    rec.cloud_path = "clouds/" + rec.id + ".ply";
    for (std::size_t v = 0; v < kViews; ++v) {
        const auto sensor = view_sensor_pose(cfg, rec.position, v);
        radar::ReflectorScene scene;
        scene.sensor_pose = sensor;
        scene.reflectors = cfg.specular_cutoff_deg > 0
                               ? radar::specular_filter(reflectors, normals, sensor, cfg.specular_cutoff_deg)
                               : reflectors;
        auto raw = radar::synthesize_raw(scene, cfg.radar, cfg.snapshot_rows);
        if (cfg.snr_db > 0) radar::add_noise(raw, cfg.snr_db, rng::stream_seed(seed, "noise", index * kViews + v));
        auto polar = radar::process_fft(raw, cfg.radar);
        polar.sensor_pose = sensor;
        s.maps.push_back(radar::to_cartesian(polar, bounds, cfg.map_dims));
        s.depths.push_back(geometry::render_depth(s.cloud, view_camera(cfg, sensor)));

        const std::string stem = rec.id + "_v" + std::to_string(v);
        rec.views.push_back({"maps/" + stem + ".rimrvol", "depth/" + stem + ".pgm"});
    }
    return s;
}

namespace {

void write_sample(const fs::path& root, const Sample& s) {
    std::vector<fs::path> written;
    auto put = [&](const std::string& rel, auto&& payload) {
        const fs::path p = root / rel;
        written.push_back(p);
        if constexpr (std::is_convertible_v<decltype(payload), std::string_view>) {
            io::write_text(p, payload);
        } else {
            io::write_file(p, payload);
        }
    };
    try {
        for (std::size_t v = 0; v < s.maps.size(); ++v) {
            put(s.record.views[v].map_path, io::encode_volume(s.maps[v]));
            put(s.record.views[v].depth_path, io::encode_pgm(s.depths[v]));
            put(s.record.views[v].depth_path + ".cam", io::encode_camera(s.depths[v].camera));
        }
        put(s.record.cloud_path, io::encode_ply(s.cloud));
    } catch (...) {
        std::error_code ec;
        for (const auto& p : written) fs::remove(p, ec);
        throw;
    }
}

}  // namespace

void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
    threads = std::max<std::size_t>(1, std::min(threads, count));
    std::vector<std::exception_ptr> errors(count);
    if (threads == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[i] = std::current_exception();
                break;
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::atomic<bool> failed{false};
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count && !failed; i = next++) {
                    try {
                        fn(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                        failed = true;
                    }
                }
            });
        }
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

fs::path build_dataset(const SceneConfig& cfg, const fs::path& out_dir, std::uint64_t seed, std::size_t threads) {
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + out_dir.string() + ": " + ec.message());

    const std::size_t total = cfg.train_samples + cfg.test_samples;
    std::vector<io::ManifestRecord> records(total);
    parallel_for(total, threads, [&](std::size_t i) {
        Sample s = generate_sample(cfg, seed, i);
        write_sample(out_dir, s);
        records[i] = std::move(s.record);
    });

    auto scene = kv::parse(cfg.to_key_values());
    scene["seed"] = std::to_string(seed);
    io::write_text(out_dir / "scene.cfg", io::encode_config(scene));
    const fs::path manifest = out_dir / "manifest.tsv";
    io::write_text(manifest, io::encode_manifest(records));
    return manifest;
}

// ---- loading ----------------------------------------------------------------

std::vector<std::size_t> Dataset::select(const std::string& split) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i)
        if (split.empty() || records[i].split == split) out.push_back(i);
    return out;
}

Dataset load_manifest(const fs::path& manifest) {
    Dataset d;
    d.root = manifest.parent_path();
    const std::string text = io::read_text(manifest);
    try {
        d.records = io::decode_manifest(text);
    } catch (const Error& e) {
        throw FormatError(manifest.string() + ": " + e.what());
    }
    return d;
}

Sample load_sample(const Dataset& data, std::size_t index) {
    if (index >= data.records.size()) throw ConfigError("sample index " + std::to_string(index) + " out of range");
    Sample s;
    s.record = data.records[index];
    if (s.record.views.size() != kViews) {
        throw FormatError("sample " + s.record.id + " has " + std::to_string(s.record.views.size()) + " views, expected " +
                          std::to_string(kViews));
    }
    auto with_path = [](const fs::path& p, auto&& fn) {
        try {
            return fn();
        } catch (const IoError&) {
            throw;
        } catch (const Error& e) {
            throw FormatError(p.string() + ": " + e.what());
        }
    };
    for (const auto& v : s.record.views) {
        const fs::path map_path = data.root / v.map_path;
        s.maps.push_back(with_path(map_path, [&] { return io::decode_volume(io::read_file(map_path)); }));
        const fs::path depth_path = data.root / v.depth_path;
        const fs::path cam_path = data.root / (v.depth_path + ".cam");
        const auto cam = with_path(cam_path, [&] { return io::decode_camera(io::read_text(cam_path)); });
        s.depths.push_back(with_path(depth_path, [&] { return io::decode_pgm(io::read_file(depth_path), cam); }));
    }
    const fs::path cloud_path = data.root / s.record.cloud_path;
    s.cloud = with_path(cloud_path, [&] { return io::decode_ply(io::read_text(cloud_path)); });
    return s;
}

}  // namespace rimr::pipeline
