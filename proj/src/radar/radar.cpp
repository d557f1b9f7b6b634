#include "rimr/radar.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>

#include "rimr/error.hpp"
#include "rimr/keyvalue.hpp"
#include "rimr/rng.hpp"

namespace rimr::radar {

namespace {

constexpr double kTwoPi = 6.283185307179586;

// exp(j 2 pi c) with c reduced to [0, 1) first so large phases keep precision.
std::complex<double> cis_cycles(double c) {
    const double f = c - std::floor(c);
    return {std::cos(kTwoPi * f), std::sin(kTwoPi * f)};
}

void check_rows(std::span<const std::size_t> rows, std::size_t extent) {
    std::vector<bool> seen(extent, false);
    for (std::size_t r : rows) {
        if (r >= extent) {
            throw ConfigError("snapshot row " + std::to_string(r) + " out of range (elevation extent " +
                              std::to_string(extent) + ")");
        }
        if (seen[r]) throw ConfigError("snapshot row " + std::to_string(r) + " listed twice");
        seen[r] = true;
    }
}

}  // namespace

void RadarConfig::validate() const {
    if (!(carrier_freq > 0) || !(bandwidth > 0) || !(element_spacing > 0)) {
        throw ConfigError("radar frequencies and element spacing must be positive");
    }
    if (samples_per_chirp == 0 || azimuth_elements == 0 || elevation_elements == 0) {
        throw ConfigError("radar sample and element counts must be positive");
    }
    if (samples_per_chirp != fft_sizes[2]) {
        throw ConfigError("samples_per_chirp (" + std::to_string(samples_per_chirp) + ") must equal the range FFT size (" +
                          std::to_string(fft_sizes[2]) + ")");
    }
    if (elevation_elements > fft_sizes[0] || azimuth_elements > fft_sizes[1]) {
        throw ConfigError("element counts exceed the angle FFT sizes");
    }
    if (snapshot_count == 0 || snapshot_count > elevation_elements) {
        throw ConfigError("snapshot_count must be in [1, elevation_elements]");
    }
}

std::string RadarConfig::to_key_values() const {
    std::ostringstream os;
    os << "carrier_freq=" << kv::format_double(carrier_freq) << '\n'
       << "bandwidth=" << kv::format_double(bandwidth) << '\n'
       << "samples_per_chirp=" << samples_per_chirp << '\n'
       << "azimuth_elements=" << azimuth_elements << '\n'
       << "elevation_elements=" << elevation_elements << '\n'
       << "element_spacing=" << kv::format_double(element_spacing) << '\n'
       << "snapshot_count=" << snapshot_count << '\n'
       << "fft_elevation=" << fft_sizes[0] << '\n'
       << "fft_azimuth=" << fft_sizes[1] << '\n'
       << "fft_range=" << fft_sizes[2] << '\n';
    return os.str();
}

RadarConfig RadarConfig::from_key_values(const std::string& text) {
    const auto m = kv::parse(text, "radar config");
    RadarConfig c;
    c.carrier_freq = kv::get_double(m, "carrier_freq");
    c.bandwidth = kv::get_double(m, "bandwidth");
    c.samples_per_chirp = kv::get_uint(m, "samples_per_chirp");
    c.azimuth_elements = kv::get_uint(m, "azimuth_elements");
    c.elevation_elements = kv::get_uint(m, "elevation_elements");
    c.element_spacing = kv::get_double(m, "element_spacing");
    c.snapshot_count = kv::get_uint(m, "snapshot_count");
    c.fft_sizes = {kv::get_uint(m, "fft_elevation"), kv::get_uint(m, "fft_azimuth"), kv::get_uint(m, "fft_range")};
    return c;
}

Spherical to_spherical(const Vec3& s) {
    const double r = s.norm();
    return {r, std::atan2(s.x(), s.y()), r > 0 ? std::asin(s.z() / r) : 0.0};
}

RawDataCube synthesize_raw(const ReflectorScene& scene, const RadarConfig& cfg) {
    std::vector<std::size_t> rows(cfg.elevation_elements);
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    return synthesize_raw(scene, cfg, rows);
}

RawDataCube synthesize_raw(const ReflectorScene& scene, const RadarConfig& cfg, std::span<const std::size_t> rows) {
    cfg.validate();
    scene.sensor_pose.validate();
    check_rows(rows, cfg.elevation_elements);
    RawDataCube cube;
    cube.elevation = cfg.elevation_elements;
    cube.azimuth = cfg.azimuth_elements;
    cube.samples = cfg.samples_per_chirp;
    cube.data.assign(cube.elevation * cube.azimuth * cube.samples, {0.0, 0.0});

    const double n_samples = static_cast<double>(cfg.samples_per_chirp);
    const double spacing = cfg.element_spacing / cfg.wavelength();
    std::vector<std::complex<double>> range_vec(cube.samples), az_vec(cube.azimuth);
    for (const auto& refl : scene.reflectors) {
        if (!(refl.reflectivity >= 0)) throw ConfigError("reflector reflectivity must be non-negative");
        const Vec3 s = scene.sensor_pose.apply(refl.position);
        const double r = s.norm();
        if (!(r > 0)) throw ConfigError("reflector at zero range from the sensor");
        if (r >= cfg.max_range()) {
            throw ConfigError("reflector range " + std::to_string(r) + " m is beyond the unambiguous range " +
                              std::to_string(cfg.max_range()) + " m");
        }
        const double f_range = 2 * cfg.bandwidth * r / (kSpeedOfLight * n_samples);
        const double carrier = 2 * cfg.carrier_freq * r / kSpeedOfLight;
        // sin(az) cos(el) = x / r and sin(el) = z / r.
        const double f_az = spacing * s.x() / r;
        const double f_el = spacing * s.z() / r;
        for (std::size_t n = 0; n < cube.samples; ++n) range_vec[n] = cis_cycles(f_range * static_cast<double>(n));
        for (std::size_t p = 0; p < cube.azimuth; ++p) az_vec[p] = cis_cycles(f_az * static_cast<double>(p));
        const std::complex<double> base = refl.reflectivity * cis_cycles(carrier);
        for (std::size_t q : rows) {
            const std::complex<double> row_gain = base * cis_cycles(f_el * static_cast<double>(q));
            for (std::size_t p = 0; p < cube.azimuth; ++p) {
                const std::complex<double> g = row_gain * az_vec[p];
                std::complex<double>* out = &cube.at(q, p, 0);
                for (std::size_t n = 0; n < cube.samples; ++n) out[n] += g * range_vec[n];
            }
        }
    }
    return cube;
}

void add_noise(RawDataCube& raw, double snr_db, std::uint64_t seed) {
    double power = 0;
    std::size_t count = 0;
    for (const auto& v : raw.data) {
        if (v != std::complex<double>{}) {
            power += std::norm(v);
            ++count;
        }
    }
    if (count == 0) return;
    const double sigma = std::sqrt(power / static_cast<double>(count) / std::pow(10.0, snr_db / 10) / 2);
    auto eng = rng::stream(seed, "radar-noise");
    for (std::size_t q = 0; q < raw.elevation; ++q) {
        bool live = false;
        for (std::size_t i = 0; i < raw.azimuth * raw.samples && !live; ++i) {
            live = raw.data[q * raw.azimuth * raw.samples + i] != std::complex<double>{};
        }
        if (!live) continue;
        for (std::size_t i = 0; i < raw.azimuth * raw.samples; ++i) {
            const double re = rng::normal(eng), im = rng::normal(eng);
            raw.data[q * raw.azimuth * raw.samples + i] += sigma * std::complex<double>(re, im);
        }
    }
}

std::vector<Reflector> specular_filter(const std::vector<Reflector>& reflectors, const std::vector<Vec3>& normals,
                                       const RigidTransform& sensor_pose, double max_angle_deg) {
    if (normals.size() != reflectors.size()) throw ShapeError("specular_filter: one normal per reflector required");
    const Vec3 sensor = sensor_pose.inverse().translation;
    const double min_cos = std::cos(max_angle_deg * M_PI / 180);
    std::vector<Reflector> out;
    for (std::size_t i = 0; i < reflectors.size(); ++i) {
        const Vec3 to_sensor = (sensor - reflectors[i].position).normalized();
        if (normals[i].normalized().dot(to_sensor) >= min_cos) out.push_back(reflectors[i]);
    }
    return out;
}

IntensityMap process_fft(const RawDataCube& raw, const RadarConfig& cfg) {
    cfg.validate();
    const auto [fe, fa, fr] = cfg.fft_sizes;
    if (raw.elevation > fe || raw.azimuth > fa || raw.samples > fr) {
        throw ShapeError("process_fft: raw cube exceeds the FFT sizes");
    }
    if (raw.data.size() != raw.elevation * raw.azimuth * raw.samples) {
        throw ShapeError("process_fft: raw cube storage does not match its extents");
    }
    const std::size_t total = fe * fa * fr;
    std::unique_ptr<fftw_complex[], decltype(&fftw_free)> buf(
        static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * total)), &fftw_free);
    if (!buf) throw Error("process_fft: out of memory");
    // The FFTW planner is not reentrant.
    static std::mutex planner;
    std::unique_lock lock(planner);
    fftw_plan plan = fftw_plan_dft_3d(static_cast<int>(fe), static_cast<int>(fa), static_cast<int>(fr), buf.get(),
                                      buf.get(), FFTW_FORWARD, FFTW_ESTIMATE);
    lock.unlock();
    std::fill(reinterpret_cast<double*>(buf.get()), reinterpret_cast<double*>(buf.get()) + 2 * total, 0.0);
    for (std::size_t q = 0; q < raw.elevation; ++q) {
        for (std::size_t p = 0; p < raw.azimuth; ++p) {
            for (std::size_t n = 0; n < raw.samples; ++n) {
                const auto v = raw.at(q, p, n);
                fftw_complex& dst = buf[(q * fa + p) * fr + n];
                dst[0] = v.real();
                dst[1] = v.imag();
            }
        }
    }
    fftw_execute(plan);
    lock.lock();
    fftw_destroy_plan(plan);
    lock.unlock();

    IntensityMap map;
    map.frame = Frame::Polar;
    map.dims = {fe, fa, fr};
    map.config = cfg;
    map.values.resize(total);
    for (std::size_t e = 0; e < fe; ++e) {
        const std::size_t se = (e + fe / 2) % fe;
        for (std::size_t a = 0; a < fa; ++a) {
            const std::size_t sa = (a + fa / 2) % fa;
            for (std::size_t r = 0; r < fr; ++r) {
                const fftw_complex& v = buf[(e * fa + a) * fr + r];
                map.values[(se * fa + sa) * fr + r] = static_cast<float>(std::hypot(v[0], v[1]));
            }
        }
    }
    return map;
}

std::array<double, 3> polar_bin(const Vec3& s, const RadarConfig& cfg) {
    const double r = s.norm();
    const double spacing = cfg.element_spacing / cfg.wavelength();
    const auto [fe, fa, fr] = cfg.fft_sizes;
    const double el = static_cast<double>(fe) * spacing * s.z() / r + static_cast<double>(fe / 2);
    const double az = static_cast<double>(fa) * spacing * s.x() / r + static_cast<double>(fa / 2);
    const double rb = r / cfg.range_resolution() * static_cast<double>(fr) / static_cast<double>(cfg.samples_per_chirp);
    return {el, az, rb};
}

Vec3 polar_bin_position(const std::array<double, 3>& bin, const RadarConfig& cfg) {
    const double spacing = cfg.element_spacing / cfg.wavelength();
    const auto [fe, fa, fr] = cfg.fft_sizes;
    const double r = bin[2] * cfg.range_resolution() * static_cast<double>(cfg.samples_per_chirp) / static_cast<double>(fr);
    const double uz = (bin[0] - static_cast<double>(fe / 2)) / (static_cast<double>(fe) * spacing);
    const double ux = (bin[1] - static_cast<double>(fa / 2)) / (static_cast<double>(fa) * spacing);
    const double uy = std::sqrt(std::max(0.0, 1 - ux * ux - uz * uz));
    return r * Vec3(ux, uy, uz);
}

Vec3 cartesian_voxel_center(const IntensityMap& cart, std::size_t i, std::size_t j, std::size_t k) {
    const auto& b = cart.bounds;
    const Vec3 ext = b.max - b.min;
    return {b.min.x() + (static_cast<double>(j) + 0.5) * ext.x() / static_cast<double>(cart.dims[1]),
            b.min.y() + (static_cast<double>(k) + 0.5) * ext.y() / static_cast<double>(cart.dims[2]),
            b.max.z() - (static_cast<double>(i) + 0.5) * ext.z() / static_cast<double>(cart.dims[0])};
}

IntensityMap to_cartesian(const IntensityMap& polar, const geometry::Bounds& bounds,
                          const std::array<std::size_t, 3>& dims) {
    if (polar.frame != Frame::Polar) throw ConfigError("to_cartesian: input map is not in the polar frame");
    for (int a = 0; a < 3; ++a) {
        if (!(bounds.max[a] > bounds.min[a])) throw ConfigError("to_cartesian: degenerate Cartesian bounds");
        if (dims[a] == 0) throw ConfigError("to_cartesian: zero grid extent");
    }
    if (polar.values.size() != polar.dims[0] * polar.dims[1] * polar.dims[2]) {
        throw ShapeError("to_cartesian: polar map storage does not match its extents");
    }
    IntensityMap cart;
    cart.frame = Frame::Cartesian;
    cart.dims = dims;
    cart.config = polar.config;
    cart.sensor_pose = polar.sensor_pose;
    cart.bounds = bounds;
    cart.values.assign(dims[0] * dims[1] * dims[2], 0.0f);
    for (std::size_t i = 0; i < dims[0]; ++i) {
        for (std::size_t j = 0; j < dims[1]; ++j) {
            for (std::size_t k = 0; k < dims[2]; ++k) {
                const Vec3 c = cartesian_voxel_center(cart, i, j, k);
                if (!(c.y() > 0)) continue;
                const auto bin = polar_bin(c, polar.config);
                std::array<std::size_t, 3> idx{};
                bool inside = true;
                for (int a = 0; a < 3; ++a) {
                    const double rb = std::floor(bin[a] + 0.5);
                    if (!(rb >= 0 && rb < static_cast<double>(polar.dims[a]))) {
                        inside = false;
                        break;
                    }
                    idx[a] = static_cast<std::size_t>(rb);
                }
                if (inside) cart.values[(i * dims[1] + j) * dims[2] + k] = polar.at(idx[0], idx[1], idx[2]);
            }
        }
    }
    return cart;
}

RawDataCube select_snapshots(const RawDataCube& raw, std::span<const std::size_t> indices, const RadarConfig& cfg) {
    if (indices.size() != cfg.snapshot_count) {
        throw ConfigError("select_snapshots: expected " + std::to_string(cfg.snapshot_count) + " indices, got " +
                          std::to_string(indices.size()));
    }
    check_rows(indices, raw.elevation);
    RawDataCube out = raw;
    std::vector<bool> keep(raw.elevation, false);
    for (std::size_t r : indices) keep[r] = true;
    const std::size_t row = raw.azimuth * raw.samples;
    for (std::size_t q = 0; q < raw.elevation; ++q) {
        if (!keep[q]) std::fill(out.data.begin() + q * row, out.data.begin() + (q + 1) * row, std::complex<double>{});
    }
    return out;
}

}  // namespace rimr::radar
