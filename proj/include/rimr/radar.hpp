#pragma once

// FMCW point-scatterer simulation on a planar virtual array and the
// range/azimuth/elevation FFT chain.
//
// Sensor frame: x right, y boresight, z up. Element (p, q) sits at column p
// (azimuth) and row q (elevation) of the array.

#include <array>
#include <complex>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rimr/geometry.hpp"

namespace rimr::radar {

using geometry::RigidTransform;
using geometry::Vec3;

inline constexpr double kSpeedOfLight = 299792458.0;

struct RadarConfig {
    double carrier_freq = 60e9;
    double bandwidth = 4e9;
    std::size_t samples_per_chirp = 256;
    std::size_t azimuth_elements = 64;
    std::size_t elevation_elements = 64;
    double element_spacing = kSpeedOfLight / 60e9 / 2;
    std::size_t snapshot_count = 2;
    std::array<std::size_t, 3> fft_sizes{64, 64, 256};  // elevation, azimuth, range

    double wavelength() const { return kSpeedOfLight / carrier_freq; }
    double range_resolution() const { return kSpeedOfLight / (2 * bandwidth); }
    double max_range() const { return range_resolution() * static_cast<double>(samples_per_chirp); }

    void validate() const;
    std::string to_key_values() const;
    static RadarConfig from_key_values(const std::string& text);
    bool operator==(const RadarConfig&) const = default;
};

struct Reflector {
    Vec3 position;  // scene frame
    double reflectivity = 1;
};

struct ReflectorScene {
    std::vector<Reflector> reflectors;
    RigidTransform sensor_pose;  // scene -> sensor
};

struct RawDataCube {
    std::size_t elevation = 0, azimuth = 0, samples = 0;
    std::vector<std::complex<double>> data;  // (q, p, n) row-major

    std::complex<double>& at(std::size_t q, std::size_t p, std::size_t n) { return data[(q * azimuth + p) * samples + n]; }
    const std::complex<double>& at(std::size_t q, std::size_t p, std::size_t n) const {
        return data[(q * azimuth + p) * samples + n];
    }
};

enum class Frame : std::uint8_t { Polar = 0, Cartesian = 1 };

struct IntensityMap {
    Frame frame = Frame::Polar;
    std::array<std::size_t, 3> dims{0, 0, 0};
    std::vector<float> values;  // row-major over dims
    RadarConfig config;
    RigidTransform sensor_pose;
    // Cartesian maps only: sensor-frame box covered by the grid. Axis 0 runs
    // over z from max to min (image rows), axis 1 over x, axis 2 over y.
    geometry::Bounds bounds;

    float at(std::size_t i, std::size_t j, std::size_t k) const { return values[(i * dims[1] + j) * dims[2] + k]; }
};

// Spherical view of a sensor-frame point.
struct Spherical {
    double range, azimuth, elevation;
};
Spherical to_spherical(const Vec3& sensor_point);

RawDataCube synthesize_raw(const ReflectorScene& scene, const RadarConfig& cfg);
// Same superposition evaluated only on the listed elevation rows; all other
// rows are zero. Equals select_snapshots(synthesize_raw(scene, cfg), rows).
RawDataCube synthesize_raw(const ReflectorScene& scene, const RadarConfig& cfg, std::span<const std::size_t> rows);

// Complex white Gaussian noise at the given SNR relative to the mean power of
// the non-zero samples. Zeroed rows stay zero.
void add_noise(RawDataCube& raw, double snr_db, std::uint64_t seed);

// Keeps reflectors whose outward normal is within max_angle_deg of the
// direction back to the sensor.
std::vector<Reflector> specular_filter(const std::vector<Reflector>& reflectors, const std::vector<Vec3>& normals,
                                       const RigidTransform& sensor_pose, double max_angle_deg);

IntensityMap process_fft(const RawDataCube& raw, const RadarConfig& cfg);

// Continuous polar bin coordinates (elevation, azimuth, range) of a
// sensor-frame point, and the inverse.
std::array<double, 3> polar_bin(const Vec3& sensor_point, const RadarConfig& cfg);
Vec3 polar_bin_position(const std::array<double, 3>& bin, const RadarConfig& cfg);

IntensityMap to_cartesian(const IntensityMap& polar, const geometry::Bounds& bounds,
                          const std::array<std::size_t, 3>& dims = {64, 64, 256});
Vec3 cartesian_voxel_center(const IntensityMap& cart, std::size_t i, std::size_t j, std::size_t k);

RawDataCube select_snapshots(const RawDataCube& raw, std::span<const std::size_t> indices, const RadarConfig& cfg);

}  // namespace rimr::radar
