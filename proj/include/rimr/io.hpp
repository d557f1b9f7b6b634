#pragma once

// File codecs. Every decoder rejects bad magic or version (reporting the byte
// offset), truncation (reporting expected vs actual length) and trailing data.
//
//   RIMRVOL   intensity maps        binary, little-endian
//   RIMRCKPT  parameter checkpoints binary, little-endian
//   PLY       point clouds          ascii 1.0, vertex x y z floats
//   PGM       depth images          P5, maxval 65535, big-endian u16, 1 mm per unit
//   config    key=value text        also used for camera sidecars
//   manifest  dataset index         tab-separated, one sample per line

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rimr/geometry.hpp"
#include "rimr/keyvalue.hpp"
#include "rimr/nn.hpp"
#include "rimr/radar.hpp"

namespace rimr::io {

namespace fs = std::filesystem;
using Bytes = std::vector<std::uint8_t>;

inline constexpr std::uint16_t kVolumeVersion = 1;
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr double kDepthUnit = 0.001;  // meters per PGM count

Bytes read_file(const fs::path& path);
std::string read_text(const fs::path& path);
// Writes via a temporary file and rename, creating parent directories.
void write_file(const fs::path& path, std::span<const std::uint8_t> bytes);
void write_text(const fs::path& path, std::string_view text);

Bytes encode_volume(const radar::IntensityMap& map);
radar::IntensityMap decode_volume(std::span<const std::uint8_t> bytes);

Bytes encode_checkpoint(const std::vector<tensor::NamedArray>& arrays);
std::vector<tensor::NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes);

std::string encode_ply(const geometry::PointCloud& cloud);
geometry::PointCloud decode_ply(std::string_view text);

// Depths above 65.535 m or non-finite are rejected.
Bytes encode_pgm(const geometry::DepthImage& img);
// The camera comes from the sidecar; its size must match the raster.
geometry::DepthImage decode_pgm(std::span<const std::uint8_t> bytes, const geometry::CameraModel& camera);

std::string encode_camera(const geometry::CameraModel& cam);
geometry::CameraModel decode_camera(std::string_view text);

// Config text. Files written by encode_config start with a "# rimr-config"
// header and end with a "# end keys=N" footer; when the header is present the
// footer is mandatory, which makes truncation detectable. Hand-written files
// without the header are accepted as plain key=value blocks.
std::string encode_config(const kv::Map& values);
kv::Map decode_config(std::string_view text);

struct ViewRecord {
    std::string map_path;    // RIMRVOL, relative to the manifest directory
    std::string depth_path;  // PGM; the camera sidecar is depth_path + ".cam"

    bool operator==(const ViewRecord&) const = default;
};

struct ManifestRecord {
    std::string id;
    std::string split;  // train | test
    geometry::ShapeKind kind = geometry::ShapeKind::Box;
    geometry::Vec3 size = geometry::Vec3::Ones();
    double yaw = 0;
    geometry::Vec3 position = geometry::Vec3::Zero();
    std::string cloud_path;  // PLY
    std::vector<ViewRecord> views;

    bool operator==(const ManifestRecord&) const = default;
};

std::string encode_manifest(const std::vector<ManifestRecord>& records);
std::vector<ManifestRecord> decode_manifest(std::string_view text);

enum class FileKind { Volume, Checkpoint, Ply, Pgm, Manifest, Config, Unknown };
FileKind sniff(std::span<const std::uint8_t> head);

// Human-readable multi-line summary; reads the file only.
std::string inspect(const fs::path& path);

}  // namespace rimr::io
