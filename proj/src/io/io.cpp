#include "rimr/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <map>
#include <sstream>

#include "rimr/error.hpp"

namespace rimr::io {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace {

constexpr char kVolumeMagic[] = "RIMRVOL";
constexpr char kCheckpointMagic[] = "RIMRCKPT";
constexpr std::string_view kConfigHeader = "# rimr-config 1";
constexpr std::string_view kManifestHeader = "# rimr-manifest 1 records=";

class Writer {
public:
    void raw(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    template <class U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) { le(std::bit_cast<std::uint32_t>(v)); }
    void text(std::string_view s) { raw(s.data(), s.size()); }
    Bytes take() { return std::move(out_); }

private:
    Bytes out_;
};

class Reader {
public:
    Reader(std::span<const std::uint8_t> bytes, std::string what) : b_(bytes), what_(std::move(what)) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return b_.size() - pos_; }

    void need(std::size_t n) const {
        if (remaining() < n) {
            throw FormatError("truncated " + what_ + ": expected at least " + std::to_string(pos_ + n) +
                              " bytes, file has " + std::to_string(b_.size()));
        }
    }
    template <class U>
    U le() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b_[pos_ + i]) << (8 * i));
        pos_ += sizeof(U);
        return v;
    }
    float f32() { return std::bit_cast<float>(le<std::uint32_t>()); }
    std::string text(std::size_t n) {
        need(n);
        std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void magic(std::string_view m) {
        for (std::size_t i = 0; i < m.size(); ++i) {
            if (i >= b_.size()) need(m.size());
            if (b_[i] != static_cast<std::uint8_t>(m[i])) {
                throw FormatError("bad " + what_ + " magic at offset " + std::to_string(i));
            }
        }
        pos_ = m.size();
    }
    void finish() const {
        if (remaining() != 0) {
            throw FormatError(what_ + ": " + std::to_string(remaining()) + " unexpected trailing bytes at offset " +
                              std::to_string(pos_) + " (expected length " + std::to_string(pos_) + ")");
        }
    }

private:
    std::span<const std::uint8_t> b_;
    std::string what_;
    std::size_t pos_ = 0;
};

std::string bounds_key_values(const geometry::Bounds& b) {
    std::ostringstream os;
    const char* axes[] = {"x", "y", "z"};
    for (int k = 0; k < 3; ++k) os << "bounds_min_" << axes[k] << '=' << kv::format_double(b.min[k]) << '\n';
    for (int k = 0; k < 3; ++k) os << "bounds_max_" << axes[k] << '=' << kv::format_double(b.max[k]) << '\n';
    return os.str();
}

std::string format_float9(float v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
    return buf;
}

// Splits text into lines; every line, including the last, must end in '\n'.
std::vector<std::string_view> strict_lines(std::string_view text, const std::string& what) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start < text.size()) {
        const auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            throw FormatError("truncated " + what + ": last line at offset " + std::to_string(start) +
                              " has no terminating newline (file length " + std::to_string(text.size()) + ")");
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto p = line.find(sep, start);
        out.push_back(line.substr(start, p == std::string_view::npos ? std::string_view::npos : p - start));
        if (p == std::string_view::npos) break;
        start = p + 1;
    }
    return out;
}

double parse_double(std::string_view s, const std::string& what) { return kv::to_double(what, std::string(s)); }

struct PgmRaster {
    std::size_t width = 0, height = 0;
    std::vector<std::uint16_t> counts;
};

PgmRaster parse_pgm(std::span<const std::uint8_t> bytes) {
    std::size_t pos = 0;
    auto fail_trunc = [&](std::size_t expected) {
        throw FormatError("truncated PGM: expected at least " + std::to_string(expected) + " bytes, file has " +
                          std::to_string(bytes.size()));
    };
    if (bytes.size() < 2) fail_trunc(2);
    if (bytes[0] != 'P' || bytes[1] != '5') throw FormatError("bad PGM magic at offset 0 (expected P5)");
    pos = 2;
    auto is_space = [](std::uint8_t c) { return c == ' ' || c == '\n' || c == '\r' || c == '\t'; };
    auto number = [&](const char* field) {
        if (pos >= bytes.size()) fail_trunc(pos + 1);
        if (!is_space(bytes[pos])) throw FormatError("PGM: expected whitespace at offset " + std::to_string(pos));
        while (pos < bytes.size() && is_space(bytes[pos])) ++pos;
        std::uint64_t v = 0;
        const std::size_t start = pos;
        while (pos < bytes.size() && bytes[pos] >= '0' && bytes[pos] <= '9') {
            v = v * 10 + (bytes[pos] - '0');
            if (v > 1u << 24) throw FormatError(std::string("PGM: ") + field + " too large at offset " + std::to_string(start));
            ++pos;
        }
        if (pos == start) {
            if (pos >= bytes.size()) fail_trunc(pos + 1);
            throw FormatError(std::string("PGM: expected ") + field + " at offset " + std::to_string(pos));
        }
        return static_cast<std::size_t>(v);
    };
    PgmRaster r;
    r.width = number("width");
    r.height = number("height");
    const std::size_t maxval = number("maxval");
    if (maxval != 65535) throw FormatError("PGM: maxval must be 65535, got " + std::to_string(maxval));
    if (pos >= bytes.size()) fail_trunc(pos + 1);
    if (!is_space(bytes[pos])) throw FormatError("PGM: expected whitespace at offset " + std::to_string(pos));
    ++pos;
    const std::size_t expected = pos + 2 * r.width * r.height;
    if (bytes.size() < expected) fail_trunc(expected);
    if (bytes.size() > expected) {
        throw FormatError("PGM: " + std::to_string(bytes.size() - expected) + " trailing bytes at offset " +
                          std::to_string(expected));
    }
    r.counts.resize(r.width * r.height);
    for (std::size_t i = 0; i < r.counts.size(); ++i) {
        r.counts[i] = static_cast<std::uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1]);
    }
    return r;
}

}  // namespace

Bytes read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");
    Bytes b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("error reading '" + path.string() + "'");
    return b;
}

std::string read_text(const fs::path& path) {
    const Bytes b = read_file(path);
    return std::string(b.begin(), b.end());
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory '" + path.parent_path().string() + "': " + ec.message());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw IoError("error writing '" + tmp.string() + "'");
    }
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
}

void write_text(const fs::path& path, std::string_view text) {
    write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---- RIMRVOL ----------------------------------------------------------------

Bytes encode_volume(const radar::IntensityMap& map) {
    const std::size_t n = map.dims[0] * map.dims[1] * map.dims[2];
    if (map.values.size() != n) throw ShapeError("encode_volume: value count does not match extents");
    Writer w;
    w.text(std::string_view(kVolumeMagic, 7));
    w.le<std::uint16_t>(kVolumeVersion);
    w.le<std::uint8_t>(static_cast<std::uint8_t>(map.frame));
    for (auto d : map.dims) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : map.values) w.f32(v);
    std::string meta = map.config.to_key_values();
    if (map.frame == radar::Frame::Cartesian) meta += bounds_key_values(map.bounds);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(meta.size()));
    w.text(meta);
    for (float v : map.sensor_pose.to_floats()) w.f32(v);
    return w.take();
}

radar::IntensityMap decode_volume(std::span<const std::uint8_t> bytes) {
    Reader r(bytes, "RIMRVOL");
    r.magic(std::string_view(kVolumeMagic, 7));
    const std::size_t version_at = r.offset();
    const auto version = r.le<std::uint16_t>();
    if (version != kVolumeVersion) {
        throw FormatError("RIMRVOL: unsupported version " + std::to_string(version) + " at offset " +
                          std::to_string(version_at));
    }
    const std::size_t frame_at = r.offset();
    const auto frame = r.le<std::uint8_t>();
    if (frame > 1) throw FormatError("RIMRVOL: bad frame flag " + std::to_string(frame) + " at offset " + std::to_string(frame_at));
    radar::IntensityMap map;
    map.frame = static_cast<radar::Frame>(frame);
    for (auto& d : map.dims) d = r.le<std::uint32_t>();
    const std::size_t n = map.dims[0] * map.dims[1] * map.dims[2];
    if (n > r.remaining() / 4) r.need(4 * n);
    map.values.resize(n);
    for (auto& v : map.values) v = r.f32();
    const auto meta_len = r.le<std::uint32_t>();
    const std::string meta = r.text(meta_len);
    std::array<float, 12> pose{};
    for (auto& v : pose) v = r.f32();
    r.finish();
    map.config = radar::RadarConfig::from_key_values(meta);
    if (map.frame == radar::Frame::Cartesian) {
        const auto m = kv::parse(meta, "RIMRVOL metadata");
        const char* axes[] = {"x", "y", "z"};
        for (int k = 0; k < 3; ++k) {
            map.bounds.min[k] = kv::get_double(m, std::string("bounds_min_") + axes[k]);
            map.bounds.max[k] = kv::get_double(m, std::string("bounds_max_") + axes[k]);
        }
    }
    map.sensor_pose = geometry::RigidTransform::from_floats(pose);
    return map;
}

// ---- RIMRCKPT ---------------------------------------------------------------

Bytes encode_checkpoint(const std::vector<tensor::NamedArray>& arrays) {
    Writer w;
    w.text(std::string_view(kCheckpointMagic, 8));
    w.le<std::uint16_t>(kCheckpointVersion);
    w.le<std::uint32_t>(static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        if (a.name.size() > std::numeric_limits<std::uint16_t>::max()) throw Error("checkpoint: name too long");
        if (a.shape.size() > 255) throw ShapeError("checkpoint: rank too large for '" + a.name + "'");
        const std::size_t n = tensor::numel(a.shape);
        if (a.data.size() != n) throw ShapeError("checkpoint: data size mismatch for '" + a.name + "'");
        w.le<std::uint16_t>(static_cast<std::uint16_t>(a.name.size()));
        w.text(a.name);
        w.le<std::uint8_t>(static_cast<std::uint8_t>(a.shape.size()));
        for (auto d : a.shape) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
        for (const auto* v : {&a.data, &a.moment1, &a.moment2}) {
            if (v->empty()) {
                for (std::size_t i = 0; i < n; ++i) w.f32(0.0f);
            } else {
                if (v->size() != n) throw ShapeError("checkpoint: moment size mismatch for '" + a.name + "'");
                for (float x : *v) w.f32(x);
            }
        }
    }
    return w.take();
}

std::vector<tensor::NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes, "RIMRCKPT");
    r.magic(std::string_view(kCheckpointMagic, 8));
    const std::size_t version_at = r.offset();
    const auto version = r.le<std::uint16_t>();
    if (version != kCheckpointVersion) {
        throw FormatError("RIMRCKPT: unsupported version " + std::to_string(version) + " at offset " +
                          std::to_string(version_at));
    }
    const auto count = r.le<std::uint32_t>();
    std::vector<tensor::NamedArray> out;
    for (std::uint32_t i = 0; i < count; ++i) {
        tensor::NamedArray a;
        a.name = r.text(r.le<std::uint16_t>());
        const auto rank = r.le<std::uint8_t>();
        a.shape.resize(rank);
        for (auto& d : a.shape) d = r.le<std::uint32_t>();
        const std::size_t n = tensor::numel(a.shape);
        if (n > r.remaining() / 12) r.need(12 * n);
        for (auto* v : {&a.data, &a.moment1, &a.moment2}) {
            v->resize(n);
            for (auto& x : *v) x = r.f32();
        }
        out.push_back(std::move(a));
    }
    r.finish();
    return out;
}

// ---- PLY --------------------------------------------------------------------

std::string encode_ply(const geometry::PointCloud& cloud) {
    std::string s = "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
                    "\nproperty float x\nproperty float y\nproperty float z\nend_header\n";
    for (const auto& p : cloud.points) {
        s += format_float9(static_cast<float>(p.x())) + ' ' + format_float9(static_cast<float>(p.y())) + ' ' +
             format_float9(static_cast<float>(p.z())) + '\n';
    }
    return s;
}

geometry::PointCloud decode_ply(std::string_view text) {
    const auto lines = strict_lines(text, "PLY");
    std::size_t i = 0;
    auto next = [&](const char* expect) -> std::string_view {
        while (i < lines.size() && lines[i].rfind("comment", 0) == 0) ++i;
        if (i >= lines.size()) {
            throw FormatError(std::string("truncated PLY: header ends before '") + expect + "' (file length " +
                              std::to_string(text.size()) + ")");
        }
        return lines[i++];
    };
    if (next("ply") != "ply") throw FormatError("bad PLY magic at offset 0");
    if (next("format") != "format ascii 1.0") throw FormatError("PLY: only 'format ascii 1.0' is supported");
    const auto element = next("element vertex");
    constexpr std::string_view kElem = "element vertex ";
    if (element.rfind(kElem, 0) != 0) throw FormatError("PLY: expected 'element vertex <n>'");
    const std::size_t count = kv::to_uint("vertex count", std::string(element.substr(kElem.size())));
    for (const char* prop : {"property float x", "property float y", "property float z"}) {
        if (next(prop) != prop) throw FormatError(std::string("PLY: expected '") + prop + "'");
    }
    if (next("end_header") != "end_header") throw FormatError("PLY: expected 'end_header'");
    const std::size_t body = lines.size() - i;
    if (body != count) {
        throw FormatError("PLY: header declares " + std::to_string(count) + " vertices, file has " +
                          std::to_string(body) + " vertex lines");
    }
    geometry::PointCloud cloud;
    cloud.points.reserve(count);
    for (; i < lines.size(); ++i) {
        const auto f = split(lines[i], ' ');
        if (f.size() != 3) throw FormatError("PLY: vertex line " + std::to_string(i + 1) + " does not have 3 fields");
        cloud.points.emplace_back(parse_double(f[0], "x"), parse_double(f[1], "y"), parse_double(f[2], "z"));
    }
    return cloud;
}

// ---- PGM + camera sidecar ---------------------------------------------------

Bytes encode_pgm(const geometry::DepthImage& img) {
    if (img.depth.size() != img.width * img.height) throw ShapeError("encode_pgm: depth size does not match image size");
    Writer w;
    w.text("P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n65535\n");
    for (double d : img.depth) {
        const double q = std::round(d / kDepthUnit);
        if (!(q >= 0 && q <= 65535)) {
            throw ConfigError("encode_pgm: depth " + std::to_string(d) + " m is outside [0, 65.535] m");
        }
        const auto v = static_cast<std::uint16_t>(q);
        w.le<std::uint8_t>(static_cast<std::uint8_t>(v >> 8));
        w.le<std::uint8_t>(static_cast<std::uint8_t>(v & 0xFF));
    }
    return w.take();
}

geometry::DepthImage decode_pgm(std::span<const std::uint8_t> bytes, const geometry::CameraModel& camera) {
    const auto r = parse_pgm(bytes);
    if (r.width != camera.width || r.height != camera.height) {
        throw FormatError("PGM raster " + std::to_string(r.width) + "x" + std::to_string(r.height) +
                          " does not match camera " + std::to_string(camera.width) + "x" + std::to_string(camera.height));
    }
    geometry::DepthImage img;
    img.width = r.width;
    img.height = r.height;
    img.camera = camera;
    img.depth.resize(r.counts.size());
    for (std::size_t i = 0; i < r.counts.size(); ++i) img.depth[i] = r.counts[i] * kDepthUnit;
    return img;
}

std::string encode_camera(const geometry::CameraModel& cam) {
    kv::Map m;
    m["focal"] = kv::format_double(cam.focal);
    m["cx"] = kv::format_double(cam.cx);
    m["cy"] = kv::format_double(cam.cy);
    m["width"] = std::to_string(cam.width);
    m["height"] = std::to_string(cam.height);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m["r" + std::to_string(r) + std::to_string(c)] = kv::format_double(cam.pose.rotation(r, c));
        m["t" + std::to_string(r)] = kv::format_double(cam.pose.translation(r));
    }
    return encode_config(m);
}

geometry::CameraModel decode_camera(std::string_view text) {
    const auto m = decode_config(text);
    geometry::CameraModel cam;
    cam.focal = kv::get_double(m, "focal");
    cam.cx = kv::get_double(m, "cx");
    cam.cy = kv::get_double(m, "cy");
    cam.width = kv::get_uint(m, "width");
    cam.height = kv::get_uint(m, "height");
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) cam.pose.rotation(r, c) = kv::get_double(m, "r" + std::to_string(r) + std::to_string(c));
        cam.pose.translation(r) = kv::get_double(m, "t" + std::to_string(r));
    }
    cam.validate();
    return cam;
}

// ---- config -----------------------------------------------------------------

std::string encode_config(const kv::Map& values) {
    if (values.empty()) throw ConfigError("config: refusing to write an empty key set");
    std::string s = std::string(kConfigHeader) + '\n';
    for (const auto& [k, v] : values) {
        if (k.empty() || k.find_first_of("=\n#") != std::string::npos || v.find('\n') != std::string::npos) {
            throw ConfigError("config key '" + k + "' or its value cannot be encoded");
        }
        s += k + '=' + v + '\n';
    }
    s += "# end keys=" + std::to_string(values.size()) + '\n';
    return s;
}

kv::Map decode_config(std::string_view text) {
    if (text.rfind(kConfigHeader, 0) != 0) {
        auto m = kv::parse(text, "config");
        if (m.empty()) throw FormatError("config: no keys found (file length " + std::to_string(text.size()) + ")");
        return m;
    }
    const auto lines = strict_lines(text, "config");
    if (lines.empty() || lines.front() != kConfigHeader) throw FormatError("config: malformed header line");
    constexpr std::string_view kFooter = "# end keys=";
    if (lines.size() < 2 || lines.back().rfind(kFooter, 0) != 0) {
        throw FormatError("truncated config: footer line missing (file length " + std::to_string(text.size()) + ")");
    }
    const auto declared = kv::to_uint("config footer", std::string(lines.back().substr(kFooter.size())));
    auto m = kv::parse(text, "config");
    if (m.empty()) throw FormatError("config: no keys found");
    if (m.size() != declared) {
        throw FormatError("config: footer declares " + std::to_string(declared) + " keys, found " + std::to_string(m.size()));
    }
    return m;
}

// ---- manifest ---------------------------------------------------------------

std::string encode_manifest(const std::vector<ManifestRecord>& records) {
    std::ostringstream os;
    os << kManifestHeader << records.size() << '\n';
    os << "# id\tsplit\tkind\tsize_x\tsize_y\tsize_z\tyaw\tpos_x\tpos_y\tpos_z\tcloud\t(map\tdepth) per view\n";
    for (const auto& r : records) {
        for (const auto& f : {r.id, r.split, r.cloud_path}) {
            if (f.empty() || f.find_first_of("\t\n") != std::string::npos) throw ConfigError("manifest field '" + f + "' is not encodable");
        }
        os << r.id << '\t' << r.split << '\t' << geometry::to_string(r.kind);
        for (int k = 0; k < 3; ++k) os << '\t' << kv::format_double(r.size[k]);
        os << '\t' << kv::format_double(r.yaw);
        for (int k = 0; k < 3; ++k) os << '\t' << kv::format_double(r.position[k]);
        os << '\t' << r.cloud_path;
        for (const auto& v : r.views) os << '\t' << v.map_path << '\t' << v.depth_path;
        os << '\n';
    }
    return os.str();
}

std::vector<ManifestRecord> decode_manifest(std::string_view text) {
    const auto lines = strict_lines(text, "manifest");
    if (lines.empty() || lines[0].rfind(kManifestHeader, 0) != 0) throw FormatError("bad manifest header at offset 0");
    const auto declared = kv::to_uint("manifest records", std::string(lines[0].substr(kManifestHeader.size())));
    std::vector<ManifestRecord> out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        if (lines[i].empty() || lines[i].front() == '#') continue;
        const auto f = split(lines[i], '\t');
        if (f.size() < 11 || (f.size() - 11) % 2 != 0) {
            throw FormatError("manifest line " + std::to_string(i + 1) + ": expected 11 + 2k fields, got " +
                              std::to_string(f.size()));
        }
        ManifestRecord r;
        r.id = f[0];
        r.split = f[1];
        r.kind = geometry::shape_kind_from_string(std::string(f[2]));
        for (int k = 0; k < 3; ++k) r.size[k] = parse_double(f[3 + k], "size");
        r.yaw = parse_double(f[6], "yaw");
        for (int k = 0; k < 3; ++k) r.position[k] = parse_double(f[7 + k], "position");
        r.cloud_path = f[10];
        for (std::size_t k = 11; k < f.size(); k += 2) r.views.push_back({std::string(f[k]), std::string(f[k + 1])});
        out.push_back(std::move(r));
    }
    if (out.size() != declared) {
        throw FormatError("truncated manifest: header declares " + std::to_string(declared) + " records, found " +
                          std::to_string(out.size()));
    }
    return out;
}

// ---- inspection -------------------------------------------------------------

FileKind sniff(std::span<const std::uint8_t> head) {
    auto starts = [&](std::string_view s) {
        return head.size() >= s.size() && std::equal(s.begin(), s.end(), head.begin(),
                                                     [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; });
    };
    if (starts(std::string_view(kCheckpointMagic, 8))) return FileKind::Checkpoint;
    if (starts(std::string_view(kVolumeMagic, 7))) return FileKind::Volume;
    if (starts("ply\n")) return FileKind::Ply;
    if (starts("P5")) return FileKind::Pgm;
    if (starts(kManifestHeader)) return FileKind::Manifest;
    if (starts(kConfigHeader)) return FileKind::Config;
    return FileKind::Unknown;
}

std::string inspect(const fs::path& path) {
    const Bytes bytes = read_file(path);
    std::ostringstream os;
    os << "file: " << path.string() << "\nsize: " << bytes.size() << " bytes\n";
    switch (sniff(bytes)) {
        case FileKind::Volume: {
            const auto m = decode_volume(bytes);
            os << "format: RIMRVOL v" << kVolumeVersion << "\nframe: "
               << (m.frame == radar::Frame::Polar ? "polar" : "cartesian") << "\nextents: " << m.dims[0] << " x "
               << m.dims[1] << " x " << m.dims[2] << '\n';
            if (!m.values.empty()) {
                const auto [lo, hi] = std::minmax_element(m.values.begin(), m.values.end());
                double sum = 0;
                std::size_t nonzero = 0;
                for (float v : m.values) {
                    sum += v;
                    nonzero += v != 0;
                }
                os << "min: " << *lo << "\nmax: " << *hi << "\nmean: " << sum / static_cast<double>(m.values.size())
                   << "\nnonzero: " << nonzero << '\n';
            }
            os << "carrier_freq: " << m.config.carrier_freq << " Hz\nbandwidth: " << m.config.bandwidth << " Hz\n";
            const auto sensor = m.sensor_pose.inverse().translation;
            os << "sensor position: " << sensor.x() << ' ' << sensor.y() << ' ' << sensor.z() << '\n';
            break;
        }
        case FileKind::Checkpoint: {
            const auto arrays = decode_checkpoint(bytes);
            std::size_t scalars = 0;
            for (const auto& a : arrays) scalars += a.data.size();
            os << "format: RIMRCKPT v" << kCheckpointVersion << "\nparameters: " << arrays.size()
               << "\nscalars: " << scalars << '\n';
            for (const auto& a : arrays) os << "  " << a.name << ' ' << tensor::to_string(a.shape) << '\n';
            break;
        }
        case FileKind::Ply: {
            const auto cloud = decode_ply(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
            os << "format: PLY ascii 1.0\nvertex count: " << cloud.size() << '\n';
            if (!cloud.empty()) {
                const auto b = geometry::bounding_box(cloud);
                os << "bbox min: " << b.min.x() << ' ' << b.min.y() << ' ' << b.min.z() << "\nbbox max: " << b.max.x()
                   << ' ' << b.max.y() << ' ' << b.max.z() << '\n';
            }
            break;
        }
        case FileKind::Pgm: {
            const auto r = parse_pgm(bytes);
            std::size_t nonzero = 0;
            std::uint16_t lo = 65535, hi = 0;
            for (auto c : r.counts) {
                if (c == 0) continue;
                ++nonzero;
                lo = std::min(lo, c);
                hi = std::max(hi, c);
            }
            os << "format: PGM P5 16-bit depth\nsize: " << r.width << " x " << r.height << "\nvalid pixels: " << nonzero
               << '\n';
            if (nonzero) os << "depth range: " << lo * kDepthUnit << " .. " << hi * kDepthUnit << " m\n";
            break;
        }
        case FileKind::Manifest: {
            const auto recs = decode_manifest(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
            std::map<std::string, std::size_t> splits;
            for (const auto& r : recs) ++splits[r.split];
            os << "format: manifest\nrecords: " << recs.size() << '\n';
            for (const auto& [s, n] : splits) os << "  " << s << ": " << n << '\n';
            break;
        }
        case FileKind::Config:
        case FileKind::Unknown: {
            const std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
            kv::Map m;
            try {
                m = decode_config(text);
            } catch (const FormatError&) {
                throw FormatError("inspect: unrecognized file format for '" + path.string() + "'");
            }
            os << "format: key=value config\nkeys: " << m.size() << '\n';
            for (const auto& [k, v] : m) os << "  " << k << " = " << v << '\n';
            break;
        }
    }
    return os.str();
}

}  // namespace rimr::io
