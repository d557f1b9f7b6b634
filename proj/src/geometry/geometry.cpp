#include "rimr/geometry.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "rimr/error.hpp"
#include "rimr/rng.hpp"

namespace rimr::geometry {

RigidTransform RigidTransform::yaw(double radians, const Vec3& translation) {
    RigidTransform t;
    t.rotation = Eigen::AngleAxisd(radians, Vec3::UnitZ()).toRotationMatrix();
    t.translation = translation;
    return t;
}

RigidTransform RigidTransform::inverse() const {
    RigidTransform t;
    t.rotation = rotation.transpose();
    t.translation = -(t.rotation * translation);
    return t;
}

RigidTransform RigidTransform::operator*(const RigidTransform& other) const {
    RigidTransform t;
    t.rotation = rotation * other.rotation;
    t.translation = rotation * other.translation + translation;
    return t;
}

void RigidTransform::validate() const {
    if (!rotation.allFinite() || !translation.allFinite()) throw ConfigError("pose contains non-finite values");
    const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
    const double det = rotation.determinant();
    if (ortho > 1e-6 || std::abs(det - 1.0) > 1e-6) {
        throw ConfigError("pose rotation is not a proper rotation (orthonormality error " + std::to_string(ortho) +
                          ", det " + std::to_string(det) + ")");
    }
}

std::array<float, 12> RigidTransform::to_floats() const {
    std::array<float, 12> v{};
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) v[r * 3 + c] = static_cast<float>(rotation(r, c));
    }
    for (int r = 0; r < 3; ++r) v[9 + r] = static_cast<float>(translation(r));
    return v;
}

RigidTransform RigidTransform::from_floats(const std::array<float, 12>& v) {
    RigidTransform t;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) t.rotation(r, c) = v[r * 3 + c];
    }
    for (int r = 0; r < 3; ++r) t.translation(r) = v[9 + r];
    return t;
}

RigidTransform sensor_look_at(const Vec3& eye, const Vec3& target) {
    Vec3 fwd = target - eye;
    if (fwd.norm() == 0) throw ConfigError("sensor_look_at: eye and target coincide");
    fwd.normalize();
    Vec3 right = fwd.cross(Vec3::UnitZ());
    if (right.norm() < 1e-9) throw ConfigError("sensor_look_at: view direction is vertical");
    right.normalize();
    const Vec3 up = right.cross(fwd);
    RigidTransform t;
    t.rotation.row(0) = right.transpose();
    t.rotation.row(1) = fwd.transpose();
    t.rotation.row(2) = up.transpose();
    t.translation = -(t.rotation * eye);
    return t;
}

RigidTransform camera_from_sensor(const RigidTransform& world_to_sensor) {
    Mat3 p;
    p << 1, 0, 0, 0, 0, -1, 0, 1, 0;
    RigidTransform t;
    t.rotation = p * world_to_sensor.rotation;
    t.translation = p * world_to_sensor.translation;
    return t;
}

void CameraModel::validate() const {
    if (!(focal > 0)) throw ConfigError("camera focal length must be positive");
    if (width == 0 || height == 0) throw ConfigError("camera image size must be positive");
    if (!(cx >= 0 && cx < static_cast<double>(width) && cy >= 0 && cy < static_cast<double>(height))) {
        throw ConfigError("camera principal point lies outside the image");
    }
    pose.validate();
}

Vec3 CameraModel::position() const { return pose.inverse().translation; }

Vec3 CameraModel::forward() const { return pose.rotation.row(2).transpose(); }

bool VoxelGrid::same_lattice(const VoxelGrid& other) const {
    return origin == other.origin && voxel_size == other.voxel_size && dims == other.dims;
}

Vec3 VoxelGrid::center(const VoxelIndex& idx) const {
    return origin + voxel_size * Vec3(static_cast<double>(idx[0]) + 0.5, static_cast<double>(idx[1]) + 0.5,
                                      static_cast<double>(idx[2]) + 0.5);
}

const char* to_string(ShapeKind kind) {
    switch (kind) {
        case ShapeKind::Box: return "box";
        case ShapeKind::LBox: return "lbox";
        case ShapeKind::CarLike: return "carlike";
    }
    return "?";
}

ShapeKind shape_kind_from_string(const std::string& s) {
    if (s == "box") return ShapeKind::Box;
    if (s == "lbox") return ShapeKind::LBox;
    if (s == "carlike") return ShapeKind::CarLike;
    throw ConfigError("unknown shape kind '" + s + "' (expected box, lbox or carlike)");
}

namespace {

// Axis-aligned planar rectangle: the plane coordinate[axis] == level, spanning
// [lo, hi] on the two remaining axes (in increasing axis order).
struct Rect {
    int axis;
    double level;
    double sign;  // outward normal direction along axis
    double lo0, hi0, lo1, hi1;

    double area() const { return (hi0 - lo0) * (hi1 - lo1); }
};

void other_axes(int axis, int& a0, int& a1) {
    a0 = axis == 0 ? 1 : 0;
    a1 = axis == 2 ? 1 : 2;
}

Rect face(int axis, double sign, const Vec3& lo, const Vec3& hi) {
    int a0, a1;
    other_axes(axis, a0, a1);
    return {axis, sign > 0 ? hi[axis] : lo[axis], sign, lo[a0], hi[a0], lo[a1], hi[a1]};
}

void add_box_faces(std::vector<Rect>& out, const Vec3& lo, const Vec3& hi, int skip_axis = -1, double skip_sign = 0) {
    for (int axis = 0; axis < 3; ++axis) {
        for (double sign : {-1.0, 1.0}) {
            if (axis == skip_axis && sign == skip_sign) continue;
            out.push_back(face(axis, sign, lo, hi));
        }
    }
}

std::vector<Rect> surface_rects(ShapeKind kind, const Vec3& size) {
    const Vec3 h = size / 2;
    std::vector<Rect> rects;
    switch (kind) {
        case ShapeKind::Box:
            add_box_faces(rects, -h, h);
            break;
        case ShapeKind::LBox: {
            // Box minus the block x in [0, hx], z in [0, hz] over the full y extent.
            const double hx = h.x(), hy = h.y(), hz = h.z();
            rects.push_back({0, -hx, -1, -hy, hy, -hz, hz});
            rects.push_back({0, hx, 1, -hy, hy, -hz, 0});
            rects.push_back({0, 0, 1, -hy, hy, 0, hz});
            rects.push_back({2, -hz, -1, -hx, hx, -hy, hy});
            rects.push_back({2, hz, 1, -hx, 0, -hy, hy});
            rects.push_back({2, 0, 1, 0, hx, -hy, hy});
            for (double sign : {-1.0, 1.0}) {
                const double y = sign * hy;
                rects.push_back({1, y, sign, -hx, hx, -hz, 0});
                rects.push_back({1, y, sign, -hx, 0, 0, hz});
            }
            break;
        }
        case ShapeKind::CarLike: {
            // Body: lower 60% of the height. Cabin: upper 40%, half the length,
            // 80% of the width, shifted towards -x.
            const double body_top = -h.z() + 0.6 * size.z();
            const Vec3 body_lo = -h, body_hi(h.x(), h.y(), body_top);
            const double cab_len = 0.5 * size.x(), cab_w = 0.8 * size.y();
            const double cab_x0 = -h.x() + 0.15 * size.x();
            const Vec3 cab_lo(cab_x0, -cab_w / 2, body_top), cab_hi(cab_x0 + cab_len, cab_w / 2, h.z());
            add_box_faces(rects, body_lo, body_hi, 2, 1.0);
            add_box_faces(rects, cab_lo, cab_hi, 2, -1.0);
            // Body roof minus the cabin footprint, as four strips.
            rects.push_back({2, body_top, 1, -h.x(), cab_lo.x(), -h.y(), h.y()});
            rects.push_back({2, body_top, 1, cab_hi.x(), h.x(), -h.y(), h.y()});
            rects.push_back({2, body_top, 1, cab_lo.x(), cab_hi.x(), -h.y(), cab_lo.y()});
            rects.push_back({2, body_top, 1, cab_lo.x(), cab_hi.x(), cab_hi.y(), h.y()});
            break;
        }
    }
    return rects;
}

void check_shape_args(const Vec3& size, double density) {
    if (!(size.minCoeff() > 0) || !size.allFinite()) throw ConfigError("shape size must be positive and finite");
    if (!(density > 0) || !std::isfinite(density)) throw ConfigError("surface density must be positive");
}

}  // namespace

double surface_area(ShapeKind kind, const Vec3& size) {
    double a = 0;
    for (const auto& r : surface_rects(kind, size)) a += r.area();
    return a;
}

SurfaceSample sample_surface(ShapeKind kind, const Vec3& size, double surface_density, std::uint64_t seed) {
    check_shape_args(size, surface_density);
    const auto rects = surface_rects(kind, size);
    std::vector<double> cumulative;
    double total = 0;
    for (const auto& r : rects) cumulative.push_back(total += r.area());
    const auto count = static_cast<std::size_t>(std::llround(surface_density * total));

    auto eng = rng::stream(seed, "shape", 0);
    SurfaceSample out;
    out.cloud.points.reserve(count);
    out.normals.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double pick = rng::uniform(eng, 0.0, total);
        const std::size_t k = std::min<std::size_t>(
            std::upper_bound(cumulative.begin(), cumulative.end(), pick) - cumulative.begin(), rects.size() - 1);
        const Rect& r = rects[k];
        int a0, a1;
        other_axes(r.axis, a0, a1);
        Vec3 p, n = Vec3::Zero();
        p[r.axis] = r.level;
        p[a0] = rng::uniform(eng, r.lo0, r.hi0);
        p[a1] = rng::uniform(eng, r.lo1, r.hi1);
        n[r.axis] = r.sign;
        out.cloud.points.push_back(p);
        out.normals.push_back(n);
    }
    return out;
}

PointCloud generate_shape(ShapeKind kind, const Vec3& size, double surface_density, std::uint64_t seed) {
    return sample_surface(kind, size, surface_density, seed).cloud;
}

DepthImage render_depth(const PointCloud& cloud, const CameraModel& cam) {
    cam.validate();
    if (cloud.empty()) throw ShapeError("render_depth: empty point cloud");
    DepthImage img;
    img.width = cam.width;
    img.height = cam.height;
    img.camera = cam;
    img.depth.assign(cam.width * cam.height, 0.0);
    for (const auto& p : cloud.points) {
        const Vec3 c = cam.pose.apply(p);
        if (!(c.z() > 0)) continue;
        const double u = std::floor(cam.focal * c.x() / c.z() + cam.cx + 0.5);
        const double v = std::floor(cam.focal * c.y() / c.z() + cam.cy + 0.5);
        if (u < 0 || v < 0 || u >= static_cast<double>(cam.width) || v >= static_cast<double>(cam.height)) continue;
        double& d = img.at(static_cast<std::size_t>(u), static_cast<std::size_t>(v));
        if (d == 0 || c.z() < d) d = c.z();
    }
    return img;
}

PointCloud backproject(const DepthImage& img, double min_depth) {
    const RigidTransform to_world = img.camera.pose.inverse();
    const double f = img.camera.focal;
    PointCloud out;
    for (std::size_t v = 0; v < img.height; ++v) {
        for (std::size_t u = 0; u < img.width; ++u) {
            const double d = img.at(u, v);
            if (!(d > 0) || d < min_depth) continue;
            const Vec3 c(d * (static_cast<double>(u) - img.camera.cx) / f,
                         d * (static_cast<double>(v) - img.camera.cy) / f, d);
            out.points.push_back(to_world.apply(c));
        }
    }
    return out;
}

PointCloud union_views(const ViewSet& views) {
    if (views.empty()) throw ShapeError("union_views: empty view set");
    PointCloud out;
    for (const auto& view : views) {
        view.pose.validate();
        PointCloud local = std::holds_alternative<DepthImage>(view.data) ? backproject(std::get<DepthImage>(view.data))
                                                                         : std::get<PointCloud>(view.data);
        for (const auto& p : local.points) out.points.push_back(view.pose.apply(p));
    }
    return out;
}

VoxelGrid voxelize(const PointCloud& cloud, const Vec3& origin, double voxel_size,
                   const std::array<std::size_t, 3>& dims) {
    if (!(voxel_size > 0)) throw ConfigError("voxel size must be positive");
    VoxelGrid g;
    g.origin = origin;
    g.voxel_size = voxel_size;
    g.dims = dims;
    for (const auto& p : cloud.points) {
        VoxelIndex idx;
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
            const double f = std::floor((p[a] - origin[a]) / voxel_size);
            if (!(f >= 0 && f < static_cast<double>(dims[a]))) {
                inside = false;
                break;
            }
            idx[a] = static_cast<std::int64_t>(f);
        }
        if (inside) g.occupied.insert(idx);
    }
    return g;
}

PointCloud resample(const PointCloud& cloud, std::size_t n, std::uint64_t seed) {
    if (n == 0) throw ConfigError("resample: target size must be positive");
    if (cloud.empty()) throw ShapeError("resample: empty point cloud");
    auto eng = rng::stream(seed, "resample", 0);
    const std::size_t m = cloud.size();
    PointCloud out;
    out.points.reserve(n);
    if (m >= n) {
        std::vector<std::size_t> idx(m);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        for (std::size_t i = 0; i < n; ++i) {
            std::swap(idx[i], idx[i + rng::below(eng, m - i)]);
            out.points.push_back(cloud.points[idx[i]]);
        }
    } else {
        out.points = cloud.points;
        for (std::size_t i = m; i < n; ++i) out.points.push_back(cloud.points[rng::below(eng, m)]);
    }
    return out;
}

PointCloud transform(const PointCloud& cloud, const RigidTransform& pose) {
    pose.validate();
    PointCloud out;
    out.points.reserve(cloud.size());
    for (const auto& p : cloud.points) out.points.push_back(pose.apply(p));
    return out;
}

Bounds bounding_box(const PointCloud& cloud) {
    if (cloud.empty()) throw ShapeError("bounding_box: empty point cloud");
    Bounds b{cloud.points[0], cloud.points[0]};
    for (const auto& p : cloud.points) {
        b.min = b.min.cwiseMin(p);
        b.max = b.max.cwiseMax(p);
    }
    return b;
}

}  // namespace rimr::geometry
