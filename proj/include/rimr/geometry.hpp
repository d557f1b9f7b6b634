#pragma once

// Point clouds, depth images and the conversions between them.
//
// Frames: world coordinates are meters with z up. A sensor frame has x right,
// y forward (boresight) and z up. The matching pinhole camera frame has x
// right, y down and z forward, so camera = (x_s, -z_s, y_s).

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <set>
#include <variant>
#include <vector>

namespace rimr::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static RigidTransform identity() { return {}; }
    // Rotation about +z by `radians`, then translation.
    static RigidTransform yaw(double radians, const Vec3& translation = Vec3::Zero());

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
    RigidTransform inverse() const;
    // (this * other).apply(p) == this->apply(other.apply(p))
    RigidTransform operator*(const RigidTransform& other) const;

    // Throws ConfigError unless the rotation is orthonormal with det +1 (1e-6).
    void validate() const;
    std::array<float, 12> to_floats() const;
    static RigidTransform from_floats(const std::array<float, 12>& v);
};

// World -> sensor transform for a sensor at `eye` looking at `target`, with
// world +z as the up hint.
RigidTransform sensor_look_at(const Vec3& eye, const Vec3& target);
// Camera pose sharing the sensor's origin and boresight.
RigidTransform camera_from_sensor(const RigidTransform& world_to_sensor);

struct PointCloud {
    std::vector<Vec3> points;

    std::size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

struct CameraModel {
    double focal = 128;  // pixels
    double cx = 64, cy = 64;
    std::size_t width = 128, height = 128;
    RigidTransform pose;  // world -> camera

    void validate() const;
    Vec3 position() const;
    Vec3 forward() const;
};

struct DepthImage {
    std::size_t width = 0, height = 0;
    std::vector<double> depth;  // row-major, 0 = no return
    CameraModel camera;

    double at(std::size_t u, std::size_t v) const { return depth[v * width + u]; }
    double& at(std::size_t u, std::size_t v) { return depth[v * width + u]; }
};

using VoxelIndex = std::array<std::int64_t, 3>;

struct VoxelGrid {
    Vec3 origin = Vec3::Zero();
    double voxel_size = 1;
    std::array<std::size_t, 3> dims{0, 0, 0};
    std::set<VoxelIndex> occupied;  // ordered for deterministic iteration

    bool same_lattice(const VoxelGrid& other) const;
    Vec3 center(const VoxelIndex& idx) const;
};

struct View {
    std::variant<DepthImage, PointCloud> data;
    RigidTransform pose;  // local -> world, applied after back-projection
};

using ViewSet = std::vector<View>;

enum class ShapeKind { Box, LBox, CarLike };

const char* to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& s);

struct SurfaceSample {
    PointCloud cloud;
    std::vector<Vec3> normals;  // outward unit normal per point
};

// Uniform random samples of the boundary of a solid centred at the origin;
// size is the (x, y, z) extent. Point count = round(density * surface area).
SurfaceSample sample_surface(ShapeKind kind, const Vec3& size, double surface_density, std::uint64_t seed);
PointCloud generate_shape(ShapeKind kind, const Vec3& size, double surface_density, std::uint64_t seed);
double surface_area(ShapeKind kind, const Vec3& size);

// One-pixel point splats with a z-buffer. Points behind the camera are skipped.
DepthImage render_depth(const PointCloud& cloud, const CameraModel& cam);
PointCloud backproject(const DepthImage& img, double min_depth = 0.0);
PointCloud union_views(const ViewSet& views);

// floor((p - origin) / voxel_size); points outside dims are dropped.
VoxelGrid voxelize(const PointCloud& cloud, const Vec3& origin, double voxel_size,
                   const std::array<std::size_t, 3>& dims);

// Subset without replacement when the cloud has at least n points; otherwise
// every point once plus uniform draws with replacement up to n.
PointCloud resample(const PointCloud& cloud, std::size_t n, std::uint64_t seed);
PointCloud transform(const PointCloud& cloud, const RigidTransform& pose);

struct Bounds {
    Vec3 min = Vec3::Zero(), max = Vec3::Zero();
};
Bounds bounding_box(const PointCloud& cloud);

}  // namespace rimr::geometry
