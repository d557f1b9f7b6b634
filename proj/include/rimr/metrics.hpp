#pragma once

// Point-cloud distances, voxel IoU, F-score and the object-level geometric
// error suite. Nearest neighbours are brute force with ties going to the
// lowest index.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "rimr/geometry.hpp"
#include "rimr/tensor.hpp"

namespace rimr::metrics {

using geometry::PointCloud;
using geometry::Vec3;
using geometry::VoxelGrid;
using tensor::Tensor;

struct Neighbor {
    std::size_t index;
    double distance;
};

// For every query point, the closest reference point.
std::vector<Neighbor> nearest_neighbors(const std::vector<Vec3>& queries, const std::vector<Vec3>& refs);

double chamfer(const PointCloud& a, const PointCloud& b);

// pred is [n, 3] or [B, n, 3]; truths holds one cloud per batch entry. The
// result is the batch mean of chamfer(pred_b, truth_b).
template <class T>
Tensor<T> chamfer_loss(const Tensor<T>& pred, const std::vector<PointCloud>& truths);

double voxel_iou(const VoxelGrid& a, const VoxelGrid& b, double eps = 1e-6);

struct GridSpec {
    Vec3 origin;
    double voxel_size;
    std::array<std::size_t, 3> dims;
};

// Cubic lattice covering the joint bounding box of both clouds, padded by one
// voxel on every side.
GridSpec iou_grid(const PointCloud& a, const PointCloud& b, double voxel_size);

// 1 - voxel_iou on the joint grid.
double iou_loss_value(const PointCloud& pred, const PointCloud& truth, double voxel_size);

// Mean over truth-occupied voxel centres of the distance to the nearest pred
// point. The voxels come from a lattice fitted to the truth cloud alone.
double iou_surrogate_value(const PointCloud& pred, const PointCloud& truth, double voxel_size);

enum class IouValue {
    Hard,       // forward value is 1 - IoU
    Surrogate,  // forward value is the surrogate itself
};

// Batch mean of the IoU loss. The backward pass always uses the surrogate's
// gradient; `value` only selects what the forward pass reports.
template <class T>
Tensor<T> iou_loss(const Tensor<T>& pred, const std::vector<PointCloud>& truths, double voxel_size,
                   IouValue value = IouValue::Hard);

double fscore(const PointCloud& pred, const PointCloud& truth, double tau);

struct MetricReport {
    std::optional<double> chamfer, iou, fscore;
    std::optional<double> ranging_error_m, length_error_m, width_error_m, height_error_m, orientation_error_deg;
    std::optional<double> pct_fictitious, pct_surface_missed;

    std::string to_key_values() const;
    static MetricReport from_key_values(const std::string& text);
};

struct BoxEstimate {
    double length, width, height;
    std::optional<double> heading_deg;  // dominant xy axis in [0, 180)
};

BoxEstimate oriented_box(const PointCloud& cloud);

MetricReport table1_metrics(const PointCloud& pred, const PointCloud& truth, double tau,
                            const Vec3& sensor_origin = Vec3::Zero());

// Chamfer, IoU and F-score plus the table-1 suite.
MetricReport full_report(const PointCloud& pred, const PointCloud& truth, double voxel_size, double tau,
                         const Vec3& sensor_origin = Vec3::Zero());

struct Summary {
    std::size_t count = 0;
    double mean = 0, std = 0, median = 0;
};

struct Aggregate {
    std::vector<std::pair<std::string, Summary>> fields;

    const Summary* find(const std::string& name) const;
    std::string to_key_values() const;
};

// Population statistics over the reports that carry each field.
Aggregate aggregate(const std::vector<MetricReport>& reports);

}  // namespace rimr::metrics
