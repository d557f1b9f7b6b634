#include "rimr/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "rimr/error.hpp"
#include "rimr/keyvalue.hpp"

namespace rimr::metrics {

namespace {

void require_nonempty(const PointCloud& c, const char* what) {
    if (c.empty()) throw ShapeError(std::string(what) + ": empty point cloud");
}

double mean_nn_distance(const std::vector<Vec3>& q, const std::vector<Vec3>& r) {
    double s = 0;
    for (const auto& n : nearest_neighbors(q, r)) s += n.distance;
    return s / static_cast<double>(q.size());
}

double median(std::vector<double> v) {
    const std::size_t n = v.size();
    std::sort(v.begin(), v.end());
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double fraction_farther(const std::vector<Vec3>& q, const std::vector<Vec3>& r, double tau) {
    std::size_t far = 0;
    for (const auto& n : nearest_neighbors(q, r)) far += n.distance > tau;
    return static_cast<double>(far) / static_cast<double>(q.size());
}

// Splits a [n,3] or [B,n,3] tensor into per-sample point lists.
template <class T>
std::vector<std::vector<Vec3>> unpack(const Tensor<T>& pred, std::size_t batch_expected, const char* what) {
    std::size_t B = 1, n = 0;
    if (pred.rank() == 2 && pred.dim(1) == 3) {
        n = pred.dim(0);
    } else if (pred.rank() == 3 && pred.dim(2) == 3) {
        B = pred.dim(0);
        n = pred.dim(1);
    } else {
        throw ShapeError(std::string(what) + ": prediction must be [n,3] or [B,n,3], got " +
                         tensor::to_string(pred.shape()));
    }
    if (B != batch_expected) {
        throw ShapeError(std::string(what) + ": " + std::to_string(B) + " predictions but " +
                         std::to_string(batch_expected) + " ground-truth clouds");
    }
    if (n == 0) throw ShapeError(std::string(what) + ": empty prediction");
    std::vector<std::vector<Vec3>> out(B, std::vector<Vec3>(n));
    const auto d = pred.data();
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t o = (b * n + i) * 3;
            out[b][i] = Vec3(d[o], d[o + 1], d[o + 2]);
        }
    return out;
}

// Adds scale * (from - to) / |from - to| into g (no-op at zero distance).
template <class T>
void add_unit(tensor::Buffer<T>& g, std::size_t offset, const Vec3& from, const Vec3& to, double scale) {
    const Vec3 d = from - to;
    const double len = d.norm();
    if (len == 0) return;
    for (int k = 0; k < 3; ++k) g[offset + k] += static_cast<T>(scale * d[k] / len);
}

// Surrogate lattice: anchored to the ground truth alone so the centres do not
// move with the prediction.
std::vector<Vec3> occupied_centers(const PointCloud& truth, double voxel_size) {
    const GridSpec g = iou_grid(truth, truth, voxel_size);
    const auto grid = geometry::voxelize(truth, g.origin, g.voxel_size, g.dims);
    std::vector<Vec3> centers;
    centers.reserve(grid.occupied.size());
    for (const auto& idx : grid.occupied) centers.push_back(grid.center(idx));
    return centers;
}

}  // namespace

std::vector<Neighbor> nearest_neighbors(const std::vector<Vec3>& queries, const std::vector<Vec3>& refs) {
    if (refs.empty()) throw ShapeError("nearest_neighbors: empty reference set");
    std::vector<Neighbor> out(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) {
        const Vec3& q = queries[i];
        double best = std::numeric_limits<double>::infinity();
        std::size_t arg = 0;
        for (std::size_t j = 0; j < refs.size(); ++j) {
            const double d = (q - refs[j]).squaredNorm();
            if (d < best) {
                best = d;
                arg = j;
            }
        }
        out[i] = {arg, std::sqrt(best)};
    }
    return out;
}

double chamfer(const PointCloud& a, const PointCloud& b) {
    require_nonempty(a, "chamfer");
    require_nonempty(b, "chamfer");
    return mean_nn_distance(a.points, b.points) + mean_nn_distance(b.points, a.points);
}

template <class T>
Tensor<T> chamfer_loss(const Tensor<T>& pred, const std::vector<PointCloud>& truths) {
    auto samples = unpack(pred, truths.size(), "chamfer_loss");
    for (const auto& t : truths) require_nonempty(t, "chamfer_loss");
    const std::size_t B = samples.size(), n = samples[0].size();
    double total = 0;
    for (std::size_t b = 0; b < B; ++b) total += chamfer(PointCloud{samples[b]}, truths[b]);
    auto pi = pred.impl();
    return Tensor<T>::make_result(
        {1}, {static_cast<T>(total / static_cast<double>(B))}, {pred}, "chamfer_loss",
        [pi, samples = std::move(samples), truths, B, n](const tensor::TensorImpl<T>& o) {
            auto& g = pi->ensure_grad();
            const double k = static_cast<double>(o.grad[0]) / static_cast<double>(B);
            for (std::size_t b = 0; b < B; ++b) {
                const auto& p = samples[b];
                const auto& t = truths[b].points;
                const auto fwd = nearest_neighbors(p, t);
                for (std::size_t i = 0; i < n; ++i) {
                    add_unit(g, (b * n + i) * 3, p[i], t[fwd[i].index], k / static_cast<double>(n));
                }
                const auto bwd = nearest_neighbors(t, p);
                for (std::size_t j = 0; j < t.size(); ++j) {
                    const std::size_t i = bwd[j].index;
                    add_unit(g, (b * n + i) * 3, p[i], t[j], k / static_cast<double>(t.size()));
                }
            }
        });
}

double voxel_iou(const VoxelGrid& a, const VoxelGrid& b, double eps) {
    if (!a.same_lattice(b)) throw ConfigError("voxel_iou: grids differ in origin, voxel size or dims");
    std::size_t inter = 0;
    for (const auto& idx : a.occupied) inter += b.occupied.count(idx);
    const std::size_t uni = a.occupied.size() + b.occupied.size() - inter;
    return static_cast<double>(inter) / (static_cast<double>(uni) + eps);
}

GridSpec iou_grid(const PointCloud& a, const PointCloud& b, double voxel_size) {
    if (!(voxel_size > 0)) throw ConfigError("iou grid: voxel size must be positive");
    require_nonempty(a, "iou grid");
    require_nonempty(b, "iou grid");
    const auto ba = geometry::bounding_box(a), bb = geometry::bounding_box(b);
    const Vec3 lo = ba.min.cwiseMin(bb.min), hi = ba.max.cwiseMax(bb.max);
    GridSpec g;
    g.voxel_size = voxel_size;
    g.origin = lo - Vec3::Constant(voxel_size);
    for (int k = 0; k < 3; ++k) {
        g.dims[k] = static_cast<std::size_t>(std::floor((hi[k] - g.origin[k]) / voxel_size)) + 2;
    }
    return g;
}

double iou_loss_value(const PointCloud& pred, const PointCloud& truth, double voxel_size) {
    const auto g = iou_grid(pred, truth, voxel_size);
    return 1.0 - voxel_iou(geometry::voxelize(pred, g.origin, g.voxel_size, g.dims),
                           geometry::voxelize(truth, g.origin, g.voxel_size, g.dims));
}

double iou_surrogate_value(const PointCloud& pred, const PointCloud& truth, double voxel_size) {
    const auto centers = occupied_centers(truth, voxel_size);
    return mean_nn_distance(centers, pred.points);
}

template <class T>
Tensor<T> iou_loss(const Tensor<T>& pred, const std::vector<PointCloud>& truths, double voxel_size, IouValue value) {
    auto samples = unpack(pred, truths.size(), "iou_loss");
    const std::size_t B = samples.size(), n = samples[0].size();
    std::vector<std::vector<Vec3>> centers(B);
    double total = 0;
    for (std::size_t b = 0; b < B; ++b) {
        const PointCloud p{samples[b]};
        centers[b] = occupied_centers(truths[b], voxel_size);
        total += value == IouValue::Hard ? iou_loss_value(p, truths[b], voxel_size)
                                         : mean_nn_distance(centers[b], samples[b]);
    }
    auto pi = pred.impl();
    return Tensor<T>::make_result(
        {1}, {static_cast<T>(total / static_cast<double>(B))}, {pred}, "iou_loss",
        [pi, samples = std::move(samples), centers = std::move(centers), B, n](const tensor::TensorImpl<T>& o) {
            auto& g = pi->ensure_grad();
            const double k = static_cast<double>(o.grad[0]) / static_cast<double>(B);
            for (std::size_t b = 0; b < B; ++b) {
                const auto& c = centers[b];
                const auto nn = nearest_neighbors(c, samples[b]);
                for (std::size_t j = 0; j < c.size(); ++j) {
                    const std::size_t i = nn[j].index;
                    add_unit(g, (b * n + i) * 3, samples[b][i], c[j], k / static_cast<double>(c.size()));
                }
            }
        });
}

double fscore(const PointCloud& pred, const PointCloud& truth, double tau) {
    require_nonempty(pred, "fscore");
    require_nonempty(truth, "fscore");
    if (!(tau > 0)) throw ConfigError("fscore: tau must be positive");
    const double p = 1 - fraction_farther(pred.points, truth.points, tau);
    const double r = 1 - fraction_farther(truth.points, pred.points, tau);
    return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
}

BoxEstimate oriented_box(const PointCloud& cloud) {
    require_nonempty(cloud, "oriented_box");
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& p : cloud.points) mean += p.head<2>();
    mean /= static_cast<double>(cloud.size());
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& p : cloud.points) {
        const Eigen::Vector2d d = p.head<2>() - mean;
        cov += d * d.transpose();
    }
    cov /= static_cast<double>(cloud.size());
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    const Eigen::Vector2d major = es.eigenvectors().col(1), minor = es.eigenvectors().col(0);
    const double l_major = es.eigenvalues()(1), l_minor = es.eigenvalues()(0);

    BoxEstimate box{};
    const bool unique = l_major > 0 && (l_major - l_minor) > 1e-9 * l_major;
    const Eigen::Vector2d ax = unique ? major : Eigen::Vector2d::UnitX();
    const Eigen::Vector2d ay = unique ? minor : Eigen::Vector2d::UnitY();
    double lo0 = INFINITY, hi0 = -INFINITY, lo1 = INFINITY, hi1 = -INFINITY, lo2 = INFINITY, hi2 = -INFINITY;
    for (const auto& p : cloud.points) {
        const double a = ax.dot(p.head<2>()), b = ay.dot(p.head<2>());
        lo0 = std::min(lo0, a), hi0 = std::max(hi0, a);
        lo1 = std::min(lo1, b), hi1 = std::max(hi1, b);
        lo2 = std::min(lo2, p.z()), hi2 = std::max(hi2, p.z());
    }
    box.length = hi0 - lo0;
    box.width = hi1 - lo1;
    box.height = hi2 - lo2;
    if (unique) {
        double deg = std::atan2(major.y(), major.x()) * 180 / M_PI;
        deg = std::fmod(deg + 360, 180);
        box.heading_deg = deg;
    }
    return box;
}

MetricReport table1_metrics(const PointCloud& pred, const PointCloud& truth, double tau, const Vec3& sensor_origin) {
    require_nonempty(pred, "table1_metrics");
    require_nonempty(truth, "table1_metrics");
    if (!(tau > 0)) throw ConfigError("table1_metrics: tau must be positive");
    auto ranges = [&](const PointCloud& c) {
        std::vector<double> r;
        r.reserve(c.size());
        for (const auto& p : c.points) r.push_back((p - sensor_origin).norm());
        return r;
    };
    MetricReport m;
    m.ranging_error_m = std::abs(median(ranges(pred)) - median(ranges(truth)));
    const auto bp = oriented_box(pred), bt = oriented_box(truth);
    m.length_error_m = std::abs(bp.length - bt.length);
    m.width_error_m = std::abs(bp.width - bt.width);
    m.height_error_m = std::abs(bp.height - bt.height);
    if (bp.heading_deg && bt.heading_deg) {
        double d = std::fmod(std::abs(*bp.heading_deg - *bt.heading_deg), 180.0);
        if (d > 90) d = 180 - d;
        m.orientation_error_deg = d;
    }
    m.pct_fictitious = 100 * fraction_farther(pred.points, truth.points, tau);
    m.pct_surface_missed = 100 * fraction_farther(truth.points, pred.points, tau);
    return m;
}

MetricReport full_report(const PointCloud& pred, const PointCloud& truth, double voxel_size, double tau,
                         const Vec3& sensor_origin) {
    MetricReport m = table1_metrics(pred, truth, tau, sensor_origin);
    m.chamfer = chamfer(pred, truth);
    m.iou = 1.0 - iou_loss_value(pred, truth, voxel_size);
    m.fscore = fscore(pred, truth, tau);
    return m;
}

namespace {

template <class Fn>
void for_each_field(MetricReport& m, Fn&& fn) {
    fn("chamfer", m.chamfer);
    fn("iou", m.iou);
    fn("fscore", m.fscore);
    fn("ranging_error_m", m.ranging_error_m);
    fn("length_error_m", m.length_error_m);
    fn("width_error_m", m.width_error_m);
    fn("height_error_m", m.height_error_m);
    fn("orientation_error_deg", m.orientation_error_deg);
    fn("pct_fictitious", m.pct_fictitious);
    fn("pct_surface_missed", m.pct_surface_missed);
}

}  // namespace

std::string MetricReport::to_key_values() const {
    std::ostringstream os;
    MetricReport copy = *this;
    for_each_field(copy, [&](const char* name, std::optional<double>& v) {
        if (v) os << name << '=' << kv::format_double(*v) << '\n';
    });
    return os.str();
}

MetricReport MetricReport::from_key_values(const std::string& text) {
    const auto map = kv::parse(text, "metric report");
    MetricReport m;
    std::size_t used = 0;
    for_each_field(m, [&](const char* name, std::optional<double>& v) {
        auto it = map.find(name);
        if (it != map.end()) {
            v = kv::to_double(name, it->second);
            ++used;
        }
    });
    if (used != map.size()) throw FormatError("metric report contains unknown keys");
    return m;
}

const Summary* Aggregate::find(const std::string& name) const {
    for (const auto& [n, s] : fields)
        if (n == name) return &s;
    return nullptr;
}

std::string Aggregate::to_key_values() const {
    std::ostringstream os;
    for (const auto& [name, s] : fields) {
        os << name << ".count=" << s.count << '\n'
           << name << ".mean=" << kv::format_double(s.mean) << '\n'
           << name << ".std=" << kv::format_double(s.std) << '\n'
           << name << ".median=" << kv::format_double(s.median) << '\n';
    }
    return os.str();
}

Aggregate aggregate(const std::vector<MetricReport>& reports) {
    Aggregate agg;
    MetricReport probe;
    for_each_field(probe, [&](const char* name, std::optional<double>&) {
        std::vector<double> values;
        for (auto r : reports) {
            for_each_field(r, [&](const char* n, std::optional<double>& v) {
                if (v && std::string(n) == name) values.push_back(*v);
            });
        }
        if (values.empty()) return;
        Summary s;
        s.count = values.size();
        for (double v : values) s.mean += v;
        s.mean /= static_cast<double>(values.size());
        for (double v : values) s.std += (v - s.mean) * (v - s.mean);
        s.std = std::sqrt(s.std / static_cast<double>(values.size()));
        s.median = median(values);
        agg.fields.emplace_back(name, s);
    });
    return agg;
}

template Tensor<float> chamfer_loss<float>(const Tensor<float>&, const std::vector<PointCloud>&);
template Tensor<double> chamfer_loss<double>(const Tensor<double>&, const std::vector<PointCloud>&);
template Tensor<float> iou_loss<float>(const Tensor<float>&, const std::vector<PointCloud>&, double, IouValue);
template Tensor<double> iou_loss<double>(const Tensor<double>&, const std::vector<PointCloud>&, double, IouValue);

}  // namespace rimr::metrics
