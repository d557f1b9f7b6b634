#include "rimr/stage2.hpp"

#include <algorithm>
#include <set>

#include "rimr/error.hpp"
#include "rimr/keyvalue.hpp"
#include "rimr/metrics.hpp"

namespace rimr::stage2 {

namespace {

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("stage2 config: " + msg);
}

template <class T>
void check_cloud_tensor(const Tensor<T>& t, std::size_t count, const char* who) {
    if (t.rank() != 3 || t.dim(2) != 3 || t.dim(0) == 0 || t.dim(1) != count) {
        throw ShapeError(std::string(who) + ": expected [B," + std::to_string(count) + ",3], got " +
                         tensor::to_string(t.shape()));
    }
}

// Per-sample bounding-box midpoint of a [B,k,3] tensor as a constant [B,1,3]
// tensor. Unlike the centroid it ignores duplicated points.
template <class T>
Tensor<T> centres(const Tensor<T>& pts) {
    const std::size_t B = pts.dim(0), k = pts.dim(1);
    std::vector<T> c(B * 3);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t a = 0; a < 3; ++a) {
            T lo = pts[b * k * 3 + a], hi = lo;
            for (std::size_t i = 1; i < k; ++i) {
                lo = std::min(lo, pts[(b * k + i) * 3 + a]);
                hi = std::max(hi, pts[(b * k + i) * 3 + a]);
            }
            c[b * 3 + a] = (lo + hi) / T(2);
        }
    return Tensor<T>::from({B, 1, 3}, std::move(c));
}

template <class T>
Tensor<T> shift(const Tensor<T>& pts, const Tensor<T>& centre, bool subtract) {
    const auto tiled = tensor::tile(centre, 1, pts.dim(1));
    return subtract ? tensor::sub(pts, tiled) : tensor::add(pts, tiled);
}

template <class T>
Tensor<T> shared_mlp(const std::vector<tensor::Linear<T>>& layers, const Tensor<T>& rows) {
    Tensor<T> h = rows;
    for (const auto& layer : layers) h = tensor::relu(layer(h));
    return h;
}

}  // namespace

// ---- config -------------------------------------------------------------

void Stage2Config::validate() const {
    require(input_points > 0 && output_points > 0, "point counts must be positive");
    require(!block1.empty() && !block2.empty() && !decoder.empty(), "every network part needs at least one layer");
    for (const auto* v : {&block1, &block2, &decoder})
        for (auto c : *v) require(c > 0, "layer widths must be positive");
    require(discriminator_hidden > 0, "discriminator_hidden must be positive");
    require(leaky_slope >= 0 && leaky_slope < 1, "leaky_slope must be in [0, 1)");
}

std::string Stage2Config::to_key_values() const {
    kv::Map m;
    m["input_points"] = std::to_string(input_points);
    m["output_points"] = std::to_string(output_points);
    m["block1"] = kv::format_list(block1);
    m["block2"] = kv::format_list(block2);
    m["decoder"] = kv::format_list(decoder);
    m["discriminator_hidden"] = std::to_string(discriminator_hidden);
    m["leaky_slope"] = kv::format_double(leaky_slope);
    m["resample_seed"] = std::to_string(resample_seed);
    std::string s;
    for (const auto& [k, v] : m) s += k + "=" + v + "\n";
    return s;
}

Stage2Config Stage2Config::from_key_values(const std::string& text) {
    const auto m = kv::parse(text, "stage2 config");
    static const std::set<std::string> known{"input_points", "output_points", "block1",      "block2",
                                             "decoder",      "discriminator_hidden", "leaky_slope", "resample_seed"};
    for (const auto& [k, v] : m)
        if (!known.contains(k)) throw ConfigError("stage2 config: unknown key '" + k + "'");
    Stage2Config c;
    c.input_points = kv::get_uint(m, "input_points", c.input_points);
    c.output_points = kv::get_uint(m, "output_points", c.output_points);
    c.block1 = kv::get_uint_list(m, "block1", c.block1);
    c.block2 = kv::get_uint_list(m, "block2", c.block2);
    c.decoder = kv::get_uint_list(m, "decoder", c.decoder);
    c.discriminator_hidden = kv::get_uint(m, "discriminator_hidden", c.discriminator_hidden);
    c.leaky_slope = kv::get_double(m, "leaky_slope", c.leaky_slope);
    c.resample_seed = kv::get_uint(m, "resample_seed", c.resample_seed);
    c.validate();
    return c;
}

Stage2Config Stage2Config::tiny() {
    Stage2Config c;
    c.input_points = 8;
    c.output_points = 8;
    c.block1 = {4, 4};
    c.block2 = {4, 4};
    c.decoder = {4, 4};
    c.discriminator_hidden = 4;
    return c;
}

// ---- encoder ------------------------------------------------------------

template <class T>
PointEncoder<T>::PointEncoder(ParameterStore<T>& store, const std::string& name, const Stage2Config& cfg,
                              rng::Engine& eng) {
    std::size_t in = 3;
    for (std::size_t i = 0; i < cfg.block1.size(); ++i) {
        mlp1_.emplace_back(store, name + ".block1.fc" + std::to_string(i + 1), in, cfg.block1[i], eng);
        in = cfg.block1[i];
    }
    in = 2 * cfg.block1.back();
    for (std::size_t i = 0; i < cfg.block2.size(); ++i) {
        mlp2_.emplace_back(store, name + ".block2.fc" + std::to_string(i + 1), in, cfg.block2[i], eng);
        in = cfg.block2[i];
    }
}

template <class T>
Tensor<T> PointEncoder<T>::operator()(const Tensor<T>& points) const {
    if (points.rank() != 3 || points.dim(2) != 3 || points.dim(1) == 0) {
        throw ShapeError("point encoder: expected [B,k,3], got " + tensor::to_string(points.shape()));
    }
    const std::size_t B = points.dim(0), k = points.dim(1);
    const auto f = shared_mlp(mlp1_, tensor::reshape(points, {B * k, 3}));
    const std::size_t c1 = f.dim(1);
    const auto f3 = tensor::reshape(f, {B, k, c1});
    const auto g = tensor::reduce_topk_max(f3, 1, 1);  // [B,1,c1]
    const auto joined = tensor::concat<T>({f3, tensor::tile(g, 1, k)}, 2);
    const auto h = shared_mlp(mlp2_, tensor::reshape(joined, {B * k, 2 * c1}));
    const std::size_t c2 = h.dim(1);
    return tensor::reshape(tensor::reduce_topk_max(tensor::reshape(h, {B, k, c2}), 1, 1), {B, c2});
}

// ---- generator ----------------------------------------------------------

template <class T>
Stage2Generator<T>::Stage2Generator(const Stage2Config& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    auto eng = rng::stream(seed, "stage2-generator");
    encoder_ = PointEncoder<T>(store_, "g.enc", cfg_, eng);
    std::size_t in = cfg_.feature_width();
    for (std::size_t i = 0; i < cfg_.decoder.size(); ++i) {
        decoder_.emplace_back(store_, "g.dec.fc" + std::to_string(i + 1), in, cfg_.decoder[i], eng);
        in = cfg_.decoder[i];
    }
    decoder_.emplace_back(store_, "g.dec.out", in, 3 * cfg_.output_points, eng);
}

template <class T>
Tensor<T> Stage2Generator<T>::encode(const Tensor<T>& coarse) const {
    check_cloud_tensor(coarse, cfg_.input_points, "stage2 encode");
    return encoder_(shift(coarse, centres(coarse), true));
}

template <class T>
Tensor<T> Stage2Generator<T>::operator()(const Tensor<T>& coarse) const {
    check_cloud_tensor(coarse, cfg_.input_points, "stage2 generator");
    const auto centre = centres(coarse);
    Tensor<T> h = encoder_(shift(coarse, centre, true));
    for (std::size_t i = 0; i + 1 < decoder_.size(); ++i) h = tensor::relu(decoder_[i](h));
    h = tensor::reshape(decoder_.back()(h), {coarse.dim(0), cfg_.output_points, 3});
    return shift(h, centre, false);
}

// ---- discriminator ------------------------------------------------------

template <class T>
Stage2Discriminator<T>::Stage2Discriminator(const Stage2Config& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    auto eng = rng::stream(seed, "stage2-discriminator");
    coarse_stream_ = PointEncoder<T>(store_, "d.coarse", cfg_, eng);
    candidate_stream_ = PointEncoder<T>(store_, "d.candidate", cfg_, eng);
    hidden_ = tensor::Linear<T>(store_, "d.fc1", 2 * cfg_.feature_width(), cfg_.discriminator_hidden, eng);
    score_ = tensor::Linear<T>(store_, "d.fc2", cfg_.discriminator_hidden, 1, eng);
}

template <class T>
Tensor<T> Stage2Discriminator<T>::operator()(const Tensor<T>& coarse, const Tensor<T>& candidate) const {
    check_cloud_tensor(coarse, cfg_.input_points, "stage2 discriminator (coarse)");
    check_cloud_tensor(candidate, cfg_.output_points, "stage2 discriminator (candidate)");
    if (candidate.dim(0) != coarse.dim(0)) throw ShapeError("stage2 discriminator: batch sizes differ");
    const auto centre = centres(coarse);
    const auto a = coarse_stream_(shift(coarse, centre, true));
    const auto b = candidate_stream_(shift(candidate, centre, true));
    const auto h = tensor::leaky_relu(hidden_(tensor::concat<T>({a, b}, 1)), static_cast<T>(cfg_.leaky_slope));
    return tensor::sigmoid(score_(h));
}

template <class T>
Stage2Model<T>::Stage2Model(const Stage2Config& cfg, std::uint64_t seed)
    : config(cfg), generator(cfg, seed), discriminator(cfg, seed) {}

// ---- losses -------------------------------------------------------------

template <class T>
Stage2GLoss<T> stage2_g_loss_terms(const Tensor<T>& d_fake, const Tensor<T>& fake, const std::vector<PointCloud>& truths,
                                   const Stage2LossWeights& w) {
    if (w.lambda_cf < 0 || w.lambda_iou < 0) throw ConfigError("stage2 loss weights must be non-negative");
    Stage2GLoss<T> out;
    out.gan = w.adversarial ? tensor::mse(d_fake, Tensor<T>::full(d_fake.shape(), T(1))) : Tensor<T>::scalar(T(0));
    out.chamfer = metrics::chamfer_loss(fake, truths);
    Tensor<T> total = tensor::add(out.gan, tensor::scale(out.chamfer, static_cast<T>(w.lambda_cf)));
    if (w.use_iou) {
        out.iou = metrics::iou_loss(fake, truths, w.voxel_size, w.iou_value);
        total = tensor::add(total, tensor::scale(out.iou, static_cast<T>(w.lambda_iou)));
    } else {
        out.iou = metrics::iou_loss(fake.detach(), truths, w.voxel_size, w.iou_value);
    }
    out.total = total;
    return out;
}

template <class T>
Stage2GLoss<T> stage2_g_loss(Stage2Model<T>& model, const Tensor<T>& coarse, const Tensor<T>& fake,
                             const std::vector<PointCloud>& truths, const Stage2LossWeights& w) {
    Tensor<T> d_fake;
    if (w.adversarial) {
        tensor::FreezeGuard<T> frozen(model.discriminator.params());
        d_fake = model.discriminator(coarse, fake);
    }
    return stage2_g_loss_terms(d_fake, fake, truths, w);
}

template <class T>
Tensor<T> stage2_d_loss_terms(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
    const auto real_term = tensor::mse(d_real, Tensor<T>::full(d_real.shape(), T(1)));
    const auto fake_term = tensor::mse(d_fake, Tensor<T>::zeros(d_fake.shape()));
    return tensor::scale(tensor::add(real_term, fake_term), T(0.5));
}

template <class T>
Tensor<T> stage2_d_loss(Stage2Model<T>& model, const Tensor<T>& coarse, const Tensor<T>& fake, const Tensor<T>& real) {
    return stage2_d_loss_terms(model.discriminator(coarse, real), model.discriminator(coarse, fake.detach()));
}

// ---- conversions --------------------------------------------------------

PointCloud canonical_resample(const PointCloud& cloud, std::size_t count, std::uint64_t seed) {
    if (cloud.empty()) throw ShapeError("stage2: empty point cloud");
    PointCloud sorted = cloud;
    std::sort(sorted.points.begin(), sorted.points.end(), [](const geometry::Vec3& a, const geometry::Vec3& b) {
        return std::lexicographical_compare(a.data(), a.data() + 3, b.data(), b.data() + 3);
    });
    return geometry::resample(sorted, count, seed);
}

template <class T>
Tensor<T> clouds_to_tensor(std::span<const PointCloud> clouds, std::size_t count, std::uint64_t seed) {
    std::vector<T> data;
    data.reserve(clouds.size() * count * 3);
    for (const auto& c : clouds) {
        const auto r = canonical_resample(c, count, seed);
        for (const auto& p : r.points)
            for (int a = 0; a < 3; ++a) data.push_back(static_cast<T>(p[a]));
    }
    return Tensor<T>::from({clouds.size(), count, 3}, std::move(data));
}

template <class T>
PointCloud tensor_to_cloud(const Tensor<T>& points, std::size_t index) {
    if (points.rank() != 3 || points.dim(2) != 3 || index >= points.dim(0)) {
        throw ShapeError("tensor_to_cloud: bad shape " + tensor::to_string(points.shape()) + " or index");
    }
    const std::size_t k = points.dim(1);
    PointCloud out;
    out.points.reserve(k);
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t o = (index * k + i) * 3;
        out.points.emplace_back(points[o], points[o + 1], points[o + 2]);
    }
    return out;
}

PointCloud g_p2p_forward(const PointCloud& coarse, const Stage2Generator<float>& generator) {
    const auto& cfg = generator.config();
    const auto x = clouds_to_tensor<float>(std::span(&coarse, 1), cfg.input_points, cfg.resample_seed);
    return tensor_to_cloud(generator(x), 0);
}

float d_p2p_forward(const PointCloud& coarse, const PointCloud& candidate, const Stage2Discriminator<float>& d,
                    const Stage2Config& cfg) {
    const auto a = clouds_to_tensor<float>(std::span(&coarse, 1), cfg.input_points, cfg.resample_seed);
    const auto b = clouds_to_tensor<float>(std::span(&candidate, 1), cfg.output_points, cfg.resample_seed);
    return d(a, b).item();
}

#define RIMR_STAGE2_INSTANTIATE(T)                                                                                 \
    template class PointEncoder<T>;                                                                                \
    template class Stage2Generator<T>;                                                                             \
    template class Stage2Discriminator<T>;                                                                         \
    template struct Stage2Model<T>;                                                                                \
    template Stage2GLoss<T> stage2_g_loss_terms(const Tensor<T>&, const Tensor<T>&, const std::vector<PointCloud>&, \
                                                const Stage2LossWeights&);                                         \
    template Stage2GLoss<T> stage2_g_loss(Stage2Model<T>&, const Tensor<T>&, const Tensor<T>&,                     \
                                          const std::vector<PointCloud>&, const Stage2LossWeights&);               \
    template Tensor<T> stage2_d_loss_terms(const Tensor<T>&, const Tensor<T>&);                                    \
    template Tensor<T> stage2_d_loss(Stage2Model<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);       \
    template Tensor<T> clouds_to_tensor(std::span<const PointCloud>, std::size_t, std::uint64_t);                  \
    template PointCloud tensor_to_cloud(const Tensor<T>&, std::size_t);

RIMR_STAGE2_INSTANTIATE(float)
RIMR_STAGE2_INSTANTIATE(double)

}  // namespace rimr::stage2
