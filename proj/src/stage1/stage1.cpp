#include "rimr/stage1.hpp"

#include <algorithm>
#include <functional>
#include <set>

#include "rimr/error.hpp"
#include "rimr/keyvalue.hpp"

namespace rimr::stage1 {

using tensor::Dims2;
using tensor::Dims3;
using tensor::Shape;

namespace {

std::size_t pow2(std::size_t e) { return std::size_t{1} << e; }

void require(bool ok, const std::string& msg) {
    if (!ok) throw ConfigError("stage1 config: " + msg);
}

template <class T>
void check_maps(const Tensor<T>& maps, const Stage1Config& cfg, const char* who) {
    const auto& s = maps.shape();
    if (s.size() != 5 || s[1] != 1 || s[2] != cfg.input_dims[0] || s[3] != cfg.input_dims[1] ||
        s[4] != cfg.input_dims[2]) {
        throw ShapeError(std::string(who) + ": expected maps [N,1," + std::to_string(cfg.input_dims[0]) + "," +
                         std::to_string(cfg.input_dims[1]) + "," + std::to_string(cfg.input_dims[2]) + "], got " +
                         tensor::to_string(s));
    }
}

template <class T>
void check_depth(const Tensor<T>& depth, std::size_t batch, const Stage1Config& cfg, const char* who) {
    const auto& s = depth.shape();
    if (s.size() != 4 || s[0] != batch || s[1] != 1 || s[2] != cfg.output_size || s[3] != cfg.output_size) {
        throw ShapeError(std::string(who) + ": expected depth [" + std::to_string(batch) + ",1," +
                         std::to_string(cfg.output_size) + "," + std::to_string(cfg.output_size) + "], got " +
                         tensor::to_string(s));
    }
}

}  // namespace

// ---- config -------------------------------------------------------------

void Stage1Config::validate() const {
    const std::size_t enc = encoder_channels.size();
    require(enc >= 1 && enc < 16, "encoder needs between 1 and 15 layers");
    for (auto d : input_dims) require(d > 0 && d % pow2(enc) == 0, "input extents must be divisible by 2^encoder_layers");
    for (auto c : encoder_channels) require(c > 0, "encoder channels must be positive");
    require(latent > 0 && decoder_base_channels > 0, "latent and decoder base channels must be positive");
    const std::size_t dec = decoder_channels.size();
    require(dec >= 2, "decoder needs at least 2 layers");
    for (auto c : decoder_channels) require(c > 0, "decoder channels must be positive");
    require(decoder_channels.back() == 1, "last decoder layer must have 1 channel");
    require(upsample_layers <= dec && upsample_layers < 16, "more upsampling layers than decoder layers");
    require(output_size > 0 && output_size % pow2(upsample_layers) == 0,
            "output_size must be divisible by 2^upsample_layers");
    require(skip_layer >= std::max<std::size_t>(upsample_layers, 1) && skip_layer < dec,
            "skip_layer must be a full-resolution decoder layer before the last");
    require(skip_channels >= 1 && skip_channels <= input_dims[2], "skip_channels must be in [1, range extent]");
    const std::size_t img = image_encoder_channels.size();
    require(img >= 1 && image_downsample_layers <= img && image_downsample_layers < 16, "bad image encoder depth");
    for (auto c : image_encoder_channels) require(c > 0, "image encoder channels must be positive");
    require(output_size % pow2(image_downsample_layers) == 0, "output_size must be divisible by 2^image_downsample_layers");
    require(fusion_side > 0 && fusion_channels > 0, "fusion side and channels must be positive");
    require((encoder_features() + image_features()) % (fusion_side * fusion_side) == 0,
            "fused feature length must be divisible by fusion_side^2");
    require(!perceptual_channels.empty() && perceptual_channels.size() < 16, "perceptual extractor needs layers");
    require(output_size % pow2(perceptual_channels.size()) == 0, "output_size must be divisible by 2^perceptual_layers");
    for (auto c : perceptual_channels) require(c > 0, "perceptual channels must be positive");
    require(leaky_slope >= 0 && leaky_slope < 1, "leaky_slope must be in [0, 1)");
    require(max_range > 0, "max_range must be positive");
}

std::size_t Stage1Config::encoder_features() const {
    const std::size_t f = pow2(encoder_channels.size());
    return encoder_channels.back() * (input_dims[0] / f) * (input_dims[1] / f) * (input_dims[2] / f);
}

std::size_t Stage1Config::image_features() const {
    const std::size_t side = output_size / pow2(image_downsample_layers);
    return image_encoder_channels.back() * side * side;
}

std::string Stage1Config::to_key_values() const {
    kv::Map m;
    m["input_dims"] = kv::format_list({input_dims[0], input_dims[1], input_dims[2]});
    m["encoder_channels"] = kv::format_list(encoder_channels);
    m["latent"] = std::to_string(latent);
    m["decoder_base_channels"] = std::to_string(decoder_base_channels);
    m["decoder_channels"] = kv::format_list(decoder_channels);
    m["upsample_layers"] = std::to_string(upsample_layers);
    m["skip_layer"] = std::to_string(skip_layer);
    m["skip_channels"] = std::to_string(skip_channels);
    m["output_size"] = std::to_string(output_size);
    m["image_encoder_channels"] = kv::format_list(image_encoder_channels);
    m["image_downsample_layers"] = std::to_string(image_downsample_layers);
    m["fusion_side"] = std::to_string(fusion_side);
    m["fusion_channels"] = std::to_string(fusion_channels);
    m["perceptual_channels"] = kv::format_list(perceptual_channels);
    m["perceptual_seed"] = std::to_string(perceptual_seed);
    m["leaky_slope"] = kv::format_double(leaky_slope);
    m["max_range"] = kv::format_double(max_range);
    std::string s;
    for (const auto& [k, v] : m) s += k + "=" + v + "\n";
    return s;
}

Stage1Config Stage1Config::from_key_values(const std::string& text) {
    const auto m = kv::parse(text, "stage1 config");
    static const std::set<std::string> known{"input_dims", "encoder_channels", "latent", "decoder_base_channels",
                                             "decoder_channels", "upsample_layers", "skip_layer", "skip_channels",
                                             "output_size", "image_encoder_channels", "image_downsample_layers",
                                             "fusion_side", "fusion_channels", "perceptual_channels",
                                             "perceptual_seed", "leaky_slope", "max_range"};
    for (const auto& [k, v] : m) {
        if (!known.contains(k)) throw ConfigError("stage1 config: unknown key '" + k + "'");
    }
    Stage1Config c;
    const auto dims = kv::get_uint_list(m, "input_dims", {c.input_dims[0], c.input_dims[1], c.input_dims[2]});
    if (dims.size() != 3) throw ConfigError("stage1 config: input_dims needs 3 values");
    c.input_dims = {dims[0], dims[1], dims[2]};
    c.encoder_channels = kv::get_uint_list(m, "encoder_channels", c.encoder_channels);
    c.latent = kv::get_uint(m, "latent", c.latent);
    c.decoder_base_channels = kv::get_uint(m, "decoder_base_channels", c.decoder_base_channels);
    c.decoder_channels = kv::get_uint_list(m, "decoder_channels", c.decoder_channels);
    c.upsample_layers = kv::get_uint(m, "upsample_layers", c.upsample_layers);
    c.skip_layer = kv::get_uint(m, "skip_layer", c.skip_layer);
    c.skip_channels = kv::get_uint(m, "skip_channels", c.skip_channels);
    c.output_size = kv::get_uint(m, "output_size", c.output_size);
    c.image_encoder_channels = kv::get_uint_list(m, "image_encoder_channels", c.image_encoder_channels);
    c.image_downsample_layers = kv::get_uint(m, "image_downsample_layers", c.image_downsample_layers);
    c.fusion_side = kv::get_uint(m, "fusion_side", c.fusion_side);
    c.fusion_channels = kv::get_uint(m, "fusion_channels", c.fusion_channels);
    c.perceptual_channels = kv::get_uint_list(m, "perceptual_channels", c.perceptual_channels);
    c.perceptual_seed = kv::get_uint(m, "perceptual_seed", c.perceptual_seed);
    c.leaky_slope = kv::get_double(m, "leaky_slope", c.leaky_slope);
    c.max_range = kv::get_double(m, "max_range", c.max_range);
    c.validate();
    return c;
}

Stage1Config Stage1Config::tiny() {
    Stage1Config c;
    c.input_dims = {4, 4, 16};
    c.encoder_channels = {2, 3};
    c.latent = 6;
    c.decoder_base_channels = 4;
    c.decoder_channels = {3, 2, 2, 2, 1};
    c.upsample_layers = 2;
    c.skip_layer = 3;
    c.skip_channels = 8;
    c.output_size = 8;
    c.image_encoder_channels = {2, 3, 3};
    c.image_downsample_layers = 2;
    c.fusion_side = 2;
    c.fusion_channels = 2;
    c.perceptual_channels = {2, 3, 4};
    return c;
}

// ---- building blocks ----------------------------------------------------

template <class T>
RadarEncoder<T>::RadarEncoder(ParameterStore<T>& store, const std::string& name, const Stage1Config& cfg,
                              rng::Engine& eng)
    : slope_(static_cast<T>(cfg.leaky_slope)) {
    std::size_t in = 1;
    for (std::size_t i = 0; i < cfg.encoder_channels.size(); ++i) {
        const auto out = cfg.encoder_channels[i];
        const auto prefix = name + ".conv" + std::to_string(i + 1);
        convs_.emplace_back(store, prefix, in, out, Dims3{4, 4, 4}, Dims3{2, 2, 2}, Dims3{1, 1, 1}, eng);
        norms_.emplace_back(store, prefix + ".bn", out);
        in = out;
    }
}

template <class T>
Tensor<T> RadarEncoder<T>::operator()(const Tensor<T>& x, Mode mode) const {
    Tensor<T> h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) h = norms_[i](tensor::leaky_relu(convs_[i](h), slope_), mode);
    const std::size_t n = h.dim(0);
    return tensor::reshape(h, {n, h.numel() / n});
}

template <class T>
Tensor<T> normalize_maps(const Tensor<T>& maps) {
    if (maps.rank() != 5 || maps.dim(1) != 1) {
        throw ShapeError("normalize_maps: expected [N,1,D,H,W], got " + tensor::to_string(maps.shape()));
    }
    const std::size_t n = maps.dim(0);
    const std::size_t per = n ? maps.numel() / n : 0;
    std::vector<T> out(maps.storage().begin(), maps.storage().end());
    for (std::size_t b = 0; b < n; ++b) {
        auto first = out.begin() + static_cast<std::ptrdiff_t>(b * per);
        const T peak = *std::max_element(first, first + static_cast<std::ptrdiff_t>(per));
        if (peak > T(0)) std::for_each(first, first + static_cast<std::ptrdiff_t>(per), [peak](T& v) { v /= peak; });
    }
    return Tensor<T>::from(maps.shape(), std::move(out));
}

template <class T>
Tensor<T> skip_feature(const Tensor<T>& maps, std::size_t k, std::size_t side) {
    if (maps.rank() != 5 || maps.dim(1) != 1) {
        throw ShapeError("skip_feature: expected [N,1,D,H,W], got " + tensor::to_string(maps.shape()));
    }
    const std::size_t n = maps.dim(0), D = maps.dim(2), H = maps.dim(3), W = maps.dim(4);
    if (k == 0 || k > W) throw ShapeError("skip_feature: k must be in [1, range extent]");
    if (side == 0) throw ShapeError("skip_feature: side must be positive");
    const auto src = maps.data();
    std::vector<T> top(n * k * D * H);
    std::vector<T> cell(W);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t i = 0; i < D; ++i)
            for (std::size_t j = 0; j < H; ++j) {
                const T* p = src.data() + ((b * D + i) * H + j) * W;
                std::copy(p, p + W, cell.begin());
                std::partial_sort(cell.begin(), cell.begin() + static_cast<std::ptrdiff_t>(k), cell.end(),
                                  std::greater<T>());
                for (std::size_t c = 0; c < k; ++c) top[((b * k + c) * D + i) * H + j] = cell[c];
            }
    std::vector<T> out(n * k * side * side);
    for (std::size_t bc = 0; bc < n * k; ++bc)
        for (std::size_t a = 0; a < side; ++a)
            for (std::size_t c = 0; c < side; ++c)
                out[(bc * side + a) * side + c] = top[(bc * D + a * D / side) * H + c * H / side];
    return Tensor<T>::from({n, k, side, side}, std::move(out));
}

Tensor<float> skip_feature(const radar::IntensityMap& map, std::size_t k, std::size_t side) {
    if (map.frame != radar::Frame::Cartesian) throw ConfigError("skip_feature: map must be in the Cartesian frame");
    const auto& d = map.dims;
    if (map.values.size() != d[0] * d[1] * d[2]) throw ShapeError("skip_feature: value count does not match extents");
    const auto t = Tensor<float>::from({1, 1, d[0], d[1], d[2]}, map.values);
    auto out = skip_feature(t, k, side);
    return tensor::reshape(out, {k, side, side});
}

// ---- generator ----------------------------------------------------------

template <class T>
Stage1Generator<T>::Stage1Generator(const Stage1Config& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    auto eng = rng::stream(seed, "stage1-generator");
    encoder_ = RadarEncoder<T>(store_, "g.enc", cfg_, eng);
    const std::size_t base = cfg_.output_size / pow2(cfg_.upsample_layers);
    to_latent_ = tensor::Linear<T>(store_, "g.latent", cfg_.encoder_features(), cfg_.latent, eng);
    from_latent_ = tensor::Linear<T>(store_, "g.project", cfg_.latent, cfg_.decoder_base_channels * base * base, eng);
    std::size_t in = cfg_.decoder_base_channels;
    const std::size_t layers = cfg_.decoder_channels.size();
    for (std::size_t l = 0; l < layers; ++l) {
        const auto out = cfg_.decoder_channels[l];
        const auto name = "g.dec" + std::to_string(l + 1);
        const bool up = l < cfg_.upsample_layers;
        const bool last = l + 1 == layers;
        decoder_.emplace_back(store_, name, in, out, up ? Dims2{4, 4} : Dims2{3, 3}, up ? Dims2{2, 2} : Dims2{1, 1},
                              Dims2{1, 1}, eng, last);
        if (!last) decoder_norms_.emplace_back(store_, name + ".bn", out);
        in = out + (l + 1 == cfg_.skip_layer ? cfg_.skip_channels : 0);
    }
}

template <class T>
Tensor<T> Stage1Generator<T>::operator()(const Tensor<T>& maps, Mode mode) const {
    check_maps(maps, cfg_, "stage1 generator");
    const std::size_t n = maps.dim(0);
    const auto x = normalize_maps(maps);
    const auto skip = skip_feature(x, cfg_.skip_channels, cfg_.output_size);
    const T slope = static_cast<T>(cfg_.leaky_slope);
    auto h = tensor::leaky_relu(to_latent_(encoder_(x, mode)), slope);
    const std::size_t base = cfg_.output_size / pow2(cfg_.upsample_layers);
    h = tensor::reshape(tensor::relu(from_latent_(h)), {n, cfg_.decoder_base_channels, base, base});
    for (std::size_t l = 0; l < decoder_.size(); ++l) {
        h = tensor::relu(decoder_[l](h));
        if (l < decoder_norms_.size()) h = decoder_norms_[l](h, mode);
        if (l + 1 == cfg_.skip_layer) h = tensor::concat<T>({h, skip}, 1);
    }
    return h;
}

// ---- discriminator ------------------------------------------------------

template <class T>
Stage1Discriminator<T>::Stage1Discriminator(const Stage1Config& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    auto eng = rng::stream(seed, "stage1-discriminator");
    radar_ = RadarEncoder<T>(store_, "d.radar", cfg_, eng);
    std::size_t in = 1;
    for (std::size_t i = 0; i < cfg_.image_encoder_channels.size(); ++i) {
        const auto out = cfg_.image_encoder_channels[i];
        const auto name = "d.image.conv" + std::to_string(i + 1);
        const bool down = i < cfg_.image_downsample_layers;
        image_convs_.emplace_back(store_, name, in, out, down ? Dims2{4, 4} : Dims2{3, 3},
                                  down ? Dims2{2, 2} : Dims2{1, 1}, Dims2{1, 1}, eng);
        image_norms_.emplace_back(store_, name + ".bn", out);
        in = out;
    }
    const std::size_t s = cfg_.fusion_side;
    const std::size_t fused = (cfg_.encoder_features() + cfg_.image_features()) / (s * s);
    fuse1_ = tensor::Conv2d<T>(store_, "d.fuse1", fused, cfg_.fusion_channels, {3, 3}, {1, 1}, {1, 1}, eng);
    fuse_norm_ = tensor::BatchNorm<T>(store_, "d.fuse1.bn", cfg_.fusion_channels);
    fuse2_ = tensor::Conv2d<T>(store_, "d.fuse2", cfg_.fusion_channels, 1, {s, s}, {1, 1}, {0, 0}, eng, true);
}

template <class T>
Tensor<T> Stage1Discriminator<T>::operator()(const Tensor<T>& maps, const Tensor<T>& depth, Mode mode) const {
    check_maps(maps, cfg_, "stage1 discriminator");
    const std::size_t n = maps.dim(0);
    check_depth(depth, n, cfg_, "stage1 discriminator");
    const T slope = static_cast<T>(cfg_.leaky_slope);
    const auto r = radar_(normalize_maps(maps), mode);
    Tensor<T> h = depth;
    for (std::size_t i = 0; i < image_convs_.size(); ++i)
        h = image_norms_[i](tensor::leaky_relu(image_convs_[i](h), slope), mode);
    h = tensor::reshape(h, {n, h.numel() / n});
    const std::size_t s = cfg_.fusion_side;
    auto f = tensor::concat<T>({r, h}, 1);
    f = tensor::reshape(f, {n, f.numel() / (n * s * s), s, s});
    f = fuse_norm_(tensor::leaky_relu(fuse1_(f), slope), mode);
    return tensor::reshape(tensor::sigmoid(fuse2_(f)), {n, 1});
}

// ---- perceptual features ------------------------------------------------

template <class T>
PerceptualExtractor<T>::PerceptualExtractor(const Stage1Config& cfg) {
    auto eng = rng::stream(cfg.perceptual_seed, "stage1-perceptual");
    std::size_t in = 1;
    for (std::size_t i = 0; i < cfg.perceptual_channels.size(); ++i) {
        const auto out = cfg.perceptual_channels[i];
        convs_.emplace_back(store_, "p.conv" + std::to_string(i + 1), in, out, Dims2{4, 4}, Dims2{2, 2}, Dims2{1, 1},
                            eng);
        in = out;
    }
    store_.set_trainable(false);
}

template <class T>
std::vector<Tensor<T>> PerceptualExtractor<T>::operator()(const Tensor<T>& depth) const {
    std::vector<Tensor<T>> levels;
    Tensor<T> h = depth;
    for (const auto& conv : convs_) {
        h = tensor::relu(conv(h));
        levels.push_back(h);
    }
    return levels;
}

template <class T>
Tensor<T> PerceptualExtractor<T>::loss(const Tensor<T>& a, const Tensor<T>& b) const {
    const auto fa = (*this)(a);
    const auto fb = (*this)(b);
    Tensor<T> total = tensor::mse(fa[0], fb[0]);
    for (std::size_t i = 1; i < fa.size(); ++i) total = tensor::add(total, tensor::mse(fa[i], fb[i]));
    return tensor::scale(total, T(1) / static_cast<T>(fa.size()));
}

// ---- losses -------------------------------------------------------------

template <class T>
Stage1Model<T>::Stage1Model(const Stage1Config& cfg, std::uint64_t seed)
    : config(cfg), generator(cfg, seed), discriminator(cfg, seed), perceptual(cfg) {}

template <class T>
Stage1GLoss<T> stage1_g_loss_terms(const Tensor<T>& d_fake, const Tensor<T>& fake, const Tensor<T>& real,
                                   const PerceptualExtractor<T>& perceptual, const Stage1LossWeights& w) {
    if (w.lambda_1 < 0 || w.lambda_p < 0) throw ConfigError("stage1 loss weights must be non-negative");
    Stage1GLoss<T> out;
    out.gan = tensor::mse(d_fake, Tensor<T>::full(d_fake.shape(), T(1)));
    out.l1 = tensor::l1(fake, real);
    out.perceptual = perceptual.loss(fake, real);
    out.total = tensor::add(tensor::add(out.gan, tensor::scale(out.l1, static_cast<T>(w.lambda_1))),
                            tensor::scale(out.perceptual, static_cast<T>(w.lambda_p)));
    return out;
}

template <class T>
Stage1GLoss<T> stage1_g_loss(Stage1Model<T>& model, const Tensor<T>& maps, const Tensor<T>& fake,
                             const Tensor<T>& real, const Stage1LossWeights& w, Mode mode) {
    check_depth(real, fake.dim(0), model.config, "stage1_g_loss");
    Tensor<T> d_fake;
    {
        tensor::FreezeGuard<T> frozen(model.discriminator.params());
        d_fake = model.discriminator(maps, fake, mode);
    }
    return stage1_g_loss_terms(d_fake, fake, real, model.perceptual, w);
}

template <class T>
Tensor<T> stage1_d_loss_terms(const Tensor<T>& d_real, const Tensor<T>& d_fake) {
    const auto real_term = tensor::mse(d_real, Tensor<T>::full(d_real.shape(), T(1)));
    const auto fake_term = tensor::mse(d_fake, Tensor<T>::zeros(d_fake.shape()));
    return tensor::scale(tensor::add(real_term, fake_term), T(0.5));
}

template <class T>
Tensor<T> stage1_d_loss(Stage1Model<T>& model, const Tensor<T>& maps, const Tensor<T>& fake, const Tensor<T>& real,
                        Mode mode) {
    const auto d_real = model.discriminator(maps, real, mode);
    const auto d_fake = model.discriminator(maps, fake.detach(), mode);
    return stage1_d_loss_terms(d_real, d_fake);
}

// ---- conversions --------------------------------------------------------

template <class T>
Tensor<T> maps_to_tensor(std::span<const radar::IntensityMap> maps, const Stage1Config& cfg) {
    const auto& d = cfg.input_dims;
    const std::size_t per = d[0] * d[1] * d[2];
    std::vector<T> data;
    data.reserve(maps.size() * per);
    for (const auto& m : maps) {
        if (m.frame != radar::Frame::Cartesian) throw ConfigError("stage1 input maps must be in the Cartesian frame");
        if (m.dims != d || m.values.size() != per) {
            throw ShapeError("stage1 input map extents " + std::to_string(m.dims[0]) + "x" + std::to_string(m.dims[1]) +
                             "x" + std::to_string(m.dims[2]) + " do not match the configured " + std::to_string(d[0]) +
                             "x" + std::to_string(d[1]) + "x" + std::to_string(d[2]));
        }
        for (float v : m.values) data.push_back(static_cast<T>(v));
    }
    return Tensor<T>::from({maps.size(), 1, d[0], d[1], d[2]}, std::move(data));
}

template <class T>
Tensor<T> depths_to_tensor(std::span<const geometry::DepthImage> images, const Stage1Config& cfg) {
    const std::size_t s = cfg.output_size;
    std::vector<T> data;
    data.reserve(images.size() * s * s);
    for (const auto& img : images) {
        if (img.width != s || img.height != s || img.depth.size() != s * s) {
            throw ShapeError("depth image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                             " does not match the configured output size " + std::to_string(s));
        }
        for (double v : img.depth) data.push_back(static_cast<T>(v / cfg.max_range));
    }
    return Tensor<T>::from({images.size(), 1, s, s}, std::move(data));
}

template <class T>
geometry::DepthImage tensor_to_depth(const Tensor<T>& depth, std::size_t index, const geometry::CameraModel& camera,
                                     const Stage1Config& cfg) {
    check_depth(depth, depth.rank() == 4 ? depth.dim(0) : 0, cfg, "tensor_to_depth");
    if (index >= depth.dim(0)) throw ShapeError("tensor_to_depth: batch index out of range");
    const std::size_t s = cfg.output_size;
    if (camera.width != s || camera.height != s) throw ShapeError("tensor_to_depth: camera size does not match output");
    geometry::DepthImage img;
    img.width = img.height = s;
    img.camera = camera;
    img.depth.resize(s * s);
    const auto src = depth.data();
    for (std::size_t i = 0; i < s * s; ++i) img.depth[i] = static_cast<double>(src[index * s * s + i]) * cfg.max_range;
    return img;
}

geometry::DepthImage g_r2i_forward(const radar::IntensityMap& map, const Stage1Generator<float>& generator,
                                   const geometry::CameraModel& camera) {
    const auto x = maps_to_tensor<float>(std::span(&map, 1), generator.config());
    return tensor_to_depth(generator(x, Mode::Eval), 0, camera, generator.config());
}

#define RIMR_STAGE1_INSTANTIATE(T)                                                                                   \
    template class RadarEncoder<T>;                                                                                  \
    template class Stage1Generator<T>;                                                                               \
    template class Stage1Discriminator<T>;                                                                           \
    template class PerceptualExtractor<T>;                                                                           \
    template struct Stage1Model<T>;                                                                                  \
    template Tensor<T> normalize_maps(const Tensor<T>&);                                                             \
    template Tensor<T> skip_feature(const Tensor<T>&, std::size_t, std::size_t);                                     \
    template Stage1GLoss<T> stage1_g_loss_terms(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                \
                                                const PerceptualExtractor<T>&, const Stage1LossWeights&);            \
    template Stage1GLoss<T> stage1_g_loss(Stage1Model<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,     \
                                          const Stage1LossWeights&, Mode);                                           \
    template Tensor<T> stage1_d_loss_terms(const Tensor<T>&, const Tensor<T>&);                                      \
    template Tensor<T> stage1_d_loss(Stage1Model<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Mode);   \
    template Tensor<T> maps_to_tensor(std::span<const radar::IntensityMap>, const Stage1Config&);                    \
    template Tensor<T> depths_to_tensor(std::span<const geometry::DepthImage>, const Stage1Config&);                 \
    template geometry::DepthImage tensor_to_depth(const Tensor<T>&, std::size_t, const geometry::CameraModel&,       \
                                                  const Stage1Config&);

RIMR_STAGE1_INSTANTIATE(float)
RIMR_STAGE1_INSTANTIATE(double)

}  // namespace rimr::stage1
