#pragma once

// Radar-to-depth conditional GAN: a 3D-encoder/2D-decoder generator with a
// range-max skip connection, a two-stream discriminator and the composite
// generator loss (adversarial + L1 + perceptual).
//
// Tensor layouts: radar maps [N,1,D,H,W] over (elevation, azimuth, range) of
// the Cartesian grid; depth images [N,1,S,S] in units of max_range.

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rimr/geometry.hpp"
#include "rimr/nn.hpp"
#include "rimr/radar.hpp"

namespace rimr::stage1 {

using tensor::Mode;
using tensor::ParameterStore;
using tensor::Tensor;

struct Stage1Config {
    std::array<std::size_t, 3> input_dims{64, 64, 256};
    std::vector<std::size_t> encoder_channels{8, 16, 32, 64, 128, 256};
    std::size_t latent = 512;
    std::size_t decoder_base_channels = 256;
    // The first `upsample_layers` decoder layers double the resolution; the
    // rest are stride-1 refinements.
    std::vector<std::size_t> decoder_channels{128, 64, 32, 16, 8, 8, 4, 2, 1};
    std::size_t upsample_layers = 5;
    std::size_t skip_layer = 6;  // 1-based decoder layer whose output receives the skip
    std::size_t skip_channels = 8;
    std::size_t output_size = 128;
    std::vector<std::size_t> image_encoder_channels{8, 16, 32, 64, 128, 256, 256, 256, 256};
    std::size_t image_downsample_layers = 5;
    std::size_t fusion_side = 8;
    std::size_t fusion_channels = 16;
    std::vector<std::size_t> perceptual_channels{16, 32, 64};
    std::uint64_t perceptual_seed = 20190;
    double leaky_slope = 0.2;
    double max_range = 9.6;  // meters; depth targets are divided by this

    void validate() const;
    std::size_t encoder_features() const;
    std::size_t image_features() const;

    std::string to_key_values() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static Stage1Config from_key_values(const std::string& text);

    // A few-hundred-parameter network on 4x4x16 maps and 8x8 images.
    static Stage1Config tiny();
};

struct Stage1LossWeights {
    double lambda_1 = 1000;
    double lambda_p = 20;
};

// The 6-block conv3d stack shared by generator and discriminator.
template <class T>
class RadarEncoder {
public:
    RadarEncoder() = default;
    RadarEncoder(ParameterStore<T>& store, const std::string& name, const Stage1Config& cfg, rng::Engine& eng);
    // [N,1,D,H,W] -> [N, encoder_features]
    Tensor<T> operator()(const Tensor<T>& x, Mode mode) const;

private:
    std::vector<tensor::Conv3d<T>> convs_;
    std::vector<tensor::BatchNorm<T>> norms_;
    T slope_{};
};

// Per-sample division by the map maximum; all-zero maps pass through.
template <class T>
Tensor<T> normalize_maps(const Tensor<T>& maps);

// Top-k values along range per (elevation, azimuth) cell, descending, then
// nearest-neighbour resized to side x side. maps: [N,1,D,H,W] -> [N,k,side,side].
template <class T>
Tensor<T> skip_feature(const Tensor<T>& maps, std::size_t k, std::size_t side);

// Single-map form: [k, side, side].
Tensor<float> skip_feature(const radar::IntensityMap& map, std::size_t k = 8, std::size_t side = 128);

template <class T>
class Stage1Generator {
public:
    Stage1Generator(const Stage1Config& cfg, std::uint64_t seed);

    // Raw maps in, scaled depth [N,1,S,S] out. Normalization happens here.
    Tensor<T> operator()(const Tensor<T>& maps, Mode mode) const;

    ParameterStore<T>& params() { return store_; }
    const ParameterStore<T>& params() const { return store_; }
    const Stage1Config& config() const { return cfg_; }

private:
    Stage1Config cfg_;
    ParameterStore<T> store_;
    RadarEncoder<T> encoder_;
    tensor::Linear<T> to_latent_, from_latent_;
    std::vector<tensor::ConvTranspose2d<T>> decoder_;
    std::vector<tensor::BatchNorm<T>> decoder_norms_;
};

template <class T>
class Stage1Discriminator {
public:
    Stage1Discriminator(const Stage1Config& cfg, std::uint64_t seed);

    // Raw maps and scaled depth images in, scores [N,1] in (0,1) out.
    Tensor<T> operator()(const Tensor<T>& maps, const Tensor<T>& depth, Mode mode) const;

    ParameterStore<T>& params() { return store_; }
    const ParameterStore<T>& params() const { return store_; }

private:
    Stage1Config cfg_;
    ParameterStore<T> store_;
    RadarEncoder<T> radar_;
    std::vector<tensor::Conv2d<T>> image_convs_;
    std::vector<tensor::BatchNorm<T>> image_norms_;
    tensor::Conv2d<T> fuse1_, fuse2_;
    tensor::BatchNorm<T> fuse_norm_;
};

// Frozen, seed-fixed conv2d feature pyramid standing in for a pretrained
// network in the perceptual loss.
template <class T>
class PerceptualExtractor {
public:
    PerceptualExtractor(const Stage1Config& cfg);
    std::vector<Tensor<T>> operator()(const Tensor<T>& depth) const;
    // Mean over levels of the per-level feature MSE.
    Tensor<T> loss(const Tensor<T>& a, const Tensor<T>& b) const;

    const ParameterStore<T>& params() const { return store_; }

private:
    ParameterStore<T> store_;
    std::vector<tensor::Conv2d<T>> convs_;
};

template <class T>
struct Stage1Model {
    Stage1Model(const Stage1Config& cfg, std::uint64_t seed);

    Stage1Config config;
    Stage1Generator<T> generator;
    Stage1Discriminator<T> discriminator;
    PerceptualExtractor<T> perceptual;
};

template <class T>
struct Stage1GLoss {
    Tensor<T> gan, l1, perceptual, total;
};

// Combines precomputed discriminator scores on fake pairs with the
// reconstruction terms.
template <class T>
Stage1GLoss<T> stage1_g_loss_terms(const Tensor<T>& d_fake, const Tensor<T>& fake, const Tensor<T>& real,
                                   const PerceptualExtractor<T>& perceptual, const Stage1LossWeights& w);

// Generator loss for fake = G(maps). The discriminator is frozen, so only
// generator parameters receive gradients.
template <class T>
Stage1GLoss<T> stage1_g_loss(Stage1Model<T>& model, const Tensor<T>& maps, const Tensor<T>& fake,
                             const Tensor<T>& real, const Stage1LossWeights& w, Mode mode = Mode::Train);

template <class T>
Tensor<T> stage1_d_loss_terms(const Tensor<T>& d_real, const Tensor<T>& d_fake);

// Discriminator loss; `fake` is detached first.
template <class T>
Tensor<T> stage1_d_loss(Stage1Model<T>& model, const Tensor<T>& maps, const Tensor<T>& fake, const Tensor<T>& real,
                        Mode mode = Mode::Train);

// ---- conversions between domain types and tensors ----

// Cartesian maps with matching extents -> [N,1,D,H,W] (raw, unnormalized).
template <class T>
Tensor<T> maps_to_tensor(std::span<const radar::IntensityMap> maps, const Stage1Config& cfg);

// Depth in meters -> [N,1,S,S] scaled by 1/max_range.
template <class T>
Tensor<T> depths_to_tensor(std::span<const geometry::DepthImage> images, const Stage1Config& cfg);

template <class T>
geometry::DepthImage tensor_to_depth(const Tensor<T>& depth, std::size_t index, const geometry::CameraModel& camera,
                                     const Stage1Config& cfg);

// Eval-mode generator on one map.
geometry::DepthImage g_r2i_forward(const radar::IntensityMap& map, const Stage1Generator<float>& generator,
                                   const geometry::CameraModel& camera);

}  // namespace rimr::stage1
