#pragma once

// Point-cloud refinement GAN: a two-block PointNet encoder with a
// fully-connected decoder, a two-stream discriminator and the composite
// generator loss (adversarial + chamfer + IoU).
//
// Clouds enter the networks as [B,k,3] tensors. Both networks translate every
// cloud by the bounding-box midpoint of the conditioning (coarse) cloud before
// encoding; the generator adds it back to its output.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "rimr/geometry.hpp"
#include "rimr/metrics.hpp"
#include "rimr/nn.hpp"

namespace rimr::stage2 {

using geometry::PointCloud;
using tensor::ParameterStore;
using tensor::Tensor;

struct Stage2Config {
    std::size_t input_points = 1024;   // n
    std::size_t output_points = 2048;  // m
    std::vector<std::size_t> block1{64, 128};
    std::vector<std::size_t> block2{256, 512};
    std::vector<std::size_t> decoder{512, 1024};
    std::size_t discriminator_hidden = 256;
    double leaky_slope = 0.2;
    std::uint64_t resample_seed = 1024;

    void validate() const;
    std::size_t feature_width() const { return block2.back(); }

    std::string to_key_values() const;
    // Missing keys keep their defaults; unknown keys are rejected.
    static Stage2Config from_key_values(const std::string& text);

    // n = m = 8 and every width 4.
    static Stage2Config tiny();
};

struct Stage2LossWeights {
    double lambda_cf = 100;
    double lambda_iou = 10;
    double voxel_size = 0.1;  // meters, for the IoU term
    bool adversarial = true;  // false: DPN baseline
    bool use_iou = true;      // false: CLN baseline (IoU still reported)
    // Surrogate makes the reported IoU term differentiable end to end; used by
    // gradient checks.
    metrics::IouValue iou_value = metrics::IouValue::Hard;
};

// Two stacked PointNet blocks: [B,k,3] -> [B, block2.back()], any k >= 1.
template <class T>
class PointEncoder {
public:
    PointEncoder() = default;
    PointEncoder(ParameterStore<T>& store, const std::string& name, const Stage2Config& cfg, rng::Engine& eng);
    Tensor<T> operator()(const Tensor<T>& points) const;

private:
    std::vector<tensor::Linear<T>> mlp1_, mlp2_;
};

template <class T>
class Stage2Generator {
public:
    Stage2Generator(const Stage2Config& cfg, std::uint64_t seed);

    // [B,n,3] -> [B,m,3]
    Tensor<T> operator()(const Tensor<T>& coarse) const;
    // Global feature of centred clouds: [B,n,3] -> [B,512].
    Tensor<T> encode(const Tensor<T>& coarse) const;

    ParameterStore<T>& params() { return store_; }
    const ParameterStore<T>& params() const { return store_; }
    const Stage2Config& config() const { return cfg_; }

private:
    Stage2Config cfg_;
    ParameterStore<T> store_;
    PointEncoder<T> encoder_;
    std::vector<tensor::Linear<T>> decoder_;
};

template <class T>
class Stage2Discriminator {
public:
    Stage2Discriminator(const Stage2Config& cfg, std::uint64_t seed);

    // coarse [B,n,3], candidate [B,m,3] -> scores [B,1] in (0,1)
    Tensor<T> operator()(const Tensor<T>& coarse, const Tensor<T>& candidate) const;

    ParameterStore<T>& params() { return store_; }
    const ParameterStore<T>& params() const { return store_; }

private:
    Stage2Config cfg_;
    ParameterStore<T> store_;
    PointEncoder<T> coarse_stream_, candidate_stream_;
    tensor::Linear<T> hidden_, score_;
};

template <class T>
struct Stage2Model {
    Stage2Model(const Stage2Config& cfg, std::uint64_t seed);

    Stage2Config config;
    Stage2Generator<T> generator;
    Stage2Discriminator<T> discriminator;
};

template <class T>
struct Stage2GLoss {
    Tensor<T> gan, chamfer, iou, total;  // iou holds the hard value even when it is not optimized
};

template <class T>
Stage2GLoss<T> stage2_g_loss_terms(const Tensor<T>& d_fake, const Tensor<T>& fake, const std::vector<PointCloud>& truths,
                                   const Stage2LossWeights& w);

// d_fake is evaluated with the discriminator frozen; skipped entirely when
// w.adversarial is false.
template <class T>
Stage2GLoss<T> stage2_g_loss(Stage2Model<T>& model, const Tensor<T>& coarse, const Tensor<T>& fake,
                             const std::vector<PointCloud>& truths, const Stage2LossWeights& w);

template <class T>
Tensor<T> stage2_d_loss_terms(const Tensor<T>& d_real, const Tensor<T>& d_fake);

// `fake` is detached; `real` holds the truth clouds resampled to m points.
template <class T>
Tensor<T> stage2_d_loss(Stage2Model<T>& model, const Tensor<T>& coarse, const Tensor<T>& fake, const Tensor<T>& real);

// ---- conversions ----

// Sorts lexicographically, then resamples to `count` points, so the result
// does not depend on the input order.
PointCloud canonical_resample(const PointCloud& cloud, std::size_t count, std::uint64_t seed);

template <class T>
Tensor<T> clouds_to_tensor(std::span<const PointCloud> clouds, std::size_t count, std::uint64_t seed);

template <class T>
PointCloud tensor_to_cloud(const Tensor<T>& points, std::size_t index);

// Resamples the raw coarse cloud to n points and returns m refined points.
PointCloud g_p2p_forward(const PointCloud& coarse, const Stage2Generator<float>& generator);

// Score of a (coarse, candidate) pair; each cloud is resampled to its
// stream's configured count.
float d_p2p_forward(const PointCloud& coarse, const PointCloud& candidate, const Stage2Discriminator<float>& d,
                    const Stage2Config& cfg);

}  // namespace rimr::stage2
