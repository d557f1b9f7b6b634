#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>

#include "../support/gradcheck.hpp"
#include "rimr/error.hpp"
#include "rimr/stage1.hpp"

using namespace rimr;
using namespace rimr::stage1;
using rimr::testing::gradcheck;

namespace {

template <class T>
Tensor<T> random_maps(std::uint64_t seed, const Stage1Config& cfg, std::size_t n = 1, double sparsity = 0.7) {
    auto eng = rng::stream(seed, "stage1-test-maps");
    const auto& d = cfg.input_dims;
    std::vector<T> v(n * d[0] * d[1] * d[2]);
    for (auto& x : v) x = rng::uniform(eng) < sparsity ? T(0) : static_cast<T>(rng::uniform(eng, 0, 5));
    return Tensor<T>::from({n, 1, d[0], d[1], d[2]}, std::move(v));
}

template <class T>
Tensor<T> random_depth(std::uint64_t seed, const Stage1Config& cfg, std::size_t n = 1) {
    auto eng = rng::stream(seed, "stage1-test-depth");
    std::vector<T> v(n * cfg.output_size * cfg.output_size);
    for (auto& x : v) x = static_cast<T>(rng::uniform(eng, 0, 1));
    return Tensor<T>::from({n, 1, cfg.output_size, cfg.output_size}, std::move(v));
}

template <class T>
std::vector<Tensor<T>> trainable_values(const ParameterStore<T>& store) {
    std::vector<Tensor<T>> out;
    for (const auto& p : store.all())
        if (p->trainable) out.push_back(p->value);
    return out;
}

// Zeroes the final fusion layer so the discriminator outputs sigmoid(0).
template <class T>
void make_discriminator_constant(Stage1Discriminator<T>& d) {
    for (const char* name : {"d.fuse2.kernels", "d.fuse2.bias"}) {
        auto p = d.params().find(name);
        REQUIRE(p);
        std::fill(p->value.storage().begin(), p->value.storage().end(), T(0));
    }
}

// Brute-force oracle: full descending sort of every range column.
std::vector<float> sorted_top(const radar::IntensityMap& m, std::size_t k) {
    const auto& d = m.dims;
    std::vector<float> out(k * d[0] * d[1]);
    for (std::size_t i = 0; i < d[0]; ++i)
        for (std::size_t j = 0; j < d[1]; ++j) {
            std::vector<float> col;
            for (std::size_t r = 0; r < d[2]; ++r) col.push_back(m.at(i, j, r));
            std::sort(col.begin(), col.end());
            std::reverse(col.begin(), col.end());
            for (std::size_t c = 0; c < k; ++c) out[(c * d[0] + i) * d[1] + j] = col[c];
        }
    return out;
}

radar::IntensityMap cartesian_map(std::array<std::size_t, 3> dims) {
    radar::IntensityMap m;
    m.frame = radar::Frame::Cartesian;
    m.dims = dims;
    m.values.assign(dims[0] * dims[1] * dims[2], 0.0f);
    return m;
}

}  // namespace

TEST_CASE("stage1 config validates and round-trips") {
    CHECK_NOTHROW(Stage1Config{}.validate());
    CHECK_NOTHROW(Stage1Config::tiny().validate());
    CHECK(Stage1Config{}.encoder_features() == 1024);
    CHECK(Stage1Config{}.image_features() == 4096);
    const auto tiny = Stage1Config::tiny();
    const auto back = Stage1Config::from_key_values(tiny.to_key_values());
    CHECK(back.to_key_values() == tiny.to_key_values());
    CHECK(Stage1Config::from_key_values("").to_key_values() == Stage1Config{}.to_key_values());
    CHECK_THROWS_AS(Stage1Config::from_key_values("unknown_key=1\n"), ConfigError);
    CHECK_THROWS_AS(Stage1Config::from_key_values("input_dims=64,64,250\n"), ConfigError);
    CHECK_THROWS_AS(Stage1Config::from_key_values("skip_layer=3\n"), ConfigError);
    CHECK_THROWS_AS(Stage1Config::from_key_values("decoder_channels=128,64,32,16,8,8,4,2,2\n"), ConfigError);
}

TEST_CASE("default generator maps 64x64x256 to 128x128 and stays finite on zeros") {
    const Stage1Config cfg;
    Stage1Generator<float> g(cfg, 1);
    CHECK(g.params().scalar_count() > 100000);
    const auto zeros = Tensor<float>::zeros({1, 1, 64, 64, 256});
    const auto out = g(zeros, Mode::Eval);
    CHECK(out.shape() == tensor::Shape{1, 1, 128, 128});
    for (float v : out.data()) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0f);
    }

    auto map = cartesian_map({64, 64, 256});
    map.values[12345] = 3.0f;
    geometry::CameraModel cam;
    const auto img = g_r2i_forward(map, g, cam);
    CHECK(img.width == 128);
    CHECK(img.height == 128);
    CHECK(std::all_of(img.depth.begin(), img.depth.end(), [](double d) { return d >= 0 && std::isfinite(d); }));
}

TEST_CASE("generator and discriminator reject wrong shapes") {
    const auto cfg = Stage1Config::tiny();
    Stage1Model<float> model(cfg, 2);
    CHECK_THROWS_AS(model.generator(Tensor<float>::zeros({1, 1, 4, 4, 8}), Mode::Eval), ShapeError);
    CHECK_THROWS_AS(model.generator(Tensor<float>::zeros({1, 4, 4, 16}), Mode::Eval), ShapeError);
    const auto maps = random_maps<float>(3, cfg);
    CHECK_THROWS_AS(model.discriminator(maps, Tensor<float>::zeros({1, 1, 8, 9}), Mode::Eval), ShapeError);
    CHECK_THROWS_AS(model.discriminator(maps, Tensor<float>::zeros({2, 1, 8, 8}), Mode::Eval), ShapeError);
    auto wrong = cartesian_map({4, 4, 8});
    CHECK_THROWS_AS(maps_to_tensor<float>(std::span(&wrong, 1), cfg), ShapeError);
    wrong = cartesian_map({4, 4, 16});
    wrong.frame = radar::Frame::Polar;
    CHECK_THROWS_AS(maps_to_tensor<float>(std::span(&wrong, 1), cfg), ConfigError);
}

TEST_CASE("skip feature: single voxel and constant map") {
    auto m = cartesian_map({4, 4, 16});
    const float v = 2.5f;
    m.values[(1 * 4 + 2) * 16 + 9] = v;
    const auto s = skip_feature(m, 8, 4);
    REQUIRE(s.shape() == tensor::Shape{8, 4, 4});
    for (std::size_t c = 0; c < 8; ++c)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                const float want = (c == 0 && i == 1 && j == 2) ? v : 0.0f;
                CHECK(s[(c * 4 + i) * 4 + j] == want);
            }

    std::fill(m.values.begin(), m.values.end(), 0.75f);
    const auto c = skip_feature(m, 8, 8);
    CHECK(std::all_of(c.data().begin(), c.data().end(), [](float x) { return x == 0.75f; }));
}

TEST_CASE("skip feature equals a per-cell sort on random maps") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto eng = rng::stream(seed, "skip-oracle");
        auto m = cartesian_map({4, 4, 16});
        for (auto& x : m.values) x = rng::uniform(eng) < 0.3 ? 0.0f : static_cast<float>(rng::uniform(eng, -1, 4));
        // a few exact ties
        m.values[3] = m.values[4] = m.values[5];
        const auto want = sorted_top(m, 8);
        const auto got = skip_feature(m, 8, 4);
        REQUIRE(got.numel() == want.size());
        for (std::size_t i = 0; i < want.size(); ++i) CHECK(got[i] == want[i]);

        // nearest-neighbour upsampling by 2 repeats each cell in a 2x2 block
        const auto up = skip_feature(m, 8, 8);
        for (std::size_t ch = 0; ch < 8; ++ch)
            for (std::size_t a = 0; a < 8; ++a)
                for (std::size_t b = 0; b < 8; ++b) CHECK(up[(ch * 8 + a) * 8 + b] == want[(ch * 4 + a / 2) * 4 + b / 2]);
    }
    CHECK_THROWS_AS(skip_feature(cartesian_map({4, 4, 4}), 8, 4), ShapeError);
}

TEST_CASE("generator output is invariant to input scale") {
    const auto cfg = Stage1Config::tiny();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Stage1Generator<double> g(cfg, seed);
        const auto maps = random_maps<double>(seed + 10, cfg, 2);
        for (auto mode : {Mode::Eval, Mode::Train}) {
            const auto base = g(maps, mode);
            for (double s : {1e-3, 0.5, 7.0, 1e4}) {
                std::vector<double> scaled(maps.storage().begin(), maps.storage().end());
                for (auto& x : scaled) x *= s;
                const auto out = g(Tensor<double>::from(maps.shape(), scaled), mode);
                for (std::size_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out[i] - base[i]) <= 1e-6);
            }
        }
    }
}

TEST_CASE("discriminator scores lie in (0,1) and are deterministic in eval mode") {
    const auto cfg = Stage1Config::tiny();
    Stage1Discriminator<float> d(cfg, 4);
    const auto maps = random_maps<float>(5, cfg, 3);
    const auto depth = random_depth<float>(6, cfg, 3);
    const auto a = d(maps, depth, Mode::Eval);
    const auto b = d(maps, depth, Mode::Eval);
    REQUIRE(a.shape() == tensor::Shape{3, 1});
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a[i] > 0.0f);
        CHECK(a[i] < 1.0f);
        CHECK(a[i] == b[i]);
    }
}

TEST_CASE("generator loss: vanishing terms and degenerate weights") {
    const auto cfg = Stage1Config::tiny();
    const PerceptualExtractor<double> p(cfg);
    const auto real = random_depth<double>(7, cfg);
    const auto ones = Tensor<double>::full({1, 1}, 1.0);
    const auto zero = stage1_g_loss_terms(ones, real, real, p, {});
    CHECK(zero.total.item() == 0.0);

    const auto fake = random_depth<double>(8, cfg);
    const auto d = Tensor<double>::full({1, 1}, 0.3);
    const auto pure = stage1_g_loss_terms(d, fake, real, p, {0, 0});
    CHECK(pure.total.item() == doctest::Approx(0.49).epsilon(1e-12));
    CHECK(pure.total.item() == pure.gan.item());
    CHECK_THROWS_AS(stage1_g_loss_terms(d, fake, real, p, {-1, 0}), ConfigError);
}

TEST_CASE("generator loss matches its componentwise evaluation") {
    const auto cfg = Stage1Config::tiny();
    Stage1Model<double> model(cfg, 9);
    make_discriminator_constant(model.discriminator);
    const auto maps = random_maps<double>(10, cfg);
    const auto real = random_depth<double>(11, cfg);
    std::vector<double> shifted(real.storage().begin(), real.storage().end());
    for (auto& x : shifted) x += 0.1;
    const auto fake = Tensor<double>::from(real.shape(), shifted);

    const auto loss = stage1_g_loss(model, maps, fake, real, {});
    CHECK(loss.gan.item() == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(loss.l1.item() == doctest::Approx(0.1).epsilon(1e-12));

    // Perceptual term by hand: per-level mean squared feature difference.
    const auto fa = model.perceptual(fake);
    const auto fb = model.perceptual(real);
    double lp = 0;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        double s = 0;
        for (std::size_t i = 0; i < fa[l].numel(); ++i) s += (fa[l][i] - fb[l][i]) * (fa[l][i] - fb[l][i]);
        lp += s / static_cast<double>(fa[l].numel());
    }
    lp /= static_cast<double>(fa.size());
    CHECK(lp > 0);
    CHECK(loss.perceptual.item() == doctest::Approx(lp).epsilon(1e-12));
    CHECK(loss.total.item() == doctest::Approx(0.25 + 1000 * 0.1 + 20 * lp).epsilon(1e-12));
}

TEST_CASE("discriminator loss values") {
    const auto perfect = stage1_d_loss_terms(Tensor<double>::full({2, 1}, 1.0), Tensor<double>::zeros({2, 1}));
    CHECK(perfect.item() == 0.0);

    const auto cfg = Stage1Config::tiny();
    Stage1Model<double> model(cfg, 12);
    make_discriminator_constant(model.discriminator);
    const auto maps = random_maps<double>(13, cfg, 2);
    const auto real = random_depth<double>(14, cfg, 2);
    const auto fake = model.generator(maps, Mode::Train);
    CHECK(stage1_d_loss(model, maps, fake, real).item() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("gradient isolation between generator and discriminator") {
    const auto cfg = Stage1Config::tiny();
    Stage1Model<double> model(cfg, 15);
    const auto maps = random_maps<double>(16, cfg, 2);
    const auto real = random_depth<double>(17, cfg, 2);

    model.generator.params().clear_grad();
    model.discriminator.params().clear_grad();
    auto fake = model.generator(maps, Mode::Train);
    stage1_g_loss(model, maps, fake, real, {}).total.backward();
    for (const auto& p : model.generator.params().all()) {
        CAPTURE(p->name);
        CHECK(p->value.has_grad() == p->trainable);
    }
    for (const auto& p : model.discriminator.params().all()) CHECK(!p->value.has_grad());
    for (const auto& p : model.perceptual.params().all()) CHECK(!p->value.has_grad());
    for (const auto& p : model.discriminator.params().all())
        if (p->trainable) CHECK(p->value.requires_grad());
    CHECK(model.discriminator.params().find("d.fuse2.bias")->value.requires_grad());

    model.generator.params().clear_grad();
    fake = model.generator(maps, Mode::Train);
    stage1_d_loss(model, maps, fake, real).backward();
    for (const auto& p : model.generator.params().all()) CHECK(!p->value.has_grad());
    for (const auto& p : model.discriminator.params().all()) CHECK(p->value.has_grad() == p->trainable);
}

TEST_CASE("an Adam step with lr = 0 changes no parameter") {
    const auto cfg = Stage1Config::tiny();
    Stage1Model<float> model(cfg, 18);
    const auto maps = random_maps<float>(19, cfg, 2);
    const auto real = random_depth<float>(20, cfg, 2);
    std::vector<tensor::Buffer<float>> before;
    for (const auto& t : trainable_values(model.generator.params())) before.push_back(t.storage());
    for (const auto& t : trainable_values(model.discriminator.params())) before.push_back(t.storage());

    tensor::Adam<float> g_opt({.lr = 0}), d_opt({.lr = 0});
    model.generator.params().zero_grad();
    const auto fake = model.generator(maps, Mode::Train);
    const auto g_loss = stage1_g_loss(model, maps, fake, real, {});
    CHECK(std::isfinite(g_loss.total.item()));
    g_loss.total.backward();
    g_opt.step(model.generator.params());
    model.discriminator.params().zero_grad();
    const auto d_loss = stage1_d_loss(model, maps, fake, real);
    CHECK(std::isfinite(d_loss.item()));
    d_loss.backward();
    d_opt.step(model.discriminator.params());

    std::size_t k = 0;
    for (const auto& t : trainable_values(model.generator.params())) CHECK(t.storage() == before[k++]);
    for (const auto& t : trainable_values(model.discriminator.params())) CHECK(t.storage() == before[k++]);
}

TEST_CASE("losses are finite on all-zero maps and depths") {
    const auto cfg = Stage1Config::tiny();
    Stage1Model<float> model(cfg, 21);
    const auto maps = Tensor<float>::zeros({1, 1, 4, 4, 16});
    const auto real = Tensor<float>::zeros({1, 1, 8, 8});
    const auto fake = model.generator(maps, Mode::Train);
    CHECK(std::isfinite(stage1_g_loss(model, maps, fake, real, {}).total.item()));
    CHECK(std::isfinite(stage1_d_loss(model, maps, fake, real).item()));
}

TEST_CASE("generator loss gradient matches finite differences") {
    const auto cfg = Stage1Config::tiny();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CAPTURE(seed);
        Stage1Model<double> model(cfg, 100 + seed);
        const auto maps = random_maps<double>(200 + seed, cfg, 2);
        const auto real = random_depth<double>(300 + seed, cfg, 2);
        const auto loss = [&] {
            const auto fake = model.generator(maps, Mode::Train);
            return stage1_g_loss(model, maps, fake, real, {}).total;
        };
        CHECK(gradcheck(loss, trainable_values(model.generator.params())) < 1e-5);
    }
}

TEST_CASE("discriminator loss gradient matches finite differences") {
    const auto cfg = Stage1Config::tiny();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CAPTURE(seed);
        Stage1Model<double> model(cfg, 400 + seed);
        const auto maps = random_maps<double>(500 + seed, cfg, 2);
        const auto real = random_depth<double>(600 + seed, cfg, 2);
        const auto fake = model.generator(maps, Mode::Train).detach();
        const auto loss = [&] { return stage1_d_loss(model, maps, fake, real); };
        CHECK(gradcheck(loss, trainable_values(model.discriminator.params())) < 1e-5);
    }
}

TEST_CASE("depth tensors convert to meters and back") {
    const auto cfg = Stage1Config::tiny();
    const auto t = random_depth<double>(22, cfg, 2);
    geometry::CameraModel cam;
    cam.width = cam.height = 8;
    cam.cx = cam.cy = 4;
    const auto img = tensor_to_depth(t, 1, cam, cfg);
    CHECK(img.depth[5] == doctest::Approx(t[64 + 5] * cfg.max_range));
    const auto back = depths_to_tensor<double>(std::span(&img, 1), cfg);
    for (std::size_t i = 0; i < 64; ++i) CHECK(back[i] == doctest::Approx(t[64 + i]).epsilon(1e-12));
    CHECK_THROWS_AS(tensor_to_depth(t, 2, cam, cfg), ShapeError);
    cam.width = 9;
    CHECK_THROWS_AS(tensor_to_depth(t, 0, cam, cfg), ShapeError);
}
