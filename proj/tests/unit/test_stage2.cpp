#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "../support/gradcheck.hpp"
#include "rimr/error.hpp"
#include "rimr/stage2.hpp"

using namespace rimr;
using namespace rimr::stage2;
using geometry::Vec3;
using rimr::testing::gradcheck;

namespace {

PointCloud random_cloud(rng::Engine& eng, std::size_t n, double scale = 1.0, Vec3 offset = Vec3::Zero()) {
    PointCloud c;
    for (std::size_t i = 0; i < n; ++i)
        c.points.push_back(offset + scale * Vec3(rng::uniform(eng, -1, 1), rng::uniform(eng, -1, 1),
                                                 rng::uniform(eng, -1, 1)));
    return c;
}

template <class T>
Tensor<T> as_tensor(const PointCloud& c) {
    std::vector<T> v;
    for (const auto& p : c.points)
        for (int a = 0; a < 3; ++a) v.push_back(static_cast<T>(p[a]));
    return Tensor<T>::from({1, c.size(), 3}, std::move(v));
}

PointCloud shuffled(const PointCloud& c, rng::Engine& eng) {
    PointCloud out = c;
    for (std::size_t i = out.size(); i > 1; --i) std::swap(out.points[i - 1], out.points[rng::below(eng, i)]);
    return out;
}

template <class T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    REQUIRE(a.shape() == b.shape());
    double worst = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
    return worst;
}

template <class T>
std::vector<Tensor<T>> trainable_values(const ParameterStore<T>& store) {
    std::vector<Tensor<T>> out;
    for (const auto& p : store.all())
        if (p->trainable) out.push_back(p->value);
    return out;
}

template <class T>
void make_discriminator_constant(Stage2Discriminator<T>& d) {
    for (const char* name : {"d.fc2.weight", "d.fc2.bias"}) {
        auto p = d.params().find(name);
        REQUIRE(p);
        std::fill(p->value.storage().begin(), p->value.storage().end(), T(0));
    }
}

Stage2Config small_config() {
    Stage2Config c;
    c.input_points = 32;
    c.output_points = 48;
    c.block1 = {8, 16};
    c.block2 = {16, 24};
    c.decoder = {24, 32};
    c.discriminator_hidden = 8;
    return c;
}

}  // namespace

TEST_CASE("stage2 config round-trips and validates") {
    const auto tiny = Stage2Config::tiny();
    CHECK(Stage2Config::from_key_values(tiny.to_key_values()).to_key_values() == tiny.to_key_values());
    CHECK(Stage2Config::from_key_values("").to_key_values() == Stage2Config{}.to_key_values());
    CHECK_THROWS_AS(Stage2Config::from_key_values("bogus=1\n"), ConfigError);
    CHECK_THROWS_AS(Stage2Config::from_key_values("output_points=0\n"), ConfigError);
    CHECK_THROWS_AS(Stage2Config::from_key_values("block1=\n"), FormatError);
}

TEST_CASE("default generator emits 2048 finite points from an arbitrary-size cloud") {
    auto eng = rng::stream(1, "s2-default");
    Stage2Generator<float> g(Stage2Config{}, 1);
    for (std::size_t n : {300u, 1024u, 3000u}) {
        const auto out = g_p2p_forward(random_cloud(eng, n, 2.0, Vec3(0, 5, 0)), g);
        REQUIRE(out.size() == 2048);
        for (const auto& p : out.points) CHECK(p.allFinite());
    }
    CHECK_THROWS_AS(g_p2p_forward(PointCloud{}, g), ShapeError);
}

TEST_CASE("encode rejects the wrong point count") {
    Stage2Generator<double> g(Stage2Config::tiny(), 2);
    CHECK_THROWS_AS(g.encode(Tensor<double>::zeros({1, 7, 3})), ShapeError);
    CHECK_THROWS_AS(g.encode(Tensor<double>::zeros({1, 8, 2})), ShapeError);
    Stage2Discriminator<double> d(Stage2Config::tiny(), 2);
    CHECK_THROWS_AS(d(Tensor<double>::zeros({1, 8, 3}), Tensor<double>::zeros({1, 9, 3})), ShapeError);
    CHECK_THROWS_AS(d(Tensor<double>::zeros({1, 8, 3}), Tensor<double>::zeros({2, 8, 3})), ShapeError);
}

TEST_CASE("encoder, generator and discriminator are permutation invariant") {
    const auto cfg = small_config();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CAPTURE(seed);
        auto eng = rng::stream(seed, "s2-perm");
        Stage2Model<double> model(cfg, seed);
        const auto coarse = random_cloud(eng, cfg.input_points, 1.5, Vec3(1, 4, 0));
        const auto cand = random_cloud(eng, cfg.output_points, 1.5, Vec3(1, 4, 0));
        const auto c0 = as_tensor<double>(coarse), k0 = as_tensor<double>(cand);
        for (int trial = 0; trial < 3; ++trial) {
            const auto c1 = as_tensor<double>(shuffled(coarse, eng));
            const auto k1 = as_tensor<double>(shuffled(cand, eng));
            CHECK(max_abs_diff(model.generator.encode(c0), model.generator.encode(c1)) <= 1e-6);
            CHECK(max_abs_diff(model.generator(c0), model.generator(c1)) <= 1e-6);
            CHECK(max_abs_diff(model.discriminator(c0, k0), model.discriminator(c1, k0)) <= 1e-6);
            CHECK(max_abs_diff(model.discriminator(c0, k0), model.discriminator(c0, k1)) <= 1e-6);
        }

        // Raw clouds of arbitrary size go through the order-independent resampler.
        Stage2Generator<float> gf(cfg, seed);
        const auto raw = random_cloud(eng, 100, 1.0);
        const auto a = g_p2p_forward(raw, gf);
        const auto b = g_p2p_forward(shuffled(raw, eng), gf);
        for (std::size_t i = 0; i < a.size(); ++i) CHECK((a.points[i] - b.points[i]).norm() <= 1e-6);
        Stage2Discriminator<float> df(cfg, seed);
        const auto big = random_cloud(eng, 70, 1.0);
        const float s0 = d_p2p_forward(raw, big, df, cfg);
        CHECK(std::abs(s0 - d_p2p_forward(shuffled(raw, eng), shuffled(big, eng), df, cfg)) < 1e-6f);
        CHECK(s0 > 0.0f);
        CHECK(s0 < 1.0f);
    }
}

TEST_CASE("duplicating a point leaves the encoding unchanged; an outlier changes it") {
    const auto cfg = Stage2Config::tiny();
    auto eng = rng::stream(3, "s2-dup");
    Stage2Generator<double> g(cfg, 3);
    auto base = random_cloud(eng, 8);
    auto dup_a = base, dup_b = base;
    dup_a.points[7] = base.points[0];
    dup_b.points[7] = base.points[3];
    CHECK(max_abs_diff(g.encode(as_tensor<double>(dup_a)), g.encode(as_tensor<double>(dup_b))) <= 1e-12);

    auto outlier = base;
    outlier.points[7] = Vec3(25, -30, 12);
    CHECK(max_abs_diff(g.encode(as_tensor<double>(base)), g.encode(as_tensor<double>(outlier))) > 1e-6);
}

TEST_CASE("canonical resampling is order independent and sized") {
    auto eng = rng::stream(4, "s2-resample");
    const auto c = random_cloud(eng, 50);
    const auto a = canonical_resample(c, 20, 9);
    const auto b = canonical_resample(shuffled(c, eng), 20, 9);
    REQUIRE(a.size() == 20);
    for (std::size_t i = 0; i < 20; ++i) CHECK(a.points[i] == b.points[i]);
    CHECK(canonical_resample(c, 80, 9).size() == 80);
    CHECK_THROWS_AS(canonical_resample(PointCloud{}, 8, 9), ShapeError);
}

TEST_CASE("generator loss: floors, degenerate weights and the component sum") {
    // Identical prediction and truth in four distinct voxels, D = 1.
    const PointCloud truth{{Vec3(0.05, 0.05, 0.05), Vec3(0.35, 0.05, 0.05), Vec3(0.05, 0.35, 0.05),
                            Vec3(0.05, 0.05, 0.35)}};
    const auto pred = as_tensor<double>(truth);
    const auto ones = Tensor<double>::full({1, 1}, 1.0);
    const auto floor = stage2_g_loss_terms(ones, pred, {truth}, {});
    CHECK(floor.total.item() == doctest::Approx(10 * (1 - 4 / (4 + 1e-6))).epsilon(1e-9));
    CHECK(floor.total.item() == doctest::Approx(2.5e-6).epsilon(1e-5));

    const auto d = Tensor<double>::full({1, 1}, 0.4);
    Stage2LossWeights zero;
    zero.lambda_cf = zero.lambda_iou = 0;
    auto shifted = as_tensor<double>(PointCloud{{Vec3(1, 1, 1), Vec3(2, 0, 0), Vec3(0, 2, 0), Vec3(0, 0, 2)}});
    const auto pure = stage2_g_loss_terms(d, shifted, {truth}, zero);
    CHECK(pure.total.item() == doctest::Approx(0.36).epsilon(1e-12));

    // D = 0.5, chamfer = 0.02, hard IoU loss = 0.5 (one of two voxels).
    const double v = 0.04;
    const PointCloud t2{{Vec3(0.5, 0.5, 0.5) * v, Vec3(1.5, 0.5, 0.5) * v}};
    const auto p2 = as_tensor<double>(PointCloud{{t2.points[0], t2.points[0]}});
    Stage2LossWeights w;
    w.voxel_size = v;
    const auto half = Tensor<double>::full({1, 1}, 0.5);
    const auto terms = stage2_g_loss_terms(half, p2, {t2}, w);
    CHECK(terms.gan.item() == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(terms.chamfer.item() == doctest::Approx(0.02).epsilon(1e-9));
    CHECK(terms.iou.item() == doctest::Approx(0.5).epsilon(1e-5));
    CHECK(terms.total.item() == doctest::Approx(7.25).epsilon(1e-5));
    CHECK(terms.total.item() ==
          doctest::Approx(terms.gan.item() + 100 * terms.chamfer.item() + 10 * terms.iou.item()).epsilon(1e-12));
}

TEST_CASE("ablation flags: DPN drops the adversarial term, CLN drops IoU from the objective") {
    const auto cfg = Stage2Config::tiny();
    Stage2Model<double> model(cfg, 5);
    auto eng = rng::stream(5, "s2-flags");
    const auto coarse = as_tensor<double>(random_cloud(eng, 8));
    const PointCloud truth = random_cloud(eng, 12);
    const auto fake = model.generator(coarse);

    Stage2LossWeights dpn;
    dpn.adversarial = false;
    model.discriminator.params().clear_grad();
    const auto l_dpn = stage2_g_loss(model, coarse, fake, {truth}, dpn);
    CHECK(l_dpn.gan.item() == 0.0);
    l_dpn.total.backward();
    for (const auto& p : model.discriminator.params().all()) CHECK(!p->value.has_grad());

    Stage2LossWeights cln;
    cln.use_iou = false;
    const auto l_cln = stage2_g_loss(model, coarse, model.generator(coarse), {truth}, cln);
    CHECK(l_cln.iou.item() > 0.0);
    CHECK(l_cln.total.item() == doctest::Approx(l_cln.gan.item() + 100 * l_cln.chamfer.item()).epsilon(1e-12));
}

TEST_CASE("discriminator loss values and gradient isolation") {
    CHECK(stage2_d_loss_terms(Tensor<double>::full({3, 1}, 1.0), Tensor<double>::zeros({3, 1})).item() == 0.0);

    const auto cfg = Stage2Config::tiny();
    Stage2Model<double> model(cfg, 6);
    auto eng = rng::stream(6, "s2-d");
    std::vector<PointCloud> coarse_c{random_cloud(eng, 8), random_cloud(eng, 30)};
    std::vector<PointCloud> truth_c{random_cloud(eng, 40), random_cloud(eng, 5)};
    const auto coarse = clouds_to_tensor<double>(coarse_c, cfg.input_points, 1);
    const auto real = clouds_to_tensor<double>(truth_c, cfg.output_points, 1);

    model.generator.params().clear_grad();
    model.discriminator.params().clear_grad();
    auto fake = model.generator(coarse);
    stage2_g_loss(model, coarse, fake, truth_c, {}).total.backward();
    for (const auto& p : model.generator.params().all()) CHECK(p->value.has_grad());
    for (const auto& p : model.discriminator.params().all()) CHECK(!p->value.has_grad());

    model.generator.params().clear_grad();
    fake = model.generator(coarse);
    stage2_d_loss(model, coarse, fake, real).backward();
    for (const auto& p : model.generator.params().all()) CHECK(!p->value.has_grad());
    for (const auto& p : model.discriminator.params().all()) CHECK(p->value.has_grad());

    make_discriminator_constant(model.discriminator);
    CHECK(stage2_d_loss(model, coarse, fake, real).item() == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("full generator loss gradient matches finite differences") {
    const auto cfg = Stage2Config::tiny();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        CAPTURE(seed);
        Stage2Model<double> model(cfg, 50 + seed);
        auto eng = rng::stream(seed, "s2-gradcheck");
        const auto coarse = as_tensor<double>(random_cloud(eng, 8));
        const std::vector<PointCloud> truth{random_cloud(eng, 8)};
        Stage2LossWeights w;
        w.voxel_size = 0.5;
        w.iou_value = metrics::IouValue::Surrogate;
        const auto loss = [&] { return stage2_g_loss(model, coarse, model.generator(coarse), truth, w).total; };
        CHECK(gradcheck(loss, trainable_values(model.generator.params())) < 1e-4);
        const auto real = clouds_to_tensor<double>(truth, cfg.output_points, 1);
        const auto fake = model.generator(coarse).detach();
        const auto d_loss = [&] { return stage2_d_loss(model, coarse, fake, real); };
        CHECK(gradcheck(d_loss, trainable_values(model.discriminator.params())) < 1e-4);
    }
}

TEST_CASE("generator never emits NaN over 1000 random forward passes") {
    const auto cfg = small_config();
    Stage2Generator<float> g(cfg, 7);
    auto eng = rng::stream(7, "s2-nan");
    std::size_t bad = 0;
    for (int i = 0; i < 1000; ++i) {
        const double scale = std::pow(10.0, rng::uniform(eng, -4, 3));
        PointCloud c = random_cloud(eng, 1 + rng::below(eng, 80), scale,
                                    Vec3(rng::uniform(eng, -50, 50), rng::uniform(eng, -50, 50), 0));
        if (i % 50 == 0) std::fill(c.points.begin(), c.points.end(), c.points[0]);
        const auto out = g_p2p_forward(c, g);
        for (const auto& p : out.points) bad += !p.allFinite();
    }
    CHECK(bad == 0);
}

TEST_CASE("chamfer term decreases monotonically over the first 50 overfit steps") {
    auto cfg = small_config();
    int monotone = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Stage2Model<float> model(cfg, seed);
        auto eng = rng::stream(seed, "s2-overfit");
        const PointCloud truth = random_cloud(eng, 200, 0.8, Vec3(0, 5, 0));
        PointCloud coarse = canonical_resample(truth, 60, seed);
        for (auto& p : coarse.points) p += Vec3(rng::normal(eng), rng::normal(eng), rng::normal(eng)) * 0.05;
        const auto x = clouds_to_tensor<float>(std::span(&coarse, 1), cfg.input_points, cfg.resample_seed);
        const auto real = clouds_to_tensor<float>(std::span(&truth, 1), cfg.output_points, cfg.resample_seed);
        tensor::Adam<float> g_opt, d_opt;
        Stage2LossWeights w;
        std::vector<double> chamfers;
        for (int step = 0; step < 50; ++step) {
            const auto fake = model.generator(x);
            model.discriminator.params().zero_grad();
            stage2_d_loss(model, x, fake, real).backward();
            d_opt.step(model.discriminator.params());
            model.generator.params().zero_grad();
            const auto loss = stage2_g_loss(model, x, fake, {truth}, w);
            chamfers.push_back(loss.chamfer.item());
            loss.total.backward();
            g_opt.step(model.generator.params());
        }
        const bool ok = std::adjacent_find(chamfers.begin(), chamfers.end(), std::less_equal<>()) == chamfers.end();
        monotone += ok;
        int rises = 0;
        for (std::size_t i = 1; i < chamfers.size(); ++i) rises += chamfers[i] >= chamfers[i - 1];
        MESSAGE("seed " << seed << ": chamfer " << chamfers.front() << " -> " << chamfers.back() << ", " << rises
                        << " non-decreasing steps");
    }
    CHECK(monotone >= 4);
}
