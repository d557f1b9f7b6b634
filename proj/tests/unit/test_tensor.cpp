#include <cmath>
#include <vector>

#include "../support/gradcheck.hpp"
#include "doctest.h"
#include "rimr/error.hpp"
#include "rimr/nn.hpp"
#include "rimr/ops.hpp"

using namespace rimr::tensor;
using rimr::testing::gradcheck;
using rimr::testing::random_tensor;
using rimr::testing::TensorD;

namespace {

TensorD make(Shape s, std::vector<double> v, bool rg = false) { return TensorD::from(std::move(s), std::move(v), rg); }

double dot(const TensorD& a, const TensorD& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
    return s;
}

constexpr double kGradTol = 1e-4;
constexpr int kSeeds = 5;

}  // namespace

TEST_CASE("linear worked examples") {
    auto x = make({1, 2}, {1, 2});
    auto id = linear(x, make({2, 2}, {1, 0, 0, 1}), make({2}, {0, 0}));
    CHECK(id[0] == 1);
    CHECK(id[1] == 2);

    auto y = linear(x, make({2, 1}, {3, 4}), make({1}, {5}));
    CHECK(y.shape() == Shape{1, 1});
    CHECK(y[0] == 16);

    auto w = make({2, 1}, {0.3, -0.7}, true);
    sum(linear(x, w, make({1}, {0}))).backward();
    CHECK(w.grad()[0] == doctest::Approx(1));
    CHECK(w.grad()[1] == doctest::Approx(2));
    // Frozen finite-difference value of d(sum)/dw at step 1e-5.
    auto fd = rimr::testing::numeric_gradient([&] { return sum(linear(x, w, make({1}, {0}))).item(); }, w, 1e-5);
    CHECK(fd[0] == doctest::Approx(1).epsilon(1e-9));
    CHECK(fd[1] == doctest::Approx(2).epsilon(1e-9));
}

TEST_CASE("linear rejects mismatched shapes and names both") {
    auto x = make({1, 3}, {1, 2, 3});
    try {
        linear(x, make({2, 1}, {1, 1}), make({1}, {0}));
        FAIL("expected ShapeError");
    } catch (const rimr::ShapeError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("[1,3]") != std::string::npos);
        CHECK(msg.find("[2,1]") != std::string::npos);
    }
}

TEST_CASE("conv3d worked examples") {
    auto ones = TensorD::full({1, 2, 2, 2}, 1.0);
    auto k = TensorD::full({1, 1, 2, 2, 2}, 1.0);
    auto y = conv3d(ones, k, {1, 1, 1}, {0, 0, 0});
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y[0] == 8);

    rimr::rng::Engine eng(3);
    auto x = random_tensor({1, 3, 4, 5}, eng, -1, 1, false);
    auto delta = TensorD::zeros({1, 1, 2, 2, 2});
    delta.data()[0] = 1;
    auto c = conv3d(x, delta, {1, 1, 1}, {0, 0, 0});
    REQUIRE(c.shape() == Shape{1, 2, 3, 4});
    for (std::size_t d = 0; d < 2; ++d)
        for (std::size_t h = 0; h < 3; ++h)
            for (std::size_t w = 0; w < 4; ++w) CHECK(c[(d * 3 + h) * 4 + w] == x[(d * 4 + h) * 5 + w]);

    CHECK_THROWS_AS(conv3d(ones, TensorD::zeros({1, 1, 3, 3, 3}), {1, 1, 1}, {0, 0, 0}), rimr::ShapeError);
}

TEST_CASE("conv3d gradient matches finite differences") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        rimr::rng::Engine eng(100 + seed);
        auto x = random_tensor({2, 4, 4, 4}, eng);
        auto k = random_tensor({3, 2, 3, 3, 3}, eng);
        auto r = random_tensor({3, 2, 2, 2}, eng, -1, 1, false);
        auto loss = [&] { return sum(mul(conv3d(x, k, {2, 2, 2}, {1, 1, 1}), r)); };
        CHECK(gradcheck(loss, {x, k}) < kGradTol);
    }
}

TEST_CASE("conv2d delta kernel is the identity on the interior") {
    rimr::rng::Engine eng(5);
    auto x = random_tensor({1, 5, 5}, eng, -1, 1, false);
    auto k = TensorD::zeros({1, 1, 3, 3});
    k.data()[4] = 1;
    auto y = conv2d(x, k, {1, 1}, {1, 1});
    for (std::size_t i = 0; i < 25; ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("conv_transpose2d is the adjoint of conv2d") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        rimr::rng::Engine eng(200 + seed);
        for (auto [s, p] : {std::pair<std::size_t, std::size_t>{1, 0}, {1, 1}, {2, 1}}) {
            const std::size_t in = s == 2 ? 6 : 5;
            auto k = random_tensor({1, 1, 3, 3}, eng, -1, 1, false);
            if (s == 2) k = random_tensor({1, 1, 4, 4}, eng, -1, 1, false);
            auto x = random_tensor({1, in, in}, eng, -1, 1, false);
            auto cx = conv2d(x, k, {s, s}, {p, p});
            auto y = random_tensor(cx.shape(), eng, -1, 1, false);
            auto ty = conv_transpose2d(y, k, {s, s}, {p, p});
            REQUIRE(ty.shape() == x.shape());
            CHECK(std::abs(dot(cx, y) - dot(x, ty)) < 1e-10);
        }
    }
}

TEST_CASE("conv_transpose2d expands a single value by the kernel") {
    auto x = make({1, 1, 1}, {2.5});
    auto y = conv_transpose2d(x, TensorD::full({1, 1, 3, 3}, 1.0), {1, 1}, {0, 0});
    REQUIRE(y.shape() == Shape{1, 3, 3});
    for (double v : y.data()) CHECK(v == 2.5);
}

TEST_CASE("conv2d / conv_transpose2d gradients match finite differences") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        rimr::rng::Engine eng(300 + seed);
        auto x = random_tensor({2, 2, 6, 6}, eng);
        auto k = random_tensor({3, 2, 4, 4}, eng);
        auto r = random_tensor({2, 3, 3, 3}, eng, -1, 1, false);
        CHECK(gradcheck([&] { return sum(mul(conv2d(x, k, {2, 2}, {1, 1}), r)); }, {x, k}) < kGradTol);

        auto xt = random_tensor({2, 3, 3, 3}, eng);
        auto kt = random_tensor({3, 2, 4, 4}, eng);
        auto rt = random_tensor({2, 2, 6, 6}, eng, -1, 1, false);
        CHECK(gradcheck([&] { return sum(mul(conv_transpose2d(xt, kt, {2, 2}, {1, 1}), rt)); }, {xt, kt}) <
              kGradTol);
    }
}

TEST_CASE("conv_transpose2d rejects incompatible shapes") {
    CHECK_THROWS_AS(conv_transpose2d(TensorD::zeros({2, 3, 3}), TensorD::zeros({3, 1, 3, 3}), {1, 1}, {0, 0}),
                    rimr::ShapeError);
}

TEST_CASE("reduce_topk_max worked examples") {
    auto x = make({3}, {3, 1, 2});
    CHECK(reduce_topk_max(x, 0, 1)[0] == 3);
    auto t2 = reduce_topk_max(x, 0, 2);
    CHECK(t2[0] == 3);
    CHECK(t2[1] == 2);

    auto tie = make({3}, {5, 5, 1}, true);
    auto t = reduce_topk_max(tie, 0, 2);
    CHECK(t[0] == 5);
    CHECK(t[1] == 5);
    sum(t).backward();
    CHECK(std::vector<double>(tie.grad().begin(), tie.grad().end()) == std::vector<double>{1, 1, 0});

    auto one = make({3}, {4, 4, 4}, true);
    sum(reduce_topk_max(one, 0, 1)).backward();
    CHECK(std::vector<double>(one.grad().begin(), one.grad().end()) == std::vector<double>{1, 0, 0});

    CHECK_THROWS_AS(reduce_topk_max(x, 0, 4), rimr::ShapeError);
}

TEST_CASE("reduce_topk_max output is sorted and drawn from its slice") {
    for (int seed = 0; seed < 20; ++seed) {
        rimr::rng::Engine eng(400 + seed);
        // Coarse values force many ties.
        std::vector<double> v(3 * 7 * 4);
        for (auto& e : v) e = static_cast<double>(rimr::rng::below(eng, 5));
        auto x = make({3, 7, 4}, v);
        const std::size_t k = 1 + seed % 7;
        auto y = reduce_topk_max(x, 1, k);
        for (std::size_t o = 0; o < 3; ++o)
            for (std::size_t i = 0; i < 4; ++i) {
                std::vector<double> slice, picked;
                for (std::size_t l = 0; l < 7; ++l) slice.push_back(x[(o * 7 + l) * 4 + i]);
                for (std::size_t r = 0; r < k; ++r) picked.push_back(y[(o * k + r) * 4 + i]);
                CHECK(std::is_sorted(picked.rbegin(), picked.rend()));
                std::sort(slice.rbegin(), slice.rend());
                slice.resize(k);
                CHECK(picked == slice);
            }
    }
}

TEST_CASE("activations") {
    auto x = make({3}, {-1, 2, -10});
    auto r = relu(x);
    CHECK(r[0] == 0);
    CHECK(r[1] == 2);
    CHECK(leaky_relu(x, 0.2)[2] == doctest::Approx(-2));
    CHECK(sigmoid(make({1}, {0}))[0] == 0.5);
    auto big = sigmoid(make({2}, {-800, 800}));
    CHECK(std::isfinite(big[0]));
    CHECK(big[1] == 1.0);
}

TEST_CASE("batch_norm examples") {
    auto gamma = TensorD::full({1}, 1.0), beta = TensorD::zeros({1});
    auto rm = TensorD::zeros({1}), rv = TensorD::full({1}, 1.0);
    auto y = batch_norm(make({2, 1}, {1, 3}), gamma, beta, rm, rv, Mode::Train);
    const double s = std::sqrt(1 + 1e-5);
    CHECK(y[0] == doctest::Approx(-1 / s).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(1 / s).epsilon(1e-12));
    CHECK(rm[0] == doctest::Approx(0.2));
    CHECK(rv[0] == doctest::Approx(0.9 * 1 + 0.1 * 1));

    // Zero-mean unit-variance channels pass through.
    auto unit = make({4, 2}, {1, -1, -1, 1, 1, -1, -1, 1});
    auto yu = batch_norm(unit, TensorD::full({2}, 1.0), TensorD::zeros({2}), rm = TensorD::zeros({2}),
                         rv = TensorD::full({2}, 1.0), Mode::Train);
    for (std::size_t i = 0; i < 8; ++i) CHECK(yu[i] == doctest::Approx(unit[i]).epsilon(1e-5));

    auto m2 = TensorD::full({2}, 0.3), v2 = TensorD::full({2}, 2.0);
    auto e1 = batch_norm(unit, TensorD::full({2}, 1.5), TensorD::zeros({2}), m2, v2, Mode::Eval);
    auto e2 = batch_norm(unit, TensorD::full({2}, 1.5), TensorD::zeros({2}), m2, v2, Mode::Eval);
    CHECK(std::vector<double>(e1.data().begin(), e1.data().end()) ==
          std::vector<double>(e2.data().begin(), e2.data().end()));
    CHECK(m2[0] == 0.3);

    auto empty = TensorD::zeros({0, 2});
    CHECK_THROWS_AS(batch_norm(empty, TensorD::full({2}, 1.0), TensorD::zeros({2}), m2, v2, Mode::Train),
                    rimr::ShapeError);
}

TEST_CASE("batch_norm gradient matches finite differences in both modes") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        rimr::rng::Engine eng(500 + seed);
        auto x = random_tensor({3, 2, 2, 3}, eng);
        auto g = random_tensor({2}, eng, 0.5, 1.5);
        auto b = random_tensor({2}, eng);
        auto r = random_tensor({3, 2, 2, 3}, eng, -1, 1, false);
        auto rm = TensorD::zeros({2}), rv = TensorD::full({2}, 1.0);
        for (Mode mode : {Mode::Train, Mode::Eval}) {
            CHECK(gradcheck([&] { return sum(mul(batch_norm(x, g, b, rm, rv, mode), r)); }, {x, g, b}) < kGradTol);
        }
    }
}

TEST_CASE("losses") {
    auto a = make({2}, {0, 2}), b = make({2}, {1, 0});
    CHECK(mse(a, a).item() == 0);
    CHECK(mse(a, b).item() == 2.5);
    CHECK(l1(a, b).item() == 1.5);
    CHECK_THROWS_AS(mse(a, make({3}, {0, 0, 0})), rimr::ShapeError);
}

TEST_CASE("elementwise, structural and loss ops pass finite-difference checks") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        rimr::rng::Engine eng(600 + seed);
        auto a = random_tensor({2, 3, 4}, eng);
        auto b = random_tensor({2, 3, 4}, eng);
        auto c = random_tensor({2, 1, 4}, eng);
        auto r = random_tensor({2, 6, 4}, eng, -1, 1, false);
        CHECK(gradcheck([&] { return sum(mul(concat<double>({a, b}, 1), r)); }, {a, b}) < kGradTol);
        CHECK(gradcheck([&] { return sum(mul(tile(c, 1, 6), r)); }, {c}) < kGradTol);
        CHECK(gradcheck([&] { return mean(mul(sub(a, b), add(a, scale(b, 0.5)))); }, {a, b}) < kGradTol);
        CHECK(gradcheck([&] { return mse(sigmoid(a), leaky_relu(b, 0.2)); }, {a, b}) < kGradTol);
        CHECK(gradcheck([&] { return l1(relu(a), b); }, {a, b}) < kGradTol);
        std::vector<std::size_t> rows{1, 0, 1};
        auto rr = random_tensor({3, 3, 4}, eng, -1, 1, false);
        CHECK(gradcheck([&] { return sum(mul(gather_rows(a, rows), rr)); }, {a}) < kGradTol);
        auto w = random_tensor({4, 5}, eng), bias = random_tensor({5}, eng);
        CHECK(gradcheck([&] { return sum(sigmoid(linear(reshape(a, {6, 4}), w, bias))); }, {a, w, bias}) <
              kGradTol);
        auto rt = random_tensor({2, 2, 4}, eng, -1, 1, false);
        CHECK(gradcheck([&] { return sum(mul(reduce_topk_max(a, 1, 2), rt)); }, {a}) < kGradTol);
        auto cb = random_tensor({3}, eng);
        CHECK(gradcheck([&] { return sum(mul(add_channel_bias(a, cb), a)); }, {a, cb}) < kGradTol);
    }
}

TEST_CASE("backward semantics") {
    auto w = make({3}, {0.5, -1, 2}, true);
    auto x = make({3}, {1, 2, 3});
    auto loss = sum(mul(w, x));
    loss.backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == x[i]);
    loss.backward();
    for (std::size_t i = 0; i < 3; ++i) CHECK(w.grad()[i] == 2 * x[i]);

    CHECK_THROWS_AS(mul(w, x).backward(), rimr::ShapeError);
}

TEST_CASE("composite conv3d -> leaky_relu -> mse gradient") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        rimr::rng::Engine eng(700 + seed);
        auto x = random_tensor({1, 2, 4, 4, 4}, eng);
        auto k = random_tensor({2, 2, 2, 2, 2}, eng);
        auto target = random_tensor({1, 2, 3, 3, 3}, eng, -1, 1, false);
        auto loss = [&] { return mse(leaky_relu(conv3d(x, k, {1, 1, 1}, {0, 0, 0}), 0.2), target); };
        CHECK(gradcheck(loss, {x, k}) < kGradTol);
    }
}

TEST_CASE("no-grad mode builds no graph") {
    auto w = make({2}, {1, 2}, true);
    NoGradGuard guard;
    auto y = sum(w);
    CHECK_FALSE(y.requires_grad());
    CHECK(y.is_leaf());
}

TEST_CASE("adam") {
    ParameterStore<double> store;
    auto p = store.add_constant("theta", {1}, 1.0);
    auto z = store.add_constant("zero", {2}, 0.7);

    SUBCASE("zero gradient leaves the parameter unchanged") {
        store.zero_grad();
        adam_step<double>(store.all(), {0.1, 0.9, 0.999, 1e-8}, 1);
        CHECK(p->value[0] == 1.0);
        CHECK(z->value[0] == 0.7);
    }
    SUBCASE("first step moves by lr") {
        store.zero_grad();
        p->value.grad()[0] = 1.0;
        adam_step<double>(store.all(), {0.1, 0.9, 0.999, 1e-8}, 1);
        CHECK(p->value[0] == doctest::Approx(0.9).epsilon(1e-7));
        CHECK(p->value.grad()[0] == 1.0);
    }
    SUBCASE("missing gradient names the parameter") {
        store.clear_grad();
        try {
            adam_step<double>(store.all(), {}, 1);
            FAIL("expected error");
        } catch (const rimr::Error& e) {
            CHECK(std::string(e.what()).find("theta") != std::string::npos);
        }
    }
}

TEST_CASE("training is bit-reproducible for a fixed seed") {
    auto run = [] {
        rimr::rng::Engine init(42);
        ParameterStore<float> store;
        Linear<float> fc(store, "fc", 4, 3, init);
        Adam<float> opt;
        rimr::rng::Engine data(7);
        for (int step = 0; step < 5; ++step) {
            std::vector<float> v(8);
            for (auto& e : v) e = static_cast<float>(rimr::rng::uniform(data, -1, 1));
            store.zero_grad();
            mse(fc(Tensor<float>::from({2, 4}, v)), Tensor<float>::zeros({2, 3})).backward();
            opt.step(store);
        }
        std::vector<float> out;
        for (auto& p : store.all()) out.insert(out.end(), p->value.data().begin(), p->value.data().end());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("results do not depend on where buffers land in memory") {
    rimr::rng::Engine eng(11);
    auto x = random_tensor({1, 37}, eng, -1, 1, false);
    auto w = random_tensor({37, 29}, eng, -1, 1, false);
    auto b = random_tensor({29}, eng, -1, 1, false);
    const auto first = linear(x, w, b);
    // Interleave allocations of odd sizes so the next buffers start elsewhere.
    std::vector<std::vector<char>> clutter;
    for (std::size_t i = 1; i < 50; ++i) {
        clutter.emplace_back(i * 7);
        const auto again = linear(x.clone(), w.clone(), b.clone());
        REQUIRE(reinterpret_cast<std::uintptr_t>(again.data().data()) % 64 == 0);
        for (std::size_t k = 0; k < first.numel(); ++k) REQUIRE(again[k] == first[k]);
    }
}
