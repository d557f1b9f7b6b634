#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numeric>

#include "rimr/error.hpp"
#include "rimr/radar.hpp"
#include "rimr/rng.hpp"

using namespace rimr;
using namespace rimr::radar;
using geometry::Vec3;

namespace {

constexpr double kC = 299792458.0;

ReflectorScene scene_of(std::initializer_list<Vec3> pts, double refl = 1.0) {
    ReflectorScene s;
    for (const auto& p : pts) s.reflectors.push_back({p, refl});
    return s;
}

RadarConfig small_config() {
    RadarConfig c;
    c.azimuth_elements = 8;
    c.elevation_elements = 6;
    c.samples_per_chirp = 32;
    c.bandwidth = 0.5e9;
    c.fft_sizes = {8, 8, 32};
    return c;
}

// Direct evaluation of the point-scatterer sum using spherical angles.
std::complex<double> direct_sample(const ReflectorScene& s, const RadarConfig& c, std::size_t q, std::size_t p,
                                   std::size_t n) {
    std::complex<double> acc = 0;
    const double lambda = kC / c.carrier_freq;
    for (const auto& r : s.reflectors) {
        const Vec3 v = s.sensor_pose.apply(r.position);
        const double range = v.norm();
        const double az = std::atan2(v.x(), v.y());
        const double el = std::asin(v.z() / range);
        const double phase = 2 * c.bandwidth * range / (kC * c.samples_per_chirp) * n + 2 * c.carrier_freq * range / kC +
                             c.element_spacing / lambda * (p * std::sin(az) * std::cos(el) + q * std::sin(el));
        acc += r.reflectivity * std::polar(1.0, 2 * M_PI * phase);
    }
    return acc;
}

std::vector<float> range_profile(const IntensityMap& m) {
    std::vector<float> profile(m.dims[2], 0.0f);
    for (std::size_t i = 0; i < m.dims[0]; ++i)
        for (std::size_t j = 0; j < m.dims[1]; ++j)
            for (std::size_t k = 0; k < m.dims[2]; ++k) profile[k] = std::max(profile[k], m.at(i, j, k));
    return profile;
}

std::size_t range_peak(const IntensityMap& m) {
    const auto profile = range_profile(m);
    return static_cast<std::size_t>(std::max_element(profile.begin(), profile.end()) - profile.begin());
}

std::array<std::size_t, 3> argmax3(const IntensityMap& m) {
    const auto it = std::max_element(m.values.begin(), m.values.end());
    const std::size_t idx = static_cast<std::size_t>(it - m.values.begin());
    return {idx / (m.dims[1] * m.dims[2]), (idx / m.dims[2]) % m.dims[1], idx % m.dims[2]};
}

const std::size_t kMiddleRows[] = {31, 32};

}  // namespace

TEST_CASE("default config values") {
    RadarConfig c;
    CHECK(c.range_resolution() == doctest::Approx(0.0374741).epsilon(1e-5));
    CHECK(c.element_spacing == doctest::Approx(c.wavelength() / 2));
    CHECK_NOTHROW(c.validate());
    CHECK(RadarConfig::from_key_values(c.to_key_values()) == c);
    RadarConfig bad = c;
    bad.samples_per_chirp = 128;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.snapshot_count = 65;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = c;
    bad.azimuth_elements = 65;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("empty scene gives an all-zero cube") {
    const auto raw = synthesize_raw(ReflectorScene{}, small_config());
    CHECK(raw.data.size() == 6 * 8 * 32);
    for (const auto& v : raw.data) REQUIRE(v == std::complex<double>{});
}

TEST_CASE("boresight reflector has equal magnitude on every element") {
    const auto cfg = small_config();
    const auto raw = synthesize_raw(scene_of({Vec3(0, 2, 0)}, 0.7), cfg);
    for (std::size_t q = 0; q < cfg.elevation_elements; ++q)
        for (std::size_t p = 0; p < cfg.azimuth_elements; ++p)
            for (std::size_t n = 0; n < cfg.samples_per_chirp; ++n) {
                REQUIRE(std::abs(raw.at(q, p, n)) == doctest::Approx(0.7).epsilon(1e-12));
                REQUIRE(std::abs(raw.at(q, p, n) - raw.at(0, 0, n)) < 1e-12);
            }
}

TEST_CASE("fast-time signal matches the closed-form phase") {
    RadarConfig cfg;
    const std::size_t rows[] = {0, 1};
    const auto raw = synthesize_raw(scene_of({Vec3(0, 1.5, 0)}), cfg, rows);
    const double f = 2 * 4e9 * 1.5 / (kC * 256);
    for (std::size_t n = 0; n < 256; ++n) {
        const auto expect = std::polar(1.0, 2 * M_PI * (f * n + 2 * 60e9 * 1.5 / kC));
        REQUIRE(std::abs(raw.at(0, 0, n) - expect) < 1e-9);
    }
}

TEST_CASE("synthesis agrees with direct spherical evaluation") {
    const auto cfg = small_config();
    auto eng = rng::stream(1, "radar-test");
    ReflectorScene s;
    s.sensor_pose = geometry::sensor_look_at(Vec3(0.3, -2, 0.2), Vec3(0, 0, 0));
    for (int i = 0; i < 5; ++i) {
        s.reflectors.push_back({Vec3(rng::uniform(eng, -0.5, 0.5), rng::uniform(eng, -0.5, 0.5),
                                     rng::uniform(eng, -0.5, 0.5)),
                                rng::uniform(eng, 0.1, 2.0)});
    }
    const auto raw = synthesize_raw(s, cfg);
    double worst = 0;
    for (std::size_t q = 0; q < cfg.elevation_elements; ++q)
        for (std::size_t p = 0; p < cfg.azimuth_elements; ++p)
            for (std::size_t n = 0; n < cfg.samples_per_chirp; ++n)
                worst = std::max(worst, std::abs(raw.at(q, p, n) - direct_sample(s, cfg, q, p, n)));
    CHECK(worst < 1e-9);
}

TEST_CASE("reflectors beyond the unambiguous range are rejected") {
    RadarConfig cfg;
    try {
        synthesize_raw(scene_of({Vec3(0, 12.5, 0)}), cfg);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("12.5") != std::string::npos);
    }
    CHECK_THROWS_AS(synthesize_raw(scene_of({Vec3(0, 0, 0)}), cfg), ConfigError);
    CHECK_THROWS_AS(synthesize_raw(scene_of({Vec3(0, 1, 0)}, -1), cfg), ConfigError);
}

TEST_CASE("range peak of a reflector at 1.5 m is bin 40") {
    RadarConfig cfg;
    const auto map = process_fft(synthesize_raw(scene_of({Vec3(0, 1.5, 0)}), cfg, kMiddleRows), cfg);
    CHECK(map.frame == Frame::Polar);
    CHECK(map.dims == std::array<std::size_t, 3>{64, 64, 256});
    const long peak = static_cast<long>(range_peak(map));
    CHECK(std::abs(peak - std::lround(1.5 / cfg.range_resolution())) <= 1);
    CHECK(std::lround(1.5 / cfg.range_resolution()) == 40);
    for (float v : map.values) REQUIRE(v >= 0.0f);
}

TEST_CASE("boresight reflector peaks at the centre angle bins") {
    RadarConfig cfg;
    const auto map = process_fft(synthesize_raw(scene_of({Vec3(0, 2, 0)}), cfg), cfg);
    const auto a = argmax3(map);
    CHECK(std::abs(static_cast<long>(a[0]) - 32) <= 1);
    CHECK(std::abs(static_cast<long>(a[1]) - 32) <= 1);
}

TEST_CASE("off-axis reflector peaks at its predicted angle bins") {
    RadarConfig cfg;
    const Vec3 p(0.6, 2.0, -0.4);
    const auto map = process_fft(synthesize_raw(scene_of({p}), cfg), cfg);
    const auto a = argmax3(map);
    const auto expect = polar_bin(p, cfg);
    for (int k = 0; k < 3; ++k) CHECK(std::abs(static_cast<double>(a[k]) - expect[k]) <= 1.0);
}

TEST_CASE("two reflectors give two distinct range peaks") {
    RadarConfig cfg;
    const double dr = cfg.range_resolution();
    const auto map = process_fft(synthesize_raw(scene_of({Vec3(0, 60 * dr, 0), Vec3(0, 66 * dr, 0)}), cfg, kMiddleRows), cfg);
    const auto prof = range_profile(map);
    std::vector<std::size_t> peaks;
    for (std::size_t k = 1; k + 1 < prof.size(); ++k) {
        if (prof[k] > prof[k - 1] && prof[k] >= prof[k + 1] && prof[k] > 0.5f * *std::max_element(prof.begin(), prof.end()))
            peaks.push_back(k);
    }
    REQUIRE(peaks.size() == 2);
    CHECK(std::abs(static_cast<long>(peaks[0]) - 60) <= 1);
    CHECK(std::abs(static_cast<long>(peaks[1]) - 66) <= 1);
}

TEST_CASE("linearity of synthesis") {
    const auto cfg = small_config();
    auto eng = rng::stream(2, "radar-test");
    for (int trial = 0; trial < 10; ++trial) {
        ReflectorScene a, b, ab;
        for (int i = 0; i < 4; ++i) {
            const Reflector r{Vec3(rng::uniform(eng, -1, 1), rng::uniform(eng, 0.5, 3), rng::uniform(eng, -1, 1)),
                              rng::uniform(eng, 0, 2)};
            (i % 2 ? a : b).reflectors.push_back(r);
        }
        ab.reflectors = a.reflectors;
        ab.reflectors.insert(ab.reflectors.end(), b.reflectors.begin(), b.reflectors.end());
        const auto ra = synthesize_raw(a, cfg), rb = synthesize_raw(b, cfg), rab = synthesize_raw(ab, cfg);
        for (std::size_t i = 0; i < rab.data.size(); ++i) {
            const auto sum = ra.data[i] + rb.data[i];
            REQUIRE(std::abs(rab.data[i] - sum) <= 1e-9 * std::max(1.0, std::abs(sum)));
        }
    }
}

TEST_CASE("reflectivity scaling is homogeneous") {
    const auto cfg = small_config();
    const auto base = scene_of({Vec3(0.2, 1.0, 0.1), Vec3(-0.3, 0.7, 0.0)});
    auto scaled = base;
    const double s = 3.5;
    for (auto& r : scaled.reflectors) r.reflectivity *= s;
    const auto r1 = synthesize_raw(base, cfg), r2 = synthesize_raw(scaled, cfg);
    for (std::size_t i = 0; i < r1.data.size(); ++i) REQUIRE(std::abs(r2.data[i] - s * r1.data[i]) < 1e-9);
    const auto m1 = process_fft(r1, cfg), m2 = process_fft(r2, cfg);
    for (std::size_t i = 0; i < m1.values.size(); ++i) {
        REQUIRE(m2.values[i] == doctest::Approx(s * m1.values[i]).epsilon(1e-5).scale(1e-3));
    }
}

TEST_CASE("range peak error is at most one bin over the supported span") {
    RadarConfig cfg;
    auto eng = rng::stream(3, "radar-test");
    const double dr = cfg.range_resolution();
    for (int trial = 0; trial < 12; ++trial) {
        const double r = rng::uniform(eng, 10 * dr, 200 * dr);
        const double az = rng::uniform(eng, -0.5, 0.5), el = rng::uniform(eng, -0.3, 0.3);
        const Vec3 p = r * Vec3(std::sin(az) * std::cos(el), std::cos(az) * std::cos(el), std::sin(el));
        const auto map = process_fft(synthesize_raw(scene_of({p}), cfg, kMiddleRows), cfg);
        CHECK(std::abs(static_cast<double>(range_peak(map)) - r / dr) <= 1.0);
    }
}

TEST_CASE("row-restricted synthesis equals snapshot selection") {
    const auto cfg = [] {
        auto c = small_config();
        c.snapshot_count = 2;
        return c;
    }();
    const auto scene = scene_of({Vec3(0.2, 1.0, 0.1), Vec3(-0.3, 0.7, 0.4)});
    const std::size_t rows[] = {1, 4};
    const auto a = synthesize_raw(scene, cfg, rows);
    const auto b = select_snapshots(synthesize_raw(scene, cfg), rows, cfg);
    for (std::size_t i = 0; i < a.data.size(); ++i) REQUIRE(std::abs(a.data[i] - b.data[i]) < 1e-12);
}

TEST_CASE("select_snapshots") {
    RadarConfig cfg;
    const auto full = synthesize_raw(scene_of({Vec3(0.1, 1.5, 0.05)}), cfg);

    auto all_cfg = cfg;
    all_cfg.snapshot_count = 64;
    std::vector<std::size_t> all(64);
    std::iota(all.begin(), all.end(), std::size_t{0});
    CHECK(select_snapshots(full, all, all_cfg).data == full.data);

    const auto sel = select_snapshots(full, kMiddleRows, cfg);
    std::size_t zero_rows = 0;
    for (std::size_t q = 0; q < 64; ++q) {
        bool zero = true;
        for (std::size_t p = 0; p < 64; ++p)
            for (std::size_t n = 0; n < 256; ++n) zero = zero && sel.at(q, p, n) == std::complex<double>{};
        zero_rows += zero;
    }
    CHECK(zero_rows == 62);
    CHECK(range_peak(process_fft(sel, cfg)) == range_peak(process_fft(full, cfg)));

    const std::size_t dup[] = {3, 3}, out_of_range[] = {3, 64}, three[] = {1, 2, 3};
    CHECK_THROWS_AS(select_snapshots(full, dup, cfg), ConfigError);
    CHECK_THROWS_AS(select_snapshots(full, out_of_range, cfg), ConfigError);
    CHECK_THROWS_AS(select_snapshots(full, three, cfg), ConfigError);
}

TEST_CASE("to_cartesian exact grid hit and zero map") {
    RadarConfig cfg;
    IntensityMap polar;
    polar.dims = {64, 64, 256};
    polar.config = cfg;
    polar.values.assign(64 * 64 * 256, 0.0f);
    const double dr = cfg.range_resolution();
    // 3 x 3 x 1 grid whose centre voxel sits on boresight at exactly 50 bins.
    geometry::Bounds b{Vec3(-0.15, 50 * dr - 0.01, -0.15), Vec3(0.15, 50 * dr + 0.01, 0.15)};
    auto zero = to_cartesian(polar, b, {3, 3, 1});
    for (float v : zero.values) CHECK(v == 0.0f);
    polar.values[(32 * 64 + 32) * 256 + 50] = 7.0f;
    const auto cart = to_cartesian(polar, b, {3, 3, 1});
    CHECK(cart.frame == Frame::Cartesian);
    CHECK(cart.at(1, 1, 0) == 7.0f);
    CHECK((cartesian_voxel_center(cart, 1, 1, 0) - Vec3(0, 50 * dr, 0)).norm() < 1e-12);
    CHECK(cartesian_voxel_center(cart, 0, 1, 0).z() > cartesian_voxel_center(cart, 2, 1, 0).z());

    CHECK_THROWS_AS(to_cartesian(polar, geometry::Bounds{Vec3(0, 1, 0), Vec3(1, 1, 1)}), ConfigError);
    CHECK_THROWS_AS(to_cartesian(cart, b), ConfigError);
}

TEST_CASE("to_cartesian argmax is consistent with the polar peak") {
    RadarConfig cfg;
    const Vec3 p(0.2, 1.2, -0.15);
    const auto polar = process_fft(synthesize_raw(scene_of({p}), cfg), cfg);
    const geometry::Bounds b{Vec3(-1, 0.2, -1), Vec3(1, 2.2, 1)};
    const auto cart = to_cartesian(polar, b, {32, 32, 64});
    const auto pa = argmax3(polar);
    const Vec3 polar_pos = polar_bin_position({double(pa[0]), double(pa[1]), double(pa[2])}, cfg);
    const auto ca = argmax3(cart);
    const Vec3 cart_pos = cartesian_voxel_center(cart, ca[0], ca[1], ca[2]);
    const double diag = Vec3(2.0 / 32, 2.0 / 64, 2.0 / 32).norm();
    CHECK((cart_pos - polar_pos).norm() <= diag);

    const float pmax = *std::max_element(polar.values.begin(), polar.values.end());
    for (float v : cart.values) {
        REQUIRE(v >= 0.0f);
        REQUIRE(v <= pmax);
    }
}

TEST_CASE("polar bin helpers invert each other") {
    RadarConfig cfg;
    auto eng = rng::stream(5, "radar-test");
    for (int i = 0; i < 50; ++i) {
        const Vec3 p(rng::uniform(eng, -1, 1), rng::uniform(eng, 0.5, 4), rng::uniform(eng, -1, 1));
        CHECK((polar_bin_position(polar_bin(p, cfg), cfg) - p).norm() < 1e-9);
    }
    const auto s = to_spherical(Vec3(1, 1, 0));
    CHECK(s.azimuth == doctest::Approx(M_PI / 4));
    CHECK(s.elevation == doctest::Approx(0.0));
}

TEST_CASE("noise and specular dropout") {
    const auto cfg = small_config();
    const auto scene = scene_of({Vec3(0, 1, 0)});
    auto raw = synthesize_raw(scene, cfg);
    auto noisy = raw;
    add_noise(noisy, 10, 1);
    double sig = 0, err = 0;
    for (std::size_t i = 0; i < raw.data.size(); ++i) {
        sig += std::norm(raw.data[i]);
        err += std::norm(noisy.data[i] - raw.data[i]);
    }
    CHECK(10 * std::log10(sig / err) == doctest::Approx(10).epsilon(0.1));
    auto again = raw;
    add_noise(again, 10, 1);
    CHECK(again.data == noisy.data);

    const std::vector<Reflector> refl{{Vec3(0, 0, 0), 1}, {Vec3(0, 0, 0), 1}, {Vec3(0, 0, 0), 1}};
    const std::vector<Vec3> normals{Vec3(0, -1, 0), Vec3(1, -1, 0).normalized(), Vec3(0, 1, 0)};
    const auto pose = geometry::sensor_look_at(Vec3(0, -2, 0), Vec3(0, 0, 0));
    CHECK(specular_filter(refl, normals, pose, 30).size() == 1);
    CHECK(specular_filter(refl, normals, pose, 50).size() == 2);
}
