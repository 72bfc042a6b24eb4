#include "doctest.h"

#include <cmath>

#include "hnext/config.hpp"
#include "hnext/filters.hpp"
#include "hnext/grid.hpp"
#include "hnext/rng.hpp"

using namespace hnext;

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

HarmonicFilterSpec make_spec(int m1, double beta, int k, int n, FilterMode mode,
                             std::uint64_t seed) {
    Rng rng(seed);
    HarmonicFilterSpec spec;
    spec.m1 = m1;
    spec.beta = beta;
    spec.k = k;
    spec.mode = mode;
    for (int i = 0; i < n; ++i) spec.radial_weights.push_back(rng.uniform(-1.0, 1.0));
    return spec;
}

double max_diff(const ComplexGrid& a, const ComplexGrid& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
    return worst;
}

}  // namespace

TEST_CASE("hnext rings for k=15 n=8 sit at integer radii") {
    const RingInterpolation ri = ring_interpolation(15, 8, FilterMode::HNEXT);
    REQUIRE(ri.ring_radii.size() == 8);
    for (int j = 0; j < 8; ++j) CHECK(ri.ring_radii[j] == doctest::Approx(j));
}

TEST_CASE("hnet rings sit at 0,1,...,n-1 regardless of k") {
    const RingInterpolation ri = ring_interpolation(9, 3, FilterMode::HNET);
    REQUIRE(ri.ring_radii.size() == 3);
    CHECK(ri.ring_radii[0] == 0.0);
    CHECK(ri.ring_radii[1] == 1.0);
    CHECK(ri.ring_radii[2] == 2.0);
}

TEST_CASE("center pixel is the indicator of ring 0") {
    for (FilterMode mode : {FilterMode::HNET, FilterMode::HNEXT}) {
        const RingInterpolation ri = ring_interpolation(5, 3, mode);
        const auto& row = ri.rows[2 * 5 + 2];
        CHECK(row.ring[0] == 0);
        CHECK(row.weight[0] == 1.0);
        CHECK(row.ring[1] == -1);
    }
}

TEST_CASE("k=3 n=2 hnext: corners beyond the last ring have empty rows") {
    const RingInterpolation ri = ring_interpolation(3, 2, FilterMode::HNEXT);
    // evaluate the rule at each of the 9 pixels: corner radius sqrt(2) > 1
    for (int corner : {0, 2, 6, 8}) {
        CHECK(ri.rows[corner].ring[0] == -1);
        CHECK(ri.rows[corner].ring[1] == -1);
    }
    // edge midpoints sit exactly on ring 1
    for (int edge : {1, 3, 5, 7}) {
        CHECK(ri.rows[edge].ring[0] == 1);
        CHECK(ri.rows[edge].weight[0] == 1.0);
    }
}

TEST_CASE("interpolation rows sum to a weight in [0,1]") {
    for (FilterMode mode : {FilterMode::HNET, FilterMode::HNEXT}) {
        const RingInterpolation ri = ring_interpolation(15, 4, mode);
        for (const auto& row : ri.rows) {
            double sum = 0.0;
            if (row.ring[0] >= 0) sum += row.weight[0];
            if (row.ring[1] >= 0) sum += row.weight[1];
            CHECK(sum >= 0.0);
            CHECK(sum <= 1.0 + 1e-15);
        }
    }
}

TEST_CASE("ring interpolation rejects bad parameters") {
    CHECK_THROWS_AS(ring_interpolation(15, 0, FilterMode::HNEXT), ParameterError);
    CHECK_THROWS_AS(ring_interpolation(4, 2, FilterMode::HNEXT), ParameterError);
    CHECK_THROWS_AS(ring_interpolation(1, 1, FilterMode::HNET), ParameterError);
}

TEST_CASE("order zero with beta zero is purely real") {
    const auto spec = make_spec(0, 0.0, 9, 4, FilterMode::HNEXT, 31);
    const ComplexGrid f = synthesize_filter(spec);
    for (const cplx& v : f.values()) CHECK(v.imag() == 0.0);
}

TEST_CASE("conjugation symmetry: negate order and beta") {
    auto spec = make_spec(2, 1.1, 9, 4, FilterMode::HNEXT, 32);
    const ComplexGrid f = synthesize_filter(spec);
    auto conj_spec = spec;
    conj_spec.m1 = -2;
    conj_spec.beta = normalize_beta(-1.1);
    const ComplexGrid g = synthesize_filter(conj_spec);
    for (std::size_t i = 0; i < f.size(); ++i)
        CHECK(std::abs(g.values()[i] - std::conj(f.values()[i])) < 1e-14);
}

TEST_CASE("steerability: quarter turn multiplies by e^{i m pi/2}") {
    for (int m : {-2, -1, 0, 1, 2, 3}) {
        const auto spec = make_spec(m, 0.7, 11, 5, FilterMode::HNEXT, 33 + m);
        const ComplexGrid f = synthesize_filter(spec);
        const ComplexGrid rot = rotate_resample(f, kPi / 2.0);
        const cplx phase{std::cos(m * kPi / 2.0), std::sin(m * kPi / 2.0)};
        double worst = 0.0;
        for (std::size_t i = 0; i < f.size(); ++i)
            worst = std::max(worst, std::abs(rot.values()[i] - phase * f.values()[i]));
        CHECK(worst < 1e-13);
        if (m != 0) CHECK(f.at(5, 5) == cplx{0.0, 0.0});  // zeroed center survives exactly
    }
}

TEST_CASE("synthesis is linear in the radial weights") {
    auto s1 = make_spec(1, 0.4, 9, 4, FilterMode::HNEXT, 41);
    auto s2 = s1;
    Rng rng(42);
    for (double& w : s2.radial_weights) w = rng.uniform(-1.0, 1.0);
    auto combo = s1;
    const double a = 0.8;
    const double b = -1.3;
    for (std::size_t i = 0; i < combo.radial_weights.size(); ++i)
        combo.radial_weights[i] = a * s1.radial_weights[i] + b * s2.radial_weights[i];
    const ComplexGrid f1 = synthesize_filter(s1);
    const ComplexGrid f2 = synthesize_filter(s2);
    const ComplexGrid fc = synthesize_filter(combo);
    double worst = 0.0;
    for (std::size_t i = 0; i < fc.size(); ++i)
        worst = std::max(worst,
                         std::abs(fc.values()[i] - (a * f1.values()[i] + b * f2.values()[i])));
    CHECK(worst < 1e-14);
}

TEST_CASE("beta factors out as a global phase") {
    auto spec = make_spec(2, 0.0, 9, 4, FilterMode::HNEXT, 43);
    const ComplexGrid base = synthesize_filter(spec);
    spec.beta = 1.9;
    const ComplexGrid shifted = synthesize_filter(spec);
    const cplx phase{std::cos(1.9), std::sin(1.9)};
    double worst = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i)
        worst = std::max(worst, std::abs(shifted.values()[i] - phase * base.values()[i]));
    CHECK(worst < 1e-14);
}

TEST_CASE("hnet support radius is n-1; hnext fills the filter") {
    const int n = 3;
    const int k = 2 * n + 1;
    auto hnet = make_spec(0, 0.0, k, n, FilterMode::HNET, 44);
    for (double& w : hnet.radial_weights) w = 1.0;
    const ComplexGrid f = synthesize_filter(hnet);
    const double center = (k - 1) / 2.0;
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
            const double r = std::hypot(i - center, j - center);
            if (r > n - 1 + 1e-12) CHECK(f.at(i, j) == cplx{0.0, 0.0});
        }
    auto hnext_spec = hnet;
    hnext_spec.mode = FilterMode::HNEXT;
    const ComplexGrid g = synthesize_filter(hnext_spec);
    // the outermost ring now reaches the mid-edge pixels
    CHECK(std::abs(g.at(0, n)) > 0.0);
}

TEST_CASE("filter parameter count: n rings plus one phase offset") {
    // one filter with n=8 rings contributes 9 parameters
    NetworkConfig cfg;
    cfg.blocks = {{1, 1}};
    cfg.max_order = 0;
    cfg.rings = 8;
    cfg.upscale = 1;
    cfg.input_size = 28;
    cfg.readout = ReadoutMode::WIDE;
    cfg.pooling = PoolingHead::GAP;
    // 1 filter (9) + bn 2 + bias 1 + classifier 10*1+10
    CHECK(count_parameters(cfg) == 9 + 3 + 20);
}

TEST_CASE("empty backbone counts only the classifier") {
    NetworkConfig cfg;
    cfg.blocks = {};
    cfg.upscale = 1;
    cfg.pooling = PoolingHead::GAP;
    cfg.readout = ReadoutMode::WIDE;
    // d = input_channels = 1
    CHECK(count_parameters(cfg) == 10 * 1 + 10);
}

TEST_CASE("reference mnist config lands on the 28k budget") {
    NetworkConfig cfg;  // defaults are the reference config
    const long params = count_parameters(cfg);
    CHECK(params >= 28000 * 0.8);
    CHECK(params <= 28000 * 1.2);
}
