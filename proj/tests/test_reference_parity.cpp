#include "doctest.h"

#include <cmath>

#include "hnext/reference.hpp"
#include "hnext/rng.hpp"

using namespace hnext;

namespace {

ComplexGrid random_grid(int h, int w, Rng& rng) {
    ComplexGrid g(h, w);
    for (cplx& z : g.values()) z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    return g;
}

double grid_diff(const ComplexGrid& a, const ComplexGrid& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
    return worst;
}

}  // namespace

TEST_CASE("parallel rotation matches the serial reference bitwise") {
    Rng rng(401);
    for (int size : {7, 12, 28}) {
        const ComplexGrid g = random_grid(size, size, rng);
        for (double theta : {0.0, 0.35, 1.5707963267948966, 2.8, 4.71238898038469}) {
            CHECK(grid_diff(rotate_resample(g, theta),
                            ref::rotate_resample_serial(g, theta)) == 0.0);
        }
    }
}

TEST_CASE("parallel upscale matches the serial reference bitwise") {
    Rng rng(402);
    for (int factor : {2, 3}) {
        const ComplexGrid g = random_grid(9, 9, rng);
        CHECK(grid_diff(upscale_bilinear(g, factor),
                        ref::upscale_bilinear_serial(g, factor)) == 0.0);
    }
}

TEST_CASE("parallel h_conv matches the serial reference bitwise") {
    Rng rng(403);
    ConvLayerSpec spec;
    spec.in_num_orders = 2;
    spec.out_num_orders = 2;
    spec.in_channels = 2;
    spec.out_channels = 3;
    spec.k = 7;
    spec.rings = 4;

    std::vector<ComplexGrid> filters;
    for (std::size_t f = 0; f < spec.num_filters(); ++f)
        filters.push_back(random_grid(7, 7, rng));
    const RealGrid mask = make_circular_mask(16, 16);

    std::vector<StreamBundle> input(3);
    for (StreamBundle& b : input) {
        b.streams.resize(2);
        for (int s = 0; s < 2; ++s)
            for (int c = 0; c < 2; ++c) b.streams[s].push_back(random_grid(16, 16, rng));
    }

    const auto par = h_conv(input, spec, filters, &mask);
    const auto ser = ref::h_conv_serial(input, spec, filters, &mask);
    for (std::size_t b = 0; b < par.size(); ++b) CHECK(max_abs_diff(par[b], ser[b]) == 0.0);

    const auto par_nomask = h_conv(input, spec, filters, nullptr);
    const auto ser_nomask = ref::h_conv_serial(input, spec, filters, nullptr);
    for (std::size_t b = 0; b < par.size(); ++b)
        CHECK(max_abs_diff(par_nomask[b], ser_nomask[b]) == 0.0);
}

TEST_CASE("single-pair correlation kernel agrees with the naive loop") {
    Rng rng(404);
    const ComplexGrid in = random_grid(11, 11, rng);
    const ComplexGrid filt = random_grid(5, 5, rng);
    ConvLayerSpec spec;
    spec.k = 5;
    const std::vector<ComplexGrid> filters{filt};
    StreamBundle b;
    b.streams.resize(1);
    b.streams[0].push_back(in);
    const auto out = h_conv({b}, spec, filters, nullptr);
    const ComplexGrid expected = ref::xcorr_conj_same_serial(in, filt);
    CHECK(grid_diff(out[0].streams[0][0], expected) == 0.0);
}

TEST_CASE("zernike projection agrees with the naive serial loop") {
    Rng rng(405);
    const ZernikeBasis basis = zernike_basis(16, 4);
    RealGrid ch(16, 16);
    for (double& v : ch.values()) v = rng.uniform01();
    ch = apply_mask(ch, make_circular_mask(16, 16));

    // geometric-center moments via the pool (zero offset channel: use a
    // centered symmetric image so the centroid is the geometric center)
    const std::vector<cplx> ser = ref::zernike_project_serial(ch, basis.grids, basis.pixel_area);
    ZernikePoolCache cache;
    const std::vector<double> pooled = zernike_pool({ch}, basis, &cache);
    // compare against the shifted-basis moments from the cache
    REQUIRE(cache.channels[0].moments.size() == ser.size());
    // with the true (non-centered) centroid the moments differ; instead check
    // the serial projection against a manual zero-offset pool by re-running
    // with a perfectly centered impulse ring
    RealGrid ring(16, 16, 0.0);
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) {
            const double r = std::hypot(i - 7.5, j - 7.5);
            ring.at(i, j) = std::exp(-(r - 4.0) * (r - 4.0));
        }
    ZernikePoolCache ring_cache;
    const std::vector<double> ring_pooled = zernike_pool({ring}, basis, &ring_cache);
    const std::vector<cplx> ring_serial =
        ref::zernike_project_serial(ring, basis.grids, basis.pixel_area);
    for (std::size_t m = 0; m < ring_serial.size(); ++m)
        CHECK(std::abs(ring_pooled[m] - std::abs(ring_serial[m])) < 1e-9);
    (void)pooled;
}
