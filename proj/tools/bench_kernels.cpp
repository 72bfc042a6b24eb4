// Wall-clock comparison of the OpenMP kernels against the serial reference
// implementations, on layer shapes the MNIST configs actually use.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "hnext/backbone.hpp"
#include "hnext/reference.hpp"
#include "hnext/rng.hpp"

using namespace hnext;

namespace {

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ComplexGrid random_grid(int h, int w, Rng& rng) {
    ComplexGrid g(h, w);
    for (cplx& z : g.values()) z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    return g;
}

void bench_conv(int size, int k, int in_ch, int out_ch, int orders, int batch, int reps) {
    Rng rng(1234);
    ConvLayerSpec spec;
    spec.in_num_orders = orders;
    spec.out_num_orders = orders;
    spec.in_channels = in_ch;
    spec.out_channels = out_ch;
    spec.k = k;
    spec.rings = (k + 1) / 2;

    std::vector<ComplexGrid> filters;
    for (std::size_t f = 0; f < spec.num_filters(); ++f) filters.push_back(random_grid(k, k, rng));
    std::vector<StreamBundle> input(batch);
    for (StreamBundle& b : input) {
        b.streams.assign(orders, {});
        for (int s = 0; s < orders; ++s)
            for (int c = 0; c < in_ch; ++c) b.streams[s].push_back(random_grid(size, size, rng));
    }

    auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) {
        auto out = h_conv(input, spec, filters, nullptr);
        (void)out;
    }
    const double parallel_s = seconds_since(t0) / reps;

    t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) {
        auto out = ref::h_conv_serial(input, spec, filters, nullptr);
        (void)out;
    }
    const double serial_s = seconds_since(t0) / reps;

    // parity check on the last run
    auto a = h_conv(input, spec, filters, nullptr);
    auto b = ref::h_conv_serial(input, spec, filters, nullptr);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, max_abs_diff(a[i], b[i]));

    std::printf("h_conv %3dx%-3d k=%-2d ch=%dx%d orders=%d batch=%-2d  omp %8.2f ms  serial %8.2f ms  speedup %.2fx  maxdiff %.1e\n",
                size, size, k, in_ch, out_ch, orders, batch, parallel_s * 1e3, serial_s * 1e3,
                serial_s / parallel_s, worst);
}

void bench_rotate(int size, int reps) {
    Rng rng(99);
    ComplexGrid g = random_grid(size, size, rng);
    auto t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) {
        auto out = rotate_resample(g, 0.7);
        (void)out;
    }
    const double parallel_s = seconds_since(t0) / reps;
    t0 = std::chrono::steady_clock::now();
    for (int r = 0; r < reps; ++r) {
        auto out = ref::rotate_resample_serial(g, 0.7);
        (void)out;
    }
    const double serial_s = seconds_since(t0) / reps;
    const auto a = rotate_resample(g, 0.7);
    const auto b = ref::rotate_resample_serial(g, 0.7);
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        worst = std::max(worst, std::abs(a.values()[i] - b.values()[i]));
    std::printf("rotate %4dx%-4d                               omp %8.3f ms  serial %8.3f ms  speedup %.2fx  maxdiff %.1e\n",
                size, size, parallel_s * 1e3, serial_s * 1e3, serial_s / parallel_s, worst);
}

}  // namespace

int main() {
#ifdef _OPENMP
    std::printf("openmp threads: %d\n", omp_get_max_threads());
#else
    std::printf("built without openmp\n");
#endif
    bench_conv(56, 9, 4, 4, 2, 8, 3);
    bench_conv(28, 9, 4, 4, 2, 8, 3);
    bench_conv(28, 5, 8, 8, 3, 8, 3);
    bench_conv(56, 15, 8, 8, 3, 1, 1);
    bench_rotate(28, 50);
    bench_rotate(256, 5);
    return 0;
}
