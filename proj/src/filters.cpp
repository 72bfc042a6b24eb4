#include "hnext/filters.hpp"

#include <cmath>

namespace hnext {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void validate(int k, int n) {
    if (n < 1) throw ParameterError("ring count must be >= 1");
    if (k < 3 || k % 2 == 0) throw ParameterError("filter size must be odd and >= 3");
}

}  // namespace

double normalize_beta(double beta) {
    double b = std::fmod(beta, kTwoPi);
    if (b < 0.0) b += kTwoPi;
    return b;
}

RingInterpolation ring_interpolation(int k, int n, FilterMode mode) {
    validate(k, n);
    RingInterpolation interp;
    interp.k = k;
    interp.ring_radii.resize(n);
    const double max_radius = (k - 1) / 2.0;
    for (int j = 0; j < n; ++j) {
        interp.ring_radii[j] = (mode == FilterMode::HNET)
                                   ? static_cast<double>(j)
                                   : (n == 1 ? 0.0 : max_radius * j / (n - 1));
    }
    const double last = interp.ring_radii.back();
    const double center = (k - 1) / 2.0;
    interp.rows.resize(static_cast<std::size_t>(k) * k);
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const double dy = i - center;
            const double dx = j - center;
            const double r = std::sqrt(dx * dx + dy * dy);
            RingInterpolation::Entry& e = interp.rows[static_cast<std::size_t>(i) * k + j];
            if (r > last) continue;  // beyond the outermost ring: all-zero row
            // locate the ring pair bracketing r
            int hi = 0;
            while (hi < n && interp.ring_radii[hi] < r) ++hi;
            if (hi == 0 || interp.ring_radii[hi] == r) {
                e.ring[0] = (hi < n) ? hi : n - 1;
                e.weight[0] = 1.0;
                continue;
            }
            const int lo = hi - 1;
            const double r_lo = interp.ring_radii[lo];
            const double r_hi = interp.ring_radii[hi];
            e.ring[0] = lo;
            e.weight[0] = (r_hi - r) / (r_hi - r_lo);
            e.ring[1] = hi;
            e.weight[1] = (r - r_lo) / (r_hi - r_lo);
        }
    }
    return interp;
}

ComplexGrid synthesize_filter(const HarmonicFilterSpec& spec) {
    return synthesize_filter(spec, ring_interpolation(spec.k, static_cast<int>(spec.radial_weights.size()), spec.mode));
}

ComplexGrid synthesize_filter(const HarmonicFilterSpec& spec, const RingInterpolation& interp) {
    const int k = spec.k;
    validate(k, static_cast<int>(spec.radial_weights.size()));
    ComplexGrid filt(k, k);
    const double center = (k - 1) / 2.0;
    const double beta = spec.beta;
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const std::size_t px = static_cast<std::size_t>(i) * k + j;
            const double rad = interp.radial_value(px, spec.radial_weights);
            const double dx = j - center;
            const double dy = center - i;  // y axis up: Theta counter-clockwise
            if (spec.m1 != 0 && dx == 0.0 && dy == 0.0) {
                filt.at(i, j) = cplx{0.0, 0.0};
                continue;
            }
            const double theta = std::atan2(dy, dx);
            const double phase = spec.m1 * theta + beta;
            filt.at(i, j) = cplx{rad * std::cos(phase), rad * std::sin(phase)};
        }
    }
    return filt;
}

void filter_param_grad(const HarmonicFilterSpec& spec, const RingInterpolation& interp,
                       const ComplexGrid& grad_filter, double* grad_radial,
                       double* grad_beta) {
    const int k = spec.k;
    const double center = (k - 1) / 2.0;
    double gbeta = 0.0;
    for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
            const double dx = j - center;
            const double dy = center - i;
            if (spec.m1 != 0 && dx == 0.0 && dy == 0.0) continue;  // hard-zeroed center
            const double theta = std::atan2(dy, dx);
            const double phase = spec.m1 * theta + spec.beta;
            const double cp = std::cos(phase);
            const double sp = std::sin(phase);
            const std::size_t px = static_cast<std::size_t>(i) * k + j;
            const cplx g = grad_filter.values()[px];
            // W = rad * (cos, sin): dL/drad = g.re*cos + g.im*sin
            const double drad = g.real() * cp + g.imag() * sp;
            const RingInterpolation::Entry& e = interp.rows[px];
            if (e.ring[0] >= 0) grad_radial[e.ring[0]] += e.weight[0] * drad;
            if (e.ring[1] >= 0) grad_radial[e.ring[1]] += e.weight[1] * drad;
            // dW/dbeta = rad * (-sin, cos)
            const double rad = interp.radial_value(px, spec.radial_weights);
            gbeta += rad * (-sp * g.real() + cp * g.imag());
        }
    }
    *grad_beta += gbeta;
}

}  // namespace hnext
