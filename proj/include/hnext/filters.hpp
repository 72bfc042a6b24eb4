#pragma once

#include <vector>

#include "hnext/grid.hpp"

namespace hnext {

enum class FilterMode { HNET, HNEXT };

// A circular-harmonic filter: radial profile R given by n ring weights,
// angular factor e^{i(m1*Theta + beta)}. The ring layout depends on the
// discretization mode: HNET places rings at 0,1,...,n-1 px; HNEXT spreads
// them evenly from 0 to the filter radius (k-1)/2.
struct HarmonicFilterSpec {
    int m1 = 0;
    std::vector<double> radial_weights;
    double beta = 0.0;  // normalized into [0, 2pi)
    int k = 15;
    FilterMode mode = FilterMode::HNEXT;
};

// Sparse map from n ring values to k*k pixel radial samples. Each row holds
// at most two adjacent-ring weights that sum to a value in [0,1]; rows for
// pixels beyond the last ring are empty.
struct RingInterpolation {
    std::vector<double> ring_radii;
    int k = 0;
    // per pixel: (ring index, weight) pairs, at most 2 entries
    struct Entry {
        int ring[2] = {-1, -1};
        double weight[2] = {0.0, 0.0};
    };
    std::vector<Entry> rows;  // k*k, row-major

    double radial_value(std::size_t pixel, const std::vector<double>& ring_weights) const {
        const Entry& e = rows[pixel];
        double v = 0.0;
        if (e.ring[0] >= 0) v += e.weight[0] * ring_weights[e.ring[0]];
        if (e.ring[1] >= 0) v += e.weight[1] * ring_weights[e.ring[1]];
        return v;
    }
};

RingInterpolation ring_interpolation(int k, int n, FilterMode mode);

double normalize_beta(double beta);

// Samples Eq-style R(r) * e^{i(m1*Theta + beta)} on a k x k grid. Theta is the
// counter-clockwise polar angle about the filter center (y axis up). For
// m1 != 0 the center pixel is exactly zero: the angle is undefined at r = 0
// and zero is the only rotation-consistent value there.
ComplexGrid synthesize_filter(const HarmonicFilterSpec& spec);
ComplexGrid synthesize_filter(const HarmonicFilterSpec& spec, const RingInterpolation& interp);

// Accumulates d(loss)/d(ring weights) and d(loss)/d(beta) from the gradient of
// the loss with respect to the sampled filter pixels. grad_filter packs
// dL/d(Re W) + i*dL/d(Im W).
void filter_param_grad(const HarmonicFilterSpec& spec, const RingInterpolation& interp,
                       const ComplexGrid& grad_filter, double* grad_radial,
                       double* grad_beta);

}  // namespace hnext
