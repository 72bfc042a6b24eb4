#pragma once

#include <cstddef>
#include <vector>

#include "hnext/grid.hpp"

namespace hnext {

// ---------------------------------------------------------------------------
// Global average pooling

// Mask-aware mean per channel over the mask-support pixels.
std::vector<double> gap_pool(const std::vector<RealGrid>& channels, const RealGrid& mask);

void gap_pool_backward(const std::vector<RealGrid>& channels, const RealGrid& mask,
                       const std::vector<double>& grad_out, std::vector<RealGrid>* grad_channels);

// ---------------------------------------------------------------------------
// Zernike moment pooling

// Zernike functions V_{n,l} = R_{n,l}(rho) e^{i l phi} sampled over the unit
// disk inscribed in the grid (zero outside), orthonormal convention
// sqrt((n+1)/pi). Only l >= 0 is stored; negative l follows by conjugacy.
struct ZernikeBasis {
    int grid_size = 0;
    int max_degree = 0;
    struct Index {
        int n;
        int l;
    };
    std::vector<Index> index;
    std::vector<ComplexGrid> grids;
    double pixel_area = 0.0;  // area of one pixel in unit-disk coordinates

    std::size_t moment_count() const { return index.size(); }
};

ZernikeBasis zernike_basis(int grid_size, int max_degree);

// Standard radial polynomial R_{n,l}(rho), l >= 0, n - l even.
double zernike_radial(int n, int l, double rho);

struct ZernikePoolCache {
    // per channel: centroid offset, mass, and the shifted basis samples
    struct Channel {
        double mass = 0.0;
        double offset_row = 0.0;
        double offset_col = 0.0;
        bool centroid_fallback = false;  // all-zero channel: geometric center used
        std::vector<ComplexGrid> shifted;             // basis re-centered at the centroid
        std::vector<ComplexGrid> shifted_grad_row;    // d(shifted)/d(row offset)
        std::vector<ComplexGrid> shifted_grad_col;    // d(shifted)/d(col offset)
        std::vector<cplx> moments;
    };
    std::vector<Channel> channels;
};

// Per channel: moments Z_{n,l} of the channel against the basis re-centered at
// the channel's intensity centroid (bilinear shift of the basis), emitted as
// |Z_{n,l}|. Output length = channels x moment_count, channel-major.
std::vector<double> zernike_pool(const std::vector<RealGrid>& channels, const ZernikeBasis& basis,
                                 ZernikePoolCache* cache = nullptr);

void zernike_pool_backward(const std::vector<RealGrid>& channels, const ZernikeBasis& basis,
                           const ZernikePoolCache& cache, const std::vector<double>& grad_out,
                           std::vector<RealGrid>* grad_channels);

// ---------------------------------------------------------------------------
// Invariant multi-head self-attention pooling

// 1x1xd tokens at every mask-support pixel; relative position enters only
// through a per-head bias indexed by the Euclidean-distance bucket of the
// token pair, so any grid isometry leaves the attention pattern intact.
struct MsaPoolConfig {
    int heads = 2;
    int model_width = 0;   // d, equals the channel count
    int key_width = 8;     // per-head query/key/value width
    int distance_buckets = 16;
};

struct MsaWeights {
    // row-major; wq/wk/wv are [d x heads*key_width], wo is [heads*key_width x d]
    std::vector<double> wq;
    std::vector<double> wk;
    std::vector<double> wv;
    std::vector<double> wo;
    std::vector<double> bias_table;  // [heads x distance_buckets]
};

struct MsaCache {
    std::vector<int> token_rows;
    std::vector<int> token_cols;
    std::vector<double> tokens;   // [T x d]
    std::vector<double> q, k, v;  // [T x heads*key_width]
    std::vector<double> attn;     // [heads x T x T] softmax rows
    std::vector<double> attended; // [T x heads*key_width]
    std::vector<int> bucket;      // [T x T]
};

// Output: mask-aware mean over tokens of the attended, output-projected
// values; length = model_width.
std::vector<double> msa_pool(const std::vector<RealGrid>& channels, const RealGrid& mask,
                             const MsaPoolConfig& config, const MsaWeights& weights,
                             MsaCache* cache = nullptr);

void msa_pool_backward(const MsaPoolConfig& config, const MsaWeights& weights,
                       const MsaCache& cache, const std::vector<double>& grad_out,
                       std::vector<RealGrid>* grad_channels, int height, int width,
                       MsaWeights* grad_weights);

}  // namespace hnext
