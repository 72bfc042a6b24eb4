#include "hnext/grid.hpp"

#include <cmath>

namespace hnext {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// cos/sin pairs for exact quarter turns; libm cos(M_PI/2) is ~6e-17, which
// would smear an exact permutation across neighbouring pixels.
struct CosSin {
    double c;
    double s;
};

CosSin rotation_cos_sin(double theta) {
    const double quarter = theta / (kPi / 2.0);
    const double nearest = std::round(quarter);
    if (std::abs(quarter - nearest) < 1e-9) {
        const int q = static_cast<int>(std::llround(nearest)) & 3;
        static constexpr double kCos[4] = {1.0, 0.0, -1.0, 0.0};
        static constexpr double kSin[4] = {0.0, 1.0, 0.0, -1.0};
        return {kCos[q < 0 ? q + 4 : q], kSin[q < 0 ? q + 4 : q]};
    }
    return {std::cos(theta), std::sin(theta)};
}

// Bilinear sample of `comps` interleaved double components at (row, col);
// outside the frame reads as zero.
inline void bilinear_zero(const double* src, int h, int w, int comps,
                          double row, double col, double* out) {
    const double fr = std::floor(row);
    const double fc = std::floor(col);
    const int r0 = static_cast<int>(fr);
    const int c0 = static_cast<int>(fc);
    const double wr = row - fr;
    const double wc = col - fc;
    for (int k = 0; k < comps; ++k) out[k] = 0.0;
    const double weights[4] = {(1.0 - wr) * (1.0 - wc), (1.0 - wr) * wc,
                               wr * (1.0 - wc), wr * wc};
    const int rows[4] = {r0, r0, r0 + 1, r0 + 1};
    const int cols[4] = {c0, c0 + 1, c0, c0 + 1};
    for (int t = 0; t < 4; ++t) {
        const int r = rows[t];
        const int c = cols[t];
        if (r < 0 || r >= h || c < 0 || c >= w || weights[t] == 0.0) continue;
        const double* p = src + (static_cast<std::size_t>(r) * w + c) * comps;
        for (int k = 0; k < comps; ++k) out[k] += weights[t] * p[k];
    }
}

void rotate_raw(const double* src, int h, int w, int comps, double theta, double* dst) {
    const GridGeometry geo = GridGeometry::of(h, w);
    const CosSin cs = rotation_cos_sin(theta);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < h; ++i) {
        const double a = i - geo.center_row;
        for (int j = 0; j < w; ++j) {
            const double b = j - geo.center_col;
            const double xs = geo.center_col + cs.c * b + cs.s * a;
            const double ys = geo.center_row - cs.s * b + cs.c * a;
            bilinear_zero(src, h, w, comps, ys, xs,
                          dst + (static_cast<std::size_t>(i) * w + j) * comps);
        }
    }
}

inline double upscale_coord(int dst, int factor) {
    return (dst + 0.5) / factor - 0.5;
}

void upscale_raw(const double* src, int h, int w, int comps, int factor, double* dst) {
    const int oh = h * factor;
    const int ow = w * factor;
#pragma omp parallel for schedule(static)
    for (int i = 0; i < oh; ++i) {
        double sr = upscale_coord(i, factor);
        sr = std::min(std::max(sr, 0.0), static_cast<double>(h - 1));  // clamp: constants stay constant
        const int r0 = static_cast<int>(std::floor(sr));
        const int r1 = std::min(r0 + 1, h - 1);
        const double wr = sr - r0;
        for (int j = 0; j < ow; ++j) {
            double sc = upscale_coord(j, factor);
            sc = std::min(std::max(sc, 0.0), static_cast<double>(w - 1));
            const int c0 = static_cast<int>(std::floor(sc));
            const int c1 = std::min(c0 + 1, w - 1);
            const double wc = sc - c0;
            const double* p00 = src + (static_cast<std::size_t>(r0) * w + c0) * comps;
            const double* p01 = src + (static_cast<std::size_t>(r0) * w + c1) * comps;
            const double* p10 = src + (static_cast<std::size_t>(r1) * w + c0) * comps;
            const double* p11 = src + (static_cast<std::size_t>(r1) * w + c1) * comps;
            double* q = dst + (static_cast<std::size_t>(i) * ow + j) * comps;
            for (int k = 0; k < comps; ++k) {
                q[k] = (1.0 - wr) * ((1.0 - wc) * p00[k] + wc * p01[k]) +
                       wr * ((1.0 - wc) * p10[k] + wc * p11[k]);
            }
        }
    }
}

}  // namespace

bool all_finite(const ComplexGrid& g) {
    for (const cplx& z : g.values())
        if (!std::isfinite(z.real()) || !std::isfinite(z.imag())) return false;
    return true;
}

bool all_finite(const RealGrid& g) {
    for (double v : g.values())
        if (!std::isfinite(v)) return false;
    return true;
}

ComplexGrid rotate_resample(const ComplexGrid& grid, double theta) {
    ComplexGrid out(grid.height(), grid.width());
    rotate_raw(reinterpret_cast<const double*>(grid.data()), grid.height(), grid.width(), 2,
               theta, reinterpret_cast<double*>(out.data()));
    return out;
}

RealGrid rotate_resample(const RealGrid& grid, double theta) {
    RealGrid out(grid.height(), grid.width());
    rotate_raw(grid.data(), grid.height(), grid.width(), 1, theta, out.data());
    return out;
}

RealGrid make_circular_mask(int height, int width) {
    const GridGeometry geo = GridGeometry::of(height, width);
    RealGrid mask(height, width);
    for (int i = 0; i < height; ++i) {
        const double dy = i - geo.center_row;
        for (int j = 0; j < width; ++j) {
            const double dx = j - geo.center_col;
            mask.at(i, j) = (std::sqrt(dx * dx + dy * dy) <= geo.mask_radius) ? 1.0 : 0.0;
        }
    }
    return mask;
}

ComplexGrid apply_mask(const ComplexGrid& grid, const RealGrid& mask) {
    if (grid.height() != mask.height() || grid.width() != mask.width())
        throw ShapeError("apply_mask: grid and mask dimensions differ");
    ComplexGrid out(grid.height(), grid.width());
    for (std::size_t idx = 0; idx < grid.size(); ++idx)
        out.values()[idx] = grid.values()[idx] * mask.values()[idx];
    return out;
}

RealGrid apply_mask(const RealGrid& grid, const RealGrid& mask) {
    if (grid.height() != mask.height() || grid.width() != mask.width())
        throw ShapeError("apply_mask: grid and mask dimensions differ");
    RealGrid out(grid.height(), grid.width());
    for (std::size_t idx = 0; idx < grid.size(); ++idx)
        out.values()[idx] = grid.values()[idx] * mask.values()[idx];
    return out;
}

ComplexGrid upscale_bilinear(const ComplexGrid& grid, int factor) {
    if (factor < 1) throw ParameterError("upscale factor must be >= 1");
    if (factor == 1) return grid;
    ComplexGrid out(grid.height() * factor, grid.width() * factor);
    upscale_raw(reinterpret_cast<const double*>(grid.data()), grid.height(), grid.width(), 2,
                factor, reinterpret_cast<double*>(out.data()));
    return out;
}

RealGrid upscale_bilinear(const RealGrid& grid, int factor) {
    if (factor < 1) throw ParameterError("upscale factor must be >= 1");
    if (factor == 1) return grid;
    RealGrid out(grid.height() * factor, grid.width() * factor);
    upscale_raw(grid.data(), grid.height(), grid.width(), 1, factor, out.data());
    return out;
}

ComplexGrid upscale_bilinear_adjoint(const ComplexGrid& grad_out, int factor) {
    if (factor < 1) throw ParameterError("upscale factor must be >= 1");
    if (factor == 1) return grad_out;
    const int oh = grad_out.height();
    const int ow = grad_out.width();
    if (oh % factor != 0 || ow % factor != 0)
        throw ShapeError("upscale adjoint: output size not a multiple of factor");
    const int h = oh / factor;
    const int w = ow / factor;
    ComplexGrid din(h, w);
    for (int i = 0; i < oh; ++i) {
        double sr = std::min(std::max(upscale_coord(i, factor), 0.0), static_cast<double>(h - 1));
        const int r0 = static_cast<int>(std::floor(sr));
        const int r1 = std::min(r0 + 1, h - 1);
        const double wr = sr - r0;
        for (int j = 0; j < ow; ++j) {
            double sc = std::min(std::max(upscale_coord(j, factor), 0.0),
                                 static_cast<double>(w - 1));
            const int c0 = static_cast<int>(std::floor(sc));
            const int c1 = std::min(c0 + 1, w - 1);
            const double wc = sc - c0;
            const cplx g = grad_out.at(i, j);
            din.at(r0, c0) += (1.0 - wr) * (1.0 - wc) * g;
            din.at(r0, c1) += (1.0 - wr) * wc * g;
            din.at(r1, c0) += wr * (1.0 - wc) * g;
            din.at(r1, c1) += wr * wc * g;
        }
    }
    return din;
}

}  // namespace hnext
