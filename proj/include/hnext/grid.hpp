#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "hnext/errors.hpp"

namespace hnext {

using cplx = std::complex<double>;

// Dense row-major H x W grid. The atom of all feature maps, filters and masks.
template <typename T>
class Grid {
public:
    Grid() = default;
    Grid(int height, int width, T fill = T{})
        : height_(height), width_(width),
          values_(static_cast<std::size_t>(check_dims(height, width)), fill) {}

    int height() const { return height_; }
    int width() const { return width_; }
    std::size_t size() const { return values_.size(); }

    T& at(int row, int col) { return values_[static_cast<std::size_t>(row) * width_ + col]; }
    const T& at(int row, int col) const {
        return values_[static_cast<std::size_t>(row) * width_ + col];
    }
    T* data() { return values_.data(); }
    const T* data() const { return values_.data(); }
    std::vector<T>& values() { return values_; }
    const std::vector<T>& values() const { return values_; }

    bool same_shape(const Grid& other) const {
        return height_ == other.height_ && width_ == other.width_;
    }

private:
    static long check_dims(int height, int width) {
        if (height < 1 || width < 1)
            throw ParameterError("grid dimensions must be >= 1");
        return static_cast<long>(height) * width;
    }

    int height_ = 0;
    int width_ = 0;
    std::vector<T> values_;
};

using ComplexGrid = Grid<cplx>;
using RealGrid = Grid<double>;

// Rotation center and mask radius of a grid. The center (H-1)/2, (W-1)/2 is
// the fixed point of every rotation applied to the grid, even-sized included.
struct GridGeometry {
    double center_row = 0.0;
    double center_col = 0.0;
    double mask_radius = 0.0;

    static GridGeometry of(int height, int width) {
        return {(height - 1) / 2.0, (width - 1) / 2.0,
                std::min(height, width) / 2.0};
    }
};

bool all_finite(const ComplexGrid& g);
bool all_finite(const RealGrid& g);

// Bilinear resampling of the grid at the inverse-rotated coordinates about the
// geometric center; coordinates falling outside the frame read as zero. Real
// and imaginary parts are resampled independently.
ComplexGrid rotate_resample(const ComplexGrid& grid, double theta);
RealGrid rotate_resample(const RealGrid& grid, double theta);

// Hard binary disk: 1 iff the pixel center lies within mask_radius (inclusive)
// of the grid center.
RealGrid make_circular_mask(int height, int width);

ComplexGrid apply_mask(const ComplexGrid& grid, const RealGrid& mask);
RealGrid apply_mask(const RealGrid& grid, const RealGrid& mask);

// Center-aligned bilinear up-scaling by an integer factor. Border samples are
// clamped so constant inputs stay constant; the sampling lattice is symmetric
// about the center, which makes 90-degree rotation commute with up-scaling on
// square grids.
ComplexGrid upscale_bilinear(const ComplexGrid& grid, int factor);
RealGrid upscale_bilinear(const RealGrid& grid, int factor);

// Adjoint of upscale_bilinear (transpose of its sampling matrix); used by the
// backward pass.
ComplexGrid upscale_bilinear_adjoint(const ComplexGrid& grad_out, int factor);

inline cplx magnitude_phase(double magnitude, const cplx& z) {
    const double r = std::abs(z);
    if (r == 0.0) return {magnitude, 0.0};  // phase convention: alpha = 0 at z = 0
    return {magnitude * z.real() / r, magnitude * z.imag() / r};
}

}  // namespace hnext
