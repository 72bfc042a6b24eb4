#pragma once

#include <vector>

#include "hnext/backbone.hpp"
#include "hnext/pooling.hpp"

// Single-threaded reference implementations written straight from the
// operation definitions, kept for testing the OpenMP kernels against and for
// the kernels benchmark. No pointer tricks, no pragmas.
namespace hnext::ref {

ComplexGrid rotate_resample_serial(const ComplexGrid& grid, double theta);

ComplexGrid upscale_bilinear_serial(const ComplexGrid& grid, int factor);

// conjugated cross-correlation with zero same-padding, one channel pair
ComplexGrid xcorr_conj_same_serial(const ComplexGrid& input, const ComplexGrid& filter);

// full harmonic convolution layer over a batch
std::vector<StreamBundle> h_conv_serial(const std::vector<StreamBundle>& input,
                                        const ConvLayerSpec& spec,
                                        const std::vector<ComplexGrid>& filters,
                                        const RealGrid* mask_after);

// Zernike moments of one channel against an already-positioned basis
std::vector<cplx> zernike_project_serial(const RealGrid& channel,
                                         const std::vector<ComplexGrid>& basis,
                                         double pixel_area);

}  // namespace hnext::ref
