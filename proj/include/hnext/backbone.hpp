#pragma once

#include <cstddef>
#include <vector>

#include "hnext/bundle.hpp"
#include "hnext/filters.hpp"

namespace hnext {

// Wiring of one harmonic convolution layer. Every (m_in -> m_out) pair is
// served by in_channels x out_channels filters of rotation order
// m1 = m_out - m_in, so that stream mixing preserves the phase law.
struct ConvLayerSpec {
    int in_min_order = 0;
    int in_num_orders = 1;
    int out_min_order = 0;
    int out_num_orders = 1;
    int in_channels = 1;   // per input order
    int out_channels = 1;  // per output order
    int k = 15;
    int rings = 8;
    FilterMode mode = FilterMode::HNEXT;
    bool mask_after = false;

    int filter_order(int mo_idx, int mi_idx) const {
        return (out_min_order + mo_idx) - (in_min_order + mi_idx);
    }
    std::size_t num_filters() const {
        return static_cast<std::size_t>(out_num_orders) * in_num_orders * out_channels *
               in_channels;
    }
    // filters are enumerated (m_out, m_in, c_out, c_in), slowest first
    std::size_t filter_index(int mo_idx, int mi_idx, int co, int ci) const {
        return ((static_cast<std::size_t>(mo_idx) * in_num_orders + mi_idx) * out_channels + co) *
                   in_channels + ci;
    }
};

// Cross-correlation with the complex inner product (the filter enters
// conjugated) and zero same-padding. With circular-harmonic filters this
// sends input order m2 through a filter of order m1 to output order m1 + m2.
std::vector<StreamBundle> h_conv(const std::vector<StreamBundle>& input,
                                 const ConvLayerSpec& spec,
                                 const std::vector<ComplexGrid>& filters,
                                 const RealGrid* mask_after);

void h_conv_backward(const std::vector<StreamBundle>& input, const ConvLayerSpec& spec,
                     const std::vector<ComplexGrid>& filters,
                     const std::vector<StreamBundle>& grad_out, const RealGrid* mask_after,
                     std::vector<StreamBundle>* grad_input,
                     std::vector<ComplexGrid>* grad_filters);

// Harmonic ReLU: z = |z| e^{ia} -> ReLU(|z| + b) e^{ia}. One bias per channel,
// channels enumerated order-major. The phase of the zero value is a = 0.
std::vector<StreamBundle> h_relu(const std::vector<StreamBundle>& input,
                                 const std::vector<double>& bias);

void h_relu_backward(const std::vector<StreamBundle>& input, const std::vector<double>& bias,
                     const std::vector<StreamBundle>& grad_out,
                     std::vector<StreamBundle>* grad_input, std::vector<double>* grad_bias);

// Running magnitude statistics, one entry per channel.
struct BatchNormState {
    std::vector<double> running_mean;
    std::vector<double> running_var;

    static BatchNormState init(int channels) {
        return {std::vector<double>(channels, 0.0), std::vector<double>(channels, 1.0)};
    }
};

// Batch statistics actually used in the forward pass; kept for backward.
struct BatchNormCache {
    std::vector<double> mean;
    std::vector<double> var;
};

// Batch norm on magnitudes only: phases pass through untouched. A negative
// normalized magnitude is carried as a negative real scalar times the unit
// phase, which keeps the phase law intact because the scalar does not depend
// on the input rotation.
std::vector<StreamBundle> h_batchnorm(const std::vector<StreamBundle>& input,
                                      const std::vector<double>& gamma,
                                      const std::vector<double>& delta, double eps,
                                      bool training, BatchNormState* state, double momentum,
                                      BatchNormCache* cache);

// Training-mode backward (batch statistics coupled through mean/variance).
void h_batchnorm_backward(const std::vector<StreamBundle>& input,
                          const std::vector<double>& gamma, const std::vector<double>& delta,
                          double eps, const BatchNormCache& cache,
                          const std::vector<StreamBundle>& grad_out,
                          std::vector<StreamBundle>* grad_input,
                          std::vector<double>* grad_gamma, std::vector<double>* grad_delta);

// Complex mean over w x w windows at stride s. Padding is disallowed: the
// spatial size must tile exactly.
std::vector<StreamBundle> h_meanpool(const std::vector<StreamBundle>& input, int window,
                                     int stride, const RealGrid* mask_after);

void h_meanpool_backward(const std::vector<StreamBundle>& input, int window, int stride,
                         const RealGrid* mask_after, const std::vector<StreamBundle>& grad_out,
                         std::vector<StreamBundle>* grad_input);

enum class ReadoutMode { M0, SUM, WIDE };

// Discards the rotation-dependent phase at the end of the backbone.
//   M0   -> magnitudes of the m = 0 stream only
//   SUM  -> per channel index, sum of magnitudes over orders (or the
//           magnitude of the complex sum when sum_complex is set; that
//           variant is not rotation invariant and exists only as a switch)
//   WIDE -> magnitudes of every (order, channel), concatenated order-major
std::vector<std::vector<RealGrid>> magnitude_readout(const std::vector<StreamBundle>& input,
                                                     ReadoutMode mode,
                                                     bool sum_complex = false);

void magnitude_readout_backward(const std::vector<StreamBundle>& input, ReadoutMode mode,
                                bool sum_complex,
                                const std::vector<std::vector<RealGrid>>& grad_out,
                                std::vector<StreamBundle>* grad_input);

// Gradient contribution through the unit-phase factor u = z/|z|; a and b are
// dL/d(Re u) and dL/d(Im u). Zero at z = 0 (phase is pinned there).
inline cplx unit_phase_grad(const cplx& z, double r, double a, double b) {
    if (r == 0.0) return {0.0, 0.0};
    const double inv_r = 1.0 / r;
    const double inv_r3 = inv_r * inv_r * inv_r;
    const double re = z.real();
    const double im = z.imag();
    return {a * (inv_r - re * re * inv_r3) + b * (-re * im * inv_r3),
            a * (-re * im * inv_r3) + b * (inv_r - im * im * inv_r3)};
}

}  // namespace hnext
