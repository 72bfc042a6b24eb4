#include "hnext/backbone.hpp"

#include <algorithm>
#include <cmath>

namespace hnext {
namespace {

// out(p) += sum_d conj(filt(d)) * in(p + d), zero padding outside the frame.
// Written on raw doubles: std::complex operator* routes through __muldc3
// (inf/nan fixups) at -O2, which dominates the inner loop.
void xcorr_conj_same_add(const ComplexGrid& in, const ComplexGrid& filt, ComplexGrid& out) {
    const int h = in.height();
    const int w = in.width();
    const int k = filt.height();
    const int c = (k - 1) / 2;
    const double* fv = reinterpret_cast<const double*>(filt.data());
    const double* iv = reinterpret_cast<const double*>(in.data());
    double* ov = reinterpret_cast<double*>(out.data());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc_re = 0.0;
            double acc_im = 0.0;
            const int dy0 = std::max(-c, -y);
            const int dy1 = std::min(c, h - 1 - y);
            const int dx0 = std::max(-c, -x);
            const int dx1 = std::min(c, w - 1 - x);
            for (int dy = dy0; dy <= dy1; ++dy) {
                const double* frow = fv + 2 * (static_cast<std::size_t>(dy + c) * k + (dx0 + c));
                const double* irow = iv + 2 * (static_cast<std::size_t>(y + dy) * w + (x + dx0));
                for (int dx = dx0; dx <= dx1; ++dx) {
                    const double fre = frow[0];
                    const double fim = frow[1];
                    const double ire = irow[0];
                    const double iim = irow[1];
                    // conj(f) * i
                    acc_re += fre * ire + fim * iim;
                    acc_im += fre * iim - fim * ire;
                    frow += 2;
                    irow += 2;
                }
            }
            double* o = ov + 2 * (static_cast<std::size_t>(y) * w + x);
            o[0] += acc_re;
            o[1] += acc_im;
        }
    }
}

// adjoint of xcorr_conj_same_add with respect to the input:
// din(q) += sum_d filt(d) * g(q - d)
void xcorr_conj_input_grad_add(const ComplexGrid& grad_out, const ComplexGrid& filt,
                               ComplexGrid& grad_in) {
    const int h = grad_in.height();
    const int w = grad_in.width();
    const int k = filt.height();
    const int c = (k - 1) / 2;
    const double* fv = reinterpret_cast<const double*>(filt.data());
    const double* gv = reinterpret_cast<const double*>(grad_out.data());
    double* dv = reinterpret_cast<double*>(grad_in.data());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double acc_re = 0.0;
            double acc_im = 0.0;
            // g positions p = q - d for d in the filter support
            const int dy0 = std::max(-c, y - (h - 1));
            const int dy1 = std::min(c, y);
            const int dx0 = std::max(-c, x - (w - 1));
            const int dx1 = std::min(c, x);
            for (int dy = dy0; dy <= dy1; ++dy) {
                const double* frow = fv + 2 * (static_cast<std::size_t>(dy + c) * k + (dx0 + c));
                const double* grow = gv + 2 * (static_cast<std::size_t>(y - dy) * w + (x - dx0));
                for (int dx = dx0; dx <= dx1; ++dx) {
                    const double fre = frow[0];
                    const double fim = frow[1];
                    const double gre = grow[0];
                    const double gim = grow[1];
                    // f * g (conjugation cancels in the adjoint of conj(f)*)
                    acc_re += fre * gre - fim * gim;
                    acc_im += fre * gim + fim * gre;
                    frow += 2;
                    grow -= 2;
                }
            }
            double* d = dv + 2 * (static_cast<std::size_t>(y) * w + x);
            d[0] += acc_re;
            d[1] += acc_im;
        }
    }
}

// dfilt(d) += sum_p conj(g(p)) * in(p + d)
void xcorr_conj_filter_grad_add(const ComplexGrid& grad_out, const ComplexGrid& in,
                                ComplexGrid& grad_filt) {
    const int h = in.height();
    const int w = in.width();
    const int k = grad_filt.height();
    const int c = (k - 1) / 2;
    const double* gv = reinterpret_cast<const double*>(grad_out.data());
    const double* iv = reinterpret_cast<const double*>(in.data());
    double* fv = reinterpret_cast<double*>(grad_filt.data());
    for (int dy = -c; dy <= c; ++dy) {
        for (int dx = -c; dx <= c; ++dx) {
            double acc_re = 0.0;
            double acc_im = 0.0;
            const int y0 = std::max(0, -dy);
            const int y1 = std::min(h - 1, h - 1 - dy);
            const int x0 = std::max(0, -dx);
            const int x1 = std::min(w - 1, w - 1 - dx);
            for (int y = y0; y <= y1; ++y) {
                const double* grow = gv + 2 * (static_cast<std::size_t>(y) * w + x0);
                const double* irow = iv + 2 * (static_cast<std::size_t>(y + dy) * w + (x0 + dx));
                for (int x = x0; x <= x1; ++x) {
                    const double gre = grow[0];
                    const double gim = grow[1];
                    const double ire = irow[0];
                    const double iim = irow[1];
                    // conj(g) * in
                    acc_re += gre * ire + gim * iim;
                    acc_im += gre * iim - gim * ire;
                    grow += 2;
                    irow += 2;
                }
            }
            double* f = fv + 2 * (static_cast<std::size_t>(dy + c) * k + (dx + c));
            f[0] += acc_re;
            f[1] += acc_im;
        }
    }
}

void check_conv_wiring(const StreamBundle& input, const ConvLayerSpec& spec) {
    if (input.min_order != spec.in_min_order || input.num_orders() != spec.in_num_orders)
        throw WiringError("h_conv: input orders do not match the layer wiring");
    for (const auto& channels : input.streams)
        if (static_cast<int>(channels.size()) != spec.in_channels)
            throw WiringError("h_conv: input channel count does not match the layer wiring");
    if (input.height() < spec.k || input.width() < spec.k)
        throw ShapeError("h_conv: filter larger than the input grid");
}

// order-major channel enumeration shared by relu / batchnorm
template <typename Fn>
void for_each_channel(const StreamBundle& bundle, Fn&& fn) {
    int ch = 0;
    for (int s = 0; s < bundle.num_orders(); ++s)
        for (std::size_t c = 0; c < bundle.streams[s].size(); ++c) fn(ch++, s, static_cast<int>(c));
}

int count_channels(const StreamBundle& bundle) { return bundle.total_channels(); }

}  // namespace

std::vector<StreamBundle> h_conv(const std::vector<StreamBundle>& input,
                                 const ConvLayerSpec& spec,
                                 const std::vector<ComplexGrid>& filters,
                                 const RealGrid* mask_after) {
    if (filters.size() != spec.num_filters())
        throw WiringError("h_conv: filter count does not match the layer wiring");
    for (const StreamBundle& b : input) check_conv_wiring(b, spec);

    const int batch = static_cast<int>(input.size());
    const int h = input.at(0).height();
    const int w = input.at(0).width();
    if (mask_after && (mask_after->height() != h || mask_after->width() != w))
        throw ShapeError("h_conv: mask size does not match the feature maps");
    std::vector<StreamBundle> output(batch);
    for (int b = 0; b < batch; ++b) {
        output[b].min_order = spec.out_min_order;
        output[b].streams.assign(spec.out_num_orders,
                                 std::vector<ComplexGrid>(spec.out_channels, ComplexGrid(h, w)));
    }

    const long tasks = static_cast<long>(batch) * spec.out_num_orders * spec.out_channels;
#pragma omp parallel for schedule(dynamic)
    for (long t = 0; t < tasks; ++t) {
        const int b = static_cast<int>(t / (spec.out_num_orders * spec.out_channels));
        const int rem = static_cast<int>(t % (spec.out_num_orders * spec.out_channels));
        const int mo = rem / spec.out_channels;
        const int co = rem % spec.out_channels;
        ComplexGrid& out = output[b].streams[mo][co];
        for (int mi = 0; mi < spec.in_num_orders; ++mi)
            for (int ci = 0; ci < spec.in_channels; ++ci)
                xcorr_conj_same_add(input[b].streams[mi][ci],
                                    filters[spec.filter_index(mo, mi, co, ci)], out);
        if (mask_after) out = apply_mask(out, *mask_after);
    }
    return output;
}

void h_conv_backward(const std::vector<StreamBundle>& input, const ConvLayerSpec& spec,
                     const std::vector<ComplexGrid>& filters,
                     const std::vector<StreamBundle>& grad_out, const RealGrid* mask_after,
                     std::vector<StreamBundle>* grad_input,
                     std::vector<ComplexGrid>* grad_filters) {
    const int batch = static_cast<int>(input.size());
    const int h = input.at(0).height();
    const int w = input.at(0).width();

    // the mask multiplies the output, so it multiplies the incoming gradient
    std::vector<StreamBundle> g = grad_out;
    if (mask_after) {
        for (StreamBundle& bundle : g)
            for (auto& channels : bundle.streams)
                for (ComplexGrid& grid : channels) grid = apply_mask(grid, *mask_after);
    }

    if (grad_input) {
        grad_input->resize(batch);
        for (int b = 0; b < batch; ++b) {
            (*grad_input)[b].min_order = spec.in_min_order;
            (*grad_input)[b].streams.assign(
                spec.in_num_orders, std::vector<ComplexGrid>(spec.in_channels, ComplexGrid(h, w)));
        }
        const long tasks = static_cast<long>(batch) * spec.in_num_orders * spec.in_channels;
#pragma omp parallel for schedule(dynamic)
        for (long t = 0; t < tasks; ++t) {
            const int b = static_cast<int>(t / (spec.in_num_orders * spec.in_channels));
            const int rem = static_cast<int>(t % (spec.in_num_orders * spec.in_channels));
            const int mi = rem / spec.in_channels;
            const int ci = rem % spec.in_channels;
            ComplexGrid& din = (*grad_input)[b].streams[mi][ci];
            for (int mo = 0; mo < spec.out_num_orders; ++mo)
                for (int co = 0; co < spec.out_channels; ++co)
                    xcorr_conj_input_grad_add(g[b].streams[mo][co],
                                              filters[spec.filter_index(mo, mi, co, ci)], din);
        }
    }

    if (grad_filters) {
        if (grad_filters->size() != spec.num_filters()) {
            grad_filters->assign(spec.num_filters(), ComplexGrid(spec.k, spec.k));
        }
        const long nf = static_cast<long>(spec.num_filters());
#pragma omp parallel for schedule(dynamic)
        for (long f = 0; f < nf; ++f) {
            const int ci = static_cast<int>(f % spec.in_channels);
            long rest = f / spec.in_channels;
            const int co = static_cast<int>(rest % spec.out_channels);
            rest /= spec.out_channels;
            const int mi = static_cast<int>(rest % spec.in_num_orders);
            const int mo = static_cast<int>(rest / spec.in_num_orders);
            ComplexGrid& df = (*grad_filters)[f];
            for (int b = 0; b < batch; ++b)
                xcorr_conj_filter_grad_add(g[b].streams[mo][co], input[b].streams[mi][ci], df);
        }
    }
}

std::vector<StreamBundle> h_relu(const std::vector<StreamBundle>& input,
                                 const std::vector<double>& bias) {
    std::vector<StreamBundle> output(input.size());
    for (std::size_t b = 0; b < input.size(); ++b) {
        if (static_cast<int>(bias.size()) != count_channels(input[b]))
            throw WiringError("h_relu: bias length does not match channel count");
        output[b].min_order = input[b].min_order;
        output[b].streams.resize(input[b].streams.size());
        for_each_channel(input[b], [&](int ch, int s, int c) {
            const ComplexGrid& in = input[b].streams[s][c];
            ComplexGrid out(in.height(), in.width());
            const double bb = bias[ch];
            for (std::size_t i = 0; i < in.size(); ++i) {
                const cplx z = in.values()[i];
                const double r = std::abs(z);
                out.values()[i] = magnitude_phase(std::max(r + bb, 0.0), z);
            }
            output[b].streams[s].push_back(std::move(out));
            (void)c;
        });
    }
    return output;
}

void h_relu_backward(const std::vector<StreamBundle>& input, const std::vector<double>& bias,
                     const std::vector<StreamBundle>& grad_out,
                     std::vector<StreamBundle>* grad_input, std::vector<double>* grad_bias) {
    grad_input->resize(input.size());
    if (grad_bias->size() != bias.size()) grad_bias->assign(bias.size(), 0.0);
    for (std::size_t b = 0; b < input.size(); ++b) {
        (*grad_input)[b].min_order = input[b].min_order;
        (*grad_input)[b].streams.resize(input[b].streams.size());
        for_each_channel(input[b], [&](int ch, int s, int c) {
            const ComplexGrid& in = input[b].streams[s][c];
            const ComplexGrid& g = grad_out[b].streams[s][c];
            ComplexGrid din(in.height(), in.width());
            const double bb = bias[ch];
            double db = 0.0;
            for (std::size_t i = 0; i < in.size(); ++i) {
                const cplx z = in.values()[i];
                const double r = std::abs(z);
                const double t = r + bb;
                const cplx gi = g.values()[i];
                if (r == 0.0) {
                    // phase pinned at 0: out = max(t, 0) + 0i
                    if (t > 0.0) db += gi.real();
                    continue;
                }
                const double ure = z.real() / r;
                const double uim = z.imag() / r;
                const double dt = ure * gi.real() + uim * gi.imag();
                const double mag = std::max(t, 0.0);
                cplx dz = unit_phase_grad(z, r, mag * gi.real(), mag * gi.imag());
                if (t > 0.0) {
                    db += dt;
                    dz += cplx{dt * ure, dt * uim};
                }
                din.values()[i] = dz;
            }
            (*grad_bias)[ch] += db;
            (*grad_input)[b].streams[s].push_back(std::move(din));
            (void)c;
        });
    }
}

std::vector<StreamBundle> h_batchnorm(const std::vector<StreamBundle>& input,
                                      const std::vector<double>& gamma,
                                      const std::vector<double>& delta, double eps,
                                      bool training, BatchNormState* state, double momentum,
                                      BatchNormCache* cache) {
    if (eps <= 0.0) throw ParameterError("batch norm eps must be positive");
    const int channels = count_channels(input.at(0));
    if (static_cast<int>(gamma.size()) != channels || static_cast<int>(delta.size()) != channels)
        throw WiringError("h_batchnorm: gamma/delta length does not match channel count");

    const std::size_t pixels = input[0].streams[0][0].size();
    const std::size_t n = input.size() * pixels;

    std::vector<double> mean(channels, 0.0);
    std::vector<double> var(channels, 0.0);
    if (training) {
#pragma omp parallel for schedule(static)
        for (int ch = 0; ch < channels; ++ch) {
            // recover (stream, channel) from the order-major index
            int s = 0;
            int c = ch;
            while (c >= static_cast<int>(input[0].streams[s].size())) {
                c -= static_cast<int>(input[0].streams[s].size());
                ++s;
            }
            double sum = 0.0;
            for (const StreamBundle& bundle : input)
                for (const cplx& z : bundle.streams[s][c].values()) sum += std::abs(z);
            const double mu = sum / static_cast<double>(n);
            double sq = 0.0;
            for (const StreamBundle& bundle : input)
                for (const cplx& z : bundle.streams[s][c].values()) {
                    const double d = std::abs(z) - mu;
                    sq += d * d;
                }
            mean[ch] = mu;
            var[ch] = sq / static_cast<double>(n);
        }
        if (state) {
            for (int ch = 0; ch < channels; ++ch) {
                state->running_mean[ch] = (1.0 - momentum) * state->running_mean[ch] +
                                          momentum * mean[ch];
                state->running_var[ch] = (1.0 - momentum) * state->running_var[ch] +
                                         momentum * var[ch];
            }
        }
    } else {
        if (!state) throw ParameterError("h_batchnorm: eval mode requires running statistics");
        mean = state->running_mean;
        var = state->running_var;
    }
    if (cache) {
        cache->mean = mean;
        cache->var = var;
    }

    std::vector<StreamBundle> output(input.size());
    for (std::size_t b = 0; b < input.size(); ++b) {
        output[b].min_order = input[b].min_order;
        output[b].streams.resize(input[b].streams.size());
        for_each_channel(input[b], [&](int ch, int s, int c) {
            const ComplexGrid& in = input[b].streams[s][c];
            ComplexGrid out(in.height(), in.width());
            const double inv_sigma = 1.0 / std::sqrt(var[ch] + eps);
            for (std::size_t i = 0; i < in.size(); ++i) {
                const cplx z = in.values()[i];
                const double r = std::abs(z);
                // exact zeros (masked-out pixels) stay zero: they carry no
                // phase, and any nonzero fill would leak a rotation-dependent
                // background into the next convolution
                if (r == 0.0) continue;
                const double t = (r - mean[ch]) * inv_sigma * gamma[ch] + delta[ch];
                out.values()[i] = magnitude_phase(t, z);
            }
            output[b].streams[s].push_back(std::move(out));
        });
    }
    return output;
}

void h_batchnorm_backward(const std::vector<StreamBundle>& input,
                          const std::vector<double>& gamma, const std::vector<double>& delta,
                          double eps, const BatchNormCache& cache,
                          const std::vector<StreamBundle>& grad_out,
                          std::vector<StreamBundle>* grad_input,
                          std::vector<double>* grad_gamma, std::vector<double>* grad_delta) {
    const int channels = count_channels(input.at(0));
    const std::size_t batch = input.size();
    const std::size_t pixels = input[0].streams[0][0].size();
    const double n = static_cast<double>(batch * pixels);

    grad_input->resize(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        (*grad_input)[b].min_order = input[b].min_order;
        (*grad_input)[b].streams.resize(input[b].streams.size());
        for (std::size_t s = 0; s < input[b].streams.size(); ++s)
            (*grad_input)[b].streams[s].assign(
                input[b].streams[s].size(),
                ComplexGrid(input[b].height(), input[b].width()));
    }
    if (grad_gamma->size() != gamma.size()) grad_gamma->assign(gamma.size(), 0.0);
    if (grad_delta->size() != gamma.size()) grad_delta->assign(gamma.size(), 0.0);

#pragma omp parallel for schedule(static)
    for (int ch = 0; ch < channels; ++ch) {
        int s = 0;
        int c = ch;
        while (c >= static_cast<int>(input[0].streams[s].size())) {
            c -= static_cast<int>(input[0].streams[s].size());
            ++s;
        }
        const double inv_sigma = 1.0 / std::sqrt(cache.var[ch] + eps);

        // first pass: dt per element, plus the batch sums the BN coupling needs
        double sum_dt = 0.0;
        double sum_dt_s = 0.0;
        double dgamma = 0.0;
        double ddelta = 0.0;
        for (std::size_t b = 0; b < batch; ++b) {
            const auto& in = input[b].streams[s][c].values();
            const auto& g = grad_out[b].streams[s][c].values();
            for (std::size_t i = 0; i < pixels; ++i) {
                const cplx z = in[i];
                const double r = std::abs(z);
                if (r == 0.0) continue;  // the forward pins zeros to zero
                const double sn = (r - cache.mean[ch]) * inv_sigma;
                const double ure = z.real() / r;
                const double uim = z.imag() / r;
                const double dt = ure * g[i].real() + uim * g[i].imag();
                sum_dt += dt;
                sum_dt_s += dt * sn;
                dgamma += dt * sn;
                ddelta += dt;
            }
        }
        const double mean_ds = gamma[ch] * sum_dt / n;
        const double mean_ds_s = gamma[ch] * sum_dt_s / n;

        // second pass: magnitude path (classic BN backward on |z|) plus the
        // phase path through u = z/|z|
        for (std::size_t b = 0; b < batch; ++b) {
            const auto& in = input[b].streams[s][c].values();
            const auto& g = grad_out[b].streams[s][c].values();
            auto& din = (*grad_input)[b].streams[s][c].values();
            for (std::size_t i = 0; i < pixels; ++i) {
                const cplx z = in[i];
                const double r = std::abs(z);
                if (r == 0.0) continue;  // subgradient 0 at the magnitude kink
                const double sn = (r - cache.mean[ch]) * inv_sigma;
                const double ure = z.real() / r;
                const double uim = z.imag() / r;
                const double dt = ure * g[i].real() + uim * g[i].imag();
                const double ds = gamma[ch] * dt;
                const double dr = inv_sigma * (ds - mean_ds - sn * mean_ds_s);
                const double t = sn * gamma[ch] + delta[ch];
                cplx dz{dr * ure, dr * uim};
                dz += unit_phase_grad(z, r, t * g[i].real(), t * g[i].imag());
                din[i] += dz;
            }
        }
        (*grad_gamma)[ch] += dgamma;
        (*grad_delta)[ch] += ddelta;
    }
}

std::vector<StreamBundle> h_meanpool(const std::vector<StreamBundle>& input, int window,
                                     int stride, const RealGrid* mask_after) {
    if (window < 1 || stride < 1) throw ParameterError("h_meanpool: window/stride must be >= 1");
    const int h = input.at(0).height();
    const int w = input.at(0).width();
    if (h % stride != 0 || w % stride != 0 || (h - window) % stride != 0 ||
        (w - window) % stride != 0 || window > h || window > w)
        throw ShapeError("h_meanpool: spatial size does not tile (padding disallowed)");
    const int oh = (h - window) / stride + 1;
    const int ow = (w - window) / stride + 1;
    const double scale = 1.0 / (static_cast<double>(window) * window);

    std::vector<StreamBundle> output(input.size());
    for (std::size_t b = 0; b < input.size(); ++b) {
        output[b].min_order = input[b].min_order;
        output[b].streams.resize(input[b].streams.size());
        for (std::size_t s = 0; s < input[b].streams.size(); ++s) {
            for (const ComplexGrid& in : input[b].streams[s]) {
                ComplexGrid out(oh, ow);
                for (int i = 0; i < oh; ++i)
                    for (int j = 0; j < ow; ++j) {
                        cplx acc{0.0, 0.0};
                        for (int dy = 0; dy < window; ++dy)
                            for (int dx = 0; dx < window; ++dx)
                                acc += in.at(i * stride + dy, j * stride + dx);
                        out.at(i, j) = acc * scale;
                    }
                if (mask_after) out = apply_mask(out, *mask_after);
                output[b].streams[s].push_back(std::move(out));
            }
        }
    }
    return output;
}

void h_meanpool_backward(const std::vector<StreamBundle>& input, int window, int stride,
                         const RealGrid* mask_after, const std::vector<StreamBundle>& grad_out,
                         std::vector<StreamBundle>* grad_input) {
    const int h = input.at(0).height();
    const int w = input.at(0).width();
    const double scale = 1.0 / (static_cast<double>(window) * window);

    grad_input->resize(input.size());
    for (std::size_t b = 0; b < input.size(); ++b) {
        (*grad_input)[b].min_order = input[b].min_order;
        (*grad_input)[b].streams.resize(input[b].streams.size());
        for (std::size_t s = 0; s < input[b].streams.size(); ++s) {
            for (std::size_t c = 0; c < input[b].streams[s].size(); ++c) {
                const ComplexGrid& g0 = grad_out[b].streams[s][c];
                ComplexGrid g = mask_after ? apply_mask(g0, *mask_after) : g0;
                ComplexGrid din(h, w);
                for (int i = 0; i < g.height(); ++i)
                    for (int j = 0; j < g.width(); ++j) {
                        const cplx gv = g.at(i, j) * scale;
                        for (int dy = 0; dy < window; ++dy)
                            for (int dx = 0; dx < window; ++dx)
                                din.at(i * stride + dy, j * stride + dx) += gv;
                    }
                (*grad_input)[b].streams[s].push_back(std::move(din));
            }
        }
    }
}

std::vector<std::vector<RealGrid>> magnitude_readout(const std::vector<StreamBundle>& input,
                                                     ReadoutMode mode, bool sum_complex) {
    std::vector<std::vector<RealGrid>> output(input.size());
    for (std::size_t b = 0; b < input.size(); ++b) {
        const StreamBundle& bundle = input[b];
        if (bundle.streams.empty()) throw WiringError("magnitude_readout: empty bundle");
        const int h = bundle.height();
        const int w = bundle.width();
        switch (mode) {
            case ReadoutMode::M0: {
                if (!bundle.has_order(0) || bundle.channels(0).empty())
                    throw WiringError("magnitude_readout: M0 requires an m = 0 stream");
                for (const ComplexGrid& g : bundle.channels(0)) {
                    RealGrid out(h, w);
                    for (std::size_t i = 0; i < g.size(); ++i)
                        out.values()[i] = std::abs(g.values()[i]);
                    output[b].push_back(std::move(out));
                }
                break;
            }
            case ReadoutMode::SUM: {
                const std::size_t per_order = bundle.streams[0].size();
                for (const auto& s : bundle.streams)
                    if (s.size() != per_order)
                        throw WiringError("magnitude_readout: SUM needs equal channels per order");
                for (std::size_t c = 0; c < per_order; ++c) {
                    RealGrid out(h, w);
                    if (sum_complex) {
                        ComplexGrid acc(h, w);
                        for (const auto& s : bundle.streams)
                            for (std::size_t i = 0; i < acc.size(); ++i)
                                acc.values()[i] += s[c].values()[i];
                        for (std::size_t i = 0; i < acc.size(); ++i)
                            out.values()[i] = std::abs(acc.values()[i]);
                    } else {
                        for (const auto& s : bundle.streams)
                            for (std::size_t i = 0; i < out.size(); ++i)
                                out.values()[i] += std::abs(s[c].values()[i]);
                    }
                    output[b].push_back(std::move(out));
                }
                break;
            }
            case ReadoutMode::WIDE: {
                for (const auto& s : bundle.streams)
                    for (const ComplexGrid& g : s) {
                        RealGrid out(h, w);
                        for (std::size_t i = 0; i < g.size(); ++i)
                            out.values()[i] = std::abs(g.values()[i]);
                        output[b].push_back(std::move(out));
                    }
                break;
            }
        }
    }
    return output;
}

void magnitude_readout_backward(const std::vector<StreamBundle>& input, ReadoutMode mode,
                                bool sum_complex,
                                const std::vector<std::vector<RealGrid>>& grad_out,
                                std::vector<StreamBundle>* grad_input) {
    grad_input->resize(input.size());
    for (std::size_t b = 0; b < input.size(); ++b) {
        const StreamBundle& bundle = input[b];
        StreamBundle& gin = (*grad_input)[b];
        gin.min_order = bundle.min_order;
        gin.streams.resize(bundle.streams.size());
        for (std::size_t s = 0; s < bundle.streams.size(); ++s)
            gin.streams[s].assign(bundle.streams[s].size(),
                                  ComplexGrid(bundle.height(), bundle.width()));

        auto mag_grad = [](const cplx& z, double g) -> cplx {
            const double r = std::abs(z);
            if (r == 0.0) return {0.0, 0.0};
            return {g * z.real() / r, g * z.imag() / r};
        };

        switch (mode) {
            case ReadoutMode::M0: {
                const int s0 = -bundle.min_order;
                for (std::size_t c = 0; c < bundle.streams[s0].size(); ++c) {
                    const auto& g = grad_out[b][c].values();
                    const auto& in = bundle.streams[s0][c].values();
                    auto& din = gin.streams[s0][c].values();
                    for (std::size_t i = 0; i < in.size(); ++i)
                        din[i] += mag_grad(in[i], g[i]);
                }
                break;
            }
            case ReadoutMode::SUM: {
                const std::size_t per_order = bundle.streams[0].size();
                for (std::size_t c = 0; c < per_order; ++c) {
                    const auto& g = grad_out[b][c].values();
                    if (sum_complex) {
                        ComplexGrid acc(bundle.height(), bundle.width());
                        for (const auto& s : bundle.streams)
                            for (std::size_t i = 0; i < acc.size(); ++i)
                                acc.values()[i] += s[c].values()[i];
                        for (std::size_t s = 0; s < bundle.streams.size(); ++s) {
                            auto& din = gin.streams[s][c].values();
                            for (std::size_t i = 0; i < din.size(); ++i)
                                din[i] += mag_grad(acc.values()[i], g[i]);
                        }
                    } else {
                        for (std::size_t s = 0; s < bundle.streams.size(); ++s) {
                            const auto& in = bundle.streams[s][c].values();
                            auto& din = gin.streams[s][c].values();
                            for (std::size_t i = 0; i < din.size(); ++i)
                                din[i] += mag_grad(in[i], g[i]);
                        }
                    }
                }
                break;
            }
            case ReadoutMode::WIDE: {
                std::size_t out_c = 0;
                for (std::size_t s = 0; s < bundle.streams.size(); ++s)
                    for (std::size_t c = 0; c < bundle.streams[s].size(); ++c, ++out_c) {
                        const auto& g = grad_out[b][out_c].values();
                        const auto& in = bundle.streams[s][c].values();
                        auto& din = gin.streams[s][c].values();
                        for (std::size_t i = 0; i < in.size(); ++i)
                            din[i] += mag_grad(in[i], g[i]);
                    }
                break;
            }
        }
    }
}

}  // namespace hnext
