#include "hnext/reference.hpp"

#include <cmath>

namespace hnext::ref {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

cplx sample_zero(const ComplexGrid& g, double row, double col) {
    const int r0 = static_cast<int>(std::floor(row));
    const int c0 = static_cast<int>(std::floor(col));
    const double wr = row - r0;
    const double wc = col - c0;
    auto at = [&](int r, int c) -> cplx {
        if (r < 0 || r >= g.height() || c < 0 || c >= g.width()) return {0.0, 0.0};
        return g.at(r, c);
    };
    return (1.0 - wr) * (1.0 - wc) * at(r0, c0) + (1.0 - wr) * wc * at(r0, c0 + 1) +
           wr * (1.0 - wc) * at(r0 + 1, c0) + wr * wc * at(r0 + 1, c0 + 1);
}

}  // namespace

ComplexGrid rotate_resample_serial(const ComplexGrid& grid, double theta) {
    const int h = grid.height();
    const int w = grid.width();
    const double cy = (h - 1) / 2.0;
    const double cx = (w - 1) / 2.0;
    double c = std::cos(theta);
    double s = std::sin(theta);
    // exact quarter turns, matching the production kernel's snapping rule
    const double quarter = theta / (kPi / 2.0);
    const double nearest = std::round(quarter);
    if (std::abs(quarter - nearest) < 1e-9) {
        const int q = ((static_cast<int>(std::llround(nearest)) % 4) + 4) % 4;
        c = (q == 0) ? 1.0 : (q == 2 ? -1.0 : 0.0);
        s = (q == 1) ? 1.0 : (q == 3 ? -1.0 : 0.0);
    }
    ComplexGrid out(h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            const double a = i - cy;
            const double b = j - cx;
            const double xs = cx + c * b + s * a;
            const double ys = cy - s * b + c * a;
            out.at(i, j) = sample_zero(grid, ys, xs);
        }
    return out;
}

ComplexGrid upscale_bilinear_serial(const ComplexGrid& grid, int factor) {
    const int h = grid.height();
    const int w = grid.width();
    ComplexGrid out(h * factor, w * factor);
    auto clamp = [](double v, double hi) { return std::min(std::max(v, 0.0), hi); };
    for (int i = 0; i < out.height(); ++i)
        for (int j = 0; j < out.width(); ++j) {
            const double sr = clamp((i + 0.5) / factor - 0.5, h - 1.0);
            const double sc = clamp((j + 0.5) / factor - 0.5, w - 1.0);
            const int r0 = static_cast<int>(std::floor(sr));
            const int c0 = static_cast<int>(std::floor(sc));
            const int r1 = std::min(r0 + 1, h - 1);
            const int c1 = std::min(c0 + 1, w - 1);
            const double wr = sr - r0;
            const double wc = sc - c0;
            out.at(i, j) = (1.0 - wr) * ((1.0 - wc) * grid.at(r0, c0) + wc * grid.at(r0, c1)) +
                           wr * ((1.0 - wc) * grid.at(r1, c0) + wc * grid.at(r1, c1));
        }
    return out;
}

ComplexGrid xcorr_conj_same_serial(const ComplexGrid& input, const ComplexGrid& filter) {
    const int h = input.height();
    const int w = input.width();
    const int k = filter.height();
    const int c = (k - 1) / 2;
    ComplexGrid out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            cplx acc{0.0, 0.0};
            for (int dy = -c; dy <= c; ++dy)
                for (int dx = -c; dx <= c; ++dx) {
                    const int yy = y + dy;
                    const int xx = x + dx;
                    if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
                    acc += std::conj(filter.at(dy + c, dx + c)) * input.at(yy, xx);
                }
            out.at(y, x) = acc;
        }
    return out;
}

std::vector<StreamBundle> h_conv_serial(const std::vector<StreamBundle>& input,
                                        const ConvLayerSpec& spec,
                                        const std::vector<ComplexGrid>& filters,
                                        const RealGrid* mask_after) {
    std::vector<StreamBundle> output(input.size());
    const int h = input.at(0).height();
    const int w = input.at(0).width();
    for (std::size_t b = 0; b < input.size(); ++b) {
        output[b].min_order = spec.out_min_order;
        output[b].streams.assign(spec.out_num_orders,
                                 std::vector<ComplexGrid>(spec.out_channels, ComplexGrid(h, w)));
        for (int mo = 0; mo < spec.out_num_orders; ++mo)
            for (int co = 0; co < spec.out_channels; ++co) {
                ComplexGrid& out = output[b].streams[mo][co];
                for (int mi = 0; mi < spec.in_num_orders; ++mi)
                    for (int ci = 0; ci < spec.in_channels; ++ci) {
                        const ComplexGrid part = xcorr_conj_same_serial(
                            input[b].streams[mi][ci],
                            filters[spec.filter_index(mo, mi, co, ci)]);
                        for (std::size_t i = 0; i < out.size(); ++i)
                            out.values()[i] += part.values()[i];
                    }
                if (mask_after) out = apply_mask(out, *mask_after);
            }
    }
    return output;
}

std::vector<cplx> zernike_project_serial(const RealGrid& channel,
                                         const std::vector<ComplexGrid>& basis,
                                         double pixel_area) {
    std::vector<cplx> moments;
    moments.reserve(basis.size());
    for (const ComplexGrid& v : basis) {
        cplx z{0.0, 0.0};
        for (int i = 0; i < channel.height(); ++i)
            for (int j = 0; j < channel.width(); ++j)
                z += std::conj(v.at(i, j)) * channel.at(i, j);
        moments.push_back(z * pixel_area);
    }
    return moments;
}

}  // namespace hnext::ref
