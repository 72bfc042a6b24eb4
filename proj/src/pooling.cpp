#include "hnext/pooling.hpp"

#include <algorithm>
#include <cmath>

#include "hnext/errors.hpp"

namespace hnext {
namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

double factorial(int n) {
    double f = 1.0;
    for (int i = 2; i <= n; ++i) f *= i;
    return f;
}

// Bilinear sample of grid at (row, col) together with the spatial derivative;
// zero value and zero derivative outside the frame.
struct SampleD {
    cplx value{0.0, 0.0};
    cplx d_row{0.0, 0.0};
    cplx d_col{0.0, 0.0};
};

SampleD bilinear_sample_d(const ComplexGrid& grid, double row, double col) {
    SampleD out;
    const int h = grid.height();
    const int w = grid.width();
    const double fr = std::floor(row);
    const double fc = std::floor(col);
    const int r0 = static_cast<int>(fr);
    const int c0 = static_cast<int>(fc);
    const double wr = row - fr;
    const double wc = col - fc;
    auto at = [&](int r, int c) -> cplx {
        if (r < 0 || r >= h || c < 0 || c >= w) return {0.0, 0.0};
        return grid.at(r, c);
    };
    const cplx v00 = at(r0, c0);
    const cplx v01 = at(r0, c0 + 1);
    const cplx v10 = at(r0 + 1, c0);
    const cplx v11 = at(r0 + 1, c0 + 1);
    out.value = (1.0 - wr) * ((1.0 - wc) * v00 + wc * v01) +
                wr * ((1.0 - wc) * v10 + wc * v11);
    out.d_row = (1.0 - wc) * (v10 - v00) + wc * (v11 - v01);
    out.d_col = (1.0 - wr) * (v01 - v00) + wr * (v11 - v10);
    return out;
}

}  // namespace

std::vector<double> gap_pool(const std::vector<RealGrid>& channels, const RealGrid& mask) {
    double support = 0.0;
    for (double m : mask.values()) support += (m != 0.0) ? 1.0 : 0.0;
    if (support == 0.0) throw DegenerateInputError("gap_pool: empty mask support");
    std::vector<double> out;
    out.reserve(channels.size());
    for (const RealGrid& ch : channels) {
        if (!ch.same_shape(mask)) throw ShapeError("gap_pool: channel/mask size mismatch");
        double sum = 0.0;
        for (std::size_t i = 0; i < ch.size(); ++i)
            if (mask.values()[i] != 0.0) sum += ch.values()[i];
        out.push_back(sum / support);
    }
    return out;
}

void gap_pool_backward(const std::vector<RealGrid>& channels, const RealGrid& mask,
                       const std::vector<double>& grad_out,
                       std::vector<RealGrid>* grad_channels) {
    double support = 0.0;
    for (double m : mask.values()) support += (m != 0.0) ? 1.0 : 0.0;
    grad_channels->resize(channels.size());
    for (std::size_t c = 0; c < channels.size(); ++c) {
        RealGrid g(channels[c].height(), channels[c].width());
        const double gv = grad_out[c] / support;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (mask.values()[i] != 0.0) g.values()[i] = gv;
        (*grad_channels)[c] = std::move(g);
    }
}

double zernike_radial(int n, int l, double rho) {
    double acc = 0.0;
    const int upper = (n - l) / 2;
    for (int s = 0; s <= upper; ++s) {
        const double num = ((s % 2 == 0) ? 1.0 : -1.0) * factorial(n - s);
        const double den = factorial(s) * factorial((n + l) / 2 - s) * factorial((n - l) / 2 - s);
        acc += num / den * std::pow(rho, n - 2 * s);
    }
    return acc;
}

ZernikeBasis zernike_basis(int grid_size, int max_degree) {
    if (grid_size < 8) throw ParameterError("zernike_basis: grid size must be >= 8");
    if (max_degree < 0) throw ParameterError("zernike_basis: degree must be >= 0");
    ZernikeBasis basis;
    basis.grid_size = grid_size;
    basis.max_degree = max_degree;
    const double center = (grid_size - 1) / 2.0;
    const double disk_radius = grid_size / 2.0;
    basis.pixel_area = 1.0 / (disk_radius * disk_radius);

    for (int n = 0; n <= max_degree; ++n) {
        for (int l = n % 2; l <= n; l += 2) {
            basis.index.push_back({n, l});
            ComplexGrid grid(grid_size, grid_size);
            const double norm = std::sqrt((n + 1) / kPi);
            for (int i = 0; i < grid_size; ++i) {
                for (int j = 0; j < grid_size; ++j) {
                    const double dx = (j - center) / disk_radius;
                    const double dy = (center - i) / disk_radius;
                    const double rho = std::sqrt(dx * dx + dy * dy);
                    if (rho > 1.0) continue;
                    const double rad = norm * zernike_radial(n, l, rho);
                    if (l == 0) {
                        grid.at(i, j) = {rad, 0.0};
                    } else {
                        const double phi = std::atan2(dy, dx);
                        grid.at(i, j) = {rad * std::cos(l * phi), rad * std::sin(l * phi)};
                    }
                }
            }
            basis.grids.push_back(std::move(grid));
        }
    }
    return basis;
}

std::vector<double> zernike_pool(const std::vector<RealGrid>& channels, const ZernikeBasis& basis,
                                 ZernikePoolCache* cache) {
    const int g = basis.grid_size;
    const double center = (g - 1) / 2.0;
    std::vector<double> out;
    out.reserve(channels.size() * basis.moment_count());
    if (cache) cache->channels.assign(channels.size(), {});

    for (std::size_t ci = 0; ci < channels.size(); ++ci) {
        const RealGrid& ch = channels[ci];
        if (ch.height() != g || ch.width() != g)
            throw ShapeError("zernike_pool: channel size does not match the basis grid");

        double mass = 0.0;
        double mr = 0.0;
        double mc = 0.0;
        for (int i = 0; i < g; ++i)
            for (int j = 0; j < g; ++j) {
                const double v = ch.at(i, j);
                mass += v;
                mr += v * i;
                mc += v * j;
            }
        bool fallback = false;
        double off_r = 0.0;
        double off_c = 0.0;
        if (mass == 0.0) {
            fallback = true;  // centroid undefined: use the geometric center
        } else {
            off_r = mr / mass - center;
            off_c = mc / mass - center;
        }

        ZernikePoolCache::Channel cc;
        cc.mass = mass;
        cc.offset_row = off_r;
        cc.offset_col = off_c;
        cc.centroid_fallback = fallback;

        for (std::size_t m = 0; m < basis.moment_count(); ++m) {
            ComplexGrid shifted(g, g);
            ComplexGrid dshift_r(g, g);
            ComplexGrid dshift_c(g, g);
            cplx z{0.0, 0.0};
            for (int i = 0; i < g; ++i)
                for (int j = 0; j < g; ++j) {
                    const SampleD s = bilinear_sample_d(basis.grids[m], i - off_r, j - off_c);
                    shifted.at(i, j) = s.value;
                    // d(shifted)/d(offset) = -d(sample)/d(coordinate)
                    dshift_r.at(i, j) = -s.d_row;
                    dshift_c.at(i, j) = -s.d_col;
                    z += std::conj(s.value) * ch.at(i, j);
                }
            z *= basis.pixel_area;
            out.push_back(std::abs(z));
            if (cache) {
                cc.shifted.push_back(std::move(shifted));
                cc.shifted_grad_row.push_back(std::move(dshift_r));
                cc.shifted_grad_col.push_back(std::move(dshift_c));
                cc.moments.push_back(z);
            }
        }
        if (cache) (*cache).channels[ci] = std::move(cc);
    }
    return out;
}

void zernike_pool_backward(const std::vector<RealGrid>& channels, const ZernikeBasis& basis,
                           const ZernikePoolCache& cache, const std::vector<double>& grad_out,
                           std::vector<RealGrid>* grad_channels) {
    const int g = basis.grid_size;
    const std::size_t moments = basis.moment_count();
    grad_channels->resize(channels.size());

    for (std::size_t ci = 0; ci < channels.size(); ++ci) {
        const RealGrid& ch = channels[ci];
        const ZernikePoolCache::Channel& cc = cache.channels[ci];
        RealGrid din(g, g);

        double d_off_r = 0.0;
        double d_off_c = 0.0;
        for (std::size_t m = 0; m < moments; ++m) {
            const double go = grad_out[ci * moments + m];
            const cplx z = cc.moments[m];
            const double mag = std::abs(z);
            if (mag == 0.0 || go == 0.0) continue;
            const double dz_re = go * z.real() / mag;
            const double dz_im = go * z.imag() / mag;
            for (int i = 0; i < g; ++i)
                for (int j = 0; j < g; ++j) {
                    const cplx vs = cc.shifted[m].at(i, j);
                    // Z = sum conj(Vs) * I * dA, so dZre/dI = Re(Vs)*dA and
                    // dZim/dI = -Im(Vs)*dA
                    din.at(i, j) += basis.pixel_area * (dz_re * vs.real() - dz_im * vs.imag());
                    const double iv = ch.at(i, j) * basis.pixel_area;
                    const cplx dr = cc.shifted_grad_row[m].at(i, j);
                    const cplx dc = cc.shifted_grad_col[m].at(i, j);
                    d_off_r += iv * (dz_re * dr.real() - dz_im * dr.imag());
                    d_off_c += iv * (dz_re * dc.real() - dz_im * dc.imag());
                }
        }
        if (!cc.centroid_fallback) {
            const double center = (g - 1) / 2.0;
            const double centroid_r = cc.offset_row + center;
            const double centroid_c = cc.offset_col + center;
            for (int i = 0; i < g; ++i)
                for (int j = 0; j < g; ++j) {
                    din.at(i, j) += d_off_r * (i - centroid_r) / cc.mass +
                                    d_off_c * (j - centroid_c) / cc.mass;
                }
        }
        (*grad_channels)[ci] = std::move(din);
    }
}

std::vector<double> msa_pool(const std::vector<RealGrid>& channels, const RealGrid& mask,
                             const MsaPoolConfig& config, const MsaWeights& weights,
                             MsaCache* cache) {
    const int d = config.model_width;
    if (static_cast<int>(channels.size()) != d)
        throw ShapeError("msa_pool: channel count does not match the configured model width");
    const int h = mask.height();
    const int w = mask.width();
    for (const RealGrid& ch : channels)
        if (!ch.same_shape(mask)) throw ShapeError("msa_pool: channel/mask size mismatch");

    std::vector<int> rows;
    std::vector<int> cols;
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            if (mask.at(i, j) != 0.0) {
                rows.push_back(i);
                cols.push_back(j);
            }
    const int t_count = static_cast<int>(rows.size());
    if (t_count == 0) throw DegenerateInputError("msa_pool: empty mask support");

    const int hk = config.heads * config.key_width;
    const int dk = config.key_width;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    const double diag = std::sqrt(static_cast<double>(h) * h + static_cast<double>(w) * w);
    const int buckets = config.distance_buckets;

    std::vector<double> tokens(static_cast<std::size_t>(t_count) * d);
    for (int t = 0; t < t_count; ++t)
        for (int c = 0; c < d; ++c)
            tokens[static_cast<std::size_t>(t) * d + c] = channels[c].at(rows[t], cols[t]);

    auto matmul = [&](const std::vector<double>& x, const std::vector<double>& m, int in_w,
                      int out_w) {
        std::vector<double> y(static_cast<std::size_t>(t_count) * out_w, 0.0);
        for (int t = 0; t < t_count; ++t)
            for (int i = 0; i < in_w; ++i) {
                const double xv = x[static_cast<std::size_t>(t) * in_w + i];
                if (xv == 0.0) continue;
                const double* mrow = &m[static_cast<std::size_t>(i) * out_w];
                double* yrow = &y[static_cast<std::size_t>(t) * out_w];
                for (int o = 0; o < out_w; ++o) yrow[o] += xv * mrow[o];
            }
        return y;
    };

    std::vector<double> q = matmul(tokens, weights.wq, d, hk);
    std::vector<double> k = matmul(tokens, weights.wk, d, hk);
    std::vector<double> v = matmul(tokens, weights.wv, d, hk);

    std::vector<int> bucket(static_cast<std::size_t>(t_count) * t_count);
    for (int a = 0; a < t_count; ++a)
        for (int b = 0; b < t_count; ++b) {
            const double dr = rows[a] - rows[b];
            const double dc = cols[a] - cols[b];
            const double dist = std::sqrt(dr * dr + dc * dc);
            bucket[static_cast<std::size_t>(a) * t_count + b] =
                std::min(buckets - 1, static_cast<int>(dist / diag * buckets));
        }

    std::vector<double> attn(static_cast<std::size_t>(config.heads) * t_count * t_count);
    std::vector<double> attended(static_cast<std::size_t>(t_count) * hk, 0.0);
    std::vector<double> logits(t_count);
    for (int head = 0; head < config.heads; ++head) {
        const int off = head * dk;
        for (int a = 0; a < t_count; ++a) {
            double max_logit = -1e300;
            for (int b = 0; b < t_count; ++b) {
                double dot = 0.0;
                for (int x = 0; x < dk; ++x)
                    dot += q[static_cast<std::size_t>(a) * hk + off + x] *
                           k[static_cast<std::size_t>(b) * hk + off + x];
                const int bk = bucket[static_cast<std::size_t>(a) * t_count + b];
                logits[b] = dot * inv_sqrt_dk + weights.bias_table[head * buckets + bk];
                max_logit = std::max(max_logit, logits[b]);
            }
            double denom = 0.0;
            double* prow = &attn[(static_cast<std::size_t>(head) * t_count + a) * t_count];
            for (int b = 0; b < t_count; ++b) {
                prow[b] = std::exp(logits[b] - max_logit);
                denom += prow[b];
            }
            for (int b = 0; b < t_count; ++b) prow[b] /= denom;
            for (int b = 0; b < t_count; ++b) {
                const double p = prow[b];
                for (int x = 0; x < dk; ++x)
                    attended[static_cast<std::size_t>(a) * hk + off + x] +=
                        p * v[static_cast<std::size_t>(b) * hk + off + x];
            }
        }
    }

    std::vector<double> out(d, 0.0);
    const double inv_t = 1.0 / t_count;
    for (int t = 0; t < t_count; ++t)
        for (int x = 0; x < hk; ++x) {
            const double av = attended[static_cast<std::size_t>(t) * hk + x];
            if (av == 0.0) continue;
            const double* orow = &weights.wo[static_cast<std::size_t>(x) * d];
            for (int c = 0; c < d; ++c) out[c] += av * orow[c] * inv_t;
        }

    if (cache) {
        cache->token_rows = std::move(rows);
        cache->token_cols = std::move(cols);
        cache->tokens = std::move(tokens);
        cache->q = std::move(q);
        cache->k = std::move(k);
        cache->v = std::move(v);
        cache->attn = std::move(attn);
        cache->attended = std::move(attended);
        cache->bucket = std::move(bucket);
    }
    return out;
}

void msa_pool_backward(const MsaPoolConfig& config, const MsaWeights& weights,
                       const MsaCache& cache, const std::vector<double>& grad_out,
                       std::vector<RealGrid>* grad_channels, int height, int width,
                       MsaWeights* grad_weights) {
    const int d = config.model_width;
    const int dk = config.key_width;
    const int hk = config.heads * dk;
    const int buckets = config.distance_buckets;
    const int t_count = static_cast<int>(cache.token_rows.size());
    const double inv_t = 1.0 / t_count;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    // dY[t][c] = grad_out[c] / T; through Wo
    std::vector<double> d_attended(static_cast<std::size_t>(t_count) * hk, 0.0);
    for (int t = 0; t < t_count; ++t)
        for (int x = 0; x < hk; ++x) {
            double acc = 0.0;
            const double* orow = &weights.wo[static_cast<std::size_t>(x) * d];
            for (int c = 0; c < d; ++c) acc += grad_out[c] * inv_t * orow[c];
            d_attended[static_cast<std::size_t>(t) * hk + x] = acc;
            double* gw = &grad_weights->wo[static_cast<std::size_t>(x) * d];
            const double av = cache.attended[static_cast<std::size_t>(t) * hk + x];
            for (int c = 0; c < d; ++c) gw[c] += av * grad_out[c] * inv_t;
        }

    std::vector<double> dq(static_cast<std::size_t>(t_count) * hk, 0.0);
    std::vector<double> dkm(static_cast<std::size_t>(t_count) * hk, 0.0);
    std::vector<double> dv(static_cast<std::size_t>(t_count) * hk, 0.0);
    std::vector<double> dp(t_count);

    for (int head = 0; head < config.heads; ++head) {
        const int off = head * dk;
        for (int a = 0; a < t_count; ++a) {
            const double* prow = &cache.attn[(static_cast<std::size_t>(head) * t_count + a) * t_count];
            // dP and dv
            double dot_pd = 0.0;
            for (int b = 0; b < t_count; ++b) {
                double acc = 0.0;
                for (int x = 0; x < dk; ++x)
                    acc += d_attended[static_cast<std::size_t>(a) * hk + off + x] *
                           cache.v[static_cast<std::size_t>(b) * hk + off + x];
                dp[b] = acc;
                dot_pd += prow[b] * acc;
                for (int x = 0; x < dk; ++x)
                    dv[static_cast<std::size_t>(b) * hk + off + x] +=
                        prow[b] * d_attended[static_cast<std::size_t>(a) * hk + off + x];
            }
            // softmax backward, then into q, k and the bias table
            for (int b = 0; b < t_count; ++b) {
                const double dlogit = prow[b] * (dp[b] - dot_pd);
                if (dlogit == 0.0) continue;
                const int bk = cache.bucket[static_cast<std::size_t>(a) * t_count + b];
                grad_weights->bias_table[head * buckets + bk] += dlogit;
                for (int x = 0; x < dk; ++x) {
                    dq[static_cast<std::size_t>(a) * hk + off + x] +=
                        dlogit * cache.k[static_cast<std::size_t>(b) * hk + off + x] * inv_sqrt_dk;
                    dkm[static_cast<std::size_t>(b) * hk + off + x] +=
                        dlogit * cache.q[static_cast<std::size_t>(a) * hk + off + x] * inv_sqrt_dk;
                }
            }
        }
    }

    // back through the projections into tokens and weight gradients
    std::vector<double> d_tokens(static_cast<std::size_t>(t_count) * d, 0.0);
    auto proj_backward = [&](const std::vector<double>& dy, const std::vector<double>& wmat,
                             std::vector<double>& gw) {
        for (int t = 0; t < t_count; ++t)
            for (int i = 0; i < d; ++i) {
                const double tok = cache.tokens[static_cast<std::size_t>(t) * d + i];
                const double* wrow = &wmat[static_cast<std::size_t>(i) * hk];
                double* gwrow = &gw[static_cast<std::size_t>(i) * hk];
                double acc = 0.0;
                const double* dyrow = &dy[static_cast<std::size_t>(t) * hk];
                for (int o = 0; o < hk; ++o) {
                    acc += dyrow[o] * wrow[o];
                    gwrow[o] += tok * dyrow[o];
                }
                d_tokens[static_cast<std::size_t>(t) * d + i] += acc;
            }
    };
    proj_backward(dq, weights.wq, grad_weights->wq);
    proj_backward(dkm, weights.wk, grad_weights->wk);
    proj_backward(dv, weights.wv, grad_weights->wv);

    grad_channels->assign(d, RealGrid(height, width));
    for (int t = 0; t < t_count; ++t)
        for (int c = 0; c < d; ++c)
            (*grad_channels)[c].at(cache.token_rows[t], cache.token_cols[t]) +=
                d_tokens[static_cast<std::size_t>(t) * d + c];
}

}  // namespace hnext
