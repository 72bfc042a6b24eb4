#include "doctest.h"

#include <cmath>
#include <functional>

#include "hnext/backbone.hpp"
#include "hnext/model.hpp"
#include "hnext/pooling.hpp"
#include "hnext/rng.hpp"
#include "hnext/trainer.hpp"

using namespace hnext;

namespace {

constexpr double kEps = 1e-5;
constexpr double kTol = 1e-5;

// relative error with a unit floor, so near-zero gradients compare absolutely
double rel_err(double analytic, double numeric) {
    return std::abs(analytic - numeric) /
           std::max({1.0, std::abs(analytic), std::abs(numeric)});
}

double central_diff(const std::function<double(double)>& f, double x0) {
    return (f(x0 + kEps) - f(x0 - kEps)) / (2.0 * kEps);
}

ComplexGrid random_grid(int h, int w, Rng& rng) {
    ComplexGrid g(h, w);
    for (cplx& z : g.values()) z = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    return g;
}

StreamBundle random_bundle(int orders, int channels, int size, Rng& rng, bool masked) {
    StreamBundle b;
    b.min_order = 0;
    b.streams.resize(orders);
    const RealGrid mask = make_circular_mask(size, size);
    for (int s = 0; s < orders; ++s)
        for (int c = 0; c < channels; ++c) {
            ComplexGrid g = random_grid(size, size, rng);
            b.streams[s].push_back(masked ? apply_mask(g, mask) : g);
        }
    return b;
}

// random linear functional over a batch of bundles; gradients of it are the
// packed {dL/dRe, dL/dIm} grids the backward passes consume
struct BundleProjection {
    std::vector<StreamBundle> weights;

    static BundleProjection like(const std::vector<StreamBundle>& batch, std::uint64_t seed) {
        Rng rng(seed);
        BundleProjection p;
        for (const StreamBundle& b : batch) {
            StreamBundle w;
            w.min_order = b.min_order;
            w.streams.resize(b.streams.size());
            for (std::size_t s = 0; s < b.streams.size(); ++s)
                for (const ComplexGrid& g : b.streams[s])
                    w.streams[s].push_back(random_grid(g.height(), g.width(), rng));
            p.weights.push_back(std::move(w));
        }
        return p;
    }

    double eval(const std::vector<StreamBundle>& batch) const {
        double acc = 0.0;
        for (std::size_t b = 0; b < batch.size(); ++b)
            for (std::size_t s = 0; s < batch[b].streams.size(); ++s)
                for (std::size_t c = 0; c < batch[b].streams[s].size(); ++c) {
                    const auto& x = batch[b].streams[s][c].values();
                    const auto& w = weights[b].streams[s][c].values();
                    for (std::size_t i = 0; i < x.size(); ++i)
                        acc += w[i].real() * x[i].real() + w[i].imag() * x[i].imag();
                }
        return acc;
    }

    std::vector<StreamBundle> grad() const { return weights; }
};

void check_input_grads(const std::vector<StreamBundle>& input,
                       const std::vector<StreamBundle>& analytic,
                       const std::function<double(const std::vector<StreamBundle>&)>& loss,
                       int samples, Rng& rng) {
    for (int t = 0; t < samples; ++t) {
        const std::size_t b = rng.below(input.size());
        const std::size_t s = rng.below(input[b].streams.size());
        const std::size_t c = rng.below(input[b].streams[s].size());
        const std::size_t i = rng.below(input[b].streams[s][c].size());
        const bool re = rng.below(2) == 0;

        auto probe = [&](double v) {
            std::vector<StreamBundle> x = input;
            cplx& z = x[b].streams[s][c].values()[i];
            z = re ? cplx{v, z.imag()} : cplx{z.real(), v};
            return loss(x);
        };
        const cplx z0 = input[b].streams[s][c].values()[i];
        const double numeric = central_diff(probe, re ? z0.real() : z0.imag());
        const cplx ga = analytic[b].streams[s][c].values()[i];
        const double a = re ? ga.real() : ga.imag();
        CHECK(rel_err(a, numeric) < kTol);
    }
}

}  // namespace

TEST_CASE("h_conv gradients: input, ring weights and phase offsets") {
    Rng rng(201);
    ConvLayerSpec spec;
    spec.in_num_orders = 2;
    spec.out_num_orders = 2;
    spec.in_channels = 1;
    spec.out_channels = 2;
    spec.k = 5;
    spec.rings = 3;
    const RingInterpolation interp = ring_interpolation(spec.k, spec.rings, spec.mode);

    std::vector<HarmonicFilterSpec> fspecs;
    std::vector<ComplexGrid> filters;
    for (std::size_t f = 0; f < spec.num_filters(); ++f) {
        HarmonicFilterSpec fs;
        std::size_t rest = f / spec.in_channels / spec.out_channels;
        fs.m1 = spec.filter_order(static_cast<int>(rest / spec.in_num_orders),
                                  static_cast<int>(rest % spec.in_num_orders));
        fs.k = spec.k;
        fs.beta = rng.uniform(0.0, 6.28);
        for (int r = 0; r < spec.rings; ++r) fs.radial_weights.push_back(rng.uniform(-1.0, 1.0));
        fspecs.push_back(fs);
        filters.push_back(synthesize_filter(fs, interp));
    }
    const RealGrid mask = make_circular_mask(10, 10);
    std::vector<StreamBundle> input{random_bundle(2, 1, 10, rng, true)};
    const auto out = h_conv(input, spec, filters, &mask);
    const BundleProjection proj = BundleProjection::like(out, 77);

    std::vector<StreamBundle> grad_in;
    std::vector<ComplexGrid> grad_filters(spec.num_filters(), ComplexGrid(spec.k, spec.k));
    h_conv_backward(input, spec, filters, proj.grad(), &mask, &grad_in, &grad_filters);

    auto loss_of_input = [&](const std::vector<StreamBundle>& x) {
        return proj.eval(h_conv(x, spec, filters, &mask));
    };
    check_input_grads(input, grad_in, loss_of_input, 24, rng);

    // chain into the filter parameters
    for (std::size_t f = 0; f < fspecs.size(); f += 3) {
        std::vector<double> grad_radial(spec.rings, 0.0);
        double grad_beta = 0.0;
        filter_param_grad(fspecs[f], interp, grad_filters[f], grad_radial.data(), &grad_beta);
        for (int r = 0; r < spec.rings; ++r) {
            auto probe = [&](double v) {
                auto fs = fspecs[f];
                fs.radial_weights[r] = v;
                auto filt2 = filters;
                filt2[f] = synthesize_filter(fs, interp);
                return proj.eval(h_conv(input, spec, filt2, &mask));
            };
            CHECK(rel_err(grad_radial[r], central_diff(probe, fspecs[f].radial_weights[r])) <
                  kTol);
        }
        auto probe_beta = [&](double v) {
            auto fs = fspecs[f];
            fs.beta = v;
            auto filt2 = filters;
            filt2[f] = synthesize_filter(fs, interp);
            return proj.eval(h_conv(input, spec, filt2, &mask));
        };
        CHECK(rel_err(grad_beta, central_diff(probe_beta, fspecs[f].beta)) < kTol);
    }
}

TEST_CASE("h_relu gradients: input and bias, away from the kink") {
    Rng rng(202);
    std::vector<StreamBundle> input{random_bundle(2, 2, 6, rng, false)};
    const std::vector<double> bias{-0.4, 0.25, -0.15, 0.1};
    const auto out = h_relu(input, bias);
    const BundleProjection proj = BundleProjection::like(out, 78);

    std::vector<StreamBundle> grad_in;
    std::vector<double> grad_bias;
    h_relu_backward(input, bias, proj.grad(), &grad_in, &grad_bias);

    auto loss_of_input = [&](const std::vector<StreamBundle>& x) {
        return proj.eval(h_relu(x, bias));
    };
    check_input_grads(input, grad_in, loss_of_input, 24, rng);

    for (std::size_t ch = 0; ch < bias.size(); ++ch) {
        auto probe = [&](double v) {
            auto b2 = bias;
            b2[ch] = v;
            return proj.eval(h_relu(input, b2));
        };
        CHECK(rel_err(grad_bias[ch], central_diff(probe, bias[ch])) < kTol);
    }
}

TEST_CASE("h_batchnorm gradients: batch-coupled statistics, gamma, delta") {
    Rng rng(203);
    std::vector<StreamBundle> input{random_bundle(1, 2, 5, rng, false),
                                    random_bundle(1, 2, 5, rng, false)};
    const std::vector<double> gamma{1.2, 0.8};
    const std::vector<double> delta{0.1, -0.3};
    const double eps = 1e-5;

    BatchNormCache cache;
    const auto out = h_batchnorm(input, gamma, delta, eps, true, nullptr, 0.1, &cache);
    const BundleProjection proj = BundleProjection::like(out, 79);

    std::vector<StreamBundle> grad_in;
    std::vector<double> grad_gamma;
    std::vector<double> grad_delta;
    h_batchnorm_backward(input, gamma, delta, eps, cache, proj.grad(), &grad_in, &grad_gamma,
                         &grad_delta);

    auto loss_of_input = [&](const std::vector<StreamBundle>& x) {
        BatchNormCache c2;
        return proj.eval(h_batchnorm(x, gamma, delta, eps, true, nullptr, 0.1, &c2));
    };
    check_input_grads(input, grad_in, loss_of_input, 32, rng);

    for (std::size_t ch = 0; ch < gamma.size(); ++ch) {
        auto probe_g = [&](double v) {
            auto g2 = gamma;
            g2[ch] = v;
            BatchNormCache c2;
            return proj.eval(h_batchnorm(input, g2, delta, eps, true, nullptr, 0.1, &c2));
        };
        CHECK(rel_err(grad_gamma[ch], central_diff(probe_g, gamma[ch])) < kTol);
        auto probe_d = [&](double v) {
            auto d2 = delta;
            d2[ch] = v;
            BatchNormCache c2;
            return proj.eval(h_batchnorm(input, gamma, d2, eps, true, nullptr, 0.1, &c2));
        };
        CHECK(rel_err(grad_delta[ch], central_diff(probe_d, delta[ch])) < kTol);
    }
}

TEST_CASE("h_meanpool gradients") {
    Rng rng(204);
    std::vector<StreamBundle> input{random_bundle(2, 1, 6, rng, false)};
    const RealGrid mask = make_circular_mask(3, 3);
    const auto out = h_meanpool(input, 2, 2, &mask);
    const BundleProjection proj = BundleProjection::like(out, 80);
    std::vector<StreamBundle> grad_in;
    h_meanpool_backward(input, 2, 2, &mask, proj.grad(), &grad_in);
    auto loss = [&](const std::vector<StreamBundle>& x) {
        return proj.eval(h_meanpool(x, 2, 2, &mask));
    };
    check_input_grads(input, grad_in, loss, 16, rng);
}

TEST_CASE("magnitude_readout gradients for all modes") {
    Rng rng(205);
    std::vector<StreamBundle> input{random_bundle(2, 2, 4, rng, false)};
    struct ModeCase {
        ReadoutMode mode;
        bool sum_complex;
    };
    for (const ModeCase mc : {ModeCase{ReadoutMode::M0, false}, ModeCase{ReadoutMode::SUM, false},
                              ModeCase{ReadoutMode::SUM, true}, ModeCase{ReadoutMode::WIDE, false}}) {
        const auto out = magnitude_readout(input, mc.mode, mc.sum_complex);
        Rng prng(81);
        std::vector<std::vector<RealGrid>> w(1);
        for (const RealGrid& g : out[0]) {
            RealGrid r(g.height(), g.width());
            for (double& v : r.values()) v = prng.uniform(-1.0, 1.0);
            w[0].push_back(std::move(r));
        }
        auto project = [&](const std::vector<std::vector<RealGrid>>& y) {
            double acc = 0.0;
            for (std::size_t c = 0; c < y[0].size(); ++c)
                for (std::size_t i = 0; i < y[0][c].size(); ++i)
                    acc += w[0][c].values()[i] * y[0][c].values()[i];
            return acc;
        };
        std::vector<StreamBundle> grad_in;
        magnitude_readout_backward(input, mc.mode, mc.sum_complex, w, &grad_in);
        auto loss = [&](const std::vector<StreamBundle>& x) {
            return project(magnitude_readout(x, mc.mode, mc.sum_complex));
        };
        check_input_grads(input, grad_in, loss, 16, rng);
    }
}

TEST_CASE("gap_pool gradients") {
    Rng rng(206);
    const RealGrid mask = make_circular_mask(7, 7);
    std::vector<RealGrid> channels;
    for (int c = 0; c < 3; ++c) {
        RealGrid g(7, 7);
        for (double& v : g.values()) v = rng.uniform01();
        channels.push_back(apply_mask(g, mask));
    }
    Rng prng(82);
    std::vector<double> w(3);
    for (double& v : w) v = prng.uniform(-1.0, 1.0);
    auto project = [&](const std::vector<double>& y) {
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += w[i] * y[i];
        return acc;
    };
    std::vector<RealGrid> grad;
    gap_pool_backward(channels, mask, w, &grad);
    for (int t = 0; t < 12; ++t) {
        const std::size_t c = rng.below(3);
        const std::size_t i = rng.below(channels[c].size());
        auto probe = [&](double v) {
            auto x = channels;
            x[c].values()[i] = v;
            return project(gap_pool(x, mask));
        };
        CHECK(rel_err(grad[c].values()[i], central_diff(probe, channels[c].values()[i])) < kTol);
    }
}

TEST_CASE("zernike_pool gradients include the centroid path") {
    Rng rng(207);
    const int g = 16;
    const ZernikeBasis basis = zernike_basis(g, 4);
    std::vector<RealGrid> channels;
    for (int c = 0; c < 2; ++c) {
        RealGrid ch(g, g);
        for (double& v : ch.values()) v = rng.uniform01();
        channels.push_back(apply_mask(ch, make_circular_mask(g, g)));
    }
    ZernikePoolCache cache;
    const std::vector<double> out = zernike_pool(channels, basis, &cache);
    Rng prng(83);
    std::vector<double> w(out.size());
    for (double& v : w) v = prng.uniform(-1.0, 1.0);
    auto project = [&](const std::vector<double>& y) {
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += w[i] * y[i];
        return acc;
    };
    std::vector<RealGrid> grad;
    zernike_pool_backward(channels, basis, cache, w, &grad);
    for (int t = 0; t < 20; ++t) {
        const std::size_t c = rng.below(2);
        const std::size_t i = rng.below(channels[c].size());
        auto probe = [&](double v) {
            auto x = channels;
            x[c].values()[i] = v;
            return project(zernike_pool(x, basis));
        };
        CHECK(rel_err(grad[c].values()[i], central_diff(probe, channels[c].values()[i])) < kTol);
    }
}

TEST_CASE("msa_pool gradients: tokens and every weight matrix") {
    Rng rng(208);
    MsaPoolConfig cfg;
    cfg.heads = 2;
    cfg.model_width = 3;
    cfg.key_width = 2;
    cfg.distance_buckets = 6;
    MsaWeights weights;
    const std::size_t hk = static_cast<std::size_t>(cfg.heads) * cfg.key_width;
    auto fill = [&](std::vector<double>& v, std::size_t n) {
        v.resize(n);
        for (double& x : v) x = rng.uniform(-0.6, 0.6);
    };
    fill(weights.wq, 3 * hk);
    fill(weights.wk, 3 * hk);
    fill(weights.wv, 3 * hk);
    fill(weights.wo, hk * 3);
    fill(weights.bias_table, static_cast<std::size_t>(cfg.heads) * cfg.distance_buckets);

    const RealGrid mask = make_circular_mask(5, 5);
    std::vector<RealGrid> channels;
    for (int c = 0; c < 3; ++c) {
        RealGrid g(5, 5);
        for (double& v : g.values()) v = rng.uniform01();
        channels.push_back(apply_mask(g, mask));
    }

    MsaCache cache;
    const std::vector<double> out = msa_pool(channels, mask, cfg, weights, &cache);
    Rng prng(84);
    std::vector<double> w(out.size());
    for (double& v : w) v = prng.uniform(-1.0, 1.0);
    auto project = [&](const std::vector<double>& y) {
        double acc = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) acc += w[i] * y[i];
        return acc;
    };

    MsaWeights gw;
    gw.wq.assign(weights.wq.size(), 0.0);
    gw.wk.assign(weights.wk.size(), 0.0);
    gw.wv.assign(weights.wv.size(), 0.0);
    gw.wo.assign(weights.wo.size(), 0.0);
    gw.bias_table.assign(weights.bias_table.size(), 0.0);
    std::vector<RealGrid> grad_channels;
    msa_pool_backward(cfg, weights, cache, w, &grad_channels, 5, 5, &gw);

    for (int t = 0; t < 16; ++t) {
        const std::size_t c = rng.below(3);
        const std::size_t i = rng.below(channels[c].size());
        if (mask.values()[i] == 0.0) continue;  // no token there
        auto probe = [&](double v) {
            auto x = channels;
            x[c].values()[i] = v;
            return project(msa_pool(x, mask, cfg, weights));
        };
        CHECK(rel_err(grad_channels[c].values()[i],
                      central_diff(probe, channels[c].values()[i])) < kTol);
    }

    auto check_matrix = [&](std::vector<double> MsaWeights::*member) {
        std::vector<double>& mat = weights.*member;
        const std::vector<double>& gmat = gw.*member;
        Rng pick(85);
        for (int t = 0; t < 10; ++t) {
            const std::size_t i = pick.below(mat.size());
            auto probe = [&](double v) {
                MsaWeights w2 = weights;
                (w2.*member)[i] = v;
                return project(msa_pool(channels, mask, cfg, w2));
            };
            CHECK(rel_err(gmat[i], central_diff(probe, mat[i])) < kTol);
        }
    };
    check_matrix(&MsaWeights::wq);
    check_matrix(&MsaWeights::wk);
    check_matrix(&MsaWeights::wv);
    check_matrix(&MsaWeights::wo);
    check_matrix(&MsaWeights::bias_table);
}

TEST_CASE("cross entropy gradient equals softmax minus one-hot") {
    std::vector<std::vector<double>> logits{{0.2, -0.7, 1.1}, {2.0, 0.0, -1.0}};
    std::vector<int> labels{2, 0};
    std::vector<std::vector<double>> grad;
    loss_cross_entropy(logits, labels, &grad);
    for (std::size_t b = 0; b < logits.size(); ++b) {
        double denom = 0.0;
        for (double v : logits[b]) denom += std::exp(v);
        for (int k = 0; k < 3; ++k) {
            const double p = std::exp(logits[b][k]) / denom;
            const double expected = (p - (k == labels[b] ? 1.0 : 0.0)) / 2.0;
            CHECK(grad[b][k] == doctest::Approx(expected).epsilon(1e-10));
        }
    }
}

namespace {

double model_loss(const Model& model, const std::vector<RealGrid>& images,
                  const std::vector<int>& labels, const ParamStore& params) {
    const auto logits = model.forward(images, params, nullptr, true, 0.1);
    return loss_cross_entropy(logits, labels);
}

void check_every_parameter(const NetworkConfig& cfg, std::uint64_t seed) {
    Model model(cfg);
    ParamStore params;
    model.register_params(params);
    Rng rng(seed);
    model.init_params(params, rng);
    // keep the relu inputs away from their kinks
    for (auto& [name, tensor] : params)
        if (name.find("relu_bias") != std::string::npos)
            for (double& v : tensor.data) v = rng.uniform(-0.3, -0.1);

    std::vector<RealGrid> images;
    std::vector<int> labels;
    for (int b = 0; b < 2; ++b) {
        RealGrid img(cfg.input_size, cfg.input_size);
        for (double& v : img.values()) v = rng.uniform01();
        images.push_back(std::move(img));
        labels.push_back(static_cast<int>(rng.below(cfg.classes)));
    }

    ForwardCache cache;
    const auto logits = model.forward(images, params, nullptr, true, 0.1, &cache);
    std::vector<std::vector<double>> grad_logits;
    loss_cross_entropy(logits, labels, &grad_logits);
    params.zero_grad();
    model.backward(images, params, cache, grad_logits, &params);

    int checked = 0;
    for (auto& [name, tensor] : params) {
        for (std::size_t i = 0; i < tensor.numel(); ++i) {
            const double x0 = tensor.data[i];
            tensor.data[i] = x0 + kEps;
            const double up = model_loss(model, images, labels, params);
            tensor.data[i] = x0 - kEps;
            const double down = model_loss(model, images, labels, params);
            tensor.data[i] = x0;
            const double numeric = (up - down) / (2.0 * kEps);
            const double err = rel_err(tensor.grad[i], numeric);
            if (err >= kTol) {
                CAPTURE(name);
                CAPTURE(i);
                CHECK(err < kTol);
            }
            ++checked;
        }
    }
    CHECK(checked == static_cast<int>(params.total_size()));
}

}  // namespace

TEST_CASE("every parameter of a gap-pooled model passes finite differences") {
    NetworkConfig cfg;
    cfg.input_size = 10;
    cfg.upscale = 2;
    cfg.mask = true;
    cfg.filter_size = 5;
    cfg.rings = 3;
    cfg.max_order = 1;
    cfg.blocks = {{2, 2}};
    cfg.readout = ReadoutMode::WIDE;
    cfg.pooling = PoolingHead::GAP;
    check_every_parameter(cfg, 301);
}

TEST_CASE("every parameter of a zernike-pooled model passes finite differences") {
    NetworkConfig cfg;
    cfg.input_size = 16;
    cfg.upscale = 1;
    cfg.mask = true;
    cfg.filter_size = 5;
    cfg.rings = 2;
    cfg.max_order = 1;
    cfg.blocks = {{2, 2}};
    cfg.readout = ReadoutMode::WIDE;
    cfg.pooling = PoolingHead::ZERNIKE;
    cfg.zernike_degree = 4;
    check_every_parameter(cfg, 302);
}

TEST_CASE("every parameter of an msa-pooled model passes finite differences") {
    NetworkConfig cfg;
    cfg.input_size = 12;
    cfg.upscale = 1;
    cfg.mask = true;
    cfg.filter_size = 5;
    cfg.rings = 2;
    cfg.max_order = 1;
    cfg.blocks = {{2, 2}};
    cfg.readout = ReadoutMode::WIDE;
    cfg.pooling = PoolingHead::MSA;
    cfg.msa = {2, 3, 8};
    check_every_parameter(cfg, 303);
}

TEST_CASE("sum readout models pass finite differences end to end") {
    NetworkConfig cfg;
    cfg.input_size = 10;
    cfg.upscale = 1;
    cfg.mask = false;  // also covers the unmasked path
    cfg.filter_size = 5;
    cfg.rings = 2;
    cfg.max_order = 1;
    cfg.blocks = {{2, 2}};
    cfg.readout = ReadoutMode::SUM;
    cfg.pooling = PoolingHead::GAP;
    check_every_parameter(cfg, 304);
}
