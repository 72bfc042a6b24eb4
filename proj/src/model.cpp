#include "hnext/model.hpp"

#include <cmath>

namespace hnext {
namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

std::string block_name(int i, const char* suffix) {
    return "block" + std::to_string(i) + "." + suffix;
}

// decode the (m_out, m_in, c_out, c_in) tuple behind a flat filter index
struct FilterId {
    int mo, mi, co, ci;
};

FilterId decode_filter(const ConvLayerSpec& spec, std::size_t f) {
    FilterId id;
    id.ci = static_cast<int>(f % spec.in_channels);
    std::size_t rest = f / spec.in_channels;
    id.co = static_cast<int>(rest % spec.out_channels);
    rest /= spec.out_channels;
    id.mi = static_cast<int>(rest % spec.in_num_orders);
    id.mo = static_cast<int>(rest / spec.in_num_orders);
    return id;
}

}  // namespace

Model::Model(NetworkConfig config) : config_(std::move(config)) {
    if (config_.input_channels != 1)
        throw ParameterError("model: only single-channel input is supported");
    if (config_.classes < 2) throw ParameterError("model: need at least two classes");

    int size = config_.backbone_input_size();
    int in_orders = 1;
    int in_channels = config_.input_channels;
    for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
        const BlockConfig& b = config_.blocks[i];
        if (b.channels < 1) throw ParameterError("model: block channels must be >= 1");
        if (b.pool < 1) throw ParameterError("model: block pool must be >= 1");
        block_input_size_.push_back(size);

        ConvLayerSpec spec;
        spec.in_min_order = 0;
        spec.in_num_orders = in_orders;
        spec.out_min_order = 0;
        spec.out_num_orders = config_.max_order + 1;
        spec.in_channels = in_channels;
        spec.out_channels = b.channels;
        spec.k = config_.filter_size;
        spec.rings = config_.rings;
        spec.mode = config_.filter_mode;
        spec.mask_after = config_.mask;
        conv_specs_.push_back(spec);
        ring_interp_.push_back(ring_interpolation(spec.k, spec.rings, spec.mode));

        if (size < spec.k)
            throw ShapeError("model: spatial size " + std::to_string(size) +
                             " smaller than filter size at block " + std::to_string(i));
        if (b.pool > 1) {
            if (size % b.pool != 0)
                throw ShapeError("model: spatial size " + std::to_string(size) +
                                 " not divisible by pool " + std::to_string(b.pool));
            size /= b.pool;
        }
        in_orders = config_.max_order + 1;
        in_channels = b.channels;
    }
    if (config_.pooling == PoolingHead::ZERNIKE) {
        if (size < 8)
            throw ShapeError("model: zernike pooling needs a final grid of at least 8 px");
        zernike_basis_ = zernike_basis(size, config_.zernike_degree);
    }
}

RealGrid Model::mask_for(int size) const {
    auto it = mask_cache_.find(size);
    if (it == mask_cache_.end())
        it = mask_cache_.emplace(size, make_circular_mask(size, size)).first;
    return it->second;
}

void Model::register_params(ParamStore& params) const {
    for (std::size_t i = 0; i < conv_specs_.size(); ++i) {
        const ConvLayerSpec& spec = conv_specs_[i];
        const std::size_t filters = spec.num_filters();
        params.add(block_name(i, "radial"), {filters, static_cast<std::size_t>(spec.rings)});
        params.add(block_name(i, "beta"), {filters});
        const std::size_t channels =
            static_cast<std::size_t>(spec.out_num_orders) * spec.out_channels;
        params.add(block_name(i, "bn_gamma"), {channels});
        params.add(block_name(i, "bn_delta"), {channels});
        params.add(block_name(i, "relu_bias"), {channels});
    }
    if (config_.pooling == PoolingHead::MSA) {
        const std::size_t d = static_cast<std::size_t>(config_.readout_channels());
        const std::size_t hk =
            static_cast<std::size_t>(config_.msa.heads) * config_.msa.key_width;
        params.add("msa.wq", {d, hk});
        params.add("msa.wk", {d, hk});
        params.add("msa.wv", {d, hk});
        params.add("msa.wo", {hk, d});
        params.add("msa.bias", {static_cast<std::size_t>(config_.msa.heads),
                                static_cast<std::size_t>(config_.msa.distance_buckets)});
    }
    params.add("classifier.weight", {static_cast<std::size_t>(config_.classes),
                                     static_cast<std::size_t>(config_.feature_dim())});
    params.add("classifier.bias", {static_cast<std::size_t>(config_.classes)});
}

void Model::init_params(ParamStore& params, Rng& rng) const {
    for (std::size_t i = 0; i < conv_specs_.size(); ++i) {
        const ConvLayerSpec& spec = conv_specs_[i];
        Tensor& radial = params.get(block_name(i, "radial"));
        const double fan_in =
            static_cast<double>(spec.in_num_orders) * spec.in_channels * spec.rings;
        const double std_dev = std::sqrt(1.0 / fan_in);
        for (double& v : radial.data) v = rng.normal(0.0, std_dev);
        Tensor& beta = params.get(block_name(i, "beta"));
        for (double& v : beta.data) v = rng.uniform(0.0, kTwoPi);
        Tensor& gamma = params.get(block_name(i, "bn_gamma"));
        std::fill(gamma.data.begin(), gamma.data.end(), 1.0);
        // bn_delta and relu_bias stay zero
    }
    if (config_.pooling == PoolingHead::MSA) {
        const double d = config_.readout_channels();
        const double hk = static_cast<double>(config_.msa.heads) * config_.msa.key_width;
        const double s_in = 1.0 / std::sqrt(d);
        const double s_out = 1.0 / std::sqrt(hk);
        for (const char* name : {"msa.wq", "msa.wk", "msa.wv"})
            for (double& v : params.get(name).data) v = rng.uniform(-s_in, s_in);
        for (double& v : params.get("msa.wo").data) v = rng.uniform(-s_out, s_out);
        // bias table starts at zero: content-only attention
    }
    Tensor& w = params.get("classifier.weight");
    const double s = 1.0 / std::sqrt(static_cast<double>(config_.feature_dim()));
    for (double& v : w.data) v = rng.uniform(-s, s);
    // classifier bias stays zero
}

std::vector<BatchNormState> Model::make_bn_states() const {
    std::vector<BatchNormState> states;
    states.reserve(conv_specs_.size());
    for (const ConvLayerSpec& spec : conv_specs_)
        states.push_back(BatchNormState::init(spec.out_num_orders * spec.out_channels));
    return states;
}

std::vector<ComplexGrid> Model::synthesize_block_filters(int block,
                                                         const ParamStore& params) const {
    const ConvLayerSpec& spec = conv_specs_[block];
    const Tensor& radial = params.get(block_name(block, "radial"));
    const Tensor& beta = params.get(block_name(block, "beta"));
    const std::size_t filters = spec.num_filters();
    std::vector<ComplexGrid> out(filters);
#pragma omp parallel for schedule(static)
    for (long f = 0; f < static_cast<long>(filters); ++f) {
        const FilterId id = decode_filter(spec, static_cast<std::size_t>(f));
        HarmonicFilterSpec fs;
        fs.m1 = spec.filter_order(id.mo, id.mi);
        fs.k = spec.k;
        fs.mode = spec.mode;
        fs.beta = normalize_beta(beta.data[static_cast<std::size_t>(f)]);
        const double* row = &radial.data[static_cast<std::size_t>(f) * spec.rings];
        fs.radial_weights.assign(row, row + spec.rings);
        out[static_cast<std::size_t>(f)] = synthesize_filter(fs, ring_interp_[block]);
    }
    return out;
}

std::vector<std::vector<double>> Model::forward(const std::vector<RealGrid>& images,
                                                const ParamStore& params,
                                                std::vector<BatchNormState>* bn_state,
                                                bool training, double bn_momentum,
                                                ForwardCache* cache, TapRecorder* taps) const {
    const std::size_t batch = images.size();
    if (batch == 0) throw DataError("model forward: empty batch");
    if (taps) taps->assign(batch, {});

    for (const RealGrid& img : images)
        if (img.height() != config_.input_size || img.width() != config_.input_size)
            throw ShapeError("model forward: image size does not match the config");

    // image -> complex, upscale, mask
    std::vector<StreamBundle> x(batch);
#pragma omp parallel for schedule(static)
    for (long b = 0; b < static_cast<long>(batch); ++b) {
        const RealGrid& img = images[b];
        ComplexGrid g(img.height(), img.width());
        for (std::size_t i = 0; i < img.size(); ++i)
            g.values()[i] = cplx{img.values()[i], 0.0};
        if (config_.upscale > 1) g = upscale_bilinear(g, config_.upscale);
        if (config_.mask) g = apply_mask(g, mask_for(g.height()));
        x[b] = StreamBundle::single(std::move(g));
    }
    if (taps)
        for (std::size_t b = 0; b < batch; ++b) (*taps)[b].push_back({"input", x[b]});
    if (cache) {
        cache->upscaled = x;
        cache->blocks.resize(conv_specs_.size());
    }

    for (std::size_t i = 0; i < conv_specs_.size(); ++i) {
        const ConvLayerSpec& spec = conv_specs_[i];
        const int size = block_input_size_[i];
        const RealGrid mask = config_.mask ? mask_for(size) : RealGrid(1, 1);
        std::vector<ComplexGrid> filters = synthesize_block_filters(static_cast<int>(i), params);

        std::vector<StreamBundle> conv_out =
            h_conv(x, spec, filters, config_.mask ? &mask : nullptr);

        BatchNormCache bn_cache;
        std::vector<StreamBundle> bn_out = h_batchnorm(
            conv_out, params.get(block_name(i, "bn_gamma")).data,
            params.get(block_name(i, "bn_delta")).data, config_.bn_eps, training,
            bn_state ? &(*bn_state)[i] : nullptr, bn_momentum, &bn_cache);

        std::vector<StreamBundle> relu_out =
            h_relu(bn_out, params.get(block_name(i, "relu_bias")).data);

        std::vector<StreamBundle> pool_out;
        const int pool = config_.blocks[i].pool;
        if (pool > 1) {
            const RealGrid pooled_mask = config_.mask ? mask_for(size / pool) : RealGrid(1, 1);
            pool_out = h_meanpool(relu_out, pool, pool, config_.mask ? &pooled_mask : nullptr);
        }

        if (taps) {
            for (std::size_t b = 0; b < batch; ++b) {
                (*taps)[b].push_back({block_name(static_cast<int>(i), "conv"), conv_out[b]});
                (*taps)[b].push_back({block_name(static_cast<int>(i), "bn"), bn_out[b]});
                (*taps)[b].push_back({block_name(static_cast<int>(i), "relu"), relu_out[b]});
                if (pool > 1)
                    (*taps)[b].push_back({block_name(static_cast<int>(i), "pool"), pool_out[b]});
            }
        }

        if (cache) {
            ForwardCache::Block& cb = cache->blocks[i];
            cb.filters = std::move(filters);
            cb.conv_out = std::move(conv_out);
            cb.bn_cache = std::move(bn_cache);
            cb.bn_out = std::move(bn_out);
            cb.relu_out = std::move(relu_out);
            if (pool > 1) cb.pool_out = std::move(pool_out);
            x = (pool > 1) ? cb.pool_out : cb.relu_out;
        } else {
            x = (pool > 1) ? std::move(pool_out) : std::move(relu_out);
        }
    }

    std::vector<std::vector<RealGrid>> readout =
        magnitude_readout(x, config_.readout, config_.sum_complex);

    const int final_size = x[0].height();
    const RealGrid head_mask =
        config_.mask ? mask_for(final_size) : RealGrid(final_size, final_size, 1.0);

    std::vector<std::vector<double>> features(batch);
    std::vector<ZernikePoolCache> zcaches(cache ? batch : 0);
    std::vector<MsaCache> mcaches(cache ? batch : 0);

    MsaPoolConfig msa_cfg;
    MsaWeights msa_w;
    if (config_.pooling == PoolingHead::MSA) {
        msa_cfg.heads = config_.msa.heads;
        msa_cfg.model_width = config_.readout_channels();
        msa_cfg.key_width = config_.msa.key_width;
        msa_cfg.distance_buckets = config_.msa.distance_buckets;
        msa_w.wq = params.get("msa.wq").data;
        msa_w.wk = params.get("msa.wk").data;
        msa_w.wv = params.get("msa.wv").data;
        msa_w.wo = params.get("msa.wo").data;
        msa_w.bias_table = params.get("msa.bias").data;
    }

    for (std::size_t b = 0; b < batch; ++b) {
        switch (config_.pooling) {
            case PoolingHead::GAP:
                features[b] = gap_pool(readout[b], head_mask);
                break;
            case PoolingHead::ZERNIKE:
                features[b] = zernike_pool(readout[b], *zernike_basis_,
                                           cache ? &zcaches[b] : nullptr);
                break;
            case PoolingHead::MSA:
                features[b] = msa_pool(readout[b], head_mask, msa_cfg, msa_w,
                                       cache ? &mcaches[b] : nullptr);
                break;
        }
    }

    const Tensor& w = params.get("classifier.weight");
    const Tensor& bias = params.get("classifier.bias");
    const int classes = config_.classes;
    const int feat_dim = config_.feature_dim();
    std::vector<std::vector<double>> logits(batch, std::vector<double>(classes, 0.0));
    for (std::size_t b = 0; b < batch; ++b) {
        if (static_cast<int>(features[b].size()) != feat_dim)
            throw WiringError("model forward: pooled feature width mismatch");
        for (int k = 0; k < classes; ++k) {
            double acc = bias.data[k];
            const double* wrow = &w.data[static_cast<std::size_t>(k) * feat_dim];
            for (int f = 0; f < feat_dim; ++f) acc += wrow[f] * features[b][f];
            logits[b][k] = acc;
        }
    }

    if (cache) {
        cache->readout = std::move(readout);
        cache->features = std::move(features);
        cache->zernike = std::move(zcaches);
        cache->msa = std::move(mcaches);
        cache->logits = logits;
    }
    return logits;
}

void Model::backward(const std::vector<RealGrid>& images, const ParamStore& params,
                     const ForwardCache& cache,
                     const std::vector<std::vector<double>>& grad_logits,
                     ParamStore* grads_into) const {
    const std::size_t batch = images.size();
    const int classes = config_.classes;
    const int feat_dim = config_.feature_dim();
    ParamStore& gp = *grads_into;

    // classifier
    const Tensor& w = params.get("classifier.weight");
    Tensor& gw = gp.get("classifier.weight");
    Tensor& gb = gp.get("classifier.bias");
    std::vector<std::vector<double>> grad_features(batch, std::vector<double>(feat_dim, 0.0));
    for (std::size_t b = 0; b < batch; ++b) {
        for (int k = 0; k < classes; ++k) {
            const double g = grad_logits[b][k];
            if (g == 0.0) continue;
            gb.grad[k] += g;
            const double* wrow = &w.data[static_cast<std::size_t>(k) * feat_dim];
            double* gwrow = &gw.grad[static_cast<std::size_t>(k) * feat_dim];
            for (int f = 0; f < feat_dim; ++f) {
                gwrow[f] += g * cache.features[b][f];
                grad_features[b][f] += g * wrow[f];
            }
        }
    }

    // pooling head
    const std::vector<StreamBundle>& final_bundle =
        config_.blocks.empty()
            ? cache.upscaled
            : (config_.blocks.back().pool > 1 ? cache.blocks.back().pool_out
                                              : cache.blocks.back().relu_out);
    const int final_size = final_bundle[0].height();
    const RealGrid head_mask =
        config_.mask ? mask_for(final_size) : RealGrid(final_size, final_size, 1.0);

    std::vector<std::vector<RealGrid>> grad_readout(batch);
    if (config_.pooling == PoolingHead::MSA) {
        MsaPoolConfig msa_cfg;
        msa_cfg.heads = config_.msa.heads;
        msa_cfg.model_width = config_.readout_channels();
        msa_cfg.key_width = config_.msa.key_width;
        msa_cfg.distance_buckets = config_.msa.distance_buckets;
        MsaWeights msa_w;
        msa_w.wq = params.get("msa.wq").data;
        msa_w.wk = params.get("msa.wk").data;
        msa_w.wv = params.get("msa.wv").data;
        msa_w.wo = params.get("msa.wo").data;
        msa_w.bias_table = params.get("msa.bias").data;
        MsaWeights acc;
        acc.wq.assign(msa_w.wq.size(), 0.0);
        acc.wk.assign(msa_w.wk.size(), 0.0);
        acc.wv.assign(msa_w.wv.size(), 0.0);
        acc.wo.assign(msa_w.wo.size(), 0.0);
        acc.bias_table.assign(msa_w.bias_table.size(), 0.0);
        for (std::size_t b = 0; b < batch; ++b)
            msa_pool_backward(msa_cfg, msa_w, cache.msa[b], grad_features[b], &grad_readout[b],
                              final_size, final_size, &acc);
        auto add_into = [&](const char* name, const std::vector<double>& src) {
            Tensor& t = gp.get(name);
            for (std::size_t i = 0; i < src.size(); ++i) t.grad[i] += src[i];
        };
        add_into("msa.wq", acc.wq);
        add_into("msa.wk", acc.wk);
        add_into("msa.wv", acc.wv);
        add_into("msa.wo", acc.wo);
        add_into("msa.bias", acc.bias_table);
    } else {
        for (std::size_t b = 0; b < batch; ++b) {
            if (config_.pooling == PoolingHead::GAP)
                gap_pool_backward(cache.readout[b], head_mask, grad_features[b],
                                  &grad_readout[b]);
            else
                zernike_pool_backward(cache.readout[b], *zernike_basis_, cache.zernike[b],
                                      grad_features[b], &grad_readout[b]);
        }
    }

    std::vector<StreamBundle> grad_bundle;
    magnitude_readout_backward(final_bundle, config_.readout, config_.sum_complex, grad_readout,
                               &grad_bundle);

    // blocks in reverse
    for (int i = static_cast<int>(conv_specs_.size()) - 1; i >= 0; --i) {
        const ConvLayerSpec& spec = conv_specs_[i];
        const ForwardCache::Block& cb = cache.blocks[i];
        const int size = block_input_size_[i];
        const RealGrid mask = config_.mask ? mask_for(size) : RealGrid(1, 1);
        const int pool = config_.blocks[i].pool;

        std::vector<StreamBundle> grad_relu;
        if (pool > 1) {
            const RealGrid pooled_mask = config_.mask ? mask_for(size / pool) : RealGrid(1, 1);
            h_meanpool_backward(cb.relu_out, pool, pool,
                                config_.mask ? &pooled_mask : nullptr, grad_bundle, &grad_relu);
        } else {
            grad_relu = std::move(grad_bundle);
        }

        std::vector<StreamBundle> grad_bn;
        h_relu_backward(cb.bn_out, params.get(block_name(i, "relu_bias")).data, grad_relu,
                        &grad_bn, &gp.get(block_name(i, "relu_bias")).grad);

        std::vector<StreamBundle> grad_conv;
        h_batchnorm_backward(cb.conv_out, params.get(block_name(i, "bn_gamma")).data,
                             params.get(block_name(i, "bn_delta")).data, config_.bn_eps,
                             cb.bn_cache, grad_bn, &grad_conv,
                             &gp.get(block_name(i, "bn_gamma")).grad,
                             &gp.get(block_name(i, "bn_delta")).grad);

        const std::vector<StreamBundle>& block_input =
            (i == 0) ? cache.upscaled
                     : (config_.blocks[i - 1].pool > 1 ? cache.blocks[i - 1].pool_out
                                                       : cache.blocks[i - 1].relu_out);
        std::vector<ComplexGrid> grad_filters(spec.num_filters(),
                                              ComplexGrid(spec.k, spec.k));
        std::vector<StreamBundle> grad_input;
        // the input image carries no parameters, so skip its gradient at i = 0
        h_conv_backward(block_input, spec, cb.filters, grad_conv,
                        config_.mask ? &mask : nullptr, (i > 0) ? &grad_input : nullptr,
                        &grad_filters);

        Tensor& gradial = gp.get(block_name(i, "radial"));
        Tensor& gbeta = gp.get(block_name(i, "beta"));
        const Tensor& radial = params.get(block_name(i, "radial"));
        const Tensor& beta = params.get(block_name(i, "beta"));
        const long nf = static_cast<long>(spec.num_filters());
#pragma omp parallel for schedule(static)
        for (long f = 0; f < nf; ++f) {
            const FilterId id = decode_filter(spec, static_cast<std::size_t>(f));
            HarmonicFilterSpec fs;
            fs.m1 = spec.filter_order(id.mo, id.mi);
            fs.k = spec.k;
            fs.mode = spec.mode;
            fs.beta = normalize_beta(beta.data[static_cast<std::size_t>(f)]);
            const double* row = &radial.data[static_cast<std::size_t>(f) * spec.rings];
            fs.radial_weights.assign(row, row + spec.rings);
            filter_param_grad(fs, ring_interp_[i], grad_filters[static_cast<std::size_t>(f)],
                              &gradial.grad[static_cast<std::size_t>(f) * spec.rings],
                              &gbeta.grad[static_cast<std::size_t>(f)]);
        }
        grad_bundle = std::move(grad_input);
    }
}

}  // namespace hnext
