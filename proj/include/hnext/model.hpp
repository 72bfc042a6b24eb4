#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hnext/backbone.hpp"
#include "hnext/config.hpp"
#include "hnext/params.hpp"
#include "hnext/pooling.hpp"
#include "hnext/rng.hpp"

namespace hnext {

// Per-layer stream outputs recorded during a forward pass; consumed by the
// equivariance verifier.
struct LayerTap {
    std::string name;
    StreamBundle bundle;
};
using TapRecorder = std::vector<std::vector<LayerTap>>;  // per sample

// Everything the backward pass needs from one forward evaluation.
struct ForwardCache {
    std::vector<StreamBundle> upscaled;      // backbone input (after upscale+mask)
    struct Block {
        std::vector<ComplexGrid> filters;
        std::vector<StreamBundle> conv_out;
        BatchNormCache bn_cache;
        std::vector<StreamBundle> bn_out;
        std::vector<StreamBundle> relu_out;
        std::vector<StreamBundle> pool_out;  // empty when pool == 1
    };
    std::vector<Block> blocks;
    std::vector<std::vector<RealGrid>> readout;          // per sample
    std::vector<std::vector<double>> features;           // per sample
    std::vector<ZernikePoolCache> zernike;               // per sample
    std::vector<MsaCache> msa;                           // per sample
    std::vector<std::vector<double>> logits;             // per sample
};

// The assembled network: equivariant backbone, invariant pooling head and a
// linear classifier, parameterized by a ParamStore whose layout is fixed by
// the NetworkConfig.
class Model {
public:
    explicit Model(NetworkConfig config);

    const NetworkConfig& config() const { return config_; }

    // Creates the parameter tensors (zero-valued) in the given store.
    void register_params(ParamStore& params) const;

    // Deterministic initialization: ring weights ~ N(0, 1/fan_in), beta
    // uniform in [0, 2pi), classifier uniform fan-in scaled, biases zero.
    void init_params(ParamStore& params, Rng& rng) const;

    // images: one real grid per sample, input_size x input_size, [0,1].
    std::vector<std::vector<double>> forward(const std::vector<RealGrid>& images,
                                             const ParamStore& params,
                                             std::vector<BatchNormState>* bn_state,
                                             bool training, double bn_momentum,
                                             ForwardCache* cache = nullptr,
                                             TapRecorder* taps = nullptr) const;

    // Accumulates dL/dparams into params.grad given dL/dlogits.
    void backward(const std::vector<RealGrid>& images, const ParamStore& params,
                  const ForwardCache& cache,
                  const std::vector<std::vector<double>>& grad_logits,
                  ParamStore* grads_into) const;

    std::vector<BatchNormState> make_bn_states() const;

    const std::vector<ConvLayerSpec>& conv_specs() const { return conv_specs_; }

    // synthesize all filters of one block from the parameter store
    std::vector<ComplexGrid> synthesize_block_filters(int block, const ParamStore& params) const;

    const ZernikeBasis* zernike() const {
        return zernike_basis_.has_value() ? &*zernike_basis_ : nullptr;
    }

private:
    NetworkConfig config_;
    std::vector<ConvLayerSpec> conv_specs_;
    std::vector<RingInterpolation> ring_interp_;  // per block
    std::vector<int> block_input_size_;
    std::optional<ZernikeBasis> zernike_basis_;
    RealGrid mask_for(int size) const;
    mutable std::map<int, RealGrid> mask_cache_;
};

}  // namespace hnext
