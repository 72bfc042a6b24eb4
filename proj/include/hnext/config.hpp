#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hnext/backbone.hpp"
#include "hnext/filters.hpp"

#include "json.hpp"

namespace hnext {

enum class PoolingHead { GAP, ZERNIKE, MSA };
enum class OptimizerKind { SGD, ADAM };

struct BlockConfig {
    int channels = 4;  // per rotation order
    int pool = 2;      // mean-pool window = stride; 1 disables pooling
};

struct MsaConfig {
    int heads = 2;
    int key_width = 8;
    int distance_buckets = 16;
};

// Declarative layer stack: upscale -> mask -> [conv -> bn -> relu -> pool]* ->
// readout -> pooling head -> linear classifier.
struct NetworkConfig {
    int input_size = 28;
    int input_channels = 1;
    int classes = 10;
    int upscale = 2;
    bool mask = true;
    FilterMode filter_mode = FilterMode::HNEXT;
    int filter_size = 15;
    int rings = 8;
    int max_order = 2;  // streams carry orders 0..max_order
    std::vector<BlockConfig> blocks{{8, 2}, {14, 1}, {16, 2}};
    ReadoutMode readout = ReadoutMode::WIDE;
    bool sum_complex = false;  // SUM readout: complex sum before the magnitude
    PoolingHead pooling = PoolingHead::GAP;
    int zernike_degree = 8;
    MsaConfig msa;
    double bn_eps = 1e-5;

    int backbone_input_size() const { return input_size * upscale; }
    // spatial size after all pooling stages (validated by the model builder)
    int final_size() const {
        int s = backbone_input_size();
        for (const BlockConfig& b : blocks) s /= b.pool;
        return s;
    }
    int readout_channels() const {
        if (blocks.empty()) return input_channels;
        const int c = blocks.back().channels;
        return readout == ReadoutMode::WIDE ? c * (max_order + 1) : c;
    }
    int feature_dim() const;
    int zernike_moment_count() const {
        int count = 0;
        for (int n = 0; n <= zernike_degree; ++n) count += n / 2 + 1;
        return count;
    }
};

struct TrainConfig {
    OptimizerKind optimizer = OptimizerKind::ADAM;
    double lr = 1e-3;
    double momentum = 0.9;        // SGD
    double beta1 = 0.9;           // Adam
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch = 64;
    int epochs = 10;
    std::uint64_t seed = 1;
    int train_subset = 0;  // 0 = full split
    int eval_subset = 0;
    double bn_momentum = 0.1;
};

struct VerifyConfig {
    std::vector<double> angles_deg{90.0, 180.0, 270.0};
    double max_residual = 1e-8;
    int num_inputs = 8;
    int param_draws = 4;
    int input_size = 0;  // 0 = model input size
    std::uint64_t seed = 7;
};

struct DataConfig {
    std::string variant = "mnist-rot-test";
    std::uint64_t seed = 1;
    bool rot_mnist_swap_test_valid = false;
};

struct PathsConfig {
    std::string mnist_dir;  // raw IDX files; HNEXT_DATA_DIR when empty
    std::string data_dir;   // generated archives
    std::string checkpoint;
    std::string out_dir = ".";
};

struct RunConfig {
    NetworkConfig model;
    TrainConfig train;
    VerifyConfig verify;
    DataConfig data;
    PathsConfig paths;
};

// Strict parsing: unknown keys are rejected, missing keys fall back to the
// documented defaults.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);
nlohmann::json run_config_to_json(const RunConfig& config);

// Total trainable scalar count: ring weights + phase offsets + activation
// biases + batch-norm scale/shift + pooling-head and classifier weights.
long count_parameters(const NetworkConfig& config);

}  // namespace hnext
