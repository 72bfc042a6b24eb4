#include "hnext/config.hpp"

#include <fstream>
#include <set>

#include "hnext/errors.hpp"

namespace hnext {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::string& where, const std::set<std::string>& known) {
    if (!j.is_object()) throw ParameterError("config: " + where + " must be an object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key()))
            throw ParameterError("config: unknown key '" + where + "." + it.key() + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

FilterMode parse_filter_mode(const std::string& s) {
    if (s == "hnet") return FilterMode::HNET;
    if (s == "hnext") return FilterMode::HNEXT;
    throw ParameterError("config: filter_mode must be 'hnet' or 'hnext'");
}

ReadoutMode parse_readout(const std::string& s) {
    if (s == "m0") return ReadoutMode::M0;
    if (s == "sum") return ReadoutMode::SUM;
    if (s == "wide") return ReadoutMode::WIDE;
    throw ParameterError("config: readout must be 'm0', 'sum' or 'wide'");
}

PoolingHead parse_pooling(const std::string& s) {
    if (s == "gap") return PoolingHead::GAP;
    if (s == "zernike") return PoolingHead::ZERNIKE;
    if (s == "msa") return PoolingHead::MSA;
    throw ParameterError("config: pooling must be 'gap', 'zernike' or 'msa'");
}

OptimizerKind parse_optimizer(const std::string& s) {
    if (s == "sgd") return OptimizerKind::SGD;
    if (s == "adam") return OptimizerKind::ADAM;
    throw ParameterError("config: optimizer must be 'sgd' or 'adam'");
}

NetworkConfig parse_model(const json& j) {
    NetworkConfig m;
    check_keys(j, "model",
               {"input_size", "input_channels", "classes", "upscale", "mask", "filter_mode",
                "filter_size", "rings", "max_order", "blocks", "readout", "sum_complex",
                "pooling", "zernike_degree", "msa", "bn_eps"});
    read(j, "input_size", m.input_size);
    read(j, "input_channels", m.input_channels);
    read(j, "classes", m.classes);
    read(j, "upscale", m.upscale);
    read(j, "mask", m.mask);
    if (j.contains("filter_mode")) m.filter_mode = parse_filter_mode(j.at("filter_mode"));
    read(j, "filter_size", m.filter_size);
    read(j, "rings", m.rings);
    read(j, "max_order", m.max_order);
    if (j.contains("blocks")) {
        m.blocks.clear();
        for (const json& b : j.at("blocks")) {
            check_keys(b, "model.blocks[]", {"channels", "pool"});
            BlockConfig bc;
            read(b, "channels", bc.channels);
            read(b, "pool", bc.pool);
            m.blocks.push_back(bc);
        }
    }
    if (j.contains("readout")) m.readout = parse_readout(j.at("readout"));
    read(j, "sum_complex", m.sum_complex);
    if (j.contains("pooling")) m.pooling = parse_pooling(j.at("pooling"));
    read(j, "zernike_degree", m.zernike_degree);
    if (j.contains("msa")) {
        const json& q = j.at("msa");
        check_keys(q, "model.msa", {"heads", "key_width", "distance_buckets"});
        read(q, "heads", m.msa.heads);
        read(q, "key_width", m.msa.key_width);
        read(q, "distance_buckets", m.msa.distance_buckets);
    }
    read(j, "bn_eps", m.bn_eps);

    if (m.upscale < 1) throw ParameterError("config: upscale must be >= 1");
    if (m.max_order < 0) throw ParameterError("config: max_order must be >= 0");
    if (m.filter_size < 3 || m.filter_size % 2 == 0)
        throw ParameterError("config: filter_size must be odd and >= 3");
    if (m.rings < 1) throw ParameterError("config: rings must be >= 1");
    if (m.bn_eps <= 0.0) throw ParameterError("config: bn_eps must be positive");
    return m;
}

TrainConfig parse_train(const json& j) {
    TrainConfig t;
    check_keys(j, "train",
               {"optimizer", "lr", "momentum", "beta1", "beta2", "adam_eps", "batch", "epochs",
                "seed", "train_subset", "eval_subset", "bn_momentum"});
    if (j.contains("optimizer")) t.optimizer = parse_optimizer(j.at("optimizer"));
    read(j, "lr", t.lr);
    read(j, "momentum", t.momentum);
    read(j, "beta1", t.beta1);
    read(j, "beta2", t.beta2);
    read(j, "adam_eps", t.adam_eps);
    read(j, "batch", t.batch);
    read(j, "epochs", t.epochs);
    read(j, "seed", t.seed);
    read(j, "train_subset", t.train_subset);
    read(j, "eval_subset", t.eval_subset);
    read(j, "bn_momentum", t.bn_momentum);
    if (t.lr <= 0.0) throw ParameterError("config: learning rate must be positive");
    if (t.batch < 1) throw ParameterError("config: batch must be >= 1");
    if (t.epochs < 0) throw ParameterError("config: epochs must be >= 0");
    return t;
}

VerifyConfig parse_verify(const json& j) {
    VerifyConfig v;
    check_keys(j, "verify",
               {"angles_deg", "max_residual", "num_inputs", "param_draws", "input_size", "seed"});
    if (j.contains("angles_deg"))
        v.angles_deg = j.at("angles_deg").get<std::vector<double>>();
    read(j, "max_residual", v.max_residual);
    read(j, "num_inputs", v.num_inputs);
    read(j, "param_draws", v.param_draws);
    read(j, "input_size", v.input_size);
    read(j, "seed", v.seed);
    return v;
}

DataConfig parse_data(const json& j) {
    DataConfig d;
    check_keys(j, "data", {"variant", "seed", "rot_mnist_swap_test_valid"});
    read(j, "variant", d.variant);
    read(j, "seed", d.seed);
    read(j, "rot_mnist_swap_test_valid", d.rot_mnist_swap_test_valid);
    return d;
}

PathsConfig parse_paths(const json& j) {
    PathsConfig p;
    check_keys(j, "paths", {"mnist_dir", "data_dir", "checkpoint", "out_dir"});
    read(j, "mnist_dir", p.mnist_dir);
    read(j, "data_dir", p.data_dir);
    read(j, "checkpoint", p.checkpoint);
    read(j, "out_dir", p.out_dir);
    return p;
}

}  // namespace

int NetworkConfig::feature_dim() const {
    switch (pooling) {
        case PoolingHead::GAP:
            return readout_channels();
        case PoolingHead::ZERNIKE:
            return readout_channels() * zernike_moment_count();
        case PoolingHead::MSA:
            return readout_channels();
    }
    return 0;
}

RunConfig parse_run_config(const nlohmann::json& j) {
    check_keys(j, "(root)", {"model", "train", "verify", "data", "paths"});
    RunConfig c;
    if (j.contains("model")) c.model = parse_model(j.at("model"));
    if (j.contains("train")) c.train = parse_train(j.at("train"));
    if (j.contains("verify")) c.verify = parse_verify(j.at("verify"));
    if (j.contains("data")) c.data = parse_data(j.at("data"));
    if (j.contains("paths")) c.paths = parse_paths(j.at("paths"));
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("config file not readable: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParameterError("config parse error in " + path + ": " + e.what());
    }
    return parse_run_config(j);
}

nlohmann::json run_config_to_json(const RunConfig& c) {
    nlohmann::json j;
    nlohmann::json blocks = nlohmann::json::array();
    for (const BlockConfig& b : c.model.blocks)
        blocks.push_back({{"channels", b.channels}, {"pool", b.pool}});
    j["model"] = {
        {"input_size", c.model.input_size},
        {"input_channels", c.model.input_channels},
        {"classes", c.model.classes},
        {"upscale", c.model.upscale},
        {"mask", c.model.mask},
        {"filter_mode", c.model.filter_mode == FilterMode::HNET ? "hnet" : "hnext"},
        {"filter_size", c.model.filter_size},
        {"rings", c.model.rings},
        {"max_order", c.model.max_order},
        {"blocks", blocks},
        {"readout", c.model.readout == ReadoutMode::M0
                        ? "m0"
                        : (c.model.readout == ReadoutMode::SUM ? "sum" : "wide")},
        {"sum_complex", c.model.sum_complex},
        {"pooling", c.model.pooling == PoolingHead::GAP
                        ? "gap"
                        : (c.model.pooling == PoolingHead::ZERNIKE ? "zernike" : "msa")},
        {"zernike_degree", c.model.zernike_degree},
        {"msa",
         {{"heads", c.model.msa.heads},
          {"key_width", c.model.msa.key_width},
          {"distance_buckets", c.model.msa.distance_buckets}}},
        {"bn_eps", c.model.bn_eps},
    };
    j["train"] = {
        {"optimizer", c.train.optimizer == OptimizerKind::SGD ? "sgd" : "adam"},
        {"lr", c.train.lr},
        {"momentum", c.train.momentum},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"adam_eps", c.train.adam_eps},
        {"batch", c.train.batch},
        {"epochs", c.train.epochs},
        {"seed", c.train.seed},
        {"train_subset", c.train.train_subset},
        {"eval_subset", c.train.eval_subset},
        {"bn_momentum", c.train.bn_momentum},
    };
    j["verify"] = {
        {"angles_deg", c.verify.angles_deg},   {"max_residual", c.verify.max_residual},
        {"num_inputs", c.verify.num_inputs},   {"param_draws", c.verify.param_draws},
        {"input_size", c.verify.input_size},   {"seed", c.verify.seed},
    };
    j["data"] = {
        {"variant", c.data.variant},
        {"seed", c.data.seed},
        {"rot_mnist_swap_test_valid", c.data.rot_mnist_swap_test_valid},
    };
    j["paths"] = {
        {"mnist_dir", c.paths.mnist_dir},
        {"data_dir", c.paths.data_dir},
        {"checkpoint", c.paths.checkpoint},
        {"out_dir", c.paths.out_dir},
    };
    return j;
}

long count_parameters(const NetworkConfig& m) {
    long total = 0;
    int in_orders = 1;
    int in_channels = m.input_channels;
    const int out_orders = m.max_order + 1;
    for (const BlockConfig& b : m.blocks) {
        const long filters = static_cast<long>(in_orders) * out_orders * in_channels * b.channels;
        total += filters * (m.rings + 1);      // ring weights + phase offset
        const long channels = static_cast<long>(out_orders) * b.channels;
        total += 3 * channels;                 // bn gamma/delta + relu bias
        in_orders = out_orders;
        in_channels = b.channels;
    }
    if (m.pooling == PoolingHead::MSA) {
        const long d = m.readout_channels();
        const long hk = static_cast<long>(m.msa.heads) * m.msa.key_width;
        total += 3 * d * hk;  // q, k, v projections
        total += hk * d;      // output projection
        total += static_cast<long>(m.msa.heads) * m.msa.distance_buckets;
    }
    total += static_cast<long>(m.classes) * m.feature_dim() + m.classes;
    return total;
}

}  // namespace hnext
