#include "hnext/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "hnext/rng.hpp"

namespace hnext {
namespace {

constexpr double kDegToRad = 3.141592653589793238462643383279502884 / 180.0;

std::vector<RealGrid> batch_images(const RotatedDataset& ds, const std::vector<std::size_t>& order,
                                   std::size_t begin, std::size_t end, double angle_deg) {
    std::vector<RealGrid> images;
    images.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        RealGrid img = ds.image(order[i]);
        if (angle_deg != 0.0) img = rotate_resample(img, angle_deg * kDegToRad);
        images.push_back(std::move(img));
    }
    return images;
}

std::vector<int> batch_labels(const RotatedDataset& ds, const std::vector<std::size_t>& order,
                              std::size_t begin, std::size_t end) {
    std::vector<int> labels;
    labels.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) labels.push_back(ds.labels[order[i]]);
    return labels;
}

}  // namespace

double loss_cross_entropy(const std::vector<std::vector<double>>& logits,
                          const std::vector<int>& labels,
                          std::vector<std::vector<double>>* grad_logits) {
    const std::size_t batch = logits.size();
    if (batch == 0 || labels.size() != batch)
        throw DataError("cross entropy: logits/labels size mismatch");
    const int classes = static_cast<int>(logits[0].size());
    if (grad_logits) grad_logits->assign(batch, std::vector<double>(classes, 0.0));
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        const int label = labels[b];
        if (label < 0 || label >= classes)
            throw DataError("cross entropy: label out of range");
        const double max_logit = *std::max_element(logits[b].begin(), logits[b].end());
        double denom = 0.0;
        for (double v : logits[b]) denom += std::exp(v - max_logit);
        const double log_denom = std::log(denom);
        total += -(logits[b][label] - max_logit - log_denom);
        if (grad_logits) {
            for (int k = 0; k < classes; ++k) {
                const double p = std::exp(logits[b][k] - max_logit) / denom;
                (*grad_logits)[b][k] = (p - (k == label ? 1.0 : 0.0)) / batch;
            }
        }
    }
    return total / batch;
}

Optimizer::Optimizer(OptimizerKind kind, const TrainConfig& config)
    : kind_(kind),
      lr_(config.lr),
      momentum_(config.momentum),
      beta1_(config.beta1),
      beta2_(config.beta2),
      eps_(config.adam_eps) {
    if (lr_ <= 0.0) throw ParameterError("optimizer: learning rate must be positive");
}

void Optimizer::step(ParamStore& params) {
    ++t_;
    for (auto& [name, tensor] : params) {
        if (kind_ == OptimizerKind::SGD) {
            auto& vel = m_[name];
            if (vel.size() != tensor.numel()) vel.assign(tensor.numel(), 0.0);
            for (std::size_t i = 0; i < tensor.numel(); ++i) {
                vel[i] = momentum_ * vel[i] + tensor.grad[i];
                tensor.data[i] -= lr_ * vel[i];
            }
        } else {
            auto& m = m_[name];
            auto& v = v_[name];
            if (m.size() != tensor.numel()) m.assign(tensor.numel(), 0.0);
            if (v.size() != tensor.numel()) v.assign(tensor.numel(), 0.0);
            const double bc1 = 1.0 - std::pow(beta1_, t_);
            const double bc2 = 1.0 - std::pow(beta2_, t_);
            for (std::size_t i = 0; i < tensor.numel(); ++i) {
                const double g = tensor.grad[i];
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
                const double mhat = m[i] / bc1;
                const double vhat = v[i] / bc2;
                tensor.data[i] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
            }
        }
    }
}

double evaluate_accuracy(const Model& model, const ParamStore& params,
                         std::vector<BatchNormState>& bn_states, const RotatedDataset& dataset,
                         double angle_deg, int limit, int batch) {
    const std::size_t n = (limit > 0 && static_cast<std::size_t>(limit) < dataset.size())
                              ? static_cast<std::size_t>(limit)
                              : dataset.size();
    if (n == 0) throw DataError("evaluate: empty split");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < n; begin += batch) {
        const std::size_t end = std::min(n, begin + batch);
        std::vector<RealGrid> images = batch_images(dataset, order, begin, end, angle_deg);
        const auto logits = model.forward(images, params, &bn_states, /*training=*/false, 0.0);
        for (std::size_t b = 0; b < logits.size(); ++b) {
            const auto& row = logits[b];
            const int pred = static_cast<int>(
                std::max_element(row.begin(), row.end()) - row.begin());
            if (pred == dataset.labels[order[begin + b]]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

TrainResult train(const Model& model, const RotatedDataset& train_split,
                  const RotatedDataset& valid_split, const TrainConfig& config) {
    if (train_split.size() == 0) throw DataError("train: empty training split");

    TrainResult result;
    Rng rng(config.seed);
    model.register_params(result.params);
    model.init_params(result.params, rng);
    result.bn_states = model.make_bn_states();
    Optimizer optimizer(config.optimizer, config);

    const std::size_t n = (config.train_subset > 0 &&
                           static_cast<std::size_t>(config.train_subset) < train_split.size())
                              ? static_cast<std::size_t>(config.train_subset)
                              : train_split.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto t_start = std::chrono::steady_clock::now();
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t begin = 0; begin < n; begin += config.batch) {
            const std::size_t end = std::min(n, begin + config.batch);
            std::vector<RealGrid> images = batch_images(train_split, order, begin, end, 0.0);
            std::vector<int> labels = batch_labels(train_split, order, begin, end);

            ForwardCache cache;
            const auto logits = model.forward(images, result.params, &result.bn_states,
                                              /*training=*/true, config.bn_momentum, &cache);
            std::vector<std::vector<double>> grad_logits;
            loss_sum += loss_cross_entropy(logits, labels, &grad_logits);
            ++batches;

            result.params.zero_grad();
            model.backward(images, result.params, cache, grad_logits, &result.params);
            optimizer.step(result.params);
        }

        TrainRecord record;
        record.epoch = epoch;
        record.seed = config.seed;
        record.train_loss = loss_sum / static_cast<double>(batches);
        if (valid_split.size() > 0) {
            record.acc_0 = evaluate_accuracy(model, result.params, result.bn_states, valid_split,
                                             0.0, config.eval_subset);
            record.acc_45 = evaluate_accuracy(model, result.params, result.bn_states, valid_split,
                                              45.0, config.eval_subset);
        }
        record.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        result.records.push_back(record);
    }
    return result;
}

namespace {

void write_tensor(std::ostream& out, const std::string& name,
                  const std::vector<std::size_t>& shape, const std::vector<double>& data) {
    const std::uint32_t name_len = static_cast<std::uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    out.write(name.data(), name_len);
    const std::uint32_t ndim = static_cast<std::uint32_t>(shape.size());
    out.write(reinterpret_cast<const char*>(&ndim), sizeof(ndim));
    for (std::size_t d : shape) {
        const std::uint64_t v = d;
        out.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(double)));
}

struct RawTensor {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<double> data;
};

RawTensor read_tensor(std::istream& in, const std::string& path) {
    RawTensor t;
    std::uint32_t name_len = 0;
    if (!in.read(reinterpret_cast<char*>(&name_len), sizeof(name_len)))
        throw LengthError("checkpoint truncated: " + path);
    t.name.resize(name_len);
    if (!in.read(t.name.data(), name_len)) throw LengthError("checkpoint truncated: " + path);
    std::uint32_t ndim = 0;
    if (!in.read(reinterpret_cast<char*>(&ndim), sizeof(ndim)))
        throw LengthError("checkpoint truncated: " + path);
    std::size_t total = 1;
    for (std::uint32_t i = 0; i < ndim; ++i) {
        std::uint64_t d = 0;
        if (!in.read(reinterpret_cast<char*>(&d), sizeof(d)))
            throw LengthError("checkpoint truncated: " + path);
        t.shape.push_back(static_cast<std::size_t>(d));
        total *= static_cast<std::size_t>(d);
    }
    t.data.resize(total);
    if (!in.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(total * sizeof(double))))
        throw LengthError("checkpoint truncated: " + path);
    return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const RunConfig& config, const ParamStore& params,
                     const std::vector<BatchNormState>& bn_states) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out.write("HNXTCKP1", 8);
    const std::uint32_t version = 1;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::string cfg = run_config_to_json(config).dump();
    const std::uint32_t cfg_len = static_cast<std::uint32_t>(cfg.size());
    out.write(reinterpret_cast<const char*>(&cfg_len), sizeof(cfg_len));
    out.write(cfg.data(), cfg_len);

    std::uint32_t count = 0;
    for (const auto& [name, t] : params) {
        (void)name;
        (void)t;
        ++count;
    }
    count += static_cast<std::uint32_t>(2 * bn_states.size());
    out.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const auto& [name, t] : params) write_tensor(out, name, t.shape, t.data);
    for (std::size_t i = 0; i < bn_states.size(); ++i) {
        const std::string prefix = "block" + std::to_string(i);
        write_tensor(out, prefix + ".bn_running_mean", {bn_states[i].running_mean.size()},
                     bn_states[i].running_mean);
        write_tensor(out, prefix + ".bn_running_var", {bn_states[i].running_var.size()},
                     bn_states[i].running_var);
    }
    if (!out) throw DataError("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("checkpoint not readable: " + path);
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, "HNXTCKP1", 8) != 0)
        throw FormatError("not a checkpoint file: " + path);
    std::uint32_t version = 0;
    if (!in.read(reinterpret_cast<char*>(&version), sizeof(version)) || version != 1)
        throw FormatError("unsupported checkpoint version in " + path);
    std::uint32_t cfg_len = 0;
    if (!in.read(reinterpret_cast<char*>(&cfg_len), sizeof(cfg_len)))
        throw LengthError("checkpoint truncated: " + path);
    std::string cfg(cfg_len, '\0');
    if (!in.read(cfg.data(), cfg_len)) throw LengthError("checkpoint truncated: " + path);

    Checkpoint ck;
    ck.config = parse_run_config(nlohmann::json::parse(cfg));
    Model model(ck.config.model);
    model.register_params(ck.params);
    ck.bn_states = model.make_bn_states();

    std::uint32_t count = 0;
    if (!in.read(reinterpret_cast<char*>(&count), sizeof(count)))
        throw LengthError("checkpoint truncated: " + path);
    for (std::uint32_t i = 0; i < count; ++i) {
        RawTensor t = read_tensor(in, path);
        if (t.name.find(".bn_running_mean") != std::string::npos ||
            t.name.find(".bn_running_var") != std::string::npos) {
            const std::size_t block = std::stoul(t.name.substr(5));
            if (block >= ck.bn_states.size())
                throw FormatError("checkpoint names a block the config lacks: " + t.name);
            auto& state = ck.bn_states[block];
            auto& dst = (t.name.find("mean") != std::string::npos) ? state.running_mean
                                                                   : state.running_var;
            if (dst.size() != t.data.size())
                throw FormatError("checkpoint tensor size mismatch: " + t.name);
            dst = std::move(t.data);
        } else {
            Tensor& dst = ck.params.get(t.name);
            if (dst.shape != t.shape)
                throw FormatError("checkpoint tensor shape mismatch: " + t.name);
            dst.data = std::move(t.data);
        }
    }
    return ck;
}

}  // namespace hnext
