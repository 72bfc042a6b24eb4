#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "hnext/config.hpp"
#include "hnext/data.hpp"
#include "hnext/model.hpp"
#include "hnext/params.hpp"

namespace hnext {

// Mean over the batch of -log softmax(logits)[label], stabilized by
// max-subtraction. grad_logits (optional) receives (softmax - onehot) / batch.
double loss_cross_entropy(const std::vector<std::vector<double>>& logits,
                          const std::vector<int>& labels,
                          std::vector<std::vector<double>>* grad_logits = nullptr);

// SGD with momentum or Adam with bias correction, over every tensor of a
// ParamStore. State is keyed by parameter name.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, const TrainConfig& config);

    void step(ParamStore& params);

private:
    OptimizerKind kind_;
    double lr_;
    double momentum_;
    double beta1_;
    double beta2_;
    double eps_;
    long t_ = 0;
    std::map<std::string, std::vector<double>> m_;
    std::map<std::string, std::vector<double>> v_;
};

struct TrainRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double acc_0 = 0.0;   // validation accuracy, upright
    double acc_45 = 0.0;  // validation accuracy, rotated 45 degrees
    double wall_seconds = 0.0;
    std::uint64_t seed = 0;
};

struct TrainResult {
    ParamStore params;
    std::vector<BatchNormState> bn_states;
    std::vector<TrainRecord> records;
};

// Deterministic training loop: seeded init, seeded shuffling, fixed batch
// order. Per-epoch validation accuracy is measured at 0 and 45 degrees on up
// to eval_subset samples of the validation split.
TrainResult train(const Model& model, const RotatedDataset& train_split,
                  const RotatedDataset& valid_split, const TrainConfig& config);

// accuracy of the model on (up to) `limit` samples rotated by angle_deg
double evaluate_accuracy(const Model& model, const ParamStore& params,
                         std::vector<BatchNormState>& bn_states, const RotatedDataset& dataset,
                         double angle_deg, int limit = 0, int batch = 256);

// Checkpoint: "HNXTCKP1" | u32 version | u32 len + config json | u32 count |
// tensors (u32 len + name | u32 ndim | u64 dims | f64 data). Parameters plus
// batch-norm running statistics; optimizer state is not persisted.
void save_checkpoint(const std::string& path, const RunConfig& config, const ParamStore& params,
                     const std::vector<BatchNormState>& bn_states);

struct Checkpoint {
    RunConfig config;
    ParamStore params;
    std::vector<BatchNormState> bn_states;
};

Checkpoint load_checkpoint(const std::string& path);

}  // namespace hnext
