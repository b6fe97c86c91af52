#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ldmole/data.hpp"
#include "ldmole/losses.hpp"
#include "ldmole/mole.hpp"
#include "ldmole/optim.hpp"

namespace ldmole {

struct TrainConfig {
    BackboneConfig model;
    DatasetSpec data;
    LossWeights loss;
    int epochs = 10;
    int batch_size = 16;
    double lr = 1e-4;
    std::vector<int> lr_milestones{6, 8};
    double lr_decay = 0.1;
    double clip_norm = 1.0;
    uint64_t seed = 42;
    int log_interval = 20;

    // Fixed-order key=value rendering; the checkpoint digest hashes this.
    std::string canonical() const;
    uint64_t digest() const;
};

// Base lr times lr_decay for every milestone at or before `epoch`.
double lr_at(int epoch, const TrainConfig &cfg);

struct MetricsEvent {
    long step = 0;
    int epoch = 0;
    std::string split;
    double lm_loss = 0.0;
    double lb_loss = 0.0;
    double sparse_loss = 0.0;
    double total_loss = 0.0;
    double accuracy = 0.0;
    double mean_active_experts = 0.0;
    Vec mean_active_per_layer;
    Vec mean_lambda_per_layer;  // empty for routers without lambda
    double zero_activation_rate = 0.0;

    std::string to_json_line() const;
};

struct EvalResult {
    double lm_loss = 0.0;
    double lb_loss = 0.0;
    double sparse_loss = 0.0;
    double total_loss = 0.0;
    double accuracy = 0.0;
    double mean_active_experts = 0.0;
    Vec mean_active_per_layer;
    Vec mean_lambda_per_layer;
    double zero_activation_rate = 0.0;
};

struct TrainResult {
    ToyBackbone model;
    std::vector<MetricsEvent> events;
    double initial_train_lm = 0.0;
    double final_train_lm = 0.0;
    EvalResult final_val;
};

// Full deterministic training loop; metrics events are appended to the
// result and optionally streamed as JSON lines.
TrainResult train(const TrainConfig &cfg, std::ostream *metrics_jsonl = nullptr);

EvalResult evaluate(const ToyBackbone &model, const TrainConfig &cfg, const SyntheticDataset &ds);

}  // namespace ldmole
