#pragma once

#include <string>
#include <vector>

#include "ldmole/train.hpp"

namespace ldmole {

struct PerLayerActivationRow {
    int layer;
    std::string module;
    double mean_active_experts;
};

struct LambdaQuantileRow {
    int layer;
    std::string module;
    double q25, q50, q75;
};

struct FreqActivationRow {
    int token_id;
    int frequency_rank;  // 1 = most frequent
    long count;
    double mean_active_experts;
};

struct HeatmapRow {
    int epoch;
    int layer;
    int expert;
    double routing_mass_fraction;  // sums to 1 per (epoch, layer) for simplex routers
};

struct ZeroActivationRow {
    int layer;
    double fraction_zero;
};

struct AnalysisTables {
    std::vector<PerLayerActivationRow> per_layer_activation;
    std::vector<LambdaQuantileRow> lambda_quantiles;  // empty for routers without lambda
    bool has_lambda = false;
    std::vector<FreqActivationRow> freq_activation;
    double freq_spearman = 0.0;
    std::vector<HeatmapRow> epoch_heatmap;
    std::vector<ZeroActivationRow> zero_activation;
    bool activation_decreasing = false;  // last layer mean <= first layer mean
};

// One eval-mode pass over the dataset, collecting routing behavior.
// `epoch` labels the heatmap rows (typically the trained epoch count).
AnalysisTables analyze_model(const ToyBackbone &model, const SyntheticDataset &ds, int epoch);

// Writes per_layer_activation.csv, lambda_quantiles.csv (LD only),
// freq_activation.csv, epoch_heatmap.csv, zero_activation.csv and
// summary.json under out_dir. Locale-independent formatting.
void write_analysis(const AnalysisTables &tables, const std::string &out_dir);

// Spearman rank correlation helper (average ranks on ties).
double spearman(const Vec &a, const Vec &b);

std::string format_double(double v);

}  // namespace ldmole
