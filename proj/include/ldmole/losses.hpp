#pragma once

#include <vector>

#include "ldmole/routers.hpp"

namespace ldmole {

struct LossWeights {
    double alpha = 1.0;   // load-balance coefficient
    double beta = 0.0;    // sparsity coefficient
    int k_target = 2;
};

// Per-batch dispatch and probability fractions over experts.
struct BatchRoutingStats {
    Vec dispatch_fraction;  // F_i = fraction of tokens with p_i > 0
    Vec prob_fraction;      // P_i = mean routing probability of expert i
    long token_count = 0;
};

// Mean negative log-likelihood over masked positions. `logits` holds one
// row per position; mask entries are 0/1 and at least one must be set.
double masked_cross_entropy(const std::vector<Vec> &logits, const std::vector<int> &targets,
                            const std::vector<int> &mask);

// Same, also producing d loss / d logits (zero rows at unmasked positions).
double masked_cross_entropy_grad(const std::vector<Vec> &logits, const std::vector<int> &targets,
                                 const std::vector<int> &mask, std::vector<Vec> &dlogits);

BatchRoutingStats accumulate_stats(const std::vector<RoutingRecord> &records);

// E * sum_i F_i * P_i; equals 1 at perfect balance, E at full collapse.
double load_balance_loss(const BatchRoutingStats &stats);

// Mean hinge ReLU(lambda_lower(k_target; u) - lambda) over LD records.
// Gate scores are treated as constants; gradients act on lambda only.
double sparsity_loss(const std::vector<RoutingRecord> &records, int k_target);

// Per-record d loss / d lambda: -1/N on active hinges, 0 elsewhere.
double sparsity_loss_grad(const std::vector<RoutingRecord> &records, int k_target,
                          Vec &grad_lambda_per_record);

// Hinge gradient for one record (unscaled): -1 when lambda < lambda_lower.
double sparsity_hinge(const RoutingRecord &rec, int k_target, double *grad_lambda);

double total_loss(double lm, double lb, double sparse, const LossWeights &weights);

}  // namespace ldmole
