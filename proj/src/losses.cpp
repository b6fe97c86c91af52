#include "ldmole/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ldmole {

namespace {

// log softmax denominator via max-shifted log-sum-exp
double log_sum_exp(const Vec &logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double s = 0.0;
    for (double v : logits) s += std::exp(v - mx);
    return mx + std::log(s);
}

}  // namespace

double masked_cross_entropy(const std::vector<Vec> &logits, const std::vector<int> &targets,
                            const std::vector<int> &mask) {
    if (logits.size() != targets.size() || logits.size() != mask.size())
        throw std::invalid_argument("masked_cross_entropy: shape mismatch");
    double loss = 0.0;
    long n = 0;
    for (size_t i = 0; i < logits.size(); ++i) {
        if (!mask[i]) continue;
        const int t = targets[i];
        if (t < 0 || t >= static_cast<int>(logits[i].size()))
            throw std::invalid_argument("masked_cross_entropy: target out of range");
        loss += log_sum_exp(logits[i]) - logits[i][t];
        ++n;
    }
    if (n == 0) throw std::invalid_argument("masked_cross_entropy: mask selects no positions");
    return loss / n;
}

double masked_cross_entropy_grad(const std::vector<Vec> &logits, const std::vector<int> &targets,
                                 const std::vector<int> &mask, std::vector<Vec> &dlogits) {
    const double loss = masked_cross_entropy(logits, targets, mask);
    long n = 0;
    for (int m : mask) n += (m != 0);

    dlogits.assign(logits.size(), Vec());
    for (size_t i = 0; i < logits.size(); ++i) {
        dlogits[i].assign(logits[i].size(), 0.0);
        if (!mask[i]) continue;
        const double lse = log_sum_exp(logits[i]);
        for (size_t c = 0; c < logits[i].size(); ++c)
            dlogits[i][c] = std::exp(logits[i][c] - lse) / n;
        dlogits[i][targets[i]] -= 1.0 / n;
    }
    return loss;
}

BatchRoutingStats accumulate_stats(const std::vector<RoutingRecord> &records) {
    if (records.empty()) throw std::invalid_argument("accumulate_stats: empty record set");
    const size_t e = records[0].p.size();
    BatchRoutingStats s;
    s.dispatch_fraction.assign(e, 0.0);
    s.prob_fraction.assign(e, 0.0);
    s.token_count = static_cast<long>(records.size());
    for (const auto &r : records) {
        if (r.p.size() != e) throw std::invalid_argument("accumulate_stats: inconsistent expert count");
        // ReLU outputs are unnormalized, so their probability-fraction
        // contribution uses relative shares; otherwise the statistic would
        // track overall output scale instead of balance.
        double scale = 1.0;
        if (r.kind == RouterKind::Relu) {
            double sum = 0.0;
            for (double v : r.p) sum += v;
            scale = sum > 0.0 ? 1.0 / sum : 0.0;
        }
        for (size_t i = 0; i < e; ++i) {
            if (r.p[i] > 0.0) s.dispatch_fraction[i] += 1.0;
            s.prob_fraction[i] += scale * r.p[i];
        }
    }
    for (size_t i = 0; i < e; ++i) {
        s.dispatch_fraction[i] /= s.token_count;
        s.prob_fraction[i] /= s.token_count;
    }
    return s;
}

double load_balance_loss(const BatchRoutingStats &stats) {
    const size_t e = stats.dispatch_fraction.size();
    double s = 0.0;
    for (size_t i = 0; i < e; ++i) s += stats.dispatch_fraction[i] * stats.prob_fraction[i];
    return static_cast<double>(e) * s;
}

double sparsity_hinge(const RoutingRecord &rec, int k_target, double *grad_lambda) {
    if (!rec.lambda)
        throw std::invalid_argument("sparsity loss requires records with a lambda value");
    if (grad_lambda) *grad_lambda = 0.0;
    const int e = static_cast<int>(rec.u.size());
    if (k_target >= e) return 0.0;  // lower bound is -inf, hinge never active
    const double lower = lambda_lower(rec.u, k_target);
    const double margin = lower - *rec.lambda;
    if (margin > 0.0) {
        if (grad_lambda) *grad_lambda = -1.0;
        return margin;
    }
    return 0.0;
}

double sparsity_loss(const std::vector<RoutingRecord> &records, int k_target) {
    Vec unused;
    return sparsity_loss_grad(records, k_target, unused);
}

double sparsity_loss_grad(const std::vector<RoutingRecord> &records, int k_target,
                          Vec &grad_lambda_per_record) {
    if (records.empty()) throw std::invalid_argument("sparsity_loss: empty record set");
    if (k_target < 1) throw std::invalid_argument("sparsity_loss: k_target must be >= 1");
    const double n = static_cast<double>(records.size());
    grad_lambda_per_record.assign(records.size(), 0.0);
    double total = 0.0;
    for (size_t i = 0; i < records.size(); ++i) {
        double g = 0.0;
        total += sparsity_hinge(records[i], k_target, &g);
        grad_lambda_per_record[i] = g / n;
    }
    return total / n;
}

double total_loss(double lm, double lb, double sparse, const LossWeights &weights) {
    return lm + weights.alpha * lb + weights.beta * sparse;
}

}  // namespace ldmole
