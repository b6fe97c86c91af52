#pragma once

#include <limits>
#include <vector>

#include "ldmole/linalg.hpp"

namespace ldmole {

// Support size, threshold and the sorted prefix sums U_1..U_E for a
// sparse simplex projection with sparsity factor lambda < 1.
struct SupportThreshold {
    int k = 0;
    double tau = 0.0;
    Vec sorted_prefix_sums;
};

struct RoutingWeights {
    Vec probs;
    std::vector<int> support;  // indices with probs > 0

    int support_size() const { return static_cast<int>(support.size()); }
};

// Piecewise-linear derivatives of the projection, valid at points where
// the support is locally constant. At exact ties the values are a
// one-sided subgradient for the branch containing the lower index.
struct RoutingJacobian {
    std::vector<Vec> d_p_d_u;  // E rows of length E; d_p_d_u[i][j] = dp_i/du_j
    Vec d_p_d_lambda;          // length E
};

// Half-open lambda range [lower, upper) that yields exactly k_target
// positive entries; for k_target == E the range is (-inf, upper).
// `empty` flags degenerate ranges caused by ties u_(k) == u_(k+1).
struct LambdaInterval {
    int k_target = 0;
    double lower = 0.0;
    double upper = 0.0;
    bool lower_unbounded = false;
    bool empty = false;

    double midpoint() const {
        if (lower_unbounded) return upper - 1.0;
        return 0.5 * (lower + upper);
    }
};

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

SupportThreshold support_and_threshold(const Vec &u, double lambda);
RoutingWeights sparsegen_project(const Vec &u, double lambda);
RoutingWeights sparsemax(const Vec &u);
RoutingJacobian sparsegen_jacobian(const Vec &u, double lambda);
LambdaInterval lambda_interval(const Vec &u, int k_target);

// Lower endpoint of lambda_interval(u, k_target); -inf for k_target == E.
double lambda_lower(const Vec &u, int k_target);

}  // namespace ldmole
