#include "ldmole/simplex.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ldmole {

namespace {

void check_inputs(const Vec &u, double lambda) {
    if (u.empty()) throw std::invalid_argument("gate scores must be non-empty");
    if (!all_finite(u)) throw std::invalid_argument("gate scores must be finite");
    if (!(lambda < 1.0)) throw std::invalid_argument("sparsity factor must satisfy lambda < 1");
}

// Indices sorted by descending value, ties broken by ascending index.
std::vector<int> sort_desc(const Vec &u) {
    std::vector<int> idx(u.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return u[a] > u[b]; });
    return idx;
}

double safe_denom(double lambda) { return std::max(1.0 - lambda, 1e-12); }

}  // namespace

SupportThreshold support_and_threshold(const Vec &u, double lambda) {
    check_inputs(u, lambda);
    const int e = static_cast<int>(u.size());
    const std::vector<int> order = sort_desc(u);

    SupportThreshold st;
    st.sorted_prefix_sums.resize(e);
    double cum = 0.0;
    int k = 1;
    for (int i = 0; i < e; ++i) {
        cum += u[order[i]];
        st.sorted_prefix_sums[i] = cum;
        // k = max{k : 1 - lambda + k*u_(k) > U_k}; holds at k=1 since lambda < 1
        if (1.0 - lambda + (i + 1) * u[order[i]] > cum) k = i + 1;
    }
    st.k = k;
    st.tau = (st.sorted_prefix_sums[k - 1] - 1.0 + lambda) / k;
    return st;
}

RoutingWeights sparsegen_project(const Vec &u, double lambda) {
    check_inputs(u, lambda);
    if (u.size() == 1) return {{1.0}, {0}};  // forced by the sum constraint
    const SupportThreshold st = support_and_threshold(u, lambda);
    const double denom = safe_denom(lambda);
    const int e = static_cast<int>(u.size());

    RoutingWeights w;
    w.probs.assign(e, 0.0);
    for (int i = 0; i < e; ++i) {
        const double p = (u[i] - st.tau) / denom;
        if (p > 0.0) {
            w.probs[i] = p;
            w.support.push_back(i);
        }
    }
    return w;
}

RoutingWeights sparsemax(const Vec &u) { return sparsegen_project(u, 0.0); }

RoutingJacobian sparsegen_jacobian(const Vec &u, double lambda) {
    const RoutingWeights w = sparsegen_project(u, lambda);
    const double denom = safe_denom(lambda);
    const int e = static_cast<int>(u.size());
    const int k = w.support_size();

    RoutingJacobian j;
    j.d_p_d_u.assign(e, Vec(e, 0.0));
    j.d_p_d_lambda.assign(e, 0.0);
    if (e == 1) return j;  // p = [1] regardless of u and lambda

    const double inv_k = 1.0 / k;
    for (int i : w.support) {
        for (int jj : w.support)
            j.d_p_d_u[i][jj] = ((i == jj ? 1.0 : 0.0) - inv_k) / denom;
        j.d_p_d_lambda[i] = (w.probs[i] - inv_k) / denom;
    }
    return j;
}

LambdaInterval lambda_interval(const Vec &u, int k_target) {
    if (u.empty() || !all_finite(u)) throw std::invalid_argument("gate scores must be finite and non-empty");
    const int e = static_cast<int>(u.size());
    if (k_target < 1 || k_target > e) throw std::invalid_argument("k_target out of range [1, E]");

    const std::vector<int> order = sort_desc(u);
    double uk_sum = 0.0;
    for (int i = 0; i < k_target; ++i) uk_sum += u[order[i]];

    LambdaInterval iv;
    iv.k_target = k_target;
    iv.upper = 1.0 - (uk_sum - k_target * u[order[k_target - 1]]);
    if (k_target == e) {
        iv.lower = kNegInf;
        iv.lower_unbounded = true;
    } else {
        iv.lower = 1.0 - (uk_sum - k_target * u[order[k_target]]);
    }
    iv.empty = !iv.lower_unbounded && !(iv.lower < iv.upper);
    return iv;
}

double lambda_lower(const Vec &u, int k_target) {
    return lambda_interval(u, k_target).lower;
}

}  // namespace ldmole
