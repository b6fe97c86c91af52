#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ldmole/simplex.hpp"

namespace ldmole {

// Brute-force projection by enumerating all nonempty supports and
// minimizing the objective ||p - u||^2 - lambda ||p||^2 directly.
// Deliberately shares no code with the closed-form path.
RoutingWeights qp_oracle(const Vec &u, double lambda);

// Central finite differences of the projection w.r.t. u and lambda.
// Returns nullopt when the point is within `margin` of a support-change
// boundary (trial should be regenerated by the caller).
std::optional<RoutingJacobian> fd_derivatives(const Vec &u, double lambda, double h,
                                              double margin = -1.0);

struct OracleFailure {
    Vec u;
    double lambda = 0.0;
    std::string diagnostic;
};

struct OracleReport {
    long trials = 0;
    double max_abs_p_error = 0.0;
    double max_rel_grad_error = 0.0;
    std::vector<OracleFailure> failures;

    bool ok() const { return failures.empty(); }
    std::string to_json() const;
};

struct SuiteOptions {
    long trials = 10000;
    int e_min = 2;
    int e_max = 8;
    uint64_t seed = 0;
    double p_tolerance = 1e-8;
    double grad_tolerance = 1e-4;
    double fd_step = 1e-6;
    bool check_projection = true;
    bool check_gradients = true;
    bool check_intervals = true;
    // Implementation under test; replaceable so the suite can be smoke-tested
    // against a deliberately broken projection.
    std::function<RoutingWeights(const Vec &, double)> projection;
    std::function<RoutingJacobian(const Vec &, double)> jacobian;
};

// Projection-equivalence, nonempty-support, exact-k interval and gradient
// checks over random trials. Deterministic per seed. Failures are
// collected in the report, never thrown.
OracleReport run_suite(const SuiteOptions &opts);

}  // namespace ldmole
