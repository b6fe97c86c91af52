#include "ldmole/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ldmole {

RoutingWeights qp_oracle(const Vec &u, double lambda) {
    const int e = static_cast<int>(u.size());
    if (e < 1) throw std::invalid_argument("empty score vector");
    if (e > 12) throw std::invalid_argument("qp_oracle supports E <= 12");
    if (!(lambda < 1.0)) throw std::invalid_argument("lambda must be < 1");

    const double one_minus_lambda = 1.0 - lambda;
    double best_obj = std::numeric_limits<double>::infinity();
    Vec best_p;

    for (unsigned mask = 1; mask < (1u << e); ++mask) {
        double sum_u = 0.0;
        int card = 0;
        for (int i = 0; i < e; ++i)
            if (mask & (1u << i)) {
                sum_u += u[i];
                ++card;
            }
        // Stationary point on the affine set {p_i = 0 off S, sum p = 1}.
        const double tau = (sum_u - one_minus_lambda) / card;

        Vec p(e, 0.0);
        bool feasible = true;
        for (int i = 0; i < e; ++i) {
            if (!(mask & (1u << i))) continue;
            p[i] = (u[i] - tau) / one_minus_lambda;
            if (p[i] < 0.0) {
                feasible = false;
                break;
            }
        }
        if (!feasible) continue;

        double obj = 0.0;
        for (int i = 0; i < e; ++i) {
            const double d = p[i] - u[i];
            obj += d * d - lambda * p[i] * p[i];
        }
        if (obj < best_obj - 1e-15) {
            best_obj = obj;
            best_p = p;
        }
    }

    RoutingWeights w;
    w.probs = best_p;
    for (int i = 0; i < e; ++i)
        if (best_p[i] > 0.0) w.support.push_back(i);
    return w;
}

std::optional<RoutingJacobian> fd_derivatives(const Vec &u, double lambda, double h,
                                              double margin) {
    if (h <= 0.0) throw std::invalid_argument("fd step must be positive");
    if (margin < 0.0) margin = 10.0 * h;
    const int e = static_cast<int>(u.size());

    const SupportThreshold st = support_and_threshold(u, lambda);
    for (double ui : u)
        if (std::abs(ui - st.tau) < margin) return std::nullopt;

    RoutingJacobian j;
    j.d_p_d_u.assign(e, Vec(e, 0.0));
    j.d_p_d_lambda.assign(e, 0.0);

    for (int col = 0; col < e; ++col) {
        Vec up = u, um = u;
        up[col] += h;
        um[col] -= h;
        const Vec pp = sparsegen_project(up, lambda).probs;
        const Vec pm = sparsegen_project(um, lambda).probs;
        for (int row = 0; row < e; ++row)
            j.d_p_d_u[row][col] = (pp[row] - pm[row]) / (2.0 * h);
    }
    const Vec pp = sparsegen_project(u, lambda + h).probs;
    const Vec pm = sparsegen_project(u, lambda - h).probs;
    for (int row = 0; row < e; ++row) j.d_p_d_lambda[row] = (pp[row] - pm[row]) / (2.0 * h);
    return j;
}

namespace {

std::string format_vec(const Vec &v) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    os << "]";
    return os.str();
}

// Mixed relative error: behaves as relative error for O(1)-or-larger
// entries and as absolute error below 1.
double grad_err(double analytic, double fd) {
    return std::abs(analytic - fd) / std::max({1.0, std::abs(analytic), std::abs(fd)});
}

int count_positive(const Vec &p) {
    int n = 0;
    for (double x : p)
        if (x > 0.0) ++n;
    return n;
}

}  // namespace

OracleReport run_suite(const SuiteOptions &opts) {
    auto project = opts.projection ? opts.projection
                                   : [](const Vec &u, double l) { return sparsegen_project(u, l); };
    auto jac = opts.jacobian ? opts.jacobian
                             : [](const Vec &u, double l) { return sparsegen_jacobian(u, l); };

    OracleReport rep;
    Rng rng(subseed(opts.seed, "oracle-suite"));
    const double boundary_margin = std::max(10.0 * opts.fd_step, 1e-4);

    for (long t = 0; t < opts.trials; ++t) {
        const int e = rng.uniform_int(opts.e_min, opts.e_max);
        Vec u(e);
        for (double &x : u) x = rng.normal();
        const double lambda = rng.uniform(-10.0, 0.99);
        ++rep.trials;

        RoutingWeights impl;
        try {
            impl = project(u, lambda);
            if (opts.check_projection) {
                const RoutingWeights ref = qp_oracle(u, lambda);
                double max_diff = 0.0;
                for (int i = 0; i < e; ++i)
                    max_diff = std::max(max_diff, std::abs(impl.probs[i] - ref.probs[i]));
                rep.max_abs_p_error = std::max(rep.max_abs_p_error, max_diff);
                if (max_diff > opts.p_tolerance)
                    rep.failures.push_back({u, lambda, "projection mismatch vs QP oracle, max diff " +
                                                           std::to_string(max_diff)});
            }
        } catch (const std::exception &ex) {
            rep.failures.push_back({u, lambda, std::string("exception: ") + ex.what()});
            continue;
        }

        if (impl.support_size() < 1)
            rep.failures.push_back({u, lambda, "empty support"});

        double sum = 0.0, min_p = 0.0;
        for (double p : impl.probs) {
            sum += p;
            min_p = std::min(min_p, p);
        }
        if (min_p < 0.0 || std::abs(sum - 1.0) > 1e-10)
            rep.failures.push_back({u, lambda, "simplex violation: sum=" + std::to_string(sum)});

        if (opts.check_intervals) {
            for (int k = 1; k <= e; ++k) {
                const LambdaInterval iv = lambda_interval(u, k);
                if (iv.empty) continue;  // tie-degenerate, measure zero for random u
                const int got = count_positive(project(u, iv.midpoint()).probs);
                if (got != k)
                    rep.failures.push_back({u, lambda, "interval midpoint for k=" + std::to_string(k) +
                                                           " gave " + std::to_string(got) + " positives"});
                if (k < e) {
                    const int below = count_positive(project(u, iv.lower - 1e-6).probs);
                    if (below < k + 1)
                        rep.failures.push_back({u, lambda, "below-lower lambda for k=" + std::to_string(k) +
                                                               " gave " + std::to_string(below) + " positives"});
                }
            }
        }

        if (opts.check_gradients) {
            // Regenerate lambda until the trial sits away from a support boundary.
            double l = lambda;
            std::optional<RoutingJacobian> fd;
            for (int attempt = 0; attempt < 50 && !fd; ++attempt) {
                fd = fd_derivatives(u, l, opts.fd_step, boundary_margin);
                if (!fd) l = rng.uniform(-10.0, 0.99);
            }
            if (fd) {
                const RoutingJacobian an = jac(u, l);
                double worst = 0.0;
                for (int i = 0; i < e; ++i) {
                    for (int j = 0; j < e; ++j)
                        worst = std::max(worst, grad_err(an.d_p_d_u[i][j], fd->d_p_d_u[i][j]));
                    worst = std::max(worst, grad_err(an.d_p_d_lambda[i], fd->d_p_d_lambda[i]));
                }
                rep.max_rel_grad_error = std::max(rep.max_rel_grad_error, worst);
                if (worst > opts.grad_tolerance)
                    rep.failures.push_back({u, l, "gradient mismatch, rel err " + std::to_string(worst)});
            }
        }
    }
    return rep;
}

std::string OracleReport::to_json() const {
    nlohmann::ordered_json j;
    j["trials"] = trials;
    j["max_abs_p_error"] = max_abs_p_error;
    j["max_rel_grad_error"] = max_rel_grad_error;
    j["failure_count"] = failures.size();
    auto arr = nlohmann::ordered_json::array();
    size_t limit = std::min<size_t>(failures.size(), 32);
    for (size_t i = 0; i < limit; ++i) {
        nlohmann::ordered_json f;
        f["u"] = format_vec(failures[i].u);
        f["lambda"] = failures[i].lambda;
        f["diagnostic"] = failures[i].diagnostic;
        arr.push_back(f);
    }
    j["failures"] = arr;
    return j.dump(2);
}

}  // namespace ldmole
