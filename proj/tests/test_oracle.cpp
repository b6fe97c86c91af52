#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ldmole/oracle.hpp"

using namespace ldmole;

TEST_CASE("qp oracle worked examples") {
    CHECK(qp_oracle({2, 1, 0}, 0.0).probs == Vec{1, 0, 0});

    const auto w = qp_oracle({0, 0}, -3.5);
    CHECK(w.probs[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(w.probs[1] == doctest::Approx(0.5).epsilon(1e-12));

    const auto v = qp_oracle({2, 1, 0}, -2.0);
    CHECK(v.probs[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(v.probs[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(v.probs[2] == 0.0);
}

TEST_CASE("qp oracle rejects oversized inputs and bad lambda") {
    CHECK_THROWS_AS(qp_oracle(Vec(13, 0.0), 0.0), std::invalid_argument);
    CHECK_THROWS_AS(qp_oracle({1, 2}, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(qp_oracle({}, 0.0), std::invalid_argument);
}

TEST_CASE("qp oracle output is exactly simplex-feasible") {
    Rng rng(subseed(21, "oracle-feasible"));
    for (int t = 0; t < 500; ++t) {
        const int e = rng.uniform_int(2, 8);
        Vec u(e);
        for (double &x : u) x = rng.normal();
        const auto w = qp_oracle(u, rng.uniform(-10.0, 0.99));
        double sum = 0.0;
        for (double p : w.probs) {
            REQUIRE(p >= 0.0);
            sum += p;
        }
        REQUIRE(std::abs(sum - 1.0) <= 1e-12);
    }
}

TEST_CASE("finite differences match the analytical jacobian away from ties") {
    Rng rng(subseed(22, "oracle-fd"));
    int accepted = 0;
    for (int t = 0; t < 300; ++t) {
        const int e = rng.uniform_int(2, 6);
        Vec u(e);
        for (double &x : u) x = rng.normal();
        const double lambda = rng.uniform(-5.0, 0.9);
        const auto fd = fd_derivatives(u, lambda, 1e-6, 1e-4);
        if (!fd) continue;
        ++accepted;
        const auto an = sparsegen_jacobian(u, lambda);
        for (int i = 0; i < e; ++i) {
            for (int j = 0; j < e; ++j)
                CHECK(std::abs(an.d_p_d_u[i][j] - fd->d_p_d_u[i][j]) <=
                      1e-4 * std::max(1.0, std::abs(an.d_p_d_u[i][j])));
            CHECK(std::abs(an.d_p_d_lambda[i] - fd->d_p_d_lambda[i]) <=
                  1e-4 * std::max(1.0, std::abs(an.d_p_d_lambda[i])));
        }
    }
    CHECK(accepted > 100);  // filter should not reject almost everything
}

TEST_CASE("lambda derivative vanishes on the deep uniform plateau") {
    Rng rng(subseed(23, "plateau"));
    Vec u(5);
    for (double &x : u) x = rng.normal();
    const auto fd = fd_derivatives(u, -1e4, 1e-3, 0.0);
    REQUIRE(fd.has_value());
    for (double d : fd->d_p_d_lambda) CHECK(std::abs(d) <= 1e-6);
}

TEST_CASE("full suite passes with zero failures and is deterministic") {
    SuiteOptions opts;
    opts.trials = 2000;
    opts.seed = 7;
    const OracleReport a = run_suite(opts);
    CHECK(a.ok());
    CHECK(a.trials == 2000);
    CHECK(a.max_abs_p_error <= 1e-8);
    CHECK(a.max_rel_grad_error <= 1e-4);

    const OracleReport b = run_suite(opts);
    CHECK(a.to_json() == b.to_json());
}

TEST_CASE("suite flags a deliberately broken projection") {
    SuiteOptions opts;
    opts.trials = 200;
    opts.seed = 3;
    opts.check_gradients = false;
    opts.check_intervals = false;
    // Off-by-one support bug: drops the smallest member of the support.
    opts.projection = [](const Vec &u, double lambda) {
        RoutingWeights w = sparsegen_project(u, lambda);
        if (w.support_size() > 1) {
            int victim = w.support.back();
            double mass = w.probs[victim];
            w.probs[victim] = 0.0;
            w.support.pop_back();
            w.probs[w.support.front()] += mass;
        }
        return w;
    };
    const OracleReport rep = run_suite(opts);
    CHECK_FALSE(rep.ok());
    CHECK(rep.failures.size() > 0);
    CHECK_FALSE(rep.failures.front().diagnostic.empty());
}

TEST_CASE("report serializes the headline fields") {
    SuiteOptions opts;
    opts.trials = 50;
    const std::string json = run_suite(opts).to_json();
    CHECK(json.find("\"trials\": 50") != std::string::npos);
    CHECK(json.find("max_abs_p_error") != std::string::npos);
    CHECK(json.find("\"failure_count\": 0") != std::string::npos);
}
