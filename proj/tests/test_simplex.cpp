#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "ldmole/oracle.hpp"
#include "ldmole/simplex.hpp"

using namespace ldmole;

namespace {

int positives(const Vec &p) {
    int n = 0;
    for (double x : p)
        if (x > 0.0) ++n;
    return n;
}

}  // namespace

TEST_CASE("support and threshold on worked inputs") {
    auto st = support_and_threshold({2, 1, 0}, 0.0);
    CHECK(st.k == 1);
    CHECK(st.tau == doctest::Approx(1.0).epsilon(1e-12));

    st = support_and_threshold({2, 1, 0}, -2.0);
    CHECK(st.k == 2);
    CHECK(st.tau == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("constant scores keep full support for any lambda") {
    for (double c : {-3.0, 0.0, 1.7}) {
        for (double lambda : {-5.0, 0.0, 0.9}) {
            Vec u(6, c);
            auto st = support_and_threshold(u, lambda);
            CHECK(st.k == 6);
            CHECK(st.tau == doctest::Approx(c - (1.0 - lambda) / 6.0).epsilon(1e-12));
        }
    }
}

TEST_CASE("non-finite scores are rejected") {
    CHECK_THROWS_AS(support_and_threshold({1.0, std::nan("")}, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(sparsegen_project({1.0, INFINITY}, -1.0), std::invalid_argument);
    CHECK_THROWS_AS(sparsegen_project({1.0, 0.0}, 1.0), std::invalid_argument);
}

TEST_CASE("projection worked examples") {
    auto w = sparsegen_project({0.5, 0.3, 0.2}, 0.0);
    CHECK(w.probs[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(w.probs[1] == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(w.probs[2] == doctest::Approx(0.2).epsilon(1e-12));

    w = sparsegen_project({2, 1, 0}, 0.0);
    CHECK(w.probs == Vec{1, 0, 0});
    CHECK(w.support == std::vector<int>{0});

    w = sparsegen_project({2, 1, 0}, -2.0);
    CHECK(w.probs[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(w.probs[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(w.probs[2] == 0.0);

    w = sparsegen_project({0.5, 0.3, 0.2}, 0.5);
    CHECK(w.probs[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(w.probs[1] == doctest::Approx(4.0 / 15.0).epsilon(1e-12));
    CHECK(w.probs[2] == doctest::Approx(1.0 / 15.0).epsilon(1e-12));
}

TEST_CASE("sparsemax equals the lambda=0 projection") {
    CHECK(sparsemax({2, 1, 0}).probs == Vec{1, 0, 0});
    CHECK(sparsemax({0, 0}).probs == Vec{0.5, 0.5});
    auto w = sparsemax({0.5, 0.3, 0.2});
    CHECK(w.probs[0] == doctest::Approx(0.5).epsilon(1e-12));

    Rng rng(subseed(11, "sparsemax-alias"));
    for (int t = 0; t < 200; ++t) {
        Vec u(rng.uniform_int(2, 8));
        for (double &x : u) x = rng.normal();
        const Vec a = sparsemax(u).probs;
        const Vec b = sparsegen_project(u, 0.0).probs;
        for (size_t i = 0; i < u.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-10);
    }
}

TEST_CASE("jacobian worked examples") {
    auto j = sparsegen_jacobian({2, 1, 0}, 0.0);
    for (int i = 0; i < 3; ++i) {
        CHECK(j.d_p_d_lambda[i] == 0.0);
        for (int c = 0; c < 3; ++c) CHECK(j.d_p_d_u[i][c] == 0.0);
    }

    j = sparsegen_jacobian({2, 1, 0}, -2.0);
    CHECK(j.d_p_d_u[0][0] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    CHECK(j.d_p_d_u[0][1] == doctest::Approx(-1.0 / 6.0).epsilon(1e-12));
    CHECK(j.d_p_d_u[1][0] == doctest::Approx(-1.0 / 6.0).epsilon(1e-12));
    CHECK(j.d_p_d_u[1][1] == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    for (int i = 0; i < 3; ++i) {
        CHECK(j.d_p_d_u[i][2] == 0.0);
        CHECK(j.d_p_d_u[2][i] == 0.0);
    }
    CHECK(j.d_p_d_lambda[0] == doctest::Approx(1.0 / 18.0).epsilon(1e-12));
    CHECK(j.d_p_d_lambda[1] == doctest::Approx(-1.0 / 18.0).epsilon(1e-12));
    CHECK(j.d_p_d_lambda[2] == 0.0);
}

TEST_CASE("jacobian column sums vanish (simplex sum is preserved)") {
    Rng rng(subseed(12, "jac-colsum"));
    for (int t = 0; t < 300; ++t) {
        const int e = rng.uniform_int(2, 8);
        Vec u(e);
        for (double &x : u) x = rng.normal();
        const double lambda = rng.uniform(-10.0, 0.99);
        const auto j = sparsegen_jacobian(u, lambda);
        double lam_sum = 0.0;
        for (int c = 0; c < e; ++c) {
            double col = 0.0;
            for (int r = 0; r < e; ++r) col += j.d_p_d_u[r][c];
            CHECK(std::abs(col) <= 1e-10);
        }
        for (int r = 0; r < e; ++r) lam_sum += j.d_p_d_lambda[r];
        CHECK(std::abs(lam_sum) <= 1e-10);
    }
}

TEST_CASE("lambda interval worked examples") {
    auto iv = lambda_interval({2, 1, 0}, 1);
    CHECK(iv.lower == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(iv.upper == doctest::Approx(1.0).epsilon(1e-12));
    CHECK_FALSE(iv.lower_unbounded);
    CHECK(positives(sparsegen_project({2, 1, 0}, 0.5).probs) == 1);

    iv = lambda_interval({2, 1, 0}, 2);
    CHECK(iv.lower == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(iv.upper == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(positives(sparsegen_project({2, 1, 0}, -1.0).probs) == 2);

    iv = lambda_interval({2, 1, 0}, 3);
    CHECK(iv.lower_unbounded);
    CHECK(iv.upper == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(positives(sparsegen_project({2, 1, 0}, -3.0).probs) == 3);

    CHECK_THROWS_AS(lambda_interval({2, 1, 0}, 0), std::invalid_argument);
    CHECK_THROWS_AS(lambda_interval({2, 1, 0}, 4), std::invalid_argument);
}

TEST_CASE("lambda_lower endpoints") {
    CHECK(lambda_lower({2, 1, 0}, 2) == doctest::Approx(-2.0).epsilon(1e-12));
    CHECK(lambda_lower({2, 1, 0}, 1) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lambda_lower({2, 1, 0}, 3) == kNegInf);
    // Constant vector: 1 - (U_{E-1} - (E-1)u) = 1, so no lambda < 1 yields k < E.
    CHECK(lambda_lower({0.7, 0.7, 0.7, 0.7}, 3) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("tied scores produce empty intermediate intervals") {
    const auto iv = lambda_interval({1, 1, 0}, 1);
    CHECK(iv.empty);
}

TEST_CASE("degenerate single-expert input") {
    for (double lambda : {-100.0, 0.0, 0.99}) {
        const auto w = sparsegen_project({3.7}, lambda);
        CHECK(w.probs == Vec{1.0});
        const auto j = sparsegen_jacobian({3.7}, lambda);
        CHECK(j.d_p_d_u[0][0] == 0.0);
        CHECK(j.d_p_d_lambda[0] == 0.0);
    }
}

TEST_CASE("simplex feasibility over 10000 random trials") {
    Rng rng(subseed(13, "feasibility"));
    for (int t = 0; t < 10000; ++t) {
        const int e = rng.uniform_int(2, 8);
        Vec u(e);
        for (double &x : u) x = rng.normal();
        const double lambda = rng.uniform(-10.0, 0.99);
        const auto w = sparsegen_project(u, lambda);
        double sum = 0.0;
        for (double p : w.probs) {
            REQUIRE(p >= 0.0);
            sum += p;
        }
        REQUIRE(std::abs(sum - 1.0) <= 1e-10);
        REQUIRE(w.support_size() >= 1);
    }
}

TEST_CASE("support size is non-increasing in lambda") {
    const Vec grid{-10, -5, -2, -1, 0, 0.5, 0.9};
    Rng rng(subseed(14, "monotone"));
    for (int t = 0; t < 200; ++t) {
        const int e = rng.uniform_int(2, 8);
        Vec u(e);
        for (double &x : u) x = rng.normal();
        int prev = e + 1;
        for (double lambda : grid) {
            const int k = sparsegen_project(u, lambda).support_size();
            CHECK(k <= prev);
            prev = k;
        }
    }
}

TEST_CASE("far-negative lambda approaches the uniform distribution") {
    Rng rng(subseed(15, "uniform-limit"));
    for (int t = 0; t < 200; ++t) {
        const int e = rng.uniform_int(2, 8);
        Vec u(e);
        for (double &x : u) x = rng.normal();
        const auto w = sparsegen_project(u, -1e6);
        for (double p : w.probs) CHECK(std::abs(p - 1.0 / e) <= 1e-5);
    }
}

TEST_CASE("interval soundness on random tie-free inputs") {
    Rng rng(subseed(16, "intervals"));
    for (int t = 0; t < 500; ++t) {
        const int e = rng.uniform_int(2, 8);
        Vec u(e);
        for (double &x : u) x = rng.normal();
        for (int k = 1; k <= e; ++k) {
            const auto iv = lambda_interval(u, k);
            if (iv.empty) continue;
            REQUIRE(positives(sparsegen_project(u, iv.midpoint()).probs) == k);
            if (k < e) {
                CHECK(iv.lower < iv.upper);
                REQUIRE(positives(sparsegen_project(u, iv.lower - 1e-6).probs) >= k + 1);
            }
        }
    }
}
