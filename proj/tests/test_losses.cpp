#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "ldmole/losses.hpp"

using namespace ldmole;

namespace {

RoutingRecord ld_record(Vec u, double lambda) {
    RoutingRecord r;
    r.kind = RouterKind::LdShared;
    r.u = std::move(u);
    r.lambda = lambda;
    r.p = sparsegen_project(r.u, lambda).probs;
    for (double p : r.p) r.k_active += (p > 0.0);
    return r;
}

RoutingRecord record_with_p(Vec p) {
    RoutingRecord r;
    r.kind = RouterKind::TopK;
    r.u = p;
    r.p = std::move(p);
    for (double v : r.p) r.k_active += (v > 0.0);
    return r;
}

}  // namespace

TEST_CASE("uniform logits over C classes give ln C") {
    const int c = 7;
    std::vector<Vec> logits{Vec(c, 0.3)};
    CHECK(masked_cross_entropy(logits, {4}, {1}) == doctest::Approx(std::log(c)).epsilon(1e-12));
}

TEST_CASE("masked positions are ignored entirely") {
    std::vector<Vec> logits{{1.0, -2.0, 0.5}, {3.0, 3.0, 3.0}};
    const std::vector<int> targets{0, 1};
    const double base = masked_cross_entropy(logits, targets, {1, 0});
    logits[1] = {100.0, -50.0, 7.0};  // perturbing the unmasked row changes nothing
    CHECK(masked_cross_entropy(logits, targets, {1, 0}) == base);

    CHECK_THROWS_AS(masked_cross_entropy(logits, targets, {0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(masked_cross_entropy(logits, {0}, {1, 0}), std::invalid_argument);
}

TEST_CASE("cross entropy matches a naive softmax reference") {
    Rng rng(subseed(41, "ce-ref"));
    for (int t = 0; t < 100; ++t) {
        const int n = rng.uniform_int(1, 6), c = rng.uniform_int(2, 9);
        std::vector<Vec> logits(n, Vec(c));
        std::vector<int> targets(n), mask(n);
        bool any = false;
        for (int i = 0; i < n; ++i) {
            for (double &v : logits[i]) v = rng.normal(0.0, 3.0);
            targets[i] = rng.uniform_int(0, c - 1);
            mask[i] = rng.uniform_int(0, 1);
            any = any || mask[i];
        }
        if (!any) mask[0] = 1;

        double ref = 0.0;
        long m = 0;
        for (int i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            double z = 0.0;
            for (double v : logits[i]) z += std::exp(v);
            ref += -std::log(std::exp(logits[i][targets[i]]) / z);
            ++m;
        }
        ref /= m;
        CHECK(masked_cross_entropy(logits, targets, mask) == doctest::Approx(ref).epsilon(1e-9));
    }
}

TEST_CASE("cross entropy gradient matches finite differences") {
    Rng rng(subseed(42, "ce-fd"));
    std::vector<Vec> logits(3, Vec(4));
    for (auto &row : logits)
        for (double &v : row) v = rng.normal();
    const std::vector<int> targets{2, 0, 3};
    const std::vector<int> mask{1, 0, 1};

    std::vector<Vec> dl;
    masked_cross_entropy_grad(logits, targets, mask, dl);
    const double h = 1e-6;
    for (int i = 0; i < 3; ++i)
        for (int c = 0; c < 4; ++c) {
            auto lp = logits, lm = logits;
            lp[i][c] += h;
            lm[i][c] -= h;
            const double fd = (masked_cross_entropy(lp, targets, mask) -
                               masked_cross_entropy(lm, targets, mask)) /
                              (2 * h);
            CHECK(std::abs(dl[i][c] - fd) <= 1e-7);
        }
}

TEST_CASE("routing stats worked example") {
    const auto s = accumulate_stats({record_with_p({0.5, 0.5, 0}), record_with_p({1, 0, 0})});
    CHECK(s.dispatch_fraction == Vec{1.0, 0.5, 0.0});
    CHECK(s.prob_fraction == Vec{0.75, 0.25, 0.0});
    CHECK(s.token_count == 2);

    CHECK_THROWS_AS(accumulate_stats({}), std::invalid_argument);
}

TEST_CASE("load balance calibration") {
    // Uniform one-hot spread: minimum value 1.
    std::vector<RoutingRecord> uniform;
    for (int i = 0; i < 4; ++i) {
        Vec p(4, 0.0);
        p[i] = 1.0;
        uniform.push_back(record_with_p(p));
    }
    CHECK(std::abs(load_balance_loss(accumulate_stats(uniform)) - 1.0) <= 1e-9);

    // Full collapse onto one expert: value E.
    std::vector<RoutingRecord> collapsed(4, record_with_p({1, 0, 0, 0}));
    CHECK(std::abs(load_balance_loss(accumulate_stats(collapsed)) - 4.0) <= 1e-9);

    // Worked mixed example.
    const auto s = accumulate_stats({record_with_p({0.5, 0.5, 0}), record_with_p({1, 0, 0})});
    CHECK(std::abs(load_balance_loss(s) - 2.625) <= 1e-9);
}

TEST_CASE("one-hot load balance is minimized by the uniform assignment") {
    Rng rng(subseed(43, "lb-bound"));
    for (int t = 0; t < 200; ++t) {
        const int e = rng.uniform_int(2, 6);
        std::vector<RoutingRecord> recs;
        for (int i = 0; i < 60; ++i) {
            Vec p(e, 0.0);
            p[rng.uniform_int(0, e - 1)] = 1.0;
            recs.push_back(record_with_p(p));
        }
        CHECK(load_balance_loss(accumulate_stats(recs)) >= 1.0 - 1e-12);
    }
}

TEST_CASE("sparsity hinge worked examples") {
    // lambda below the k=2 lower bound of -2 by 1.
    CHECK(sparsity_loss({ld_record({2, 1, 0}, -3.0)}, 2) == doctest::Approx(1.0).epsilon(1e-12));
    // Inside the feasible region.
    CHECK(sparsity_loss({ld_record({2, 1, 0}, 0.0)}, 2) == 0.0);
    // Exactly at the boundary.
    CHECK(sparsity_loss({ld_record({2, 1, 0}, -2.0)}, 2) == 0.0);
    // k_target >= E: lower bound is unbounded, loss identically zero.
    CHECK(sparsity_loss({ld_record({2, 1, 0}, -50.0)}, 3) == 0.0);

    RoutingRecord no_lambda = record_with_p({1, 0});
    CHECK_THROWS_AS(sparsity_loss({no_lambda}, 1), std::invalid_argument);
}

TEST_CASE("sparsity loss gradient matches finite differences off the hinge") {
    Rng rng(subseed(44, "hinge-fd"));
    for (int t = 0; t < 300; ++t) {
        Vec u(5);
        for (double &v : u) v = rng.normal();
        const double lambda = rng.uniform(-6.0, 0.9);
        const int k = rng.uniform_int(1, 4);
        const auto rec = ld_record(u, lambda);

        double g = 0.0;
        sparsity_hinge(rec, k, &g);
        const double h = 1e-7;
        auto at = [&](double lam) {
            auto r = rec;
            r.lambda = lam;
            return sparsity_hinge(r, k, nullptr);
        };
        const double lower = lambda_lower(u, k);
        if (std::abs(lambda - lower) < 10 * h) continue;  // hinge point itself
        const double fd = (at(lambda + h) - at(lambda - h)) / (2 * h);
        CHECK(std::abs(g - fd) <= 1e-6);
    }
}

TEST_CASE("per-record gradient scaling") {
    std::vector<RoutingRecord> recs{ld_record({2, 1, 0}, -3.0), ld_record({2, 1, 0}, 0.5)};
    Vec grads;
    const double loss = sparsity_loss_grad(recs, 2, grads);
    CHECK(loss == doctest::Approx(0.5).epsilon(1e-12));  // (1.0 + 0.0) / 2
    CHECK(grads[0] == doctest::Approx(-0.5).epsilon(1e-12));
    CHECK(grads[1] == 0.0);
}

TEST_CASE("total loss arithmetic") {
    LossWeights w;
    w.alpha = 0.0;
    w.beta = 0.0;
    CHECK(total_loss(1.7, 9.0, 4.0, w) == 1.7);
    w.alpha = 1.0;
    w.beta = 0.1;
    CHECK(total_loss(1.0, 2.0, 3.0, w) == doctest::Approx(3.3).epsilon(1e-12));
}

TEST_CASE("cross entropy decreases under plain gradient descent") {
    Rng rng(subseed(45, "ce-descent"));
    std::vector<Vec> logits(1, Vec(8));
    for (double &v : logits[0]) v = rng.normal();
    const std::vector<int> targets{3}, mask{1};
    const double initial = masked_cross_entropy(logits, targets, mask);
    for (int step = 0; step < 100; ++step) {
        std::vector<Vec> dl;
        masked_cross_entropy_grad(logits, targets, mask, dl);
        for (size_t c = 0; c < logits[0].size(); ++c) logits[0][c] -= 1e-2 * dl[0][c];
    }
    CHECK(masked_cross_entropy(logits, targets, mask) < initial);
}
