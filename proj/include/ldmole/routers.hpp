#pragma once

#include <optional>
#include <string>
#include <utility>

#include "ldmole/simplex.hpp"

namespace ldmole {

enum class RouterKind { LdShared, LdLocal, TopK, Relu };

std::string router_kind_name(RouterKind k);
std::optional<RouterKind> parse_router_kind(const std::string &name);

struct RouterConfig {
    RouterKind kind = RouterKind::LdShared;
    int topk_k = 2;
};

// Linear gate mapping a token feature to per-expert logits.
struct GateParams {
    Matrix weight;  // E x d
};

Vec gate_scores(const GateParams &gate, const Vec &x);

// Small perceptron predicting the sparsity factor. The raw output is
// squashed through 1 - softplus(raw), so lambda < 1 for any finite input.
// hidden_dim == 0 selects the single-linear-map (local) variant.
struct LambdaHead {
    Matrix w1;  // H x d
    Vec b1;     // H
    Matrix w2;  // 1 x H (or 1 x d when hidden_dim == 0)
    Vec b2;     // scalar kept as length-1 vector for the parameter registry
    int hidden_dim = 0;
};

struct LambdaCache {
    Vec hidden;      // tanh(w1 x + b1), empty for the linear variant
    double raw = 0.0;
    double lambda = 0.0;
};

double softplus(double z);
double predict_lambda(const LambdaHead &head, const Vec &x);
double predict_lambda_cached(const LambdaHead &head, const Vec &x, LambdaCache &cache);

// Gradients reuse the parameter layout.
using LambdaHeadGrad = LambdaHead;

LambdaHeadGrad zeros_like(const LambdaHead &head);

// Accumulates parameter gradients into `grad` and returns grad w.r.t. x.
Vec lambda_head_backward(const LambdaHead &head, const LambdaCache &cache, const Vec &x,
                         double grad_lambda, LambdaHeadGrad &grad);

// Per-token, per-module capture of the routing decision. Baselines leave
// lambda/tau unset; ReLU output is stored raw and may violate simplex
// invariants (including the empty-support case).
struct RoutingRecord {
    RouterKind kind = RouterKind::LdShared;
    int topk_k = 0;
    Vec u;
    std::optional<double> lambda;
    std::optional<double> tau;
    int k_active = 0;
    Vec p;
    int layer_id = 0;
    int module_id = 0;
    int token_id = 0;
};

std::pair<RoutingWeights, RoutingRecord> ld_route(const Vec &x, const GateParams &gate,
                                                  const LambdaHead &head);
RoutingWeights topk_route(const Vec &u, int k);
Vec relu_route(const Vec &u);

// Routes gate scores per `router` and fills a record. LD variants require
// a head; cache_out may capture the lambda-head activations for backward.
RoutingRecord route(const Vec &u, const RouterConfig &router, const LambdaHead *head,
                    const Vec &x, LambdaCache *cache_out);

struct RouterGrad {
    Vec grad_u;
    double grad_lambda = 0.0;  // meaningful for LD records only
};

// Chain rule from grad w.r.t. the routing weights back to the gate scores
// (and lambda, for LD records). TopK treats the selected set as constant;
// ReLU uses the ReLU subgradient.
RouterGrad router_backward(const RoutingRecord &record, const Vec &grad_p);

}  // namespace ldmole
