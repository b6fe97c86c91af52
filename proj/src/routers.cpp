#include "ldmole/routers.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace ldmole {

std::string router_kind_name(RouterKind k) {
    switch (k) {
        case RouterKind::LdShared: return "ld_shared";
        case RouterKind::LdLocal: return "ld_local";
        case RouterKind::TopK: return "topk";
        case RouterKind::Relu: return "relu";
    }
    return "unknown";
}

std::optional<RouterKind> parse_router_kind(const std::string &name) {
    if (name == "ld_shared" || name == "ld") return RouterKind::LdShared;
    if (name == "ld_local") return RouterKind::LdLocal;
    if (name == "topk") return RouterKind::TopK;
    if (name == "relu") return RouterKind::Relu;
    return std::nullopt;
}

Vec gate_scores(const GateParams &gate, const Vec &x) {
    return matvec(gate.weight, x);
}

double softplus(double z) {
    if (z > 30.0) return z;
    if (z < -30.0) return std::exp(z);
    return std::log1p(std::exp(z));
}

static double sigmoid(double z) {
    if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

double predict_lambda_cached(const LambdaHead &head, const Vec &x, LambdaCache &cache) {
    double raw;
    if (head.hidden_dim > 0) {
        Vec pre = matvec(head.w1, x);
        for (int i = 0; i < head.hidden_dim; ++i) pre[i] = std::tanh(pre[i] + head.b1[i]);
        cache.hidden = pre;
        raw = dot(head.w2.a, pre) + head.b2[0];
    } else {
        raw = matvec(head.w2, x)[0] + head.b2[0];
    }
    cache.raw = raw;
    cache.lambda = 1.0 - softplus(raw);
    // softplus underflows for very negative raw; keep lambda strictly below 1.
    if (cache.lambda >= 1.0) cache.lambda = std::nextafter(1.0, 0.0);
    return cache.lambda;
}

double predict_lambda(const LambdaHead &head, const Vec &x) {
    LambdaCache c;
    return predict_lambda_cached(head, x, c);
}

LambdaHeadGrad zeros_like(const LambdaHead &head) {
    LambdaHeadGrad g;
    g.w1 = Matrix(head.w1.rows, head.w1.cols);
    g.b1.assign(head.b1.size(), 0.0);
    g.w2 = Matrix(head.w2.rows, head.w2.cols);
    g.b2.assign(1, 0.0);
    g.hidden_dim = head.hidden_dim;
    return g;
}

Vec lambda_head_backward(const LambdaHead &head, const LambdaCache &cache, const Vec &x,
                         double grad_lambda, LambdaHeadGrad &grad) {
    // lambda = 1 - softplus(raw)  =>  d lambda / d raw = -sigmoid(raw)
    const double g_raw = -sigmoid(cache.raw) * grad_lambda;
    grad.b2[0] += g_raw;

    if (head.hidden_dim == 0) {
        for (int j = 0; j < head.w2.cols; ++j) grad.w2(0, j) += g_raw * x[j];
        Vec gx(x.size(), 0.0);
        for (int j = 0; j < head.w2.cols; ++j) gx[j] = g_raw * head.w2(0, j);
        return gx;
    }

    Vec g_hid(head.hidden_dim, 0.0);
    for (int i = 0; i < head.hidden_dim; ++i) {
        grad.w2(0, i) += g_raw * cache.hidden[i];
        g_hid[i] = g_raw * head.w2(0, i) * (1.0 - cache.hidden[i] * cache.hidden[i]);
        grad.b1[i] += g_hid[i];
    }
    add_outer(grad.w1, g_hid, x);
    return matTvec(head.w1, g_hid);
}

std::pair<RoutingWeights, RoutingRecord> ld_route(const Vec &x, const GateParams &gate,
                                                  const LambdaHead &head) {
    const Vec u = gate_scores(gate, x);
    RoutingRecord rec = route(u, RouterConfig{RouterKind::LdShared, 0}, &head, x, nullptr);
    RoutingWeights w;
    w.probs = rec.p;
    for (size_t i = 0; i < rec.p.size(); ++i)
        if (rec.p[i] > 0.0) w.support.push_back(static_cast<int>(i));
    return {w, rec};
}

RoutingWeights topk_route(const Vec &u, int k) {
    const int e = static_cast<int>(u.size());
    if (k < 1 || k > e) throw std::invalid_argument("topk k out of range [1, E]");

    std::vector<int> idx(e);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return u[a] > u[b]; });

    double mx = u[idx[0]];
    double z = 0.0;
    RoutingWeights w;
    w.probs.assign(e, 0.0);
    for (int i = 0; i < k; ++i) z += std::exp(u[idx[i]] - mx);
    for (int i = 0; i < k; ++i) {
        w.probs[idx[i]] = std::exp(u[idx[i]] - mx) / z;
    }
    for (int i = 0; i < e; ++i)
        if (w.probs[i] > 0.0) w.support.push_back(i);
    return w;
}

Vec relu_route(const Vec &u) {
    Vec p(u.size(), 0.0);
    for (size_t i = 0; i < u.size(); ++i) p[i] = std::max(0.0, u[i]);
    return p;
}

RoutingRecord route(const Vec &u, const RouterConfig &router, const LambdaHead *head,
                    const Vec &x, LambdaCache *cache_out) {
    RoutingRecord rec;
    rec.kind = router.kind;
    rec.u = u;
    switch (router.kind) {
        case RouterKind::LdShared:
        case RouterKind::LdLocal: {
            if (!head) throw std::invalid_argument("LD routing requires a lambda head");
            LambdaCache cache;
            const double lambda = predict_lambda_cached(*head, x, cache);
            if (cache_out) *cache_out = cache;
            const SupportThreshold st = support_and_threshold(u, lambda);
            rec.lambda = lambda;
            rec.tau = st.tau;
            rec.p = sparsegen_project(u, lambda).probs;
            break;
        }
        case RouterKind::TopK: {
            rec.topk_k = router.topk_k;
            rec.p = topk_route(u, router.topk_k).probs;
            break;
        }
        case RouterKind::Relu: {
            rec.p = relu_route(u);
            break;
        }
    }
    rec.k_active = 0;
    for (double p : rec.p)
        if (p > 0.0) ++rec.k_active;
    return rec;
}

RouterGrad router_backward(const RoutingRecord &record, const Vec &grad_p) {
    if (grad_p.size() != record.u.size())
        throw std::invalid_argument("router_backward: gradient/record size mismatch");

    RouterGrad g;
    g.grad_u.assign(record.u.size(), 0.0);

    switch (record.kind) {
        case RouterKind::LdShared:
        case RouterKind::LdLocal: {
            if (!record.lambda) throw std::invalid_argument("record is missing lambda");
            const RoutingJacobian jac = sparsegen_jacobian(record.u, *record.lambda);
            const int e = static_cast<int>(record.u.size());
            for (int j = 0; j < e; ++j)
                for (int i = 0; i < e; ++i) g.grad_u[j] += grad_p[i] * jac.d_p_d_u[i][j];
            for (int i = 0; i < e; ++i) g.grad_lambda += grad_p[i] * jac.d_p_d_lambda[i];
            break;
        }
        case RouterKind::TopK: {
            // Softmax over the fixed selected set.
            double s = 0.0;
            for (size_t i = 0; i < record.p.size(); ++i) s += record.p[i] * grad_p[i];
            for (size_t i = 0; i < record.p.size(); ++i)
                if (record.p[i] > 0.0) g.grad_u[i] = record.p[i] * (grad_p[i] - s);
            break;
        }
        case RouterKind::Relu: {
            for (size_t i = 0; i < record.u.size(); ++i)
                if (record.u[i] > 0.0) g.grad_u[i] = grad_p[i];
            break;
        }
    }
    return g;
}

}  // namespace ldmole
