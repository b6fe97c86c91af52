#include "ldmole/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace ldmole {

void AdamW::step(std::vector<ParamRef> params, std::vector<ParamRef> grads, double lr) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adamw: parameter/gradient registry mismatch");
    ++t_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));

    for (size_t i = 0; i < params.size(); ++i) {
        const ParamRef &p = params[i];
        const ParamRef &g = grads[i];
        if (p.name != g.name || p.data->size() != g.data->size())
            throw std::invalid_argument("adamw: misaligned registries at " + p.name);
        if (!p.trainable) continue;

        Moments &mom = state_[p.name];
        if (mom.m.empty()) {
            mom.m.assign(p.data->size(), 0.0);
            mom.v.assign(p.data->size(), 0.0);
        }
        Vec &w = *p.data;
        const Vec &gr = *g.data;
        for (size_t j = 0; j < w.size(); ++j) {
            mom.m[j] = opts_.beta1 * mom.m[j] + (1.0 - opts_.beta1) * gr[j];
            mom.v[j] = opts_.beta2 * mom.v[j] + (1.0 - opts_.beta2) * gr[j] * gr[j];
            const double m_hat = mom.m[j] / bc1;
            const double v_hat = mom.v[j] / bc2;
            w[j] -= lr * opts_.weight_decay * w[j];  // decoupled decay
            w[j] -= lr * m_hat / (std::sqrt(v_hat) + opts_.eps);
            w[j] = to_f32(w[j]);
        }
    }
}

double clip_global_norm(std::vector<ParamRef> grads, double max_norm) {
    double sq = 0.0;
    for (const auto &g : grads) {
        if (!g.trainable) continue;
        for (double v : *g.data) sq += v * v;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (const auto &g : grads) {
            if (!g.trainable) continue;
            for (double &v : *g.data) v *= scale;
        }
    }
    return norm;
}

}  // namespace ldmole
