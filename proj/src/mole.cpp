#include "ldmole/mole.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace ldmole {

Vec lora_delta(const LoRAExpert &expert, const Vec &x) {
    Vec bx = matvec(expert.b, x);
    Vec y = matvec(expert.a, bx);
    for (double &v : y) v *= expert.scaling;
    return y;
}

namespace {

const LambdaHead *head_for(const MoLELayer &layer, const LambdaHead *shared_head) {
    switch (layer.router.kind) {
        case RouterKind::LdShared:
            if (!shared_head) throw std::invalid_argument("shared-lambda routing needs a shared head");
            return shared_head;
        case RouterKind::LdLocal:
            return &layer.local_head;
        default:
            return nullptr;
    }
}

}  // namespace

Vec mole_forward(const MoLELayer &layer, const Vec &x, const LambdaHead *shared_head,
                 bool train_mode, std::mt19937_64 *drop_rng, MoLECache *cache_out) {
    if (static_cast<int>(x.size()) != layer.d_in())
        throw std::invalid_argument("mole_forward: input dimension mismatch");

    const int e = layer.num_experts();
    const Vec u = gate_scores(GateParams{layer.gate_w}, x);

    LambdaCache lam;
    RoutingRecord rec = route(u, layer.router, head_for(layer, shared_head), x, &lam);
    rec.layer_id = layer.layer_id;
    rec.module_id = layer.module_id;

    const bool dropping = train_mode && layer.dropout_rate > 0.0;
    if (dropping && !drop_rng)
        throw std::invalid_argument("mole_forward: dropout requires an rng in train mode");
    const double keep_prob = 1.0 - layer.dropout_rate;

    std::vector<Vec> bx(e), delta(e);
    std::vector<std::vector<uint8_t>> keep(e);
    Vec h = matvec(layer.w_base, x);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    for (int i = 0; i < e; ++i) {
        // Inactive experts contribute nothing to the output or to any
        // gradient path (the router jacobian is zero off the support), so
        // their deltas are never materialized.
        const double p = rec.p[i];
        if (p == 0.0) continue;
        bx[i] = matvec(layer.experts[i].b, x);
        delta[i] = matvec(layer.experts[i].a, bx[i]);
        for (double &v : delta[i]) v *= layer.experts[i].scaling;
        if (dropping) {
            keep[i].resize(delta[i].size());
            for (size_t j = 0; j < delta[i].size(); ++j) {
                keep[i][j] = unit(*drop_rng) < keep_prob;
                delta[i][j] = keep[i][j] ? delta[i][j] / keep_prob : 0.0;
            }
        }
        for (size_t j = 0; j < h.size(); ++j) h[j] += p * delta[i][j];
    }

    if (cache_out) {
        cache_out->x = x;
        cache_out->record = std::move(rec);
        cache_out->bx = std::move(bx);
        cache_out->delta = std::move(delta);
        cache_out->keep_mask = dropping ? std::move(keep) : std::vector<std::vector<uint8_t>>{};
        cache_out->lam = lam;
    }
    return h;
}

Vec mole_backward(const MoLELayer &layer, const LambdaHead *shared_head, const MoLECache &cache,
                  const Vec &grad_h, const Vec &extra_grad_p, double extra_grad_lambda,
                  MoLELayer &grad, LambdaHeadGrad *shared_head_grad) {
    const int e = layer.num_experts();
    const double keep_prob = 1.0 - layer.dropout_rate;
    const bool dropped = !cache.keep_mask.empty();

    Vec grad_p(e, 0.0);
    for (int i = 0; i < e; ++i) {
        if (!cache.delta[i].empty()) grad_p[i] = dot(grad_h, cache.delta[i]);
        if (!extra_grad_p.empty()) grad_p[i] += extra_grad_p[i];
    }

    RouterGrad rg = router_backward(cache.record, grad_p);
    rg.grad_lambda += extra_grad_lambda;

    Vec grad_x = matTvec(layer.w_base, grad_h);

    // Expert parameter gradients; only routed experts contribute.
    for (int i = 0; i < e; ++i) {
        const double p = cache.record.p[i];
        if (p == 0.0) continue;
        Vec t(grad_h.size());
        for (size_t j = 0; j < grad_h.size(); ++j) {
            double g = p * layer.experts[i].scaling * grad_h[j];
            if (dropped) g = cache.keep_mask[i][j] ? g / keep_prob : 0.0;
            t[j] = g;
        }
        add_outer(grad.experts[i].a, t, cache.bx[i]);
        const Vec g_bx = matTvec(layer.experts[i].a, t);
        add_outer(grad.experts[i].b, g_bx, cache.x);
        const Vec gx = matTvec(layer.experts[i].b, g_bx);
        for (size_t j = 0; j < grad_x.size(); ++j) grad_x[j] += gx[j];
    }

    add_outer(grad.gate_w, rg.grad_u, cache.x);
    const Vec gx_gate = matTvec(layer.gate_w, rg.grad_u);
    for (size_t j = 0; j < grad_x.size(); ++j) grad_x[j] += gx_gate[j];

    if (layer.router.kind == RouterKind::LdShared) {
        if (!shared_head || !shared_head_grad)
            throw std::invalid_argument("mole_backward: missing shared head gradient slot");
        const Vec gx = lambda_head_backward(*shared_head, cache.lam, cache.x, rg.grad_lambda,
                                            *shared_head_grad);
        for (size_t j = 0; j < grad_x.size(); ++j) grad_x[j] += gx[j];
    } else if (layer.router.kind == RouterKind::LdLocal) {
        const Vec gx = lambda_head_backward(layer.local_head, cache.lam, cache.x, rg.grad_lambda,
                                            grad.local_head);
        for (size_t j = 0; j < grad_x.size(); ++j) grad_x[j] += gx[j];
    }
    return grad_x;
}

namespace {

Matrix init_matrix(int rows, int cols, uint64_t seed, double stddev) {
    Matrix m(rows, cols);
    Rng rng(seed);
    for (double &v : m.a) v = to_f32(rng.normal(0.0, stddev));
    return m;
}

LambdaHead init_lambda_head(int d_in, int hidden, uint64_t seed, const std::string &name) {
    LambdaHead h;
    h.hidden_dim = hidden;
    if (hidden > 0) {
        h.w1 = init_matrix(hidden, d_in, subseed(seed, name + ".w1"), 0.02);
        h.b1.assign(hidden, 0.0);
        h.w2 = init_matrix(1, hidden, subseed(seed, name + ".w2"), 0.02);
    } else {
        h.w1 = Matrix(0, 0);
        h.b1.clear();
        h.w2 = init_matrix(1, d_in, subseed(seed, name + ".w2"), 0.02);
    }
    h.b2.assign(1, 0.0);
    return h;
}

MoLELayer init_mole_layer(int d_out, int d_in, const BackboneConfig &cfg, uint64_t seed,
                          const std::string &name, int layer_id, int module_id) {
    MoLELayer l;
    l.w_base = init_matrix(d_out, d_in, subseed(seed, name + ".w_base"), 0.02);
    l.gate_w = init_matrix(cfg.num_experts, d_in, subseed(seed, name + ".gate_w"), 0.02);
    l.experts.resize(cfg.num_experts);
    for (int i = 0; i < cfg.num_experts; ++i) {
        auto &ex = l.experts[i];
        ex.a = init_matrix(d_out, cfg.lora_rank,
                           subseed(seed, name + ".expert" + std::to_string(i) + ".a"), 0.02);
        ex.b = Matrix(cfg.lora_rank, d_in);  // zero init: adapters start as a no-op
        ex.scaling = cfg.lora_alpha / cfg.lora_rank;
    }
    l.router = cfg.router;
    if (cfg.router.kind == RouterKind::LdLocal)
        l.local_head = init_lambda_head(d_in, 0, seed, name + ".local_head");
    l.dropout_rate = cfg.dropout;
    l.layer_id = layer_id;
    l.module_id = module_id;
    return l;
}

void push_matrix(std::vector<ParamRef> &out, const std::string &name, Matrix &m, bool trainable) {
    out.push_back({name, &m.a, {m.rows, m.cols}, trainable});
}

void push_vec(std::vector<ParamRef> &out, const std::string &name, Vec &v, bool trainable) {
    out.push_back({name, &v, {static_cast<int>(v.size())}, trainable});
}

void push_lambda_head(std::vector<ParamRef> &out, const std::string &prefix, LambdaHead &h) {
    if (h.hidden_dim > 0) {
        push_matrix(out, prefix + ".w1", h.w1, true);
        push_vec(out, prefix + ".b1", h.b1, true);
    }
    push_matrix(out, prefix + ".w2", h.w2, true);
    push_vec(out, prefix + ".b2", h.b2, true);
}

void push_mole_layer(std::vector<ParamRef> &out, const std::string &prefix, MoLELayer &l) {
    push_matrix(out, prefix + ".w_base", l.w_base, false);
    push_matrix(out, prefix + ".gate_w", l.gate_w, true);
    for (size_t i = 0; i < l.experts.size(); ++i) {
        push_matrix(out, prefix + ".expert" + std::to_string(i) + ".a", l.experts[i].a, true);
        push_matrix(out, prefix + ".expert" + std::to_string(i) + ".b", l.experts[i].b, true);
    }
    if (l.router.kind == RouterKind::LdLocal)
        push_lambda_head(out, prefix + ".local_head", l.local_head);
}

}  // namespace

std::vector<ParamRef> ToyBackbone::params() {
    std::vector<ParamRef> out;
    push_matrix(out, "embedding", embedding, false);
    for (size_t i = 0; i < blocks.size(); ++i) {
        const std::string p = "block" + std::to_string(i);
        push_mole_layer(out, p + ".attn", blocks[i].attn);
        push_matrix(out, p + ".w_up", blocks[i].w_up, false);
        push_mole_layer(out, p + ".down", blocks[i].down);
    }
    push_matrix(out, "head", head, true);
    for (auto &[dim, h] : shared_heads)
        push_lambda_head(out, "shared_head." + std::to_string(dim), h);
    return out;
}

const LambdaHead *ToyBackbone::shared_head_for(const MoLELayer &layer) const {
    if (layer.router.kind != RouterKind::LdShared) return nullptr;
    auto it = shared_heads.find(layer.d_in());
    if (it == shared_heads.end())
        throw std::logic_error("no shared lambda head for input dim " + std::to_string(layer.d_in()));
    return &it->second;
}

ToyBackbone init_backbone(const BackboneConfig &cfg, uint64_t seed) {
    if (cfg.layers < 1 || cfg.dim < 1 || cfg.vocab < 2 || cfg.num_classes < 2 ||
        cfg.num_experts < 1 || cfg.lora_rank < 1)
        throw std::invalid_argument("invalid backbone config");
    if (cfg.lora_rank > cfg.dim)
        throw std::invalid_argument("lora rank exceeds model dim");

    ToyBackbone m;
    m.cfg = cfg;
    m.embedding = init_matrix(cfg.vocab, cfg.dim, subseed(seed, "embedding"), 0.02);
    const int d = cfg.dim, d4 = 4 * cfg.dim;
    m.blocks.resize(cfg.layers);
    for (int i = 0; i < cfg.layers; ++i) {
        const std::string p = "block" + std::to_string(i);
        m.blocks[i].attn = init_mole_layer(d, d, cfg, seed, p + ".attn", i, 0);
        m.blocks[i].w_up = init_matrix(d4, d, subseed(seed, p + ".w_up"), 0.02);
        m.blocks[i].down = init_mole_layer(d, d4, cfg, seed, p + ".down", i, 1);
    }
    m.head = init_matrix(cfg.num_classes, cfg.dim, subseed(seed, "head"), 0.02);
    if (cfg.router.kind == RouterKind::LdShared) {
        m.shared_heads.emplace(d, init_lambda_head(d, cfg.lambda_hidden, seed, "shared_head.d"));
        m.shared_heads.emplace(d4, init_lambda_head(d4, cfg.lambda_hidden, seed, "shared_head.d4"));
    }
    return m;
}

ModelGrads::ModelGrads(const ToyBackbone &model) : shadow(model) { zero(); }

void ModelGrads::zero() {
    for (auto &p : shadow.params()) std::fill(p.data->begin(), p.data->end(), 0.0);
}

Vec token_feature(const ToyBackbone &model, int cur_tok, int prev_tok) {
    if (cur_tok < 0 || cur_tok >= model.cfg.vocab || prev_tok < 0 || prev_tok >= model.cfg.vocab)
        throw std::out_of_range("token id out of vocabulary");
    Vec f(model.cfg.dim);
    for (int j = 0; j < model.cfg.dim; ++j)
        f[j] = model.embedding(cur_tok, j) + 0.5 * model.embedding(prev_tok, j);
    return f;
}

Vec token_forward(const ToyBackbone &model, int cur_tok, int prev_tok, bool train_mode,
                  std::mt19937_64 *drop_rng, TokenCache *cache_out) {
    Vec h = token_feature(model, cur_tok, prev_tok);
    TokenCache cache;
    if (cache_out) {
        cache.feat = h;
        cache.blocks.resize(model.blocks.size());
    }

    for (size_t i = 0; i < model.blocks.size(); ++i) {
        const Block &blk = model.blocks[i];
        BlockCache *bc = cache_out ? &cache.blocks[i] : nullptr;

        Vec a = mole_forward(blk.attn, h, model.shared_head_for(blk.attn), train_mode, drop_rng,
                             bc ? &bc->attn : nullptr);
        for (size_t j = 0; j < h.size(); ++j) a[j] += h[j];  // residual
        if (bc) bc->h1 = a;

        Vec up = matvec(blk.w_up, a);
        if (bc) bc->up_pre = up;
        for (double &v : up) v = std::tanh(v);

        Vec dn = mole_forward(blk.down, up, model.shared_head_for(blk.down), train_mode, drop_rng,
                              bc ? &bc->down : nullptr);
        for (size_t j = 0; j < a.size(); ++j) dn[j] += a[j];  // residual
        if (bc) bc->h2 = dn;
        h = std::move(dn);
    }

    Vec logits = matvec(model.head, h);
    if (cache_out) {
        cache.logits = logits;
        *cache_out = std::move(cache);
    }
    return logits;
}

void token_backward(const ToyBackbone &model, const TokenCache &cache, const Vec &dlogits,
                    const std::vector<Vec> &extra_grad_p,
                    const std::vector<std::array<double, 2>> &extra_lam, ModelGrads &grads) {
    static const Vec kNoExtra;
    const Vec &h_final = cache.blocks.empty() ? cache.feat : cache.blocks.back().h2;
    add_outer(grads.shadow.head, dlogits, h_final);
    Vec grad_h = matTvec(model.head, dlogits);

    for (int i = static_cast<int>(model.blocks.size()) - 1; i >= 0; --i) {
        const Block &blk = model.blocks[i];
        Block &gblk = grads.shadow.blocks[i];
        const BlockCache &bc = cache.blocks[i];
        const double lam_attn = extra_lam.empty() ? 0.0 : extra_lam[i][0];
        const double lam_down = extra_lam.empty() ? 0.0 : extra_lam[i][1];
        const Vec &gp_attn = extra_grad_p.empty() ? kNoExtra : extra_grad_p[2 * i];
        const Vec &gp_down = extra_grad_p.empty() ? kNoExtra : extra_grad_p[2 * i + 1];

        LambdaHeadGrad *shg_down = nullptr, *shg_attn = nullptr;
        if (blk.down.router.kind == RouterKind::LdShared)
            shg_down = &grads.shadow.shared_heads.at(blk.down.d_in());
        if (blk.attn.router.kind == RouterKind::LdShared)
            shg_attn = &grads.shadow.shared_heads.at(blk.attn.d_in());

        // h2 = h1 + down(tanh(w_up h1))
        Vec g_up_act = mole_backward(blk.down, model.shared_head_for(blk.down), bc.down, grad_h,
                                     gp_down, lam_down, gblk.down, shg_down);
        Vec g_up_pre(g_up_act.size());
        for (size_t j = 0; j < g_up_act.size(); ++j) {
            const double t = std::tanh(bc.up_pre[j]);
            g_up_pre[j] = g_up_act[j] * (1.0 - t * t);
        }
        Vec grad_h1 = matTvec(blk.w_up, g_up_pre);
        for (size_t j = 0; j < grad_h1.size(); ++j) grad_h1[j] += grad_h[j];

        // h1 = x + attn(x)
        Vec g_x = mole_backward(blk.attn, model.shared_head_for(blk.attn), bc.attn, grad_h1,
                                gp_attn, lam_attn, gblk.attn, shg_attn);
        for (size_t j = 0; j < g_x.size(); ++j) g_x[j] += grad_h1[j];
        grad_h = std::move(g_x);
    }
    // Embedding is frozen; the remaining gradient is dropped.
}

namespace {

template <typename T>
void write_pod(std::ofstream &os, const T &v) {
    os.write(reinterpret_cast<const char *>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::ifstream &is) {
    T v{};
    is.read(reinterpret_cast<char *>(&v), sizeof(T));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

constexpr uint32_t kCheckpointVersion = 1;

}  // namespace

void save_checkpoint(const ToyBackbone &model, uint64_t config_digest, const std::string &path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot open checkpoint for writing: " + path);

    os.write("LDML", 4);
    write_pod(os, kCheckpointVersion);
    write_pod(os, config_digest);

    auto params = const_cast<ToyBackbone &>(model).params();
    write_pod(os, static_cast<uint32_t>(params.size()));
    for (const auto &p : params) {
        write_pod(os, static_cast<uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_pod(os, static_cast<uint32_t>(p.dims.size()));
        for (int d : p.dims) write_pod(os, static_cast<uint32_t>(d));
        for (double v : *p.data) write_pod(os, static_cast<float>(v));
    }
    if (!os) throw std::runtime_error("checkpoint: write failed");
}

ToyBackbone load_checkpoint(const BackboneConfig &cfg, uint64_t expected_digest,
                            const std::string &path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);

    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "LDML", 4) != 0)
        throw std::runtime_error("checkpoint: bad magic");
    if (read_pod<uint32_t>(is) != kCheckpointVersion)
        throw std::runtime_error("checkpoint: unsupported format version");
    const uint64_t digest = read_pod<uint64_t>(is);
    if (digest != expected_digest)
        throw std::runtime_error("checkpoint: config digest mismatch");

    ToyBackbone model = init_backbone(cfg, 0);
    auto params = model.params();
    std::map<std::string, ParamRef *> by_name;
    for (auto &p : params) by_name[p.name] = &p;

    const uint32_t count = read_pod<uint32_t>(is);
    size_t loaded = 0;
    for (uint32_t t = 0; t < count; ++t) {
        const uint32_t name_len = read_pod<uint32_t>(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        const uint32_t rank = read_pod<uint32_t>(is);
        size_t n = 1;
        std::vector<int> dims(rank);
        for (uint32_t d = 0; d < rank; ++d) {
            dims[d] = static_cast<int>(read_pod<uint32_t>(is));
            n *= static_cast<size_t>(dims[d]);
        }
        auto it = by_name.find(name);
        if (it == by_name.end()) throw std::runtime_error("checkpoint: unexpected tensor " + name);
        if (it->second->dims != dims || it->second->data->size() != n)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        for (size_t i = 0; i < n; ++i) (*it->second->data)[i] = static_cast<double>(read_pod<float>(is));
        ++loaded;
    }
    if (loaded != params.size()) throw std::runtime_error("checkpoint: missing tensors");
    return model;
}

}  // namespace ldmole
