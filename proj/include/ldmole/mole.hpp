#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ldmole/routers.hpp"

namespace ldmole {

// Rank-r adapter pair; the effective update is scaling * A * B.
struct LoRAExpert {
    Matrix a;  // d_out x r
    Matrix b;  // r x d_in
    double scaling = 1.0;
};

Vec lora_delta(const LoRAExpert &expert, const Vec &x);

// A frozen base projection wrapped with E routed LoRA experts.
struct MoLELayer {
    Matrix w_base;  // d_out x d_in, frozen
    Matrix gate_w;  // E x d_in
    std::vector<LoRAExpert> experts;
    LambdaHead local_head;  // used only for RouterKind::LdLocal
    RouterConfig router;
    double dropout_rate = 0.0;
    int layer_id = 0;
    int module_id = 0;

    int d_in() const { return w_base.cols; }
    int d_out() const { return w_base.rows; }
    int num_experts() const { return static_cast<int>(experts.size()); }
};

struct MoLECache {
    Vec x;
    RoutingRecord record;
    std::vector<Vec> bx;      // E vectors of length r
    std::vector<Vec> delta;   // E vectors of length d_out, after dropout
    std::vector<std::vector<uint8_t>> keep_mask;  // empty in eval mode
    LambdaCache lam;
};

// h = W_base x + sum_i p_i * delta_i(x). Dropout is applied to each
// expert's output during training only; drop_rng must then be non-null.
Vec mole_forward(const MoLELayer &layer, const Vec &x, const LambdaHead *shared_head,
                 bool train_mode, std::mt19937_64 *drop_rng, MoLECache *cache_out);

// Gradient slots reuse the layer structure; frozen tensors stay zero.
// Returns grad w.r.t. x. extra_grad_p and extra_grad_lambda inject the
// auxiliary-loss gradients that act directly on the routing outputs.
Vec mole_backward(const MoLELayer &layer, const LambdaHead *shared_head, const MoLECache &cache,
                  const Vec &grad_h, const Vec &extra_grad_p, double extra_grad_lambda,
                  MoLELayer &grad, LambdaHeadGrad *shared_head_grad);

struct BackboneConfig {
    int layers = 4;
    int dim = 32;
    int vocab = 256;
    int num_classes = 8;
    int num_experts = 8;
    int lora_rank = 4;
    double lora_alpha = 16.0;
    double dropout = 0.1;
    int lambda_hidden = 32;
    RouterConfig router;
};

// One block: a d->d projection and a d->4d->d feed-forward whose down
// projection is wrapped; tanh nonlinearity, residual connections.
struct Block {
    MoLELayer attn;   // d -> d
    Matrix w_up;      // 4d x d, frozen
    MoLELayer down;   // 4d -> d
};

struct ParamRef {
    std::string name;
    Vec *data = nullptr;
    std::vector<int> dims;
    bool trainable = false;
};

struct ToyBackbone {
    BackboneConfig cfg;
    Matrix embedding;  // vocab x d, frozen
    std::vector<Block> blocks;
    Matrix head;       // num_classes x d, trainable readout
    std::map<int, LambdaHead> shared_heads;  // keyed by module input dim

    std::vector<ParamRef> params();
    const LambdaHead *shared_head_for(const MoLELayer &layer) const;
};

struct BlockCache {
    MoLECache attn;
    Vec h1;       // x + attn output
    Vec up_pre;   // w_up h1, before tanh
    MoLECache down;
    Vec h2;       // h1 + down output
};

struct TokenCache {
    Vec feat;
    std::vector<BlockCache> blocks;
    Vec logits;
};

// Gradient accumulator shaped exactly like the model; frozen tensors are
// present but never written.
struct ModelGrads {
    ToyBackbone shadow;
    explicit ModelGrads(const ToyBackbone &model);
    void zero();
};

ToyBackbone init_backbone(const BackboneConfig &cfg, uint64_t seed);

// Token feature: embedding of the current token plus a fixed-coefficient
// mix of the previous one, so per-position blocks can resolve bigrams.
Vec token_feature(const ToyBackbone &model, int cur_tok, int prev_tok);

Vec token_forward(const ToyBackbone &model, int cur_tok, int prev_tok, bool train_mode,
                  std::mt19937_64 *drop_rng, TokenCache *cache_out);

// extra_lam holds the direct lambda gradients per block for the two
// wrapped modules (attn, down); extra_grad_p holds the direct routing
// gradients in the same order, indexed [2 * block + module]. Either may
// be empty when the corresponding auxiliary term is absent.
void token_backward(const ToyBackbone &model, const TokenCache &cache, const Vec &dlogits,
                    const std::vector<Vec> &extra_grad_p,
                    const std::vector<std::array<double, 2>> &extra_lam, ModelGrads &grads);

void save_checkpoint(const ToyBackbone &model, uint64_t config_digest, const std::string &path);
ToyBackbone load_checkpoint(const BackboneConfig &cfg, uint64_t expected_digest,
                            const std::string &path);

}  // namespace ldmole
