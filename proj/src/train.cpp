#include "ldmole/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace ldmole {

std::string TrainConfig::canonical() const {
    std::ostringstream os;
    os << "model.layers=" << model.layers << "\n"
       << "model.dim=" << model.dim << "\n"
       << "model.vocab=" << model.vocab << "\n"
       << "model.num_classes=" << model.num_classes << "\n"
       << "model.num_experts=" << model.num_experts << "\n"
       << "model.lora_rank=" << model.lora_rank << "\n"
       << "model.lora_alpha=" << model.lora_alpha << "\n"
       << "model.dropout=" << model.dropout << "\n"
       << "model.lambda_hidden=" << model.lambda_hidden << "\n"
       << "router.kind=" << router_kind_name(model.router.kind) << "\n"
       << "router.topk_k=" << model.router.topk_k << "\n"
       << "loss.alpha=" << loss.alpha << "\n"
       << "loss.beta=" << loss.beta << "\n"
       << "loss.k_target=" << loss.k_target << "\n"
       << "train.epochs=" << epochs << "\n"
       << "train.batch_size=" << batch_size << "\n"
       << "train.lr=" << lr << "\n"
       << "train.lr_milestones=";
    for (size_t i = 0; i < lr_milestones.size(); ++i) os << (i ? "," : "") << lr_milestones[i];
    os << "\n"
       << "train.lr_decay=" << lr_decay << "\n"
       << "train.clip_norm=" << clip_norm << "\n"
       << "train.seed=" << seed << "\n"
       << "train.log_interval=" << log_interval << "\n"
       << "data.train_sequences=" << data.train_sequences << "\n"
       << "data.val_sequences=" << data.val_sequences << "\n"
       << "data.seq_len=" << data.seq_len << "\n"
       << "data.zipf_s=" << data.zipf_s << "\n"
       << "data.label_cur_buckets=" << data.label_cur_buckets << "\n"
       << "data.label_prev_buckets=" << data.label_prev_buckets << "\n"
       << "data.seed=" << data.seed << "\n";
    return os.str();
}

uint64_t TrainConfig::digest() const { return fnv1a64(canonical()); }

double lr_at(int epoch, const TrainConfig &cfg) {
    double v = cfg.lr;
    for (int m : cfg.lr_milestones)
        if (epoch >= m) v *= cfg.lr_decay;
    return v;
}

std::string MetricsEvent::to_json_line() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    j["epoch"] = epoch;
    j["split"] = split;
    j["lm_loss"] = lm_loss;
    j["lb_loss"] = lb_loss;
    j["sparse_loss"] = sparse_loss;
    j["total_loss"] = total_loss;
    j["accuracy"] = accuracy;
    j["mean_active_experts"] = mean_active_experts;
    j["mean_active_experts_per_layer"] = mean_active_per_layer;
    j["mean_lambda_per_layer"] = mean_lambda_per_layer;
    j["zero_activation_rate"] = zero_activation_rate;
    return j.dump();
}

namespace {

bool is_ld(RouterKind k) { return k == RouterKind::LdShared || k == RouterKind::LdLocal; }

// Streaming per-record statistics shared by the training loop and
// evaluation (fixed accumulation order for bit-reproducibility).
struct RoutingAccum {
    int num_experts = 0;
    int num_layers = 0;
    Vec f_sum, p_sum;
    std::vector<double> k_sum_layer;
    std::vector<long> n_layer;
    std::vector<double> lambda_sum_layer;
    long zero_count = 0;
    double hinge_sum = 0.0;
    long records = 0;
    bool has_lambda = false;

    RoutingAccum(int e, int layers)
        : num_experts(e),
          num_layers(layers),
          f_sum(e, 0.0),
          p_sum(e, 0.0),
          k_sum_layer(layers, 0.0),
          n_layer(layers, 0),
          lambda_sum_layer(layers, 0.0) {}

    void add(const RoutingRecord &r, int k_target) {
        ++records;
        double scale = 1.0;
        if (r.kind == RouterKind::Relu) {  // relative shares, as in accumulate_stats
            double sum = 0.0;
            for (double v : r.p) sum += v;
            scale = sum > 0.0 ? 1.0 / sum : 0.0;
        }
        for (int i = 0; i < num_experts; ++i) {
            if (r.p[i] > 0.0) f_sum[i] += 1.0;
            p_sum[i] += scale * r.p[i];
        }
        k_sum_layer[r.layer_id] += r.k_active;
        ++n_layer[r.layer_id];
        if (r.k_active == 0) ++zero_count;
        if (r.lambda) {
            has_lambda = true;
            lambda_sum_layer[r.layer_id] += *r.lambda;
            hinge_sum += sparsity_hinge(r, k_target, nullptr);
        }
    }

    BatchRoutingStats stats() const {
        BatchRoutingStats s;
        s.token_count = records;
        s.dispatch_fraction = f_sum;
        s.prob_fraction = p_sum;
        for (int i = 0; i < num_experts; ++i) {
            s.dispatch_fraction[i] /= records;
            s.prob_fraction[i] /= records;
        }
        return s;
    }

    void fill(MetricsEvent &ev, int k_target) const {
        ev.lb_loss = load_balance_loss(stats());
        ev.sparse_loss = has_lambda ? hinge_sum / records : 0.0;
        double k_total = 0.0;
        ev.mean_active_per_layer.assign(num_layers, 0.0);
        for (int l = 0; l < num_layers; ++l) {
            ev.mean_active_per_layer[l] = n_layer[l] ? k_sum_layer[l] / n_layer[l] : 0.0;
            k_total += k_sum_layer[l];
        }
        ev.mean_active_experts = records ? k_total / records : 0.0;
        if (has_lambda) {
            ev.mean_lambda_per_layer.assign(num_layers, 0.0);
            for (int l = 0; l < num_layers; ++l)
                ev.mean_lambda_per_layer[l] = n_layer[l] ? lambda_sum_layer[l] / n_layer[l] : 0.0;
        }
        ev.zero_activation_rate = records ? static_cast<double>(zero_count) / records : 0.0;
        (void)k_target;
    }
};

void collect_records(const TokenCache &cache, int token_id, std::vector<RoutingRecord> &out) {
    for (const auto &bc : cache.blocks) {
        RoutingRecord a = bc.attn.record;
        a.token_id = token_id;
        out.push_back(std::move(a));
        RoutingRecord d = bc.down.record;
        d.token_id = token_id;
        out.push_back(std::move(d));
    }
}

void check_dims(const TrainConfig &cfg) {
    if (cfg.model.vocab != cfg.data.vocab)
        throw std::invalid_argument("config: model.vocab and data vocab must agree");
    if (cfg.model.num_classes != cfg.data.num_classes)
        throw std::invalid_argument("config: model.num_classes and data classes must agree");
    if (cfg.epochs < 1 || cfg.batch_size < 1 || cfg.lr <= 0.0)
        throw std::invalid_argument("config: epochs, batch_size and lr must be positive");
}

}  // namespace

EvalResult evaluate(const ToyBackbone &model, const TrainConfig &cfg, const SyntheticDataset &ds) {
    const int e = model.cfg.num_experts;
    RoutingAccum accum(e, model.cfg.layers);
    double ce_sum = 0.0;
    long masked = 0, correct = 0;

    for (size_t s = 0; s < ds.tokens.size(); ++s) {
        for (int t = 0; t < ds.seq_len; ++t) {
            const int prev = t > 0 ? ds.tokens[s][t - 1] : ds.tokens[s][t];
            TokenCache cache;
            const Vec logits = token_forward(model, ds.tokens[s][t], prev, false, nullptr, &cache);
            for (const auto &bc : cache.blocks) {
                accum.add(bc.attn.record, cfg.loss.k_target);
                accum.add(bc.down.record, cfg.loss.k_target);
            }
            if (ds.mask[s][t]) {
                ++masked;
                double mx = logits[0];
                int arg = 0;
                for (size_t c = 1; c < logits.size(); ++c)
                    if (logits[c] > mx) {
                        mx = logits[c];
                        arg = static_cast<int>(c);
                    }
                double lse = 0.0;
                for (double v : logits) lse += std::exp(v - mx);
                ce_sum += mx + std::log(lse) - logits[ds.labels[s][t]];
                correct += (arg == ds.labels[s][t]);
            }
        }
    }
    if (masked == 0) throw std::invalid_argument("evaluate: dataset mask selects no positions");

    EvalResult r;
    r.lm_loss = ce_sum / masked;
    r.accuracy = static_cast<double>(correct) / masked;
    MetricsEvent ev;
    accum.fill(ev, cfg.loss.k_target);
    r.lb_loss = ev.lb_loss;
    r.sparse_loss = ev.sparse_loss;
    r.total_loss = total_loss(r.lm_loss, r.lb_loss, r.sparse_loss, cfg.loss);
    r.mean_active_experts = ev.mean_active_experts;
    r.mean_active_per_layer = ev.mean_active_per_layer;
    r.mean_lambda_per_layer = ev.mean_lambda_per_layer;
    r.zero_activation_rate = ev.zero_activation_rate;
    return r;
}

TrainResult train(const TrainConfig &cfg, std::ostream *metrics_jsonl) {
    check_dims(cfg);
    const SyntheticDataset train_ds = make_dataset(cfg.data, Split::Train);
    const SyntheticDataset val_ds = make_dataset(cfg.data, Split::Val);

    TrainResult result{init_backbone(cfg.model, cfg.seed), {}, 0.0, 0.0, {}};
    ToyBackbone &model = result.model;

    result.initial_train_lm = evaluate(model, cfg, train_ds).lm_loss;

    ModelGrads grads(model);
    AdamW opt;
    std::mt19937_64 drop_rng(subseed(cfg.seed, "dropout"));
    const int n_seq = static_cast<int>(train_ds.tokens.size());
    const int t_len = train_ds.seq_len;
    const int n_blocks = cfg.model.layers;
    const bool ld = is_ld(cfg.model.router.kind);
    long step = 0;

    auto emit = [&](MetricsEvent ev) {
        if (metrics_jsonl) (*metrics_jsonl) << ev.to_json_line() << "\n";
        result.events.push_back(std::move(ev));
    };

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, cfg);
        std::vector<int> perm(n_seq);
        std::iota(perm.begin(), perm.end(), 0);
        std::mt19937_64 shuf(subseed(cfg.seed, "shuffle.epoch" + std::to_string(epoch)));
        std::shuffle(perm.begin(), perm.end(), shuf);

        for (int start = 0; start < n_seq; start += cfg.batch_size) {
            const int bsz = std::min(cfg.batch_size, n_seq - start);

            std::vector<TokenCache> caches;
            std::vector<Vec> logits;
            std::vector<int> targets, mask;
            caches.reserve(static_cast<size_t>(bsz) * t_len);
            for (int b = 0; b < bsz; ++b) {
                const auto &seq = train_ds.tokens[perm[start + b]];
                for (int t = 0; t < t_len; ++t) {
                    const int prev = t > 0 ? seq[t - 1] : seq[t];
                    TokenCache cache;
                    logits.push_back(token_forward(model, seq[t], prev, true, &drop_rng, &cache));
                    caches.push_back(std::move(cache));
                    targets.push_back(train_ds.labels[perm[start + b]][t]);
                    mask.push_back(train_ds.mask[perm[start + b]][t]);
                }
            }

            std::vector<Vec> dlogits;
            const double lm = masked_cross_entropy_grad(logits, targets, mask, dlogits);

            std::vector<RoutingRecord> records;
            records.reserve(caches.size() * n_blocks * 2);
            for (size_t i = 0; i < caches.size(); ++i)
                collect_records(caches[i], static_cast<int>(i), records);

            const BatchRoutingStats stats = accumulate_stats(records);
            const double lb = load_balance_loss(stats);

            double sparse = 0.0;
            Vec hinge_grads;  // d sparse / d lambda per record
            if (ld && cfg.loss.beta != 0.0)
                sparse = sparsity_loss_grad(records, cfg.loss.k_target, hinge_grads);
            else if (ld)
                sparse = sparsity_loss(records, cfg.loss.k_target);

            const double total = total_loss(lm, lb, sparse, cfg.loss);
            if (!std::isfinite(total))
                throw std::runtime_error("non-finite loss at step " + std::to_string(step) +
                                         " (lm=" + std::to_string(lm) + ", lb=" + std::to_string(lb) +
                                         ", sparse=" + std::to_string(sparse) + ")");

            // Gradient of the load-balance term w.r.t. every record's p,
            // with dispatch fractions treated as constants. Simplex routers
            // contribute their p directly, so the gradient is the same
            // constant vector for every record. ReLU records contribute
            // relative shares p / sum(p); the share gradient is per-record
            // and scale-invariant, which keeps the unconstrained baseline
            // from being pushed toward all-zero or unbounded outputs.
            const long n_rec = static_cast<long>(records.size());
            const int n_e = cfg.model.num_experts;
            const bool relu = cfg.model.router.kind == RouterKind::Relu;
            Vec lb_grad(n_e, 0.0);
            for (int i = 0; i < n_e; ++i)
                lb_grad[i] = cfg.loss.alpha * n_e * stats.dispatch_fraction[i] / n_rec;

            grads.zero();
            std::vector<Vec> extra_gp(static_cast<size_t>(n_blocks) * 2, lb_grad);
            for (size_t i = 0; i < caches.size(); ++i) {
                std::vector<std::array<double, 2>> extra_lam(n_blocks, {0.0, 0.0});
                if (!hinge_grads.empty()) {
                    const size_t base = i * n_blocks * 2;
                    for (int blk = 0; blk < n_blocks; ++blk) {
                        extra_lam[blk][0] = cfg.loss.beta * hinge_grads[base + 2 * blk];
                        extra_lam[blk][1] = cfg.loss.beta * hinge_grads[base + 2 * blk + 1];
                    }
                }
                if (relu) {
                    const size_t base = i * n_blocks * 2;
                    for (size_t m = 0; m < extra_gp.size(); ++m) {
                        const Vec &p = records[base + m].p;
                        double sum = 0.0;
                        for (double v : p) sum += v;
                        Vec &g = extra_gp[m];
                        if (sum <= 0.0) {
                            g.assign(n_e, 0.0);
                            continue;
                        }
                        double mix = 0.0;
                        for (int j = 0; j < n_e; ++j) mix += lb_grad[j] * p[j] / sum;
                        for (int j = 0; j < n_e; ++j) g[j] = (lb_grad[j] - mix) / sum;
                    }
                }
                token_backward(model, caches[i], dlogits[i], extra_gp, extra_lam, grads);
            }

            clip_global_norm(grads.shadow.params(), cfg.clip_norm);
            opt.step(model.params(), grads.shadow.params(), lr);
            ++step;

            if (step % cfg.log_interval == 0) {
                long m_count = 0, correct = 0;
                for (size_t i = 0; i < logits.size(); ++i) {
                    if (!mask[i]) continue;
                    ++m_count;
                    int arg = 0;
                    for (size_t c = 1; c < logits[i].size(); ++c)
                        if (logits[i][c] > logits[i][arg]) arg = static_cast<int>(c);
                    correct += (arg == targets[i]);
                }
                RoutingAccum accum(cfg.model.num_experts, n_blocks);
                for (const auto &r : records) accum.add(r, cfg.loss.k_target);
                MetricsEvent ev;
                ev.step = step;
                ev.epoch = epoch;
                ev.split = "train";
                ev.lm_loss = lm;
                ev.accuracy = m_count ? static_cast<double>(correct) / m_count : 0.0;
                accum.fill(ev, cfg.loss.k_target);
                ev.total_loss = total;
                emit(std::move(ev));
            }
        }

        const EvalResult val = evaluate(model, cfg, val_ds);
        MetricsEvent ev;
        ev.step = step;
        ev.epoch = epoch;
        ev.split = "val";
        ev.lm_loss = val.lm_loss;
        ev.lb_loss = val.lb_loss;
        ev.sparse_loss = val.sparse_loss;
        ev.total_loss = val.total_loss;
        ev.accuracy = val.accuracy;
        ev.mean_active_experts = val.mean_active_experts;
        ev.mean_active_per_layer = val.mean_active_per_layer;
        ev.mean_lambda_per_layer = val.mean_lambda_per_layer;
        ev.zero_activation_rate = val.zero_activation_rate;
        emit(std::move(ev));
    }

    result.final_train_lm = evaluate(model, cfg, train_ds).lm_loss;
    result.final_val = evaluate(model, cfg, val_ds);
    return result;
}

}  // namespace ldmole
