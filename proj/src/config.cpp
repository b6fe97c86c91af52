#include "ldmole/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>

namespace ldmole {

namespace {

std::string join_issues(const std::vector<std::string> &issues) {
    std::ostringstream os;
    os << "invalid configuration:";
    for (const auto &i : issues) os << "\n  " << i;
    return os.str();
}

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

struct Parser {
    std::map<std::string, std::string> kv;
    std::vector<std::string> issues;
    std::vector<std::string> seen;

    void scan(const std::string &text) {
        std::istringstream is(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']') {
                    issues.push_back("line " + std::to_string(lineno) + ": malformed section header");
                    continue;
                }
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos) {
                issues.push_back("line " + std::to_string(lineno) + ": expected key = value");
                continue;
            }
            const std::string key = (section.empty() ? "" : section + ".") + trim(line.substr(0, eq));
            const std::string val = trim(line.substr(eq + 1));
            if (kv.count(key)) issues.push_back(key + ": duplicate key");
            kv[key] = val;
        }
    }

    bool has(const std::string &key) {
        seen.push_back(key);
        return kv.count(key) > 0;
    }

    template <typename T>
    void get_num(const std::string &key, T &out) {
        if (!has(key)) return;
        const std::string &s = kv[key];
        T v{};
        if constexpr (std::is_floating_point_v<T>) {
            try {
                size_t pos = 0;
                v = static_cast<T>(std::stod(s, &pos));
                if (pos != s.size()) throw std::invalid_argument("");
            } catch (...) {
                issues.push_back(key + ": not a number: '" + s + "'");
                return;
            }
        } else {
            auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
            if (ec != std::errc{} || p != s.data() + s.size()) {
                issues.push_back(key + ": not an integer: '" + s + "'");
                return;
            }
        }
        out = v;
    }

    void get_str(const std::string &key, std::string &out) {
        if (has(key)) out = kv[key];
    }

    void get_int_list(const std::string &key, std::vector<int> &out) {
        if (!has(key)) return;
        std::vector<int> vals;
        std::istringstream is(kv[key]);
        std::string tok;
        while (std::getline(is, tok, ',')) {
            tok = trim(tok);
            if (tok.empty()) continue;
            int v = 0;
            auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc{} || p != tok.data() + tok.size()) {
                issues.push_back(key + ": not an integer list: '" + kv[key] + "'");
                return;
            }
            vals.push_back(v);
        }
        out = std::move(vals);
    }

    void reject_unknown() {
        for (const auto &[key, val] : kv) {
            bool known = false;
            for (const auto &s : seen)
                if (s == key) {
                    known = true;
                    break;
                }
            if (!known) issues.push_back(key + ": unknown key");
        }
    }
};

}  // namespace

ConfigError::ConfigError(std::vector<std::string> problems)
    : std::runtime_error(join_issues(problems)), issues(std::move(problems)) {}

TrainConfig parse_config_text(const std::string &text) {
    Parser p;
    p.scan(text);

    TrainConfig cfg;
    p.get_num("model.layers", cfg.model.layers);
    p.get_num("model.dim", cfg.model.dim);
    p.get_num("model.vocab", cfg.model.vocab);
    p.get_num("model.num_classes", cfg.model.num_classes);
    p.get_num("model.num_experts", cfg.model.num_experts);
    p.get_num("model.lora_rank", cfg.model.lora_rank);
    p.get_num("model.lora_alpha", cfg.model.lora_alpha);
    p.get_num("model.dropout", cfg.model.dropout);
    p.get_num("model.lambda_hidden", cfg.model.lambda_hidden);

    std::string kind;
    p.get_str("router.kind", kind);
    if (kind.empty()) {
        p.issues.push_back("router.kind: missing required field");
    } else if (auto k = parse_router_kind(kind)) {
        cfg.model.router.kind = *k;
    } else {
        p.issues.push_back("router.kind: unknown router '" + kind +
                           "' (expected ld_shared, ld_local, topk or relu)");
    }
    p.get_num("router.topk_k", cfg.model.router.topk_k);

    p.get_num("loss.alpha", cfg.loss.alpha);
    p.get_num("loss.beta", cfg.loss.beta);
    p.get_num("loss.k_target", cfg.loss.k_target);

    p.get_num("train.epochs", cfg.epochs);
    p.get_num("train.batch_size", cfg.batch_size);
    p.get_num("train.lr", cfg.lr);
    p.get_int_list("train.lr_milestones", cfg.lr_milestones);
    p.get_num("train.lr_decay", cfg.lr_decay);
    p.get_num("train.clip_norm", cfg.clip_norm);
    p.get_num("train.seed", cfg.seed);
    p.get_num("train.log_interval", cfg.log_interval);

    p.get_num("data.train_sequences", cfg.data.train_sequences);
    p.get_num("data.val_sequences", cfg.data.val_sequences);
    p.get_num("data.seq_len", cfg.data.seq_len);
    p.get_num("data.zipf_s", cfg.data.zipf_s);
    p.get_num("data.label_cur_buckets", cfg.data.label_cur_buckets);
    p.get_num("data.label_prev_buckets", cfg.data.label_prev_buckets);
    p.get_num("data.seed", cfg.data.seed);

    p.reject_unknown();

    // Dataset shape follows the model section.
    cfg.data.vocab = cfg.model.vocab;
    cfg.data.num_classes = cfg.model.num_classes;

    if (cfg.model.num_experts >= 1 &&
        (cfg.model.router.topk_k < 1 || cfg.model.router.topk_k > cfg.model.num_experts))
        p.issues.push_back("router.topk_k: must be in [1, num_experts]");
    if (cfg.loss.alpha < 0.0) p.issues.push_back("loss.alpha: must be >= 0");
    if (cfg.loss.beta < 0.0) p.issues.push_back("loss.beta: must be >= 0");
    if (cfg.loss.k_target < 1) p.issues.push_back("loss.k_target: must be >= 1");
    if (cfg.epochs < 1) p.issues.push_back("train.epochs: must be >= 1");
    if (cfg.batch_size < 1) p.issues.push_back("train.batch_size: must be >= 1");
    if (cfg.lr <= 0.0) p.issues.push_back("train.lr: must be > 0");
    if (cfg.model.dropout < 0.0 || cfg.model.dropout >= 1.0)
        p.issues.push_back("model.dropout: must be in [0, 1)");

    if (!p.issues.empty()) throw ConfigError(std::move(p.issues));
    return cfg;
}

TrainConfig load_config(const std::string &path) {
    std::ifstream is(path);
    if (!is) throw ConfigError({"cannot open config file: " + path});
    std::stringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

std::string config_template() {
    TrainConfig d;
    std::ostringstream os;
    os << "[model]\n"
       << "layers = " << d.model.layers << "\n"
       << "dim = " << d.model.dim << "\n"
       << "vocab = " << d.model.vocab << "\n"
       << "num_classes = " << d.model.num_classes << "\n"
       << "num_experts = " << d.model.num_experts << "\n"
       << "lora_rank = " << d.model.lora_rank << "\n"
       << "lora_alpha = " << d.model.lora_alpha << "\n"
       << "dropout = " << d.model.dropout << "\n"
       << "lambda_hidden = " << d.model.lambda_hidden << "\n\n"
       << "[router]\n"
       << "kind = ld_shared\n"
       << "topk_k = " << d.model.router.topk_k << "\n\n"
       << "[loss]\n"
       << "alpha = " << d.loss.alpha << "\n"
       << "beta = " << d.loss.beta << "\n"
       << "k_target = " << d.loss.k_target << "\n\n"
       << "[train]\n"
       << "epochs = " << d.epochs << "\n"
       << "batch_size = " << d.batch_size << "\n"
       << "lr = " << d.lr << "\n"
       << "lr_milestones = 6,8\n"
       << "lr_decay = " << d.lr_decay << "\n"
       << "clip_norm = " << d.clip_norm << "\n"
       << "seed = " << d.seed << "\n"
       << "log_interval = " << d.log_interval << "\n\n"
       << "[data]\n"
       << "train_sequences = " << d.data.train_sequences << "\n"
       << "val_sequences = " << d.data.val_sequences << "\n"
       << "seq_len = " << d.data.seq_len << "\n"
       << "zipf_s = " << d.data.zipf_s << "\n"
       << "label_cur_buckets = " << d.data.label_cur_buckets << "\n"
       << "label_prev_buckets = " << d.data.label_prev_buckets << "\n"
       << "seed = " << d.data.seed << "\n";
    return os.str();
}

}  // namespace ldmole
