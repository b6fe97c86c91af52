// Command-line entry point: routing inspection, verification suites,
// training, evaluation and routing-behavior analysis.

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "ldmole/analysis.hpp"
#include "ldmole/config.hpp"
#include "ldmole/oracle.hpp"
#include "ldmole/train.hpp"

namespace {

using namespace ldmole;

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

Vec parse_double_list(const std::string &s) {
    Vec out;
    std::istringstream is(s);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        if (tok.empty()) continue;
        size_t pos = 0;
        double v = std::stod(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument("not a number: '" + tok + "'");
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument("empty vector");
    return out;
}

void apply_env_seed(TrainConfig &cfg) {
    if (const char *env = std::getenv("LDMOLE_SEED")) {
        uint64_t v = 0;
        const std::string s(env);
        auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || p != s.data() + s.size())
            throw ConfigError({"LDMOLE_SEED: not an unsigned integer: '" + s + "'"});
        cfg.seed = v;
    }
}

std::string vec_str(const Vec &v) {
    std::string s = "[";
    for (size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
    return s + "]";
}

nlohmann::ordered_json eval_json(const EvalResult &r) {
    nlohmann::ordered_json j;
    j["lm_loss"] = r.lm_loss;
    j["lb_loss"] = r.lb_loss;
    j["sparse_loss"] = r.sparse_loss;
    j["total_loss"] = r.total_loss;
    j["accuracy"] = r.accuracy;
    j["mean_active_experts"] = r.mean_active_experts;
    j["mean_active_experts_per_layer"] = r.mean_active_per_layer;
    j["mean_lambda_per_layer"] = r.mean_lambda_per_layer;
    j["zero_activation_rate"] = r.zero_activation_rate;
    return j;
}

int cmd_route(const std::string &u_str, std::optional<double> lambda, std::optional<int> topk) {
    const Vec u = parse_double_list(u_str);
    if (lambda.has_value() == topk.has_value())
        throw std::invalid_argument("give exactly one of --lambda or --topk");

    if (lambda) {
        const SupportThreshold st = support_and_threshold(u, *lambda);
        const RoutingWeights w = sparsegen_project(u, *lambda);
        std::cout << "p = " << vec_str(w.probs) << "\n"
                  << "k = " << w.support_size() << "\n"
                  << "tau = " << format_double(st.tau) << "\n";
    } else {
        const RoutingWeights w = topk_route(u, *topk);
        std::cout << "p = " << vec_str(w.probs) << "\n"
                  << "k = " << w.support_size() << "\n";
    }
    return kExitOk;
}

int run_oracle_suite(long trials, int e_min, int e_max, uint64_t seed, const std::string &json_path,
                     bool gradients_only) {
    if (trials < 1) {
        std::cerr << "error: --trials must be >= 1\n";
        return kExitUsage;
    }
    if (e_min < 1 || e_max < e_min || e_max > 12) {
        std::cerr << "error: need 1 <= e_min <= e_max <= 12\n";
        return kExitUsage;
    }
    SuiteOptions opts;
    opts.trials = trials;
    opts.e_min = e_min;
    opts.e_max = e_max;
    opts.seed = seed;
    if (gradients_only) {
        opts.check_projection = false;
        opts.check_intervals = false;
    }
    const OracleReport rep = run_suite(opts);
    const std::string json = rep.to_json();
    std::cout << json << "\n";
    if (!json_path.empty()) {
        std::ofstream os(json_path, std::ios::trunc);
        os << json << "\n";
    }
    return rep.ok() ? kExitOk : kExitCheckFailed;
}

int cmd_train(const std::string &config_path, const std::string &checkpoint_path,
              const std::string &metrics_path) {
    TrainConfig cfg = load_config(config_path);
    apply_env_seed(cfg);

    std::ofstream metrics;
    if (!metrics_path.empty()) {
        metrics.open(metrics_path, std::ios::trunc);
        if (!metrics) throw ConfigError({"cannot open metrics file for writing: " + metrics_path});
    }
    const TrainResult res = train(cfg, metrics.is_open() ? &metrics : nullptr);
    save_checkpoint(res.model, cfg.digest(), checkpoint_path);

    nlohmann::ordered_json j;
    j["initial_train_lm_loss"] = res.initial_train_lm;
    j["final_train_lm_loss"] = res.final_train_lm;
    j["final_val"] = eval_json(res.final_val);
    j["checkpoint"] = checkpoint_path;
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int cmd_eval(const std::string &checkpoint_path, const std::string &config_path,
             const std::string &split) {
    TrainConfig cfg = load_config(config_path);
    apply_env_seed(cfg);
    const ToyBackbone model = load_checkpoint(cfg.model, cfg.digest(), checkpoint_path);
    const SyntheticDataset ds = make_dataset(cfg.data, split == "train" ? Split::Train : Split::Val);
    std::cout << eval_json(evaluate(model, cfg, ds)).dump(2) << "\n";
    return kExitOk;
}

int cmd_analyze(const std::string &checkpoint_path, const std::string &config_path,
                const std::string &out_dir, const std::string &split) {
    TrainConfig cfg = load_config(config_path);
    apply_env_seed(cfg);
    const ToyBackbone model = load_checkpoint(cfg.model, cfg.digest(), checkpoint_path);
    const SyntheticDataset ds = make_dataset(cfg.data, split == "train" ? Split::Train : Split::Val);
    const AnalysisTables tables = analyze_model(model, ds, cfg.epochs);
    write_analysis(tables, out_dir);

    std::cout << "wrote analysis tables to " << out_dir << "\n";
    if (!tables.has_lambda)
        std::cout << "notice: router has no sparsity factor; lambda_quantiles.csv omitted\n";
    std::cout << "freq_spearman = " << format_double(tables.freq_spearman) << "\n"
              << "mean active experts decreasing from first to last layer: "
              << (tables.activation_decreasing ? "yes" : "no") << "\n";
    return kExitOk;
}

int cmd_compare_routers(const std::string &config_path, const std::string &out_path) {
    const TrainConfig base = load_config(config_path);

    nlohmann::ordered_json summary;
    const std::pair<std::string, RouterConfig> methods[] = {
        {"ld", {RouterKind::LdShared, base.model.router.topk_k}},
        {"topk2", {RouterKind::TopK, 2}},
        {"relu", {RouterKind::Relu, base.model.router.topk_k}},
    };
    for (const auto &[name, router] : methods) {
        TrainConfig cfg = base;
        apply_env_seed(cfg);
        cfg.model.router = router;
        const TrainResult res = train(cfg);
        nlohmann::ordered_json j = eval_json(res.final_val);
        j["initial_train_lm_loss"] = res.initial_train_lm;
        j["final_train_lm_loss"] = res.final_train_lm;
        summary[name] = j;
        std::cerr << name << ": final val accuracy " << res.final_val.accuracy << "\n";
    }
    std::ofstream os(out_path, std::ios::trunc);
    if (!os) throw ConfigError({"cannot open output file: " + out_path});
    os << summary.dump(2) << "\n";
    std::cout << summary.dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"LD-MoLE routing toolkit: sparse simplex routing, toy MoLE training and analysis"};
    app.require_subcommand(1);

    // route
    auto *route_cmd = app.add_subcommand("route", "Project a score vector and print routing weights");
    std::string u_str;
    double lambda_val = 0.0;
    int topk_val = 0;
    route_cmd->add_option("--u", u_str, "comma-separated gate scores")->required();
    auto *lam_opt = route_cmd->add_option("--lambda", lambda_val, "sparsity factor (< 1)");
    auto *topk_opt = route_cmd->add_option("--topk", topk_val, "TopK routing with softmax over k");

    // oracle-check / grad-check
    long oracle_trials = 10000, grad_trials = 1000;
    int e_min = 2, e_max = 8;
    uint64_t seed = 0;
    std::string json_path;
    auto add_suite_opts = [&](CLI::App *cmd, long &trials_var) {
        cmd->add_option("--trials", trials_var, "number of random trials");
        cmd->add_option("--e-min", e_min, "minimum expert count");
        cmd->add_option("--e-max", e_max, "maximum expert count (<= 12)");
        cmd->add_option("--seed", seed, "rng seed");
        cmd->add_option("--json", json_path, "also write the report to this file");
    };
    auto *oracle_cmd = app.add_subcommand("oracle-check",
                                          "Compare the closed-form projection against the QP oracle");
    add_suite_opts(oracle_cmd, oracle_trials);
    auto *grad_cmd = app.add_subcommand("grad-check", "Finite-difference gradient checks only");
    add_suite_opts(grad_cmd, grad_trials);

    // train / eval / analyze / compare-routers
    std::string config_path, checkpoint_path = "checkpoint.ldml", metrics_path = "metrics.jsonl";
    std::string split = "val", out_dir = "analysis", out_path = "router_comparison.json";
    auto *train_cmd = app.add_subcommand("train", "Train a toy MoLE model from a config file");
    train_cmd->add_option("--config", config_path, "config file")->required();
    train_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint output path");
    train_cmd->add_option("--metrics", metrics_path, "metrics JSONL output path");

    auto *eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
    eval_cmd->add_option("--config", config_path, "config file")->required();
    eval_cmd->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));

    auto *analyze_cmd = app.add_subcommand("analyze", "Emit routing-behavior CSV tables");
    analyze_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
    analyze_cmd->add_option("--config", config_path, "config file")->required();
    analyze_cmd->add_option("--out", out_dir, "output directory")->required();
    analyze_cmd->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));

    auto *compare_cmd = app.add_subcommand("compare-routers",
                                           "Train LD, TopK(2) and ReLU with shared seeds");
    compare_cmd->add_option("--config", config_path, "base config file")->required();
    compare_cmd->add_option("--out", out_path, "summary JSON output path");

    auto *template_cmd = app.add_subcommand("config-template", "Print a reference config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (route_cmd->parsed())
            return cmd_route(u_str,
                             lam_opt->count() ? std::optional<double>(lambda_val) : std::nullopt,
                             topk_opt->count() ? std::optional<int>(topk_val) : std::nullopt);
        if (oracle_cmd->parsed())
            return run_oracle_suite(oracle_trials, e_min, e_max, seed, json_path, false);
        if (grad_cmd->parsed())
            return run_oracle_suite(grad_trials, e_min, e_max, seed, json_path, true);
        if (train_cmd->parsed()) return cmd_train(config_path, checkpoint_path, metrics_path);
        if (eval_cmd->parsed()) return cmd_eval(checkpoint_path, config_path, split);
        if (analyze_cmd->parsed()) return cmd_analyze(checkpoint_path, config_path, out_dir, split);
        if (compare_cmd->parsed()) return cmd_compare_routers(config_path, out_path);
        if (template_cmd->parsed()) {
            std::cout << config_template();
            return kExitOk;
        }
    } catch (const ConfigError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::invalid_argument &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
