#include "ldmole/analysis.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <stdexcept>

#include "json.hpp"

namespace ldmole {

std::string format_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 12);
    if (ec != std::errc{}) throw std::runtime_error("number formatting failed");
    return std::string(buf, p);
}

namespace {

Vec ranks_of(const Vec &v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    Vec r(n, 0.0);
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

double pearson(const Vec &a, const Vec &b) {
    const size_t n = a.size();
    double ma = 0.0, mb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double num = 0.0, va = 0.0, vb = 0.0;
    for (size_t i = 0; i < n; ++i) {
        num += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma) * (a[i] - ma);
        vb += (b[i] - mb) * (b[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return num / std::sqrt(va * vb);
}

const char *module_name(int module_id) { return module_id == 0 ? "attn_proj" : "ffn_down"; }

double quantile(Vec sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * (static_cast<double>(sorted.size()) - 1.0);
    const size_t lo = static_cast<size_t>(pos);
    const size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

}  // namespace

double spearman(const Vec &a, const Vec &b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("spearman: need two equal-length series");
    return pearson(ranks_of(a), ranks_of(b));
}

AnalysisTables analyze_model(const ToyBackbone &model, const SyntheticDataset &ds, int epoch) {
    const int layers = model.cfg.layers;
    const int experts = model.cfg.num_experts;

    struct Cell {
        double k_sum = 0.0;
        long n = 0;
        Vec lambdas;
    };
    std::vector<std::array<Cell, 2>> per_layer(layers);
    std::vector<Vec> mass(layers, Vec(experts, 0.0));
    std::vector<long> zero_count(layers, 0), layer_records(layers, 0);
    std::map<int, std::pair<long, double>> per_token;  // token -> (count, k_active sum)

    for (size_t s = 0; s < ds.tokens.size(); ++s) {
        for (int t = 0; t < ds.seq_len; ++t) {
            const int tok = ds.tokens[s][t];
            const int prev = t > 0 ? ds.tokens[s][t - 1] : tok;
            TokenCache cache;
            token_forward(model, tok, prev, false, nullptr, &cache);
            for (int l = 0; l < layers; ++l) {
                const RoutingRecord *recs[2] = {&cache.blocks[l].attn.record,
                                                &cache.blocks[l].down.record};
                for (int m = 0; m < 2; ++m) {
                    const RoutingRecord &r = *recs[m];
                    Cell &c = per_layer[l][m];
                    c.k_sum += r.k_active;
                    ++c.n;
                    if (r.lambda) c.lambdas.push_back(*r.lambda);
                    for (int i = 0; i < experts; ++i) mass[l][i] += r.p[i];
                    if (r.k_active == 0) ++zero_count[l];
                    ++layer_records[l];
                    auto &pt = per_token[tok];
                    ++pt.first;
                    pt.second += r.k_active;
                }
            }
        }
    }

    AnalysisTables out;
    for (int l = 0; l < layers; ++l) {
        for (int m = 0; m < 2; ++m) {
            Cell &c = per_layer[l][m];
            out.per_layer_activation.push_back(
                {l, module_name(m), c.n ? c.k_sum / c.n : 0.0});
            if (!c.lambdas.empty()) {
                out.has_lambda = true;
                std::sort(c.lambdas.begin(), c.lambdas.end());
                out.lambda_quantiles.push_back({l, module_name(m), quantile(c.lambdas, 0.25),
                                                quantile(c.lambdas, 0.50), quantile(c.lambdas, 0.75)});
            }
        }
        double total_mass = 0.0;
        for (int i = 0; i < experts; ++i) total_mass += mass[l][i];
        for (int i = 0; i < experts; ++i)
            out.epoch_heatmap.push_back({epoch, l, i, total_mass > 0.0 ? mass[l][i] / total_mass : 0.0});
        out.zero_activation.push_back(
            {l, layer_records[l] ? static_cast<double>(zero_count[l]) / layer_records[l] : 0.0});
    }

    // Token-frequency view over the most frequent tokens (at most 200).
    std::vector<std::pair<int, std::pair<long, double>>> by_count(per_token.begin(), per_token.end());
    std::stable_sort(by_count.begin(), by_count.end(), [](const auto &a, const auto &b) {
        if (a.second.first != b.second.first) return a.second.first > b.second.first;
        return a.first < b.first;
    });
    const size_t top = std::min<size_t>(by_count.size(), 200);
    Vec rank_series, k_series;
    for (size_t i = 0; i < top; ++i) {
        const auto &[tok, cnt_k] = by_count[i];
        const double mean_k = cnt_k.second / cnt_k.first;
        out.freq_activation.push_back({tok, static_cast<int>(i) + 1, cnt_k.first, mean_k});
        rank_series.push_back(static_cast<double>(i) + 1.0);
        k_series.push_back(mean_k);
    }
    out.freq_spearman = top >= 2 ? spearman(rank_series, k_series) : 0.0;

    const double first_layer = 0.5 * (per_layer[0][0].k_sum / std::max<long>(1, per_layer[0][0].n) +
                                      per_layer[0][1].k_sum / std::max<long>(1, per_layer[0][1].n));
    const int last = layers - 1;
    const double last_layer = 0.5 * (per_layer[last][0].k_sum / std::max<long>(1, per_layer[last][0].n) +
                                     per_layer[last][1].k_sum / std::max<long>(1, per_layer[last][1].n));
    out.activation_decreasing = last_layer <= first_layer;
    return out;
}

void write_analysis(const AnalysisTables &t, const std::string &out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const fs::path dir(out_dir);

    auto open = [&](const char *name) {
        std::ofstream os(dir / name, std::ios::trunc);
        if (!os) throw std::runtime_error(std::string("cannot write ") + name);
        return os;
    };

    {
        auto os = open("per_layer_activation.csv");
        os << "layer,module,mean_active_experts\n";
        for (const auto &r : t.per_layer_activation)
            os << r.layer << "," << r.module << "," << format_double(r.mean_active_experts) << "\n";
    }
    if (t.has_lambda) {
        auto os = open("lambda_quantiles.csv");
        os << "layer,module,q25,q50,q75\n";
        for (const auto &r : t.lambda_quantiles)
            os << r.layer << "," << r.module << "," << format_double(r.q25) << ","
               << format_double(r.q50) << "," << format_double(r.q75) << "\n";
    }
    {
        auto os = open("freq_activation.csv");
        os << "token_id,frequency_rank,count,mean_active_experts\n";
        for (const auto &r : t.freq_activation)
            os << r.token_id << "," << r.frequency_rank << "," << r.count << ","
               << format_double(r.mean_active_experts) << "\n";
    }
    {
        auto os = open("epoch_heatmap.csv");
        os << "epoch,layer,expert,routing_mass_fraction\n";
        for (const auto &r : t.epoch_heatmap)
            os << r.epoch << "," << r.layer << "," << r.expert << ","
               << format_double(r.routing_mass_fraction) << "\n";
    }
    {
        auto os = open("zero_activation.csv");
        os << "layer,fraction_of_tokens_with_empty_support\n";
        for (const auto &r : t.zero_activation)
            os << r.layer << "," << format_double(r.fraction_zero) << "\n";
    }
    {
        nlohmann::ordered_json j;
        j["freq_spearman"] = t.freq_spearman;
        j["activation_decreasing_first_to_last"] = t.activation_decreasing;
        j["has_lambda"] = t.has_lambda;
        if (!t.has_lambda)
            j["notice"] = "lambda_quantiles.csv omitted: router has no sparsity factor";
        auto os = open("summary.json");
        os << j.dump(2) << "\n";
    }
}

}  // namespace ldmole
