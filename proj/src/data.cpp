#include "ldmole/data.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace ldmole {

long SyntheticDataset::masked_positions() const {
    long n = 0;
    for (const auto &row : mask)
        for (int m : row) n += (m != 0);
    return n;
}

int label_of(const DatasetSpec &spec, int cur, int prev) {
    // Ids are ordered by Zipf frequency, so clamping keeps per-token label
    // identity for the high-mass head of the vocabulary while the long tail
    // shares a single bucket per position.
    const uint64_t key = subseed(spec.seed, "labels");
    const uint64_t cell = static_cast<uint64_t>(std::min(cur, spec.label_cur_buckets - 1)) * 1000003ULL +
                          static_cast<uint64_t>(std::min(prev, spec.label_prev_buckets - 1));
    return static_cast<int>(splitmix64(key ^ cell) % static_cast<uint64_t>(spec.num_classes));
}

SyntheticDataset make_dataset(const DatasetSpec &spec, Split split) {
    if (spec.vocab < 16) throw std::invalid_argument("dataset vocab must be >= 16");
    if (spec.seq_len < 4) throw std::invalid_argument("dataset seq_len must be >= 4");
    if (spec.num_classes < 2) throw std::invalid_argument("dataset needs >= 2 classes");
    if (spec.label_cur_buckets < 1 || spec.label_prev_buckets < 1)
        throw std::invalid_argument("label hash bucket counts must be positive");

    const int n = split == Split::Train ? spec.train_sequences : spec.val_sequences;
    if (n < 1) throw std::invalid_argument("dataset split size must be positive");

    // Zipf CDF over token ids 1..vocab (id i has mass 1/i^s).
    Vec cdf(spec.vocab);
    double z = 0.0;
    for (int i = 0; i < spec.vocab; ++i) {
        z += 1.0 / std::pow(static_cast<double>(i + 1), spec.zipf_s);
        cdf[i] = z;
    }
    for (double &c : cdf) c /= z;

    Rng rng(subseed(spec.seed, split == Split::Train ? "data.train" : "data.val"));

    SyntheticDataset ds;
    ds.seq_len = spec.seq_len;
    ds.vocab = spec.vocab;
    ds.num_classes = spec.num_classes;
    ds.tokens.assign(n, std::vector<int>(spec.seq_len));
    ds.labels.assign(n, std::vector<int>(spec.seq_len));
    ds.mask.assign(n, std::vector<int>(spec.seq_len));

    for (int s = 0; s < n; ++s) {
        for (int t = 0; t < spec.seq_len; ++t) {
            const double r = rng.uniform(0.0, 1.0);
            const int tok = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), r) - cdf.begin());
            ds.tokens[s][t] = std::min(tok, spec.vocab - 1);
            const int prev = t > 0 ? ds.tokens[s][t - 1] : ds.tokens[s][t];
            ds.labels[s][t] = label_of(spec, ds.tokens[s][t], prev);
            ds.mask[s][t] = t >= spec.seq_len / 2 ? 1 : 0;
        }
    }
    return ds;
}

}  // namespace ldmole
