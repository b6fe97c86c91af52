#pragma once

#include <cstdint>
#include <vector>

#include "ldmole/linalg.hpp"

namespace ldmole {

// Synthetic sequence-labeling task: token ids follow a Zipf distribution,
// labels are a fixed random hash of (current token, previous token), and
// the mask marks the label-bearing suffix of each sequence.
struct DatasetSpec {
    int vocab = 256;
    int seq_len = 16;
    int train_sequences = 8192;
    int val_sequences = 1024;
    int num_classes = 8;
    double zipf_s = 1.2;
    // Label hash coarsening: the hash cell is (min(cur, cur_buckets-1),
    // min(prev, prev_buckets-1)), so only the most frequent token ids keep
    // their identity and the rare tail shares one bucket.
    int label_cur_buckets = 8;
    int label_prev_buckets = 2;
    uint64_t seed = 7;
};

struct SyntheticDataset {
    std::vector<std::vector<int>> tokens;  // N x T
    std::vector<std::vector<int>> labels;  // N x T
    std::vector<std::vector<int>> mask;    // N x T, 0/1
    int seq_len = 0;
    int vocab = 0;
    int num_classes = 0;

    long masked_positions() const;
};

enum class Split { Train, Val };

int label_of(const DatasetSpec &spec, int cur, int prev);
SyntheticDataset make_dataset(const DatasetSpec &spec, Split split);

}  // namespace ldmole
