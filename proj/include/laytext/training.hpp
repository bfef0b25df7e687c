#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "laytext/eval.hpp"
#include "laytext/model.hpp"
#include "laytext/optim.hpp"

namespace laytext {

enum class Stage { pretrain, sft };

Stage stage_from_string(const std::string& s);
std::string stage_name(Stage s);

struct TrainConfig {
    Stage stage = Stage::pretrain;
    double lr = 1e-4;  // stage defaults: 1e-4 pre-training, 2e-5 fine-tuning
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double warmup_ratio = 0.005;
    int epochs = 2;
    int batch_size = 8;
    int max_len = 512;
    double shuffle_ratio = 0.2;  // SFT: fraction of examples with shuffled word order
    Scheme scheme = Scheme::interleaved;
    bool grounded = false;  // SFT: train on coordinate-suffixed answers
    double clip_norm = 1.0;
    uint64_t seed = 0;

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json(const std::string& text, Stage stage);
    static TrainConfig defaults_for(Stage stage);
};

// Linear warmup to cfg.lr over warmup_ratio * total_steps, then cosine decay
// to zero at total_steps.
double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg);

struct StepRecord {
    int64_t step;
    double lr;
    double loss;
};

// Optimizer moments keyed by parameter name plus progress counters; embedded
// in epoch checkpoints so that a resumed run reproduces the uninterrupted one
// bitwise.
struct OptimSnapshot {
    int64_t step_count = 0;
    int next_epoch = 0;
    std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments;

    bool empty() const { return moments.empty() && step_count == 0 && next_epoch == 0; }
};

struct TrainResult {
    std::vector<StepRecord> curve;
    OptimSnapshot optim;
    double first_epoch_mean_loss = 0.0;
    double last_epoch_mean_loss = 0.0;
};

using EpochCallback = std::function<void(int epoch, const OptimSnapshot& snapshot)>;

// Shifted-by-one language-model loss for one sample: logits row i scores the
// token at position i+1, active where loss_mask[i+1] == 1.
Tensor next_token_loss(const InterleavedSample& sample, const ModelParams& params);

// Stage 1: layout-aware next-token prediction. Trains only the SLP and the
// adapters; every backbone tensor is left bitwise untouched.
TrainResult pretrain(const std::vector<Document>& docs, ModelParams& params, const Vocab& vocab,
                     const TrainConfig& cfg, const EpochCallback& on_epoch = nullptr,
                     const OptimSnapshot* resume = nullptr);

// Stage 2: supervised fine-tuning over QA pairs with per-example shuffled OCR
// order at cfg.shuffle_ratio; loss on response tokens only; all parameters
// trainable.
TrainResult sft(const std::vector<Document>& docs, ModelParams& params, const Vocab& vocab,
                const TrainConfig& cfg, const EpochCallback& on_epoch = nullptr,
                const OptimSnapshot* resume = nullptr);

// Deterministic SFT corpus assembly, exposed for inspection: which examples
// get shuffled and with which seed.
struct SftExampleRef {
    int doc_index;
    int qa_index;
    bool shuffled;
    uint64_t shuffle_seed;
};
std::vector<SftExampleRef> assemble_sft_examples(const std::vector<Document>& docs,
                                                 const TrainConfig& cfg);

// One SFT run + fully-shuffled evaluation per training ratio, each restarted
// from the same initial parameters and seed.
struct SweepRow {
    double train_ratio;
    double accuracy;
};
std::vector<SweepRow> shuffle_sweep(const std::vector<Document>& train_docs,
                                    const std::vector<Document>& test_docs,
                                    const ModelParams& params0, const Vocab& vocab,
                                    const TrainConfig& cfg, const std::vector<double>& ratios);
std::string sweep_csv(const std::vector<SweepRow>& rows);

// Conversions for embedding optimizer state in checkpoints.
CheckpointExtras snapshot_to_extras(const OptimSnapshot& snap, const std::string& stage);
OptimSnapshot extras_to_snapshot(const CheckpointExtras& extras);

}  // namespace laytext
