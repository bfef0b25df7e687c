#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "laytext/corpus.hpp"
#include "laytext/ops.hpp"
#include "laytext/sequencer.hpp"
#include "laytext/tokenizer.hpp"

namespace laytext {

struct ModelConfig {
    int d_model = 128;
    int n_layers = 4;
    int n_heads = 4;
    int vocab_size = 2048;
    int plora_rank = 16;
    int max_seq_len = 512;
    double rope_base = 10000.0;
    int mlp_mult = 4;
    double init_std = 0.08;

    int head_dim() const { return d_model / n_heads; }
    int mlp_hidden() const { return d_model * mlp_mult; }
    void validate() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

// Low-rank pair attached to a base linear; applied only to box-modality rows.
struct PLoraAdapter {
    Tensor a;  // [rank x in]
    Tensor b;  // [out x rank]
};

struct AdaptedLinear {
    Tensor w;     // [out x in]
    Tensor bias;  // [out]
    PLoraAdapter adapter;
};

// Affine map from 4 box coordinates to one d_model embedding, shared by all
// box tokens.
struct SlpParams {
    Tensor w;  // [d_model x 4]
    Tensor b;  // [d_model]
};

struct LayerParams {
    Tensor attn_norm;  // [d_model]
    AdaptedLinear wq, wk, wv, wo;
    Tensor mlp_norm;  // [d_model]
    AdaptedLinear w_up, w_down;
};

struct ModelParams {
    ModelConfig config;
    Tensor embedding;  // [vocab x d_model]
    SlpParams slp;
    std::vector<LayerParams> layers;
    Tensor final_norm;  // [d_model]
    Tensor lm_head;     // [vocab x d_model], not adapted

    std::vector<std::pair<std::string, Tensor*>> named_params();
    std::vector<std::pair<std::string, const Tensor*>> named_params() const;

    std::vector<Tensor> all_params();
    std::vector<Tensor> slp_and_adapter_params();  // pre-training trainables
    std::vector<Tensor> backbone_params();

    int64_t adapter_param_count() const;
    int64_t total_param_count() const;

    ModelParams clone() const;
};

ModelParams init_params(const ModelConfig& config, uint64_t seed);

// z = W c + b for one normalized box.
Tensor slp_project(const BBox& box, const SlpParams& slp);

// Rows with modality 0 get the base affine map; rows with modality 1 get the
// low-rank delta on top.
Tensor plora_forward(const Tensor& x, const std::vector<uint8_t>& modality_mask,
                     const AdaptedLinear& layer);

// Full causal forward pass: interleaved embeddings, RoPE attention, P-LoRA
// routing on every layer linear. Returns [T x vocab] logits.
Tensor forward(const InterleavedSample& sample, const ModelParams& params);

// Greedy decoding (beam size 1); stops at eos_id or when the context window
// is exhausted. New tokens beyond the window are not generated.
std::vector<int> generate(const ModelParams& params, const InterleavedSample& prompt, int eos_id,
                          int max_new_tokens = 512);

struct GroundedSpan {
    std::string text;
    std::optional<BBox> box;
};
struct GroundedParse {
    std::vector<GroundedSpan> spans;
    std::vector<std::string> diagnostics;  // malformed groups, never fatal
};

// Extracts trailing "[i1,i2,i3,i4]" integer-percent groups from model output.
// Out-of-range or malformed groups stay in the text and are reported in
// diagnostics; model output is untrusted.
GroundedParse parse_grounded_output(const std::string& text);

// Self-describing checkpoint container: format version, config, vocab, named
// f64 tensors, optional metadata/extras (optimizer state). Reload is
// bit-exact.
struct CheckpointExtras {
    std::map<std::string, std::vector<double>> tensors;
    std::string meta_json = "{}";
};

void save_checkpoint(const std::string& path, const ModelParams& params, const Vocab& vocab,
                     const CheckpointExtras* extras = nullptr);

struct LoadedCheckpoint {
    ModelParams params;
    Vocab vocab;
    CheckpointExtras extras;
};
LoadedCheckpoint load_checkpoint(const std::string& path);

}  // namespace laytext
