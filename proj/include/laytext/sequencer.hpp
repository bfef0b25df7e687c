#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "laytext/corpus.hpp"
#include "laytext/tokenizer.hpp"

namespace laytext {

// One model-ready sequence. BOX slots hold the placeholder id in `ids`; the
// actual coordinates ride in box_values. loss_mask[i] == 1 marks position i
// as a prediction target (next-token shift happens at loss time), and is
// never set on a box slot.
struct InterleavedSample {
    std::vector<int> ids;
    std::vector<std::pair<int, BBox>> box_values;  // (position, box), ascending
    std::vector<uint8_t> modality_mask;            // 1 = box token
    std::vector<uint8_t> loss_mask;                // 1 = contributes to loss

    int size() const { return static_cast<int>(ids.size()); }
    std::vector<int> box_positions() const;
    void check_invariants(const Vocab& vocab) const;
};

struct SftOptions {
    bool shuffled = false;
    bool grounded_output = false;
    uint64_t shuffle_seed = 0;  // per-example seed; used only when shuffled
};

// [BOS, (BOX, word tokens)...], truncated on a word boundary; loss on text
// tokens only.
InterleavedSample build_pretrain_sample(const Document& doc, const Vocab& vocab, int max_len);

// Uniform random permutation of the word list; every word keeps its own box,
// QA pairs are untouched.
Document shuffle_words(const Document& doc, Rng& rng);

// [BOS, interleaved context, question, answer, EOS] with loss on the answer
// and EOS only. Context words are dropped from the tail when over budget;
// the question and answer are never truncated.
InterleavedSample build_sft_sample(const Document& doc, const QaPair& qa, const Vocab& vocab,
                                   const SftOptions& opts, int max_len);

// Same layout with the context spelled as "word[x1,y1,x2,y2]" text; no BOX
// slots at all.
InterleavedSample build_coord_token_sample(const Document& doc, const QaPair& qa,
                                           const Vocab& vocab, const SftOptions& opts, int max_len);

// Plain-text sibling of build_sft_sample for the layout-free baseline.
InterleavedSample build_text_sample(const Document& doc, const QaPair& qa, const Vocab& vocab,
                                    const SftOptions& opts, int max_len);

// Scheme-dispatched builders. Prompt variants stop after "Answer:" and carry
// an all-zero loss mask; generation appends from there.
InterleavedSample build_qa_sample(const Document& doc, const QaPair& qa, const Vocab& vocab,
                                  Scheme scheme, const SftOptions& opts, int max_len);
InterleavedSample build_qa_prompt(const Document& doc, const QaPair& qa, const Vocab& vocab,
                                  Scheme scheme, const SftOptions& opts, int max_len);

// The target string for grounded runs: answer text plus integer-percent
// coordinates of its box, e.g. "Oct 10[66,1,70,15]".
std::string grounded_answer_string(const QaPair& qa);

}  // namespace laytext
