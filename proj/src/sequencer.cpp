#include "laytext/sequencer.hpp"

#include <algorithm>

#include "laytext/errors.hpp"

namespace laytext {

std::vector<int> InterleavedSample::box_positions() const {
    std::vector<int> pos;
    pos.reserve(box_values.size());
    for (const auto& [p, box] : box_values) pos.push_back(p);
    return pos;
}

void InterleavedSample::check_invariants(const Vocab& vocab) const {
    const size_t t = ids.size();
    if (modality_mask.size() != t || loss_mask.size() != t)
        throw ContractError("sample masks must match the id stream length");
    size_t bi = 0;
    for (size_t i = 0; i < t; ++i) {
        const bool is_box = ids[i] == vocab.box();
        if ((modality_mask[i] == 1) != is_box)
            throw ContractError("modality mask out of sync with BOX ids at position " +
                                std::to_string(i));
        if (is_box) {
            if (bi >= box_values.size() || box_values[bi].first != static_cast<int>(i))
                throw ContractError("box_values does not cover BOX slot at position " +
                                    std::to_string(i));
            ++bi;
        }
        if (loss_mask[i] == 1 && modality_mask[i] == 1)
            throw ContractError("loss mask set on a box token at position " + std::to_string(i));
    }
    if (bi != box_values.size()) throw ContractError("box_values lists a non-BOX position");
}

namespace {

struct SampleBuilder {
    InterleavedSample s;

    void push(int id, uint8_t modality, uint8_t loss) {
        s.ids.push_back(id);
        s.modality_mask.push_back(modality);
        s.loss_mask.push_back(loss);
    }
    void push_box(const BBox& box, int box_id) {
        s.box_values.emplace_back(static_cast<int>(s.ids.size()), box);
        push(box_id, 1, 0);
    }
    int size() const { return s.size(); }
};

// Per-word token groups for one context scheme. A group is emitted whole or
// not at all, so truncation never splits a word from its box.
struct WordGroup {
    std::vector<int> text_ids;
    bool has_box = false;
    BBox box;
};

std::vector<WordGroup> context_groups(const Document& doc, const Vocab& vocab, Scheme scheme) {
    std::vector<WordGroup> groups;
    groups.reserve(doc.words.size());
    for (const OcrWord& w : doc.words) {
        WordGroup g;
        switch (scheme) {
            case Scheme::interleaved:
                g.has_box = true;
                g.box = w.box;
                g.text_ids = vocab.encode_word(w.text);
                break;
            case Scheme::plain:
                g.text_ids = vocab.encode_word(w.text);
                break;
            case Scheme::coord_tokens:
                g.text_ids = vocab.encode_text(w.text + format_box_percent(w.box));
                break;
        }
        groups.push_back(std::move(g));
    }
    return groups;
}

int group_cost(const WordGroup& g) {
    return static_cast<int>(g.text_ids.size()) + (g.has_box ? 1 : 0);
}

void emit_context(SampleBuilder& b, const std::vector<WordGroup>& groups, int budget,
                  const Vocab& vocab, uint8_t context_loss) {
    for (const WordGroup& g : groups) {
        if (group_cost(g) > budget) break;  // drop trailing words
        budget -= group_cost(g);
        if (g.has_box) b.push_box(g.box, vocab.box());
        for (int id : g.text_ids) b.push(id, 0, context_loss);
    }
}

InterleavedSample build_with_scheme(const Document& doc, const QaPair* qa, const Vocab& vocab,
                                    Scheme scheme, const SftOptions& opts, int max_len,
                                    bool include_answer) {
    const Document* src = &doc;
    Document shuffled;
    if (opts.shuffled) {
        Rng rng(opts.shuffle_seed);
        shuffled = shuffle_words(doc, rng);
        src = &shuffled;
    }

    SampleBuilder b;
    b.push(vocab.bos(), 0, 0);

    std::vector<WordGroup> groups = context_groups(*src, vocab, scheme);

    if (!qa) {
        // pre-training sample: context only, loss on every text token
        if (doc.words.empty()) throw ContractError("document '" + doc.id + "' has no words");
        emit_context(b, groups, max_len - 1, vocab, /*context_loss=*/1);
        if (b.s.ids.size() == 1)
            throw ContractError("document '" + doc.id + "' yields an empty sample at max_len " +
                                std::to_string(max_len));
        return std::move(b.s);
    }

    std::string answer_text = qa->answer;
    if (opts.grounded_output) answer_text = grounded_answer_string(*qa);

    // The question word is tokenized exactly like a context word so that the
    // same field name carries the same token ids in both places.
    std::vector<int> question_ids = vocab.encode_text("\nQuestion: ");
    for (int id : vocab.encode_word(qa->question)) question_ids.push_back(id);
    for (int id : vocab.encode_text("\nAnswer:")) question_ids.push_back(id);
    const std::vector<int> answer_ids = vocab.encode_text(answer_text);

    const int fixed = 1 + static_cast<int>(question_ids.size()) +
                      (include_answer ? static_cast<int>(answer_ids.size()) + 1 : 0);
    if (fixed > max_len)
        throw ContractError("question and answer alone exceed max_len for document '" + doc.id + "'");

    emit_context(b, groups, max_len - fixed, vocab, /*context_loss=*/0);
    for (int id : question_ids) b.push(id, 0, 0);
    if (include_answer) {
        for (int id : answer_ids) b.push(id, 0, 1);
        b.push(vocab.eos(), 0, 1);
    }
    return std::move(b.s);
}

}  // namespace

InterleavedSample build_pretrain_sample(const Document& doc, const Vocab& vocab, int max_len) {
    return build_with_scheme(doc, nullptr, vocab, Scheme::interleaved, {}, max_len, false);
}

Document shuffle_words(const Document& doc, Rng& rng) {
    Document out = doc;
    rng.shuffle(out.words);
    return out;
}

InterleavedSample build_sft_sample(const Document& doc, const QaPair& qa, const Vocab& vocab,
                                   const SftOptions& opts, int max_len) {
    return build_with_scheme(doc, &qa, vocab, Scheme::interleaved, opts, max_len, true);
}

InterleavedSample build_coord_token_sample(const Document& doc, const QaPair& qa,
                                           const Vocab& vocab, const SftOptions& opts, int max_len) {
    return build_with_scheme(doc, &qa, vocab, Scheme::coord_tokens, opts, max_len, true);
}

InterleavedSample build_text_sample(const Document& doc, const QaPair& qa, const Vocab& vocab,
                                    const SftOptions& opts, int max_len) {
    return build_with_scheme(doc, &qa, vocab, Scheme::plain, opts, max_len, true);
}

InterleavedSample build_qa_sample(const Document& doc, const QaPair& qa, const Vocab& vocab,
                                  Scheme scheme, const SftOptions& opts, int max_len) {
    return build_with_scheme(doc, &qa, vocab, scheme, opts, max_len, true);
}

InterleavedSample build_qa_prompt(const Document& doc, const QaPair& qa, const Vocab& vocab,
                                  Scheme scheme, const SftOptions& opts, int max_len) {
    return build_with_scheme(doc, &qa, vocab, scheme, opts, max_len, false);
}

std::string grounded_answer_string(const QaPair& qa) {
    if (qa.answer_boxes.empty())
        throw ContractError("grounded output requested but the QA pair has no answer boxes");
    return qa.answer + format_box_percent(qa.answer_boxes.front());
}

}  // namespace laytext
