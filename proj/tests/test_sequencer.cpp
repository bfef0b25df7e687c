#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <map>

#include "laytext/errors.hpp"
#include "laytext/sequencer.hpp"

using namespace laytext;

namespace {

// Hand-built merge table: "Total" collapses to one token, "18.70" to two
// ("18" and ".70"), so the layout of the canonical two-word example is fixed.
Vocab two_word_vocab() {
    std::vector<std::pair<int, int>> merges = {
        {'T', 'o'},                     // 260 "To"
        {260, 't'},                     // 261 "Tot"
        {261, 'a'},                     // 262 "Tota"
        {262, 'l'},                     // 263 "Total"
        {'1', '8'},                     // 264 "18"
        {'.', '7'},                     // 265 ".7"
        {265, '0'},                     // 266 ".70"
    };
    return Vocab(std::move(merges));
}

Document two_word_doc() {
    Document doc;
    doc.id = "receipt";
    doc.words = {{"Total", BBox{0.1, 0.5, 0.2, 0.55}}, {"18.70", BBox{0.3, 0.5, 0.4, 0.55}}};
    doc.qa = {{"Total", "18.70", {BBox{0.3, 0.5, 0.4, 0.55}}}};
    return doc;
}

std::vector<std::string> doc_texts(const std::vector<Document>& docs) {
    std::vector<std::string> texts;
    for (const Document& d : docs) {
        std::string s;
        for (size_t i = 0; i < d.words.size(); ++i) {
            if (i) s += ' ';
            s += d.words[i].text;
        }
        texts.push_back(std::move(s));
    }
    return texts;
}

}  // namespace

TEST_CASE("pretrain sample interleaves one box slot ahead of each word") {
    Vocab v = two_word_vocab();
    REQUIRE(v.encode_word("Total") == std::vector<int>{263});
    REQUIRE(v.encode_word("18.70") == std::vector<int>{264, 266});

    InterleavedSample s = build_pretrain_sample(two_word_doc(), v, 64);
    CHECK(s.ids == std::vector<int>{v.bos(), v.box(), 263, v.box(), 264, 266});
    CHECK(s.modality_mask == std::vector<uint8_t>{0, 1, 0, 1, 0, 0});
    CHECK(s.loss_mask == std::vector<uint8_t>{0, 0, 1, 0, 1, 1});
    REQUIRE(s.box_values.size() == 2);
    CHECK(s.box_values[0].first == 1);
    CHECK(s.box_values[1].first == 3);
    CHECK(s.box_values[0].second == BBox{0.1, 0.5, 0.2, 0.55});
    s.check_invariants(v);
}

TEST_CASE("a document with no words cannot build a sample") {
    Document empty;
    empty.id = "void";
    CHECK_THROWS_AS(build_pretrain_sample(empty, two_word_vocab(), 64), ContractError);
}

TEST_CASE("box slots match the surviving word count under truncation") {
    auto docs = synth_kv_documents(41, 15);
    Vocab v = train_bpe(doc_texts(docs), 600);
    for (const Document& d : docs) {
        for (int max_len : {16, 32, 512}) {
            InterleavedSample s = build_pretrain_sample(d, v, max_len);
            s.check_invariants(v);
            CHECK(s.size() <= max_len);
            // every box slot is followed by that word's complete token group
            size_t word_i = 0;
            for (size_t bi = 0; bi < s.box_values.size(); ++bi) {
                const auto expect = v.encode_word(d.words[word_i].text);
                const int pos = s.box_values[bi].first;
                REQUIRE(pos + static_cast<int>(expect.size()) < s.size() + 1);
                for (size_t k = 0; k < expect.size(); ++k)
                    CHECK(s.ids[static_cast<size_t>(pos) + 1 + k] == expect[k]);
                CHECK(s.box_values[bi].second == d.words[word_i].box);
                ++word_i;
            }
            if (max_len >= 512) CHECK(s.box_values.size() == d.words.size());
        }
    }
}

TEST_CASE("shuffle keeps a single-word document unchanged") {
    Document doc = two_word_doc();
    doc.words.resize(1);
    Rng rng(5);
    CHECK(shuffle_words(doc, rng).words == doc.words);
}

TEST_CASE("shuffle with a fixed seed is reproducible") {
    auto docs = synth_kv_documents(42, 3);
    Rng a(99), b(99);
    CHECK(shuffle_words(docs[0], a).words == shuffle_words(docs[0], b).words);
    Rng c(100);
    CHECK(shuffle_words(docs[0], c).words != shuffle_words(docs[0], a).words);
}

TEST_CASE("shuffle preserves the multiset of word-box pairs and the qa list") {
    auto docs = synth_kv_documents(43, 5);
    for (const Document& d : docs) {
        Rng rng(7);
        Document s = shuffle_words(d, rng);
        CHECK(s.qa == d.qa);
        auto key = [](const OcrWord& w) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), "%s|%.9f|%.9f", w.text.c_str(), w.box.x1, w.box.y1);
            return std::string(buf);
        };
        std::map<std::string, int> before, after;
        for (const OcrWord& w : d.words) ++before[key(w)];
        for (const OcrWord& w : s.words) ++after[key(w)];
        CHECK(before == after);
    }
}

TEST_CASE("sft sample puts loss on the answer and EOS only") {
    Vocab v = two_word_vocab();
    Document doc = two_word_doc();
    InterleavedSample s = build_sft_sample(doc, doc.qa[0], v, {}, 128);
    s.check_invariants(v);

    const auto answer_ids = v.encode_text("18.70");
    const int answer_len = static_cast<int>(answer_ids.size()) + 1;  // + EOS
    const int t = s.size();
    CHECK(s.ids.back() == v.eos());
    for (int i = 0; i < t; ++i) {
        const bool in_answer = i >= t - answer_len;
        CHECK(s.loss_mask[static_cast<size_t>(i)] == (in_answer ? 1 : 0));
    }
    // context and question carry no loss; the question text sits between
    const std::string decoded = v.decode(s.ids);
    CHECK(decoded.find("\nQuestion: Total\nAnswer:") != std::string::npos);
}

TEST_CASE("unshuffled sft context equals the pretrain context segment") {
    auto docs = synth_kv_documents(44, 6);
    Vocab v = train_bpe(doc_texts(docs), 500);
    for (const Document& d : docs) {
        InterleavedSample pre = build_pretrain_sample(d, v, 512);
        InterleavedSample sft_s = build_sft_sample(d, d.qa[0], v, {}, 512);
        REQUIRE(sft_s.size() >= pre.size());
        for (int i = 0; i < pre.size(); ++i) CHECK(sft_s.ids[static_cast<size_t>(i)] == pre.ids[static_cast<size_t>(i)]);
    }
}

TEST_CASE("grounded target carries integer-percent coordinates") {
    QaPair qa{"Date", "Oct 10", {BBox{0.66, 0.01, 0.70, 0.15}}};
    CHECK(grounded_answer_string(qa) == "Oct 10[66,1,70,15]");

    QaPair no_boxes{"Date", "Oct 10", {}};
    CHECK_THROWS_AS(grounded_answer_string(no_boxes), ContractError);
}

TEST_CASE("grounded sft sample decodes to the suffixed answer") {
    Vocab v = two_word_vocab();
    Document doc = two_word_doc();
    SftOptions opts;
    opts.grounded_output = true;
    InterleavedSample s = build_sft_sample(doc, doc.qa[0], v, opts, 128);
    const std::string decoded = v.decode(s.ids);
    CHECK(decoded.find("18.70[30,50,40,55]") != std::string::npos);
}

TEST_CASE("coord-token samples spell the box as text and carry no box slots") {
    Vocab v = two_word_vocab();
    Document doc = two_word_doc();
    doc.words.resize(1);  // only "Total"
    doc.words[0].box = BBox{0.66, 0.01, 0.70, 0.15};
    InterleavedSample s = build_coord_token_sample(doc, doc.qa[0], v, {}, 128);
    s.check_invariants(v);
    CHECK(s.box_values.empty());
    for (uint8_t m : s.modality_mask) CHECK(m == 0);
    CHECK(v.decode(s.ids).find("Total[66,1,70,15]") != std::string::npos);
}

TEST_CASE("coord-token samples are at least as long as interleaved ones") {
    auto docs = synth_kv_documents(45, 10);
    Vocab v = train_bpe(doc_texts(docs), 600);
    for (const Document& d : docs) {
        InterleavedSample inter = build_qa_sample(d, d.qa[0], v, Scheme::interleaved, {}, 4096);
        InterleavedSample coord = build_qa_sample(d, d.qa[0], v, Scheme::coord_tokens, {}, 4096);
        CHECK(coord.size() >= inter.size());
    }
}

TEST_CASE("quantization round trip recovers floor(c*100 + 0.5)") {
    Rng rng(4242);
    for (int i = 0; i < 500; ++i) {
        BBox b;
        b.x1 = rng.uniform();
        b.x2 = rng.uniform(b.x1, 1.0);
        b.y1 = rng.uniform();
        b.y2 = rng.uniform(b.y1, 1.0);
        const std::string text = format_box_percent(b);
        int q[4];
        REQUIRE(std::sscanf(text.c_str(), "[%d,%d,%d,%d]", &q[0], &q[1], &q[2], &q[3]) == 4);
        const double coords[4] = {b.x1, b.y1, b.x2, b.y2};
        for (int k = 0; k < 4; ++k) {
            CHECK(q[k] == static_cast<int>(std::floor(coords[k] * 100.0 + 0.5)));
            CHECK(q[k] >= 0);
            CHECK(q[k] <= 100);
        }
    }
}

TEST_CASE("truncation drops trailing context words, never the question or answer") {
    auto docs = synth_kv_documents(46, 4);
    Vocab v = train_bpe(doc_texts(docs), 500);
    const Document& d = docs[0];
    const QaPair& qa = d.qa[0];

    InterleavedSample full = build_sft_sample(d, qa, v, {}, 4096);
    InterleavedSample tight = build_sft_sample(d, qa, v, {}, full.size() - 4);
    CHECK(tight.size() < full.size());
    CHECK(tight.box_values.size() < full.box_values.size());

    const std::string decoded = v.decode(tight.ids);
    CHECK(decoded.find("\nQuestion: " + qa.question + "\nAnswer:") != std::string::npos);
    CHECK(decoded.find(qa.answer, decoded.find("\nAnswer:")) != std::string::npos);
    CHECK(tight.ids.back() == v.eos());

    // a budget too small for even the question and answer is a contract error
    CHECK_THROWS_AS(build_sft_sample(d, qa, v, {}, 8), ContractError);
}

TEST_CASE("loss mask and modality mask never overlap") {
    auto docs = synth_kv_documents(47, 8);
    Vocab v = train_bpe(doc_texts(docs), 500);
    uint64_t ex = 0;
    for (const Document& d : docs) {
        for (const QaPair& qa : d.qa) {
            SftOptions opts;
            opts.shuffled = (ex % 2) == 0;
            opts.shuffle_seed = derive_seed(9, ex);
            InterleavedSample s = build_sft_sample(d, qa, v, opts, 384);
            s.check_invariants(v);
            for (int i = 0; i < s.size(); ++i)
                CHECK((s.loss_mask[static_cast<size_t>(i)] & s.modality_mask[static_cast<size_t>(i)]) == 0);
            ++ex;
        }
    }
}

TEST_CASE("box-text pairing survives shuffling") {
    auto docs = synth_kv_documents(48, 6);
    Vocab v = train_bpe(doc_texts(docs), 500);
    for (const Document& d : docs) {
        SftOptions opts;
        opts.shuffled = true;
        opts.shuffle_seed = 1234;
        InterleavedSample s = build_sft_sample(d, d.qa[0], v, opts, 512);
        s.check_invariants(v);

        // reconstruct the shuffled word order and verify each box slot is
        // followed by exactly the tokens of the word owning that box
        Rng rng(opts.shuffle_seed);
        Document shuffled = shuffle_words(d, rng);
        for (size_t bi = 0; bi < s.box_values.size(); ++bi) {
            const auto& [pos, box] = s.box_values[bi];
            CHECK(box == shuffled.words[bi].box);
            const auto expect = v.encode_word(shuffled.words[bi].text);
            for (size_t k = 0; k < expect.size(); ++k)
                CHECK(s.ids[static_cast<size_t>(pos) + 1 + k] == expect[k]);
        }
    }
}
