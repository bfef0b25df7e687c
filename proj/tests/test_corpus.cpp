#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "laytext/corpus.hpp"
#include "laytext/errors.hpp"

using namespace laytext;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const char* name) {
    fs::path dir = fs::temp_directory_path() / "laytext_corpus_tests";
    fs::create_directories(dir);
    return dir / name;
}

OcrWord word_at(const std::string& text, double x, double y, double w = 0.05, double h = 0.02) {
    return {text, BBox{x, y, x + w, y + h}};
}

}  // namespace

TEST_CASE("normalize_box full page") {
    BBox b = normalize_box(0, 0, 640, 480, 640, 480);
    CHECK(b == BBox{0, 0, 1, 1});
}

TEST_CASE("normalize_box divides by page extents") {
    BBox b = normalize_box(100, 50, 200, 150, 1000, 500);
    CHECK(b.x1 == doctest::Approx(0.1));
    CHECK(b.y1 == doctest::Approx(0.1));
    CHECK(b.x2 == doctest::Approx(0.2));
    CHECK(b.y2 == doctest::Approx(0.3));
}

TEST_CASE("normalize_box keeps degenerate points valid") {
    BBox b = normalize_box(300, 200, 300, 200, 1000, 1000);
    CHECK(b == BBox{0.3, 0.2, 0.3, 0.2});
    CHECK(b.valid());
}

TEST_CASE("normalize_box reorders swapped extents") {
    BBox b = normalize_box(200, 150, 100, 50, 1000, 1000);
    CHECK(b.x1 == doctest::Approx(0.1));
    CHECK(b.x2 == doctest::Approx(0.2));
    CHECK(b.valid());
}

TEST_CASE("normalize_box rejects non-finite input") {
    CHECK_THROWS_AS(normalize_box(std::nan(""), 0, 1, 1, 10, 10), NumericError);
}

TEST_CASE("reading_order leaves a single word alone") {
    std::vector<OcrWord> words = {word_at("only", 0.4, 0.4)};
    auto out = reading_order(words);
    CHECK(out == words);
}

TEST_CASE("reading_order walks a 2x2 grid top-left to bottom-right") {
    std::vector<OcrWord> words = {
        word_at("BR", 0.7, 0.7),
        word_at("TL", 0.1, 0.1),
        word_at("BL", 0.1, 0.7),
        word_at("TR", 0.7, 0.1),
    };
    auto out = reading_order(words);
    REQUIRE(out.size() == 4);
    CHECK(out[0].text == "TL");
    CHECK(out[1].text == "TR");
    CHECK(out[2].text == "BL");
    CHECK(out[3].text == "BR");
}

TEST_CASE("reading_order is stable on an already-ordered line") {
    std::vector<OcrWord> words = {
        word_at("a", 0.1, 0.500),
        word_at("b", 0.3, 0.503),  // same line within tolerance
        word_at("c", 0.5, 0.498),
    };
    auto out = reading_order(words, 0.01);
    CHECK(out[0].text == "a");
    CHECK(out[1].text == "b");
    CHECK(out[2].text == "c");
}

TEST_CASE("reading_order is idempotent on generated documents") {
    auto docs = synth_kv_documents(99, 12);
    for (const Document& d : docs) {
        auto again = reading_order(d.words);
        CHECK(again == d.words);
    }
}

TEST_CASE("empty file loads as an empty corpus") {
    auto path = temp_file("empty.jsonl");
    std::ofstream(path.string()).close();
    CHECK(load_documents(path.string()).empty());
}

TEST_CASE("save then load round-trips generated documents") {
    auto docs = synth_kv_documents(7, 20);
    auto path = temp_file("roundtrip.jsonl");
    save_documents(path.string(), docs);
    auto loaded = load_documents(path.string());
    CHECK(loaded == docs);

    // and serialization itself is deterministic byte for byte
    auto path2 = temp_file("roundtrip2.jsonl");
    save_documents(path2.string(), loaded);
    std::ifstream a(path.string(), std::ios::binary), b(path2.string(), std::ios::binary);
    std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    CHECK(sa == sb);
}

TEST_CASE("a box with x1 > x2 is rejected with the document id") {
    auto path = temp_file("badbox.jsonl");
    {
        std::ofstream out(path.string());
        out << R"({"id":"doc-33","page_w":1,"page_h":1,"words":[{"text":"w","box":[0.9,0.1,0.2,0.2]}],"qa":[]})"
            << "\n";
    }
    try {
        load_documents(path.string());
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("doc-33") != std::string::npos);
    }
}

TEST_CASE("out-of-range normalized coordinates are rejected") {
    auto path = temp_file("oob.jsonl");
    {
        std::ofstream out(path.string());
        out << R"({"id":"d","page_w":1,"page_h":1,"words":[{"text":"w","box":[0.1,0.1,1.2,0.2]}],"qa":[]})"
            << "\n";
    }
    CHECK_THROWS_AS(load_documents(path.string()), ValidationError);
}

TEST_CASE("malformed json reports the line number") {
    auto path = temp_file("badjson.jsonl");
    {
        std::ofstream out(path.string());
        out << R"({"id":"ok","page_w":1,"page_h":1,"words":[],"qa":[]})" << "\n";
        out << "{not json\n";
    }
    try {
        load_documents(path.string());
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":2") != std::string::npos);
    }
}

TEST_CASE("synth with zero documents is empty") {
    CHECK(synth_kv_documents(1, 0).empty());
}

TEST_CASE("synth is a pure function of seed and spec") {
    auto a = synth_kv_documents(123, 30);
    auto b = synth_kv_documents(123, 30);
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i)
        CHECK(document_to_json_line(a[i]) == document_to_json_line(b[i]));
    auto c = synth_kv_documents(124, 30);
    CHECK(document_to_json_line(a[0]) != document_to_json_line(c[0]));
}

TEST_CASE("every qa answer is the concatenation of the words in its boxes") {
    auto docs = synth_kv_documents(55, 40);
    int checked = 0;
    for (const Document& d : docs) {
        for (const QaPair& qa : d.qa) {
            REQUIRE_FALSE(qa.answer_boxes.empty());
            std::string concat;
            for (const BBox& box : qa.answer_boxes)
                for (const OcrWord& w : d.words)
                    if (w.box == box) concat += w.text;
            CHECK(concat == qa.answer);
            ++checked;
        }
    }
    CHECK(checked > 100);
}

TEST_CASE("generated boxes always satisfy the bbox invariants") {
    for (const Document& d : synth_kv_documents(2024, 50)) {
        for (const OcrWord& w : d.words) CHECK(w.box.valid());
        for (const QaPair& qa : d.qa)
            for (const BBox& b : qa.answer_boxes) CHECK(b.valid());
    }
}

TEST_CASE("table-trap layouts separate fields from values in reading order") {
    SynthSpec spec;
    spec.trap_fraction = 1.0;
    spec.min_fields = 5;
    spec.max_fields = 5;
    spec.qa_per_doc = 5;
    auto docs = synth_kv_documents(31337, 25, spec);
    for (const Document& d : docs) {
        REQUIRE(d.qa.size() == 5);
        for (const QaPair& qa : d.qa) {
            int field_idx = -1, value_idx = -1;
            for (size_t i = 0; i < d.words.size(); ++i) {
                if (d.words[i].text == qa.question) field_idx = static_cast<int>(i);
                if (d.words[i].box == qa.answer_boxes[0]) value_idx = static_cast<int>(i);
            }
            REQUIRE(field_idx >= 0);
            REQUIRE(value_idx >= 0);
            // far apart in reading order
            CHECK(std::abs(value_idx - field_idx) >= 4);
            // but aligned in x: overlap at least half of the narrower box
            const BBox& f = d.words[static_cast<size_t>(field_idx)].box;
            const BBox& v = d.words[static_cast<size_t>(value_idx)].box;
            const double overlap = std::min(f.x2, v.x2) - std::max(f.x1, v.x1);
            const double narrower = std::min(f.width(), v.width());
            CHECK(overlap >= 0.5 * narrower);
        }
    }
}

TEST_CASE("trap fraction is honored exactly") {
    SynthSpec spec;
    spec.trap_fraction = 1.5;
    CHECK_THROWS_AS(synth_kv_documents(1, 5, spec), ValidationError);
}
