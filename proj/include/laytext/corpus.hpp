#pragma once

#include <optional>
#include <string>
#include <vector>

#include "laytext/rng.hpp"

namespace laytext {

// Word-level OCR geometry, normalized to the page: 0 <= x1 <= x2 <= 1 and
// 0 <= y1 <= y2 <= 1. Zero-area boxes are permitted.
struct BBox {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

    bool valid() const;
    double cx() const { return 0.5 * (x1 + x2); }
    double cy() const { return 0.5 * (y1 + y2); }
    double width() const { return x2 - x1; }
    double height() const { return y2 - y1; }

    bool operator==(const BBox&) const = default;
};

double iou(const BBox& a, const BBox& b);

struct OcrWord {
    std::string text;  // non-empty, no newlines
    BBox box;

    bool operator==(const OcrWord&) const = default;
};

struct QaPair {
    std::string question;
    std::string answer;  // non-empty
    std::vector<BBox> answer_boxes;

    bool operator==(const QaPair&) const = default;
};

struct Document {
    std::string id;
    std::vector<OcrWord> words;  // canonical reading order
    std::vector<QaPair> qa;
    double page_w = 1.0, page_h = 1.0;  // pixels, provenance only

    bool operator==(const Document&) const = default;
};

// Document JSONL: one object per line,
// {"id": str, "page_w": num, "page_h": num,
//  "words": [{"text": str, "box": [x1,y1,x2,y2]}],
//  "qa": [{"q": str, "a": str, "boxes": [[x1,y1,x2,y2], ...]?}]}
// Boxes in the file are normalized; out-of-range values are rejected.
std::vector<Document> load_documents(const std::string& path);
void save_documents(const std::string& path, const std::vector<Document>& docs);
std::string document_to_json_line(const Document& doc);

// Divides pixel extents by the page size and reorders so min <= max.
BBox normalize_box(double x1, double y1, double x2, double y2, double page_w, double page_h);

// Groups words into lines by vertical-center proximity (tolerance as a
// fraction of page height), sorts lines top to bottom and words within a
// line left to right. Stable for ties.
std::vector<OcrWord> reading_order(std::vector<OcrWord> words, double line_tolerance = 0.01);

struct SynthSpec {
    double trap_fraction = 0.5;  // fraction of documents with a table-trap layout
    int min_fields = 4;
    int max_fields = 6;
    int qa_per_doc = 4;          // capped at the document's field count
    int n_distractors = 4;       // decorative words outside the field area
    int n_decoy_values = 2;      // value-shaped words not tied to any field
};

// Deterministic synthetic key-value documents. Table-trap layouts place a
// header row of field names above a row of values so that reading order
// separates a field from its value while their x-extents stay aligned.
std::vector<Document> synth_kv_documents(uint64_t seed, int n_docs, const SynthSpec& spec = {});

}  // namespace laytext
