#include "laytext/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "laytext/errors.hpp"

namespace laytext {

using ordered_json = nlohmann::ordered_json;

bool BBox::valid() const {
    return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) && std::isfinite(y2) &&
           0.0 <= x1 && x1 <= x2 && x2 <= 1.0 && 0.0 <= y1 && y1 <= y2 && y2 <= 1.0;
}

double iou(const BBox& a, const BBox& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    const double uni = a.width() * a.height() + b.width() * b.height() - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

BBox normalize_box(double x1, double y1, double x2, double y2, double page_w, double page_h) {
    if (page_w <= 0.0 || page_h <= 0.0)
        throw ContractError("normalize_box: page extents must be positive");
    for (double v : {x1, y1, x2, y2})
        if (!std::isfinite(v)) throw NumericError("normalize_box: non-finite coordinate");
    BBox b;
    b.x1 = std::min(x1, x2) / page_w;
    b.x2 = std::max(x1, x2) / page_w;
    b.y1 = std::min(y1, y2) / page_h;
    b.y2 = std::max(y1, y2) / page_h;
    return b;
}

std::vector<OcrWord> reading_order(std::vector<OcrWord> words, double line_tolerance) {
    // group into lines against the first member's vertical center
    std::vector<size_t> idx(words.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
        return words[a].box.cy() < words[b].box.cy();
    });

    std::vector<std::vector<size_t>> lines;
    double anchor = 0.0;
    for (size_t i : idx) {
        const double cy = words[i].box.cy();
        if (lines.empty() || cy - anchor > line_tolerance) {
            lines.emplace_back();
            anchor = cy;
        }
        lines.back().push_back(i);
    }
    for (auto& line : lines)
        std::stable_sort(line.begin(), line.end(), [&](size_t a, size_t b) {
            return words[a].box.x1 < words[b].box.x1;
        });

    std::vector<OcrWord> out;
    out.reserve(words.size());
    for (const auto& line : lines)
        for (size_t i : line) out.push_back(std::move(words[i]));
    return out;
}

// ----------------------------------------------------------------- JSONL io

namespace {

BBox box_from_json(const nlohmann::json& j, const std::string& where) {
    if (!j.is_array() || j.size() != 4)
        throw ValidationError(where + ": box must be an array of four numbers");
    for (const auto& v : j)
        if (!v.is_number()) throw ValidationError(where + ": box entries must be numbers");
    BBox b{j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
    if (!b.valid())
        throw ValidationError(where + ": box [" + std::to_string(b.x1) + "," + std::to_string(b.y1) +
                              "," + std::to_string(b.x2) + "," + std::to_string(b.y2) +
                              "] violates 0<=min<=max<=1");
    return b;
}

nlohmann::ordered_json box_to_json(const BBox& b) {
    return ordered_json::array({b.x1, b.y1, b.x2, b.y2});
}

Document document_from_json(const nlohmann::json& j) {
    Document doc;
    if (!j.contains("id") || !j["id"].is_string())
        throw ValidationError("document is missing a string id");
    doc.id = j["id"].get<std::string>();
    const std::string where = "document '" + doc.id + "'";

    doc.page_w = j.value("page_w", 1.0);
    doc.page_h = j.value("page_h", 1.0);
    if (!(doc.page_w > 0.0) || !(doc.page_h > 0.0))
        throw ValidationError(where + ": page extents must be positive");

    if (j.contains("words")) {
        if (!j["words"].is_array()) throw ValidationError(where + ": words must be an array");
        for (const auto& wj : j["words"]) {
            OcrWord w;
            if (!wj.contains("text") || !wj["text"].is_string() || wj["text"].get<std::string>().empty())
                throw ValidationError(where + ": word text must be a non-empty string");
            w.text = wj["text"].get<std::string>();
            if (w.text.find('\n') != std::string::npos)
                throw ValidationError(where + ": word text contains a newline");
            if (!wj.contains("box")) throw ValidationError(where + ": word is missing its box");
            w.box = box_from_json(wj["box"], where);
            doc.words.push_back(std::move(w));
        }
    }
    if (j.contains("qa")) {
        if (!j["qa"].is_array()) throw ValidationError(where + ": qa must be an array");
        for (const auto& qj : j["qa"]) {
            QaPair qa;
            if (!qj.contains("q") || !qj["q"].is_string())
                throw ValidationError(where + ": qa entry needs a string 'q'");
            if (!qj.contains("a") || !qj["a"].is_string() || qj["a"].get<std::string>().empty())
                throw ValidationError(where + ": qa entry needs a non-empty string 'a'");
            qa.question = qj["q"].get<std::string>();
            qa.answer = qj["a"].get<std::string>();
            if (qj.contains("boxes")) {
                for (const auto& bj : qj["boxes"]) qa.answer_boxes.push_back(box_from_json(bj, where));
            }
            doc.qa.push_back(std::move(qa));
        }
    }
    return doc;
}

}  // namespace

std::string document_to_json_line(const Document& doc) {
    ordered_json j;
    j["id"] = doc.id;
    j["page_w"] = doc.page_w;
    j["page_h"] = doc.page_h;
    j["words"] = ordered_json::array();
    for (const OcrWord& w : doc.words) {
        ordered_json wj;
        wj["text"] = w.text;
        wj["box"] = box_to_json(w.box);
        j["words"].push_back(std::move(wj));
    }
    j["qa"] = ordered_json::array();
    for (const QaPair& qa : doc.qa) {
        ordered_json qj;
        qj["q"] = qa.question;
        qj["a"] = qa.answer;
        if (!qa.answer_boxes.empty()) {
            qj["boxes"] = ordered_json::array();
            for (const BBox& b : qa.answer_boxes) qj["boxes"].push_back(box_to_json(b));
        }
        j["qa"].push_back(std::move(qj));
    }
    return j.dump();
}

std::vector<Document> load_documents(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open corpus file: " + path);
    std::vector<Document> docs;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        try {
            docs.push_back(document_from_json(j));
        } catch (const ValidationError& e) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
    return docs;
}

void save_documents(const std::string& path, const std::vector<Document>& docs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open output file: " + path);
    for (const Document& d : docs) out << document_to_json_line(d) << "\n";
}

// -------------------------------------------------------------- synthesizer

namespace {

const std::vector<std::string> kFieldLexicon = {
    "Total",   "Subtotal", "Tax",  "GST",  "Change", "Cash",    "Card", "Qty",
    "Price",   "Amount",   "Disc", "Tip",  "Due",    "Paid",    "Ref",  "Code",
    "Invoice", "Item",     "Rate", "Fee",  "Balance", "Round",  "Net",  "Unit",
};

const std::vector<std::string> kDecorLexicon = {
    "RECEIPT", "INVOICE", "STORE", "MART",  "SHOP",    "THANK", "YOU",   "WELCOME",
    "VISIT",   "AGAIN",   "TEL",   "NO",    "CASHIER", "TABLE", "ORDER", "COPY",
};

std::string random_amount(Rng& rng) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%d.%d", static_cast<int>(rng.below(10)),
                  static_cast<int>(rng.below(10)));
    return buf;
}

BBox word_box(double x_center, double y_top, size_t chars, double max_w) {
    const double w = std::min(0.013 * static_cast<double>(chars), max_w);
    const double h = 0.025;
    BBox b;
    b.x1 = std::clamp(x_center - 0.5 * w, 0.0, 1.0 - w);
    b.x2 = b.x1 + w;
    b.y1 = std::clamp(y_top, 0.0, 1.0 - h);
    b.y2 = b.y1 + h;
    return b;
}

struct FieldPlacement {
    std::string field;
    std::string value;
    BBox value_box;
};

// Header row of field names with the values in a second row directly below:
// reading order visits every header before any value, geometry still pairs
// them column by column.
void place_trap(Rng& rng, const std::vector<std::string>& fields,
                const std::vector<std::string>& values, std::vector<OcrWord>& words,
                std::vector<FieldPlacement>& placements) {
    const int k = static_cast<int>(fields.size());
    const double y_header = rng.uniform(0.25, 0.40);
    const double y_value = y_header + rng.uniform(0.055, 0.075);
    const double margin = 0.04;
    const double col_w = (1.0 - 2 * margin) / k;
    for (int j = 0; j < k; ++j) {
        const double xc = margin + col_w * (j + 0.5) + rng.uniform(-0.008, 0.008);
        BBox hb = word_box(xc, y_header, fields[static_cast<size_t>(j)].size(), col_w * 0.9);
        BBox vb = word_box(xc + rng.uniform(-0.004, 0.004), y_value,
                           values[static_cast<size_t>(j)].size(), col_w * 0.9);
        words.push_back({fields[static_cast<size_t>(j)], hb});
        words.push_back({values[static_cast<size_t>(j)], vb});
        placements.push_back({fields[static_cast<size_t>(j)], values[static_cast<size_t>(j)], vb});
    }
}

// One "Field Value" pair per line; reading order keeps them adjacent.
void place_inline(Rng& rng, const std::vector<std::string>& fields,
                  const std::vector<std::string>& values, std::vector<OcrWord>& words,
                  std::vector<FieldPlacement>& placements) {
    const int k = static_cast<int>(fields.size());
    double y = rng.uniform(0.22, 0.30);
    for (int j = 0; j < k; ++j) {
        const double x_field = rng.uniform(0.06, 0.14);
        BBox fb = word_box(x_field + 0.07, y, fields[static_cast<size_t>(j)].size(), 0.25);
        const double vw = std::min(0.013 * static_cast<double>(values[static_cast<size_t>(j)].size()), 0.25);
        BBox vb;
        vb.x1 = std::min(fb.x2 + 0.04, 1.0 - vw);
        vb.x2 = vb.x1 + vw;
        vb.y1 = fb.y1;
        vb.y2 = fb.y2;
        words.push_back({fields[static_cast<size_t>(j)], fb});
        words.push_back({values[static_cast<size_t>(j)], vb});
        placements.push_back({fields[static_cast<size_t>(j)], values[static_cast<size_t>(j)], vb});
        y += rng.uniform(0.055, 0.07);
    }
}

}  // namespace

std::vector<Document> synth_kv_documents(uint64_t seed, int n_docs, const SynthSpec& spec) {
    if (n_docs < 0) throw ContractError("synth_kv_documents: n_docs must be >= 0");
    if (spec.trap_fraction < 0.0 || spec.trap_fraction > 1.0)
        throw ValidationError("synth_kv_documents: trap_fraction must lie in [0,1]");
    if (spec.min_fields < 1 || spec.max_fields < spec.min_fields)
        throw ValidationError("synth_kv_documents: bad field count range");
    if (spec.max_fields > static_cast<int>(kFieldLexicon.size()))
        throw ValidationError("synth_kv_documents: max_fields exceeds the field lexicon");

    const int n_trap = static_cast<int>(std::lround(spec.trap_fraction * n_docs));
    std::vector<Document> docs;
    docs.reserve(static_cast<size_t>(n_docs));

    for (int di = 0; di < n_docs; ++di) {
        Rng rng(derive_seed(seed, static_cast<uint64_t>(di)));
        const bool trap = di < n_trap;

        const int k = static_cast<int>(rng.range(spec.min_fields, spec.max_fields));

        // distinct fields for this document
        std::vector<std::string> pool = kFieldLexicon;
        rng.shuffle(pool);
        std::vector<std::string> fields(pool.begin(), pool.begin() + k);

        // distinct values, all with the same shape so that text alone cannot
        // tell them apart
        std::set<std::string> used;
        std::vector<std::string> values;
        while (static_cast<int>(values.size()) < k) {
            std::string v = random_amount(rng);
            if (used.insert(v).second) values.push_back(std::move(v));
        }

        std::vector<OcrWord> words;
        std::vector<FieldPlacement> placements;

        // decorative header strip
        for (int i = 0; i < spec.n_distractors; ++i) {
            const std::string& w = rng.pick(kDecorLexicon);
            words.push_back({w, word_box(rng.uniform(0.1, 0.9), rng.uniform(0.02, 0.16), w.size(), 0.2)});
        }

        if (trap)
            place_trap(rng, fields, values, words, placements);
        else
            place_inline(rng, fields, values, words, placements);

        // decoy values in the lower region, textually shaped like answers
        for (int i = 0; i < spec.n_decoy_values; ++i) {
            std::string v;
            do {
                v = random_amount(rng);
            } while (!used.insert(v).second);
            words.push_back({v, word_box(rng.uniform(0.1, 0.9), rng.uniform(0.62, 0.95), v.size(), 0.2)});
        }

        Document doc;
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "synth-%06d", di);
        doc.id = idbuf;
        doc.page_w = 1000.0;
        doc.page_h = 1000.0;
        doc.words = reading_order(std::move(words));

        const int n_qa = std::min(spec.qa_per_doc, k);
        std::vector<size_t> order(placements.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        for (int i = 0; i < n_qa; ++i) {
            const FieldPlacement& p = placements[order[static_cast<size_t>(i)]];
            QaPair qa;
            qa.question = p.field;
            qa.answer = p.value;
            qa.answer_boxes = {p.value_box};
            doc.qa.push_back(std::move(qa));
        }
        docs.push_back(std::move(doc));
    }
    return docs;
}

}  // namespace laytext
