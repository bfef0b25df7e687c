#pragma once

#include <map>
#include <string>
#include <vector>

#include "laytext/model.hpp"

namespace laytext {

// Matching normalization: case-fold, trim, collapse internal whitespace.
std::string normalize_answer(const std::string& s);

int levenshtein(const std::string& a, const std::string& b);

// 1 iff the normalized gold string appears inside the normalized prediction.
int accuracy_contains(const std::string& prediction, const std::string& gold);

// Normalized Levenshtein similarity, zeroed below tau. Empty vs empty is 1.
double anls(const std::string& prediction, const std::string& gold, double tau = 0.5);

struct F1 {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

using Entity = std::pair<std::string, std::string>;  // (field, value)

// Multiset exact matching on (field, normalized value); f1 = 0 when P+R = 0.
F1 kie_f1(const std::vector<Entity>& predicted, const std::vector<Entity>& gold);

struct GroundedItem {
    std::string value;
    BBox box;
};

// A prediction matches a gold item iff the normalized values are equal and
// box IoU >= iou_min; one-to-one greedy matching by descending IoU.
F1 grounded_f1(const std::vector<GroundedItem>& predicted, const std::vector<GroundedItem>& gold,
               double iou_min = 0.5);

struct EvalRecord {
    std::string doc_id;
    std::string question;
    std::string gold;
    std::string prediction;
    int64_t prompt_len = 0;
    std::map<std::string, double> scores;  // per-example metrics
};

struct EvalReport {
    std::string scheme;
    bool grounded = false;
    std::vector<EvalRecord> records;
    std::map<std::string, double> aggregates;
    double mean_prompt_len = 0.0;
};

struct EvalOptions {
    bool shuffle_inputs = false;  // permute every document's words before prompting
    uint64_t seed = 0;
    int max_new_tokens = 32;
    bool grounded = false;  // expect grounded output and score box fidelity
};

// Builds one prompt per QA pair under the scheme, decodes greedily, scores
// with every applicable metric, and records prompt token lengths.
EvalReport evaluate(const ModelParams& params, const Vocab& vocab,
                    const std::vector<Document>& docs, Scheme scheme, const EvalOptions& opts = {});

// Scoring path alone; lets tests inject oracle predictions. gold_grounded is
// consulted only when grounded is set.
EvalReport finalize_report(const std::string& scheme_label, bool grounded,
                           std::vector<EvalRecord> records,
                           const std::vector<GroundedItem>& gold_grounded = {});

// One row per (report, aggregate metric): scheme, mean prompt length, value.
std::string perf_vs_length_csv(const std::vector<EvalReport>& reports);

void write_report_json(const EvalReport& report, const std::string& path);
void write_report_csv(const EvalReport& report, const std::string& path);
void write_predictions_jsonl(const EvalReport& report, const std::string& path);

}  // namespace laytext
