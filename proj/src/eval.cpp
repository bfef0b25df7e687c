#include "laytext/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "laytext/errors.hpp"

namespace laytext {

std::string normalize_answer(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool in_space = true;  // swallow leading whitespace
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_space) out += ' ';
            in_space = true;
        } else {
            out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

int levenshtein(const std::string& a, const std::string& b) {
    const size_t n = a.size(), m = b.size();
    std::vector<int> row(m + 1);
    std::iota(row.begin(), row.end(), 0);
    for (size_t i = 1; i <= n; ++i) {
        int diag = row[0];
        row[0] = static_cast<int>(i);
        for (size_t j = 1; j <= m; ++j) {
            const int sub = diag + (a[i - 1] == b[j - 1] ? 0 : 1);
            diag = row[j];
            row[j] = std::min({row[j] + 1, row[j - 1] + 1, sub});
        }
    }
    return row[m];
}

int accuracy_contains(const std::string& prediction, const std::string& gold) {
    const std::string p = normalize_answer(prediction), g = normalize_answer(gold);
    if (g.empty()) return 1;
    return p.find(g) != std::string::npos ? 1 : 0;
}

double anls(const std::string& prediction, const std::string& gold, double tau) {
    const std::string p = normalize_answer(prediction), g = normalize_answer(gold);
    if (p.empty() && g.empty()) return 1.0;
    const size_t maxlen = std::max(p.size(), g.size());
    const double s = 1.0 - static_cast<double>(levenshtein(p, g)) / static_cast<double>(maxlen);
    return s >= tau ? s : 0.0;
}

F1 kie_f1(const std::vector<Entity>& predicted, const std::vector<Entity>& gold) {
    std::map<Entity, int> want;
    for (const Entity& e : gold) ++want[{normalize_answer(e.first), normalize_answer(e.second)}];
    int matches = 0;
    for (const Entity& e : predicted) {
        auto it = want.find({normalize_answer(e.first), normalize_answer(e.second)});
        if (it != want.end() && it->second > 0) {
            --it->second;
            ++matches;
        }
    }
    F1 r;
    r.precision = predicted.empty() ? 0.0 : static_cast<double>(matches) / predicted.size();
    r.recall = gold.empty() ? 0.0 : static_cast<double>(matches) / gold.size();
    r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                          : 0.0;
    return r;
}

F1 grounded_f1(const std::vector<GroundedItem>& predicted, const std::vector<GroundedItem>& gold,
               double iou_min) {
    struct Cand {
        double iou;
        size_t pi, gi;
    };
    std::vector<Cand> cands;
    for (size_t pi = 0; pi < predicted.size(); ++pi)
        for (size_t gi = 0; gi < gold.size(); ++gi) {
            if (normalize_answer(predicted[pi].value) != normalize_answer(gold[gi].value)) continue;
            const double v = iou(predicted[pi].box, gold[gi].box);
            if (v >= iou_min) cands.push_back({v, pi, gi});
        }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.pi != b.pi) return a.pi < b.pi;
        return a.gi < b.gi;
    });
    std::vector<uint8_t> p_used(predicted.size(), 0), g_used(gold.size(), 0);
    int matches = 0;
    for (const Cand& c : cands) {
        if (p_used[c.pi] || g_used[c.gi]) continue;
        p_used[c.pi] = g_used[c.gi] = 1;
        ++matches;
    }
    F1 r;
    r.precision = predicted.empty() ? 0.0 : static_cast<double>(matches) / predicted.size();
    r.recall = gold.empty() ? 0.0 : static_cast<double>(matches) / gold.size();
    r.f1 = (r.precision + r.recall) > 0.0 ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
                                          : 0.0;
    return r;
}

// ------------------------------------------------------------------ reports

EvalReport finalize_report(const std::string& scheme_label, bool grounded,
                           std::vector<EvalRecord> records,
                           const std::vector<GroundedItem>& gold_grounded) {
    EvalReport rep;
    rep.scheme = scheme_label;
    rep.grounded = grounded;

    double acc = 0, len = 0;
    std::vector<double> anls_values;  // summed in sorted order so aggregates
                                      // are exactly permutation-invariant
    std::vector<Entity> pred_entities, gold_entities;
    std::vector<GroundedItem> pred_grounded;
    for (EvalRecord& r : records) {
        r.scores["accuracy"] = accuracy_contains(r.prediction, r.gold);
        r.scores["anls"] = anls(r.prediction, r.gold);
        acc += r.scores["accuracy"];
        anls_values.push_back(r.scores["anls"]);
        len += static_cast<double>(r.prompt_len);
        pred_entities.emplace_back(r.question, r.prediction);
        gold_entities.emplace_back(r.question, r.gold);
        if (grounded) {
            GroundedParse parsed = parse_grounded_output(r.prediction);
            r.scores["parse_diagnostics"] = static_cast<double>(parsed.diagnostics.size());
            for (const GroundedSpan& s : parsed.spans)
                if (s.box) pred_grounded.push_back({s.text, *s.box});
        }
    }
    std::sort(anls_values.begin(), anls_values.end());
    double nls = 0;
    for (double v : anls_values) nls += v;
    const double n = records.empty() ? 1.0 : static_cast<double>(records.size());
    rep.mean_prompt_len = len / n;
    rep.aggregates["accuracy"] = acc / n;
    rep.aggregates["anls"] = nls / n;
    const F1 f = kie_f1(pred_entities, gold_entities);
    rep.aggregates["precision"] = f.precision;
    rep.aggregates["recall"] = f.recall;
    rep.aggregates["f1"] = f.f1;
    if (grounded) {
        const F1 gf = grounded_f1(pred_grounded, gold_grounded);
        rep.aggregates["grounded_precision"] = gf.precision;
        rep.aggregates["grounded_recall"] = gf.recall;
        rep.aggregates["grounded_f1"] = gf.f1;
    }
    rep.aggregates["mean_prompt_len"] = rep.mean_prompt_len;
    rep.records = std::move(records);
    return rep;
}

EvalReport evaluate(const ModelParams& params, const Vocab& vocab,
                    const std::vector<Document>& docs, Scheme scheme, const EvalOptions& opts) {
    if (vocab.size() > params.config.vocab_size)
        throw ContractError("evaluate: vocabulary of size " + std::to_string(vocab.size()) +
                            " does not fit the model's vocab_size " +
                            std::to_string(params.config.vocab_size));
    std::vector<EvalRecord> records;
    std::vector<GroundedItem> gold_grounded;
    size_t example_index = 0;
    for (const Document& doc : docs) {
        for (const QaPair& qa : doc.qa) {
            SftOptions sopts;
            sopts.shuffled = opts.shuffle_inputs;
            sopts.grounded_output = opts.grounded;
            sopts.shuffle_seed = derive_seed(opts.seed, example_index);
            InterleavedSample prompt =
                build_qa_prompt(doc, qa, vocab, scheme, sopts, params.config.max_seq_len - opts.max_new_tokens);
            std::vector<int> out_ids = generate(params, prompt, vocab.eos(), opts.max_new_tokens);

            EvalRecord rec;
            rec.doc_id = doc.id;
            rec.question = qa.question;
            rec.gold = opts.grounded ? grounded_answer_string(qa) : qa.answer;
            rec.prediction = vocab.decode(out_ids);
            rec.prompt_len = prompt.size();
            records.push_back(std::move(rec));

            if (opts.grounded)
                for (const BBox& b : qa.answer_boxes) gold_grounded.push_back({qa.answer, b});
            ++example_index;
        }
    }
    return finalize_report(scheme_name(scheme), opts.grounded, std::move(records), gold_grounded);
}

namespace {
std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}
}  // namespace

std::string perf_vs_length_csv(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw ContractError("perf_vs_length_csv: need at least one report");
    std::string csv = "scheme,mean_prompt_len,metric,value\n";
    for (const EvalReport& r : reports)
        for (const auto& [metric, value] : r.aggregates) {
            if (metric == "mean_prompt_len") continue;
            csv += r.scheme + "," + fmt_double(r.mean_prompt_len) + "," + metric + "," +
                   fmt_double(value) + "\n";
        }
    return csv;
}

namespace {
nlohmann::ordered_json record_to_json(const EvalRecord& r) {
    nlohmann::ordered_json j;
    j["id"] = r.doc_id;
    j["q"] = r.question;
    j["gold"] = r.gold;
    j["pred"] = r.prediction;
    j["len"] = r.prompt_len;
    j["scores"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.scores) j["scores"][k] = v;
    return j;
}
}  // namespace

void write_report_json(const EvalReport& report, const std::string& path) {
    nlohmann::ordered_json j;
    j["scheme"] = report.scheme;
    j["grounded"] = report.grounded;
    j["mean_prompt_len"] = report.mean_prompt_len;
    j["aggregates"] = nlohmann::ordered_json::object();
    for (const auto& [k, v] : report.aggregates) j["aggregates"][k] = v;
    j["records"] = nlohmann::ordered_json::array();
    for (const EvalRecord& r : report.records) j["records"].push_back(record_to_json(r));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open report output: " + path);
    // raw model output may not be valid UTF-8; replace bad sequences
    out << j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
}

void write_report_csv(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open report output: " + path);
    out << "scheme,metric,value\n";
    for (const auto& [k, v] : report.aggregates)
        out << report.scheme << "," << k << "," << fmt_double(v) << "\n";
}

void write_predictions_jsonl(const EvalReport& report, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open predictions output: " + path);
    for (const EvalRecord& r : report.records)
        out << record_to_json(r).dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << "\n";
}

}  // namespace laytext
