#include "laytext/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <queue>
#include <sstream>

#include <json.hpp>

#include "laytext/errors.hpp"

namespace laytext {

Scheme scheme_from_string(const std::string& s) {
    if (s == "plain") return Scheme::plain;
    if (s == "interleaved") return Scheme::interleaved;
    if (s == "coord_tokens") return Scheme::coord_tokens;
    throw ContractError("unknown scheme '" + s + "'");
}

std::string scheme_name(Scheme s) {
    switch (s) {
        case Scheme::plain: return "plain";
        case Scheme::interleaved: return "interleaved";
        case Scheme::coord_tokens: return "coord_tokens";
    }
    throw ContractError("unknown scheme value");
}

namespace {
inline uint64_t pack_pair(int l, int r) {
    return (static_cast<uint64_t>(static_cast<uint32_t>(l)) << 32) | static_cast<uint32_t>(r);
}
}  // namespace

Vocab::Vocab(std::vector<std::pair<int, int>> merges) : merges_(std::move(merges)) {
    rebuild_tables();
}

void Vocab::rebuild_tables() {
    token_bytes_.assign(merges_.size(), {});
    merge_lookup_.clear();
    for (size_t i = 0; i < merges_.size(); ++i) {
        const auto [l, r] = merges_[i];
        const int id = kBaseSize + static_cast<int>(i);
        if (l < 0 || r < 0 || l >= id || r >= id || (l >= kBytes && l < kBaseSize) ||
            (r >= kBytes && r < kBaseSize))
            throw ValidationError("vocab merge " + std::to_string(i) + " references invalid ids");
        token_bytes_[i] = token_bytes(l) + token_bytes(r);
        merge_lookup_[pack_pair(l, r)] = id;
    }
}

std::string Vocab::token_bytes(int id) const {
    if (id < 0 || id >= size()) throw ContractError("token id out of range: " + std::to_string(id));
    if (id < kBytes) return std::string(1, static_cast<char>(static_cast<unsigned char>(id)));
    if (id < kBaseSize) return {};  // specials carry no bytes
    return token_bytes_[static_cast<size_t>(id - kBaseSize)];
}

namespace {

struct Symbol {
    int id;
    int prev, next;  // -1 terminated linked list
    bool alive;
};

struct Bigram {
    int rank;  // merged id; smaller merges first
    int left;  // position of the left symbol
    int left_id, right_id;
};

struct BigramOrder {
    bool operator()(const Bigram& a, const Bigram& b) const {
        if (a.rank != b.rank) return a.rank > b.rank;
        return a.left > b.left;
    }
};

}  // namespace

static std::vector<int> bpe_encode_bytes(std::string_view text,
                                         const std::unordered_map<uint64_t, int>& lookup) {
    std::vector<int> out;
    if (text.empty()) return out;
    std::vector<Symbol> syms;
    syms.reserve(text.size());
    for (size_t i = 0; i < text.size(); ++i)
        syms.push_back({static_cast<int>(static_cast<unsigned char>(text[i])),
                        static_cast<int>(i) - 1,
                        i + 1 < text.size() ? static_cast<int>(i) + 1 : -1, true});

    std::priority_queue<Bigram, std::vector<Bigram>, BigramOrder> queue;
    auto try_push = [&](int left) {
        if (left < 0) return;
        const int right = syms[static_cast<size_t>(left)].next;
        if (right < 0) return;
        const auto it = lookup.find(pack_pair(syms[static_cast<size_t>(left)].id,
                                              syms[static_cast<size_t>(right)].id));
        if (it == lookup.end()) return;
        queue.push({it->second, left, syms[static_cast<size_t>(left)].id,
                    syms[static_cast<size_t>(right)].id});
    };
    for (size_t i = 0; i + 1 < syms.size(); ++i) try_push(static_cast<int>(i));

    while (!queue.empty()) {
        const Bigram bg = queue.top();
        queue.pop();
        Symbol& l = syms[static_cast<size_t>(bg.left)];
        if (!l.alive || l.id != bg.left_id || l.next < 0) continue;
        Symbol& r = syms[static_cast<size_t>(l.next)];
        if (!r.alive || r.id != bg.right_id) continue;
        l.id = bg.rank;
        r.alive = false;
        l.next = r.next;
        if (r.next >= 0) syms[static_cast<size_t>(r.next)].prev = bg.left;
        try_push(l.prev);
        try_push(bg.left);
    }

    for (const Symbol& s : syms)
        if (s.alive) out.push_back(s.id);
    return out;
}

std::vector<int> Vocab::encode_word(std::string_view word) const {
    return bpe_encode_bytes(word, merge_lookup_);
}

std::vector<int> Vocab::encode_text(std::string_view text) const {
    return bpe_encode_bytes(text, merge_lookup_);
}

std::string Vocab::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id >= kBytes && id < kBaseSize) continue;
        out += token_bytes(id);
    }
    return out;
}

std::string Vocab::to_json() const {
    nlohmann::ordered_json j;
    j["merges"] = nlohmann::ordered_json::array();
    for (const auto& [l, r] : merges_) j["merges"].push_back({l, r});
    j["specials"] = {{"bos", kBos}, {"eos", kEos}, {"pad", kPad}, {"box", kBox}};
    return j.dump();
}

Vocab Vocab::from_json(const std::string& json_text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(json_text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("vocab json: ") + e.what());
    }
    if (!j.contains("merges") || !j["merges"].is_array())
        throw ValidationError("vocab json: missing merges array");
    std::vector<std::pair<int, int>> merges;
    for (const auto& m : j["merges"]) {
        if (!m.is_array() || m.size() != 2) throw ValidationError("vocab json: malformed merge entry");
        merges.emplace_back(m[0].get<int>(), m[1].get<int>());
    }
    if (j.contains("specials")) {
        const auto& sp = j["specials"];
        if (sp.value("bos", kBos) != kBos || sp.value("eos", kEos) != kEos ||
            sp.value("pad", kPad) != kPad || sp.value("box", kBox) != kBox)
            throw ValidationError("vocab json: special id layout mismatch");
    }
    return Vocab(std::move(merges));
}

void Vocab::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open vocab output: " + path);
    out << to_json() << "\n";
}

Vocab Vocab::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open vocab file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_json(ss.str());
}

Vocab train_bpe(const std::vector<std::string>& texts, int vocab_size) {
    if (vocab_size < Vocab::kBaseSize)
        throw ContractError("train_bpe: vocab_size must be at least " +
                            std::to_string(Vocab::kBaseSize));
    std::vector<std::vector<int>> seqs;
    seqs.reserve(texts.size());
    size_t total = 0;
    for (const std::string& t : texts) {
        std::vector<int> s;
        s.reserve(t.size());
        for (char c : t) s.push_back(static_cast<int>(static_cast<unsigned char>(c)));
        total += s.size();
        seqs.push_back(std::move(s));
    }
    if (total == 0 && vocab_size > Vocab::kBaseSize)
        throw ContractError("train_bpe: empty corpus cannot support merges");

    std::vector<std::pair<int, int>> merges;
    const int target_merges = vocab_size - Vocab::kBaseSize;
    std::unordered_map<uint64_t, int64_t> counts;
    while (static_cast<int>(merges.size()) < target_merges) {
        counts.clear();
        for (const auto& s : seqs)
            for (size_t i = 0; i + 1 < s.size(); ++i) ++counts[pack_pair(s[i], s[i + 1])];

        int64_t best_count = 0;
        uint64_t best_pair = 0;
        bool found = false;
        for (const auto& [pair, count] : counts) {
            if (!found || count > best_count || (count == best_count && pair < best_pair)) {
                best_count = count;
                best_pair = pair;
                found = true;
            }
        }
        if (!found || best_count < 2) break;  // no pair repeats

        const int l = static_cast<int>(best_pair >> 32);
        const int r = static_cast<int>(best_pair & 0xffffffffu);
        const int merged = Vocab::kBaseSize + static_cast<int>(merges.size());
        merges.emplace_back(l, r);

        for (auto& s : seqs) {
            size_t w = 0;
            for (size_t i = 0; i < s.size();) {
                if (i + 1 < s.size() && s[i] == l && s[i + 1] == r) {
                    s[w++] = merged;
                    i += 2;
                } else {
                    s[w++] = s[i++];
                }
            }
            s.resize(w);
        }
    }
    return Vocab(std::move(merges));
}

int quantize_percent(double coord) {
    return static_cast<int>(std::floor(coord * 100.0 + 0.5));
}

std::string format_box_percent(const BBox& box) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "[%d,%d,%d,%d]", quantize_percent(box.x1), quantize_percent(box.y1),
                  quantize_percent(box.x2), quantize_percent(box.y2));
    return buf;
}

int64_t seqlen_report(const Document& doc, const Vocab& vocab, Scheme scheme) {
    switch (scheme) {
        case Scheme::plain: {
            int64_t n = 0;
            for (const OcrWord& w : doc.words) n += static_cast<int64_t>(vocab.encode_word(w.text).size());
            return n;
        }
        case Scheme::interleaved:
            return seqlen_report(doc, vocab, Scheme::plain) + static_cast<int64_t>(doc.words.size());
        case Scheme::coord_tokens: {
            std::string dump;
            for (size_t i = 0; i < doc.words.size(); ++i) {
                if (i) dump += ' ';
                dump += doc.words[i].text;
                dump += format_box_percent(doc.words[i].box);
            }
            return static_cast<int64_t>(vocab.encode_text(dump).size());
        }
    }
    throw ContractError("seqlen_report: unknown scheme");
}

}  // namespace laytext
