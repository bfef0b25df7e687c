#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "laytext/corpus.hpp"

namespace laytext {

// Input serialization schemes compared throughout the toolkit:
//   plain        - word-level text tokens only
//   interleaved  - one BOX slot ahead of each word's text tokens
//   coord_tokens - coordinates spelled out as text, "word[x1,y1,x2,y2]"
enum class Scheme { plain, interleaved, coord_tokens };

Scheme scheme_from_string(const std::string& s);
std::string scheme_name(Scheme s);

// Byte-level BPE vocabulary. Ids 0..255 are raw bytes, then BOS/EOS/PAD/BOX,
// then one id per learned merge. Byte fallback makes decode(encode(s)) == s
// for every string; text encoding never emits a special id.
class Vocab {
public:
    static constexpr int kBytes = 256;
    static constexpr int kBos = 256;
    static constexpr int kEos = 257;
    static constexpr int kPad = 258;
    static constexpr int kBox = 259;
    static constexpr int kBaseSize = 260;

    Vocab() = default;
    explicit Vocab(std::vector<std::pair<int, int>> merges);

    int size() const { return kBaseSize + static_cast<int>(merges_.size()); }
    int bos() const { return kBos; }
    int eos() const { return kEos; }
    int pad() const { return kPad; }
    int box() const { return kBox; }
    const std::vector<std::pair<int, int>>& merges() const { return merges_; }

    // Applies merges within the single word only.
    std::vector<int> encode_word(std::string_view word) const;
    // Applies merges over the full string, separators included.
    std::vector<int> encode_text(std::string_view text) const;

    // Inverse of encoding; special ids decode to nothing.
    std::string decode(std::span<const int> ids) const;
    std::string token_bytes(int id) const;

    std::string to_json() const;
    static Vocab from_json(const std::string& json_text);
    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

private:
    std::vector<std::pair<int, int>> merges_;
    std::vector<std::string> token_bytes_;            // merged id -> byte expansion
    std::unordered_map<uint64_t, int> merge_lookup_;  // packed (l,r) -> merged id

    void rebuild_tables();
};

// Greedy highest-frequency pair merging until vocab_size is reached or no
// adjacent pair occurs twice. Ties break toward the smaller id pair.
Vocab train_bpe(const std::vector<std::string>& texts, int vocab_size);

// Token count of one document under a scheme:
//   plain        = sum of per-word token counts
//   interleaved  = plain + one BOX slot per word
//   coord_tokens = whole-text encoding of the space-joined "word[x,y,x,y]" dump
int64_t seqlen_report(const Document& doc, const Vocab& vocab, Scheme scheme);

// "[x1,y1,x2,y2]" with integer percent coordinates, round(c*100).
std::string format_box_percent(const BBox& box);
int quantize_percent(double coord);

}  // namespace laytext
