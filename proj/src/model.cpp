#include "laytext/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "laytext/errors.hpp"
#include "laytext/rng.hpp"

namespace laytext {

void ModelConfig::validate() const {
    if (d_model < 2 || n_layers < 1 || n_heads < 1)
        throw ContractError("model config: dimensions must be positive");
    if (d_model % n_heads != 0)
        throw ContractError("model config: d_model must be divisible by n_heads");
    if (head_dim() % 2 != 0)
        throw ContractError("model config: head dimension must be even for rotary embeddings");
    if (vocab_size < 2) throw ContractError("model config: vocab_size must be positive");
    if (plora_rank < 1 || plora_rank >= d_model)
        throw ContractError("model config: adapter rank must satisfy 0 < rank < d_model");
    if (max_seq_len < 2) throw ContractError("model config: max_seq_len too small");
    if (mlp_mult < 1) throw ContractError("model config: mlp_mult must be positive");
    if (!(rope_base > 1.0)) throw ContractError("model config: rope_base must exceed 1");
    if (!(init_std > 0.0)) throw ContractError("model config: init_std must be positive");
}

std::string ModelConfig::to_json() const {
    nlohmann::ordered_json j;
    j["d_model"] = d_model;
    j["n_layers"] = n_layers;
    j["n_heads"] = n_heads;
    j["vocab_size"] = vocab_size;
    j["plora_rank"] = plora_rank;
    j["max_seq_len"] = max_seq_len;
    j["rope_base"] = rope_base;
    j["mlp_mult"] = mlp_mult;
    j["init_std"] = init_std;
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("model config: ") + e.what());
    }
    ModelConfig c;
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.plora_rank = j.value("plora_rank", c.plora_rank);
    c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
    c.rope_base = j.value("rope_base", c.rope_base);
    c.mlp_mult = j.value("mlp_mult", c.mlp_mult);
    c.init_std = j.value("init_std", c.init_std);
    c.validate();
    return c;
}

// ------------------------------------------------------------- param set

namespace {

template <class Params, class Fn>
void visit_params(Params& p, Fn&& fn) {
    auto visit_linear = [&](const std::string& base, auto& lin) {
        fn(base + ".w", lin.w);
        fn(base + ".bias", lin.bias);
        fn(base + ".lora_a", lin.adapter.a);
        fn(base + ".lora_b", lin.adapter.b);
    };
    fn("embedding", p.embedding);
    fn("slp.w", p.slp.w);
    fn("slp.b", p.slp.b);
    for (size_t li = 0; li < p.layers.size(); ++li) {
        auto& L = p.layers[li];
        const std::string pre = "layers." + std::to_string(li) + ".";
        fn(pre + "attn_norm", L.attn_norm);
        visit_linear(pre + "wq", L.wq);
        visit_linear(pre + "wk", L.wk);
        visit_linear(pre + "wv", L.wv);
        visit_linear(pre + "wo", L.wo);
        fn(pre + "mlp_norm", L.mlp_norm);
        visit_linear(pre + "w_up", L.w_up);
        visit_linear(pre + "w_down", L.w_down);
    }
    fn("final_norm", p.final_norm);
    fn("lm_head", p.lm_head);
}

bool is_adapter_or_slp(const std::string& name) {
    return name.rfind("slp.", 0) == 0 || name.find(".lora_") != std::string::npos;
}

}  // namespace

std::vector<std::pair<std::string, Tensor*>> ModelParams::named_params() {
    std::vector<std::pair<std::string, Tensor*>> out;
    visit_params(*this, [&](const std::string& n, Tensor& t) { out.emplace_back(n, &t); });
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> ModelParams::named_params() const {
    std::vector<std::pair<std::string, const Tensor*>> out;
    visit_params(*this, [&](const std::string& n, const Tensor& t) { out.emplace_back(n, &t); });
    return out;
}

std::vector<Tensor> ModelParams::all_params() {
    std::vector<Tensor> out;
    visit_params(*this, [&](const std::string&, Tensor& t) { out.push_back(t); });
    return out;
}

std::vector<Tensor> ModelParams::slp_and_adapter_params() {
    std::vector<Tensor> out;
    visit_params(*this, [&](const std::string& n, Tensor& t) {
        if (is_adapter_or_slp(n)) out.push_back(t);
    });
    return out;
}

std::vector<Tensor> ModelParams::backbone_params() {
    std::vector<Tensor> out;
    visit_params(*this, [&](const std::string& n, Tensor& t) {
        if (!is_adapter_or_slp(n)) out.push_back(t);
    });
    return out;
}

int64_t ModelParams::adapter_param_count() const {
    int64_t n = 0;
    visit_params(*this, [&](const std::string& name, const Tensor& t) {
        if (name.find(".lora_") != std::string::npos) n += t.numel();
    });
    return n;
}

int64_t ModelParams::total_param_count() const {
    int64_t n = 0;
    visit_params(*this, [&](const std::string&, const Tensor& t) { n += t.numel(); });
    return n;
}

ModelParams ModelParams::clone() const {
    ModelParams out;
    out.config = config;
    out.layers.resize(layers.size());
    auto src = named_params();
    auto dst = out.named_params();
    for (size_t i = 0; i < src.size(); ++i) {
        if (src[i].first != dst[i].first) throw ContractError("clone: parameter layout mismatch");
        *dst[i].second = src[i].second->clone(true);
    }
    return out;
}

namespace {

Tensor init_normal(Rng& rng, Shape shape, double stddev) {
    std::vector<double> d(static_cast<size_t>(shape_numel(shape)));
    for (double& v : d) v = rng.normal(0.0, stddev);
    return Tensor::from(std::move(shape), std::move(d), true);
}

AdaptedLinear init_linear(Rng& rng, int out, int in, int rank, double stddev) {
    AdaptedLinear lin;
    lin.w = init_normal(rng, {out, in}, stddev);
    lin.bias = Tensor::zeros({out}, true);
    lin.adapter.a = init_normal(rng, {rank, in}, stddev);
    lin.adapter.b = Tensor::zeros({out, rank}, true);  // adapters start as a no-op
    return lin;
}

}  // namespace

ModelParams init_params(const ModelConfig& config, uint64_t seed) {
    config.validate();
    const double stddev = config.init_std;
    Rng rng(derive_seed(seed, 0xdeadd0d0ull));

    ModelParams p;
    p.config = config;
    p.embedding = init_normal(rng, {config.vocab_size, config.d_model}, stddev);
    p.slp.w = init_normal(rng, {config.d_model, 4}, stddev);
    p.slp.b = Tensor::zeros({config.d_model}, true);
    for (int li = 0; li < config.n_layers; ++li) {
        LayerParams L;
        L.attn_norm = Tensor::full({config.d_model}, 1.0, true);
        L.wq = init_linear(rng, config.d_model, config.d_model, config.plora_rank, stddev);
        L.wk = init_linear(rng, config.d_model, config.d_model, config.plora_rank, stddev);
        L.wv = init_linear(rng, config.d_model, config.d_model, config.plora_rank, stddev);
        L.wo = init_linear(rng, config.d_model, config.d_model, config.plora_rank, stddev);
        L.mlp_norm = Tensor::full({config.d_model}, 1.0, true);
        L.w_up = init_linear(rng, config.mlp_hidden(), config.d_model, config.plora_rank, stddev);
        L.w_down = init_linear(rng, config.d_model, config.mlp_hidden(), config.plora_rank, stddev);
        p.layers.push_back(std::move(L));
    }
    p.final_norm = Tensor::full({config.d_model}, 1.0, true);
    p.lm_head = init_normal(rng, {config.vocab_size, config.d_model}, stddev);
    return p;
}

// ---------------------------------------------------------------- forward

Tensor slp_project(const BBox& box, const SlpParams& slp) {
    Tensor c = Tensor::from({1, 4}, {box.x1, box.y1, box.x2, box.y2});
    Tensor z = linear(c, slp.w, slp.b);
    // flatten to a plain embedding vector
    Tensor out = z;
    out.node()->shape = {slp.w.dim(0)};
    return out;
}

namespace {

Tensor adapted_linear(const Tensor& x, const AdaptedLinear& lin, const std::vector<int>& box_rows) {
    Tensor base = linear(x, lin.w, lin.bias);
    if (box_rows.empty()) return base;
    Tensor xb = gather_rows(x, box_rows);
    Tensor delta = matmul_nt(matmul_nt(xb, lin.adapter.a), lin.adapter.b);
    return masked_row_add(base, delta, box_rows);
}

}  // namespace

Tensor plora_forward(const Tensor& x, const std::vector<uint8_t>& modality_mask,
                     const AdaptedLinear& layer) {
    if (static_cast<int>(modality_mask.size()) != x.dim(0))
        throw DimensionError("plora_forward: modality mask length must match rows");
    std::vector<int> box_rows;
    for (size_t i = 0; i < modality_mask.size(); ++i)
        if (modality_mask[i]) box_rows.push_back(static_cast<int>(i));
    return adapted_linear(x, layer, box_rows);
}

Tensor forward(const InterleavedSample& sample, const ModelParams& params) {
    const ModelConfig& cfg = params.config;
    const int t = sample.size();
    if (t < 1) throw ContractError("forward: empty sample");
    if (t > cfg.max_seq_len)
        throw ContractError("forward: sample length " + std::to_string(t) +
                            " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    for (int id : sample.ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw ContractError("forward: token id " + std::to_string(id) +
                                " outside vocab_size " + std::to_string(cfg.vocab_size));

    const std::vector<int> box_rows = sample.box_positions();

    Tensor x = embed_rows(params.embedding, sample.ids);
    if (!box_rows.empty()) {
        std::vector<double> coords;
        coords.reserve(box_rows.size() * 4);
        for (const auto& [pos, box] : sample.box_values) {
            coords.push_back(box.x1);
            coords.push_back(box.y1);
            coords.push_back(box.x2);
            coords.push_back(box.y2);
        }
        Tensor c = Tensor::from({static_cast<int>(box_rows.size()), 4}, std::move(coords));
        Tensor z = linear(c, params.slp.w, params.slp.b);
        x = row_replace(x, z, box_rows);
    }

    const int hd = cfg.head_dim();
    const double inv_sqrt_hd = 1.0 / std::sqrt(static_cast<double>(hd));

    for (const LayerParams& L : params.layers) {
        Tensor h = rmsnorm(x, L.attn_norm);
        Tensor q = adapted_linear(h, L.wq, box_rows);
        Tensor k = adapted_linear(h, L.wk, box_rows);
        Tensor v = adapted_linear(h, L.wv, box_rows);

        std::vector<Tensor> heads;
        heads.reserve(static_cast<size_t>(cfg.n_heads));
        for (int hi = 0; hi < cfg.n_heads; ++hi) {
            Tensor qh = rope_rows(slice_cols(q, hi * hd, hd), cfg.rope_base);
            Tensor kh = rope_rows(slice_cols(k, hi * hd, hd), cfg.rope_base);
            Tensor vh = slice_cols(v, hi * hd, hd);
            Tensor probs = causal_softmax(scale(matmul_nt(qh, kh), inv_sqrt_hd));
            heads.push_back(matmul(probs, vh));
        }
        Tensor attn = adapted_linear(concat_cols(heads), L.wo, box_rows);
        x = add(x, attn);

        Tensor h2 = rmsnorm(x, L.mlp_norm);
        Tensor up = silu(adapted_linear(h2, L.w_up, box_rows));
        Tensor down = adapted_linear(up, L.w_down, box_rows);
        x = add(x, down);
    }

    return linear(rmsnorm(x, params.final_norm), params.lm_head);
}

std::vector<int> generate(const ModelParams& params, const InterleavedSample& prompt, int eos_id,
                          int max_new_tokens) {
    const int cap = params.config.max_seq_len;
    if (prompt.size() >= cap)
        throw ContractError("generate: prompt of length " + std::to_string(prompt.size()) +
                            " leaves no room in a " + std::to_string(cap) + "-token window");
    NoGradGuard ng;
    InterleavedSample work = prompt;
    std::vector<int> out;
    const int budget = std::min(max_new_tokens, cap - prompt.size());
    for (int step = 0; step < budget; ++step) {
        Tensor logits = forward(work, params);
        const int t = work.size();
        const int v = params.config.vocab_size;
        const double* row = logits.data().data() + static_cast<int64_t>(t - 1) * v;
        int best = 0;
        for (int j = 1; j < v; ++j)
            if (row[j] > row[best]) best = j;  // ties keep the smallest id
        if (best == eos_id) break;
        out.push_back(best);
        work.ids.push_back(best);
        work.modality_mask.push_back(0);
        work.loss_mask.push_back(0);
    }
    return out;
}

// ------------------------------------------------------- grounded parsing

GroundedParse parse_grounded_output(const std::string& text) {
    GroundedParse result;
    std::string cur;
    size_t i = 0;
    const size_t n = text.size();
    while (i < n) {
        if (text[i] != '[') {
            cur += text[i++];
            continue;
        }
        // try to read "[int,int,int,int]" with ints in 0..100
        size_t j = i + 1;
        int vals[4];
        bool ok = true;
        for (int vi = 0; vi < 4 && ok; ++vi) {
            size_t start = j;
            while (j < n && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
            if (j == start || j - start > 3) {
                ok = false;
                break;
            }
            vals[vi] = std::stoi(text.substr(start, j - start));
            if (vals[vi] > 100) {
                ok = false;
                break;
            }
            const char expect = vi < 3 ? ',' : ']';
            if (j >= n || text[j] != expect) {
                ok = false;
                break;
            }
            ++j;
        }
        BBox box;
        if (ok) {
            box = BBox{vals[0] / 100.0, vals[1] / 100.0, vals[2] / 100.0, vals[3] / 100.0};
            if (!box.valid()) ok = false;  // reversed extents from an untrusted model
        }
        if (ok) {
            result.spans.push_back({cur, box});
            cur.clear();
            i = j;
        } else {
            result.diagnostics.push_back("malformed coordinate group at offset " + std::to_string(i) +
                                         ": treated as text");
            cur += text[i++];
        }
    }
    if (!cur.empty()) result.spans.push_back({cur, std::nullopt});
    return result;
}

// ------------------------------------------------------------- checkpoints

namespace {
constexpr char kMagic[8] = {'L', 'T', 'X', 'C', 'K', 'P', 'T', '1'};

void write_u64(std::ofstream& out, uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint64_t read_u64(std::ifstream& in) {
    uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
}
}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params, const Vocab& vocab,
                     const CheckpointExtras* extras) {
    nlohmann::ordered_json header;
    header["format_version"] = 1;
    header["config"] = nlohmann::json::parse(params.config.to_json());
    header["vocab"] = nlohmann::json::parse(vocab.to_json());
    header["meta"] = extras ? nlohmann::json::parse(extras->meta_json) : nlohmann::json::object();
    header["tensors"] = nlohmann::ordered_json::array();

    std::vector<const std::vector<double>*> payload;
    for (const auto& [name, tensor] : params.named_params()) {
        nlohmann::ordered_json tj;
        tj["name"] = name;
        tj["shape"] = tensor->shape();
        header["tensors"].push_back(std::move(tj));
        payload.push_back(&tensor->data());
    }
    if (extras) {
        for (const auto& [name, data] : extras->tensors) {
            nlohmann::ordered_json tj;
            tj["name"] = "extra." + name;
            tj["shape"] = std::vector<int>{static_cast<int>(data.size())};
            header["tensors"].push_back(std::move(tj));
            payload.push_back(&data);
        }
    }

    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open checkpoint output: " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::string htext = header.dump();
    write_u64(out, htext.size());
    out.write(htext.data(), static_cast<std::streamsize>(htext.size()));
    for (const auto* data : payload)
        out.write(reinterpret_cast<const char*>(data->data()),
                  static_cast<std::streamsize>(data->size() * sizeof(double)));
    if (!out) throw ValidationError("short write while saving checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw ParseError("not a checkpoint file: " + path);
    const uint64_t hlen = read_u64(in);
    std::string htext(hlen, '\0');
    in.read(htext.data(), static_cast<std::streamsize>(hlen));
    if (!in) throw ParseError("truncated checkpoint header: " + path);

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(htext);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("checkpoint header: ") + e.what());
    }
    if (header.value("format_version", 0) != 1)
        throw ValidationError("unsupported checkpoint format version in " + path);

    LoadedCheckpoint ck{ModelParams{}, Vocab::from_json(header["vocab"].dump()), {}};
    const ModelConfig config = ModelConfig::from_json(header["config"].dump());
    ck.params = init_params(config, 0);
    ck.extras.meta_json = header.value("meta", nlohmann::json::object()).dump();

    std::map<std::string, Tensor*> by_name;
    for (auto& [name, tensor] : ck.params.named_params()) by_name[name] = tensor;

    for (const auto& tj : header["tensors"]) {
        const std::string name = tj["name"].get<std::string>();
        const std::vector<int> shape = tj["shape"].get<std::vector<int>>();
        const int64_t count = shape_numel(shape);
        std::vector<double> data(static_cast<size_t>(count));
        in.read(reinterpret_cast<char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
        if (!in) throw ParseError("truncated checkpoint payload at tensor '" + name + "'");
        if (name.rfind("extra.", 0) == 0) {
            ck.extras.tensors[name.substr(6)] = std::move(data);
            continue;
        }
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ValidationError("checkpoint names unknown tensor '" + name + "'");
        if (it->second->shape() != Shape(shape))
            throw ValidationError("checkpoint tensor '" + name + "' has mismatched shape");
        it->second->data() = std::move(data);
    }
    return ck;
}

}  // namespace laytext
