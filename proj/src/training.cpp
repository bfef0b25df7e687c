#include "laytext/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "laytext/errors.hpp"
#include "laytext/sequencer.hpp"

namespace laytext {

Stage stage_from_string(const std::string& s) {
    if (s == "pretrain") return Stage::pretrain;
    if (s == "sft") return Stage::sft;
    throw ContractError("unknown training stage '" + s + "'");
}

std::string stage_name(Stage s) { return s == Stage::pretrain ? "pretrain" : "sft"; }

TrainConfig TrainConfig::defaults_for(Stage stage) {
    TrainConfig cfg;
    cfg.stage = stage;
    cfg.lr = stage == Stage::pretrain ? 1e-4 : 2e-5;
    return cfg;
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ValidationError("train config: lr must be positive");
    if (shuffle_ratio < 0.0 || shuffle_ratio > 1.0)
        throw ValidationError("train config: shuffle_ratio must lie in [0,1]");
    if (!(warmup_ratio > 0.0) || !(warmup_ratio < 1.0))
        throw ValidationError("train config: warmup_ratio must lie in (0,1)");
    if (epochs < 1) throw ValidationError("train config: epochs must be at least 1");
    if (batch_size < 1) throw ValidationError("train config: batch_size must be at least 1");
    if (max_len < 8) throw ValidationError("train config: max_len too small");
    if (!(clip_norm > 0.0)) throw ValidationError("train config: clip_norm must be positive");
}

std::string TrainConfig::to_json() const {
    nlohmann::ordered_json j;
    j["stage"] = stage_name(stage);
    j["lr"] = lr;
    j["weight_decay"] = weight_decay;
    j["betas"] = {beta1, beta2};
    j["eps"] = eps;
    j["warmup_ratio"] = warmup_ratio;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["max_len"] = max_len;
    j["shuffle_ratio"] = shuffle_ratio;
    j["scheme"] = scheme_name(scheme);
    j["grounded"] = grounded;
    j["clip_norm"] = clip_norm;
    j["seed"] = seed;
    return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text, Stage stage) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(std::string("train config: ") + e.what());
    }
    TrainConfig cfg = defaults_for(stage);
    if (j.contains("stage")) cfg.stage = stage_from_string(j["stage"].get<std::string>());
    cfg.lr = j.value("lr", cfg.lr);
    cfg.weight_decay = j.value("weight_decay", cfg.weight_decay);
    if (j.contains("betas")) {
        cfg.beta1 = j["betas"][0].get<double>();
        cfg.beta2 = j["betas"][1].get<double>();
    }
    cfg.eps = j.value("eps", cfg.eps);
    cfg.warmup_ratio = j.value("warmup_ratio", cfg.warmup_ratio);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.max_len = j.value("max_len", cfg.max_len);
    cfg.shuffle_ratio = j.value("shuffle_ratio", cfg.shuffle_ratio);
    if (j.contains("scheme")) cfg.scheme = scheme_from_string(j["scheme"].get<std::string>());
    cfg.grounded = j.value("grounded", cfg.grounded);
    cfg.clip_norm = j.value("clip_norm", cfg.clip_norm);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.validate();
    return cfg;
}

double lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
    if (total_steps <= 0) throw ContractError("lr_at: total_steps must be positive");
    if (step < 0 || step > total_steps) throw ContractError("lr_at: step outside [0, total_steps]");
    if (step >= total_steps) return 0.0;
    const int64_t warmup = std::max<int64_t>(
        1, static_cast<int64_t>(std::llround(cfg.warmup_ratio * static_cast<double>(total_steps))));
    if (step < warmup) return cfg.lr * static_cast<double>(step) / static_cast<double>(warmup);
    const double progress =
        static_cast<double>(step - warmup) / static_cast<double>(std::max<int64_t>(1, total_steps - warmup));
    return cfg.lr * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

Tensor next_token_loss(const InterleavedSample& sample, const ModelParams& params) {
    Tensor logits = forward(sample, params);
    const int t = sample.size();
    std::vector<int> targets(static_cast<size_t>(t), 0);
    std::vector<uint8_t> mask(static_cast<size_t>(t), 0);
    for (int i = 0; i + 1 < t; ++i) {
        targets[static_cast<size_t>(i)] = sample.ids[static_cast<size_t>(i) + 1];
        mask[static_cast<size_t>(i)] = sample.loss_mask[static_cast<size_t>(i) + 1];
    }
    return masked_cross_entropy(logits, targets, mask);
}

// --------------------------------------------------------------- train loop

namespace {

constexpr uint64_t kStreamOrder = 0x0ede8;
constexpr uint64_t kStreamBernoulli = 0xa11ce;
constexpr uint64_t kStreamShuffle = 0xb0c5;
constexpr uint64_t kStreamSweepEval = 0xe7a1;

struct NamedTensors {
    std::vector<Tensor> tensors;
    std::vector<std::string> names;
};

NamedTensors select_params(ModelParams& params, bool adapters_and_slp_only) {
    NamedTensors out;
    for (auto& [name, tensor] : params.named_params()) {
        const bool adapter = name.rfind("slp.", 0) == 0 || name.find(".lora_") != std::string::npos;
        if (adapters_and_slp_only && !adapter) continue;
        out.tensors.push_back(*tensor);
        out.names.push_back(name);
    }
    return out;
}

OptimSnapshot make_snapshot(const NamedTensors& trainables, const OptimState& state, int next_epoch) {
    OptimSnapshot snap;
    snap.step_count = state.step_count();
    snap.next_epoch = next_epoch;
    for (size_t i = 0; i < trainables.names.size(); ++i)
        snap.moments[trainables.names[i]] = {state.first_moments()[i], state.second_moments()[i]};
    return snap;
}

TrainResult train_loop(const std::vector<InterleavedSample>& samples, ModelParams& params,
                       NamedTensors trainables, const TrainConfig& cfg, const EpochCallback& on_epoch,
                       const OptimSnapshot* resume) {
    const int64_t n = static_cast<int64_t>(samples.size());
    const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = steps_per_epoch * cfg.epochs;

    OptimState state(trainables.tensors);
    int start_epoch = 0;
    if (resume && !resume->empty()) {
        state.set_step_count(resume->step_count);
        start_epoch = resume->next_epoch;
        for (size_t i = 0; i < trainables.names.size(); ++i) {
            auto it = resume->moments.find(trainables.names[i]);
            if (it == resume->moments.end())
                throw ValidationError("resume state is missing moments for '" + trainables.names[i] + "'");
            if (it->second.first.size() != static_cast<size_t>(trainables.tensors[i].numel()))
                throw ValidationError("resume state shape mismatch for '" + trainables.names[i] + "'");
            state.first_moments()[i] = it->second.first;
            state.second_moments()[i] = it->second.second;
        }
    }

    AdamConfig adam{cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay};
    TrainResult result;
    int64_t step = state.step_count();

    for (int epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        std::vector<int64_t> order(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
        Rng order_rng(derive_seed(derive_seed(cfg.seed, kStreamOrder), static_cast<uint64_t>(epoch)));
        order_rng.shuffle(order);

        double epoch_loss = 0.0;
        int64_t epoch_batches = 0;
        for (int64_t off = 0; off < n; off += cfg.batch_size) {
            const int64_t bsz = std::min<int64_t>(cfg.batch_size, n - off);
            zero_grads(trainables.tensors);
            double batch_loss = 0.0;
            for (int64_t bi = 0; bi < bsz; ++bi) {
                const InterleavedSample& sample = samples[static_cast<size_t>(order[static_cast<size_t>(off + bi)])];
                Tensor loss = next_token_loss(sample, params);
                const double lv = loss.item();
                if (!std::isfinite(lv))
                    throw NumericError("training loss became non-finite at step " + std::to_string(step) +
                                       " (epoch " + std::to_string(epoch) + ")");
                batch_loss += lv / static_cast<double>(bsz);
                GradSink sink;
                backward_into(loss, sink);
                for (Tensor& t : trainables.tensors) {
                    const std::vector<double>* g = sink.find(t.node().get());
                    if (!g) continue;
                    if (t.grad().empty()) t.grad().assign(t.data().size(), 0.0);
                    std::vector<double>& acc = t.grad();
                    const double inv = 1.0 / static_cast<double>(bsz);
                    for (size_t i = 0; i < acc.size(); ++i) acc[i] += (*g)[i] * inv;
                }
            }
            clip_grad_norm(trainables.tensors, cfg.clip_norm);
            adam.lr = lr_at(step, total_steps, cfg);
            adam_step(trainables.tensors, state, adam);
            result.curve.push_back({step, adam.lr, batch_loss});
            epoch_loss += batch_loss;
            ++epoch_batches;
            ++step;
        }
        const double mean = epoch_batches ? epoch_loss / static_cast<double>(epoch_batches) : 0.0;
        if (epoch == start_epoch) result.first_epoch_mean_loss = mean;
        result.last_epoch_mean_loss = mean;
        if (on_epoch) on_epoch(epoch, make_snapshot(trainables, state, epoch + 1));
    }
    result.optim = make_snapshot(trainables, state, cfg.epochs);
    return result;
}

}  // namespace

TrainResult pretrain(const std::vector<Document>& docs, ModelParams& params, const Vocab& vocab,
                     const TrainConfig& cfg, const EpochCallback& on_epoch,
                     const OptimSnapshot* resume) {
    cfg.validate();
    if (cfg.stage != Stage::pretrain) throw ContractError("pretrain called with a non-pretrain config");
    if (docs.empty()) throw ContractError("pretrain: empty corpus");

    std::vector<InterleavedSample> samples;
    samples.reserve(docs.size());
    for (const Document& d : docs) {
        if (d.words.empty()) continue;  // nothing to model
        samples.push_back(build_pretrain_sample(d, vocab, cfg.max_len));
    }
    if (samples.empty()) throw ContractError("pretrain: no document has any words");

    return train_loop(samples, params, select_params(params, /*adapters_and_slp_only=*/true), cfg,
                      on_epoch, resume);
}

std::vector<SftExampleRef> assemble_sft_examples(const std::vector<Document>& docs,
                                                 const TrainConfig& cfg) {
    std::vector<SftExampleRef> out;
    const uint64_t bernoulli_base = derive_seed(cfg.seed, kStreamBernoulli);
    const uint64_t shuffle_base = derive_seed(cfg.seed, kStreamShuffle);
    uint64_t index = 0;
    for (size_t di = 0; di < docs.size(); ++di) {
        for (size_t qi = 0; qi < docs[di].qa.size(); ++qi) {
            Rng r(derive_seed(bernoulli_base, index));
            SftExampleRef e;
            e.doc_index = static_cast<int>(di);
            e.qa_index = static_cast<int>(qi);
            e.shuffled = r.uniform() < cfg.shuffle_ratio;
            e.shuffle_seed = derive_seed(shuffle_base, index);
            out.push_back(e);
            ++index;
        }
    }
    return out;
}

TrainResult sft(const std::vector<Document>& docs, ModelParams& params, const Vocab& vocab,
                const TrainConfig& cfg, const EpochCallback& on_epoch, const OptimSnapshot* resume) {
    cfg.validate();
    if (cfg.stage != Stage::sft) throw ContractError("sft called with a non-sft config");
    const std::vector<SftExampleRef> refs = assemble_sft_examples(docs, cfg);
    if (refs.empty()) throw ContractError("sft: corpus has no QA pairs");

    std::vector<InterleavedSample> samples;
    samples.reserve(refs.size());
    for (const SftExampleRef& e : refs) {
        SftOptions opts;
        opts.shuffled = e.shuffled;
        opts.grounded_output = cfg.grounded;
        opts.shuffle_seed = e.shuffle_seed;
        samples.push_back(build_qa_sample(docs[static_cast<size_t>(e.doc_index)],
                                          docs[static_cast<size_t>(e.doc_index)].qa[static_cast<size_t>(e.qa_index)],
                                          vocab, cfg.scheme, opts, cfg.max_len));
    }

    return train_loop(samples, params, select_params(params, /*adapters_and_slp_only=*/false), cfg,
                      on_epoch, resume);
}

std::vector<SweepRow> shuffle_sweep(const std::vector<Document>& train_docs,
                                    const std::vector<Document>& test_docs,
                                    const ModelParams& params0, const Vocab& vocab,
                                    const TrainConfig& cfg, const std::vector<double>& ratios) {
    if (cfg.stage != Stage::sft) throw ContractError("shuffle_sweep needs an sft config");
    std::vector<SweepRow> rows;
    for (double ratio : ratios) {
        ModelParams params = params0.clone();
        TrainConfig run_cfg = cfg;
        run_cfg.shuffle_ratio = ratio;
        sft(train_docs, params, vocab, run_cfg);

        EvalOptions eopts;
        eopts.shuffle_inputs = true;  // fully-shuffled test split
        eopts.seed = derive_seed(cfg.seed, kStreamSweepEval);
        EvalReport rep = evaluate(params, vocab, test_docs, cfg.scheme, eopts);
        rows.push_back({ratio, rep.aggregates.at("accuracy")});
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string csv = "train_shuffle_ratio,accuracy\n";
    char buf[64];
    for (const SweepRow& r : rows) {
        std::snprintf(buf, sizeof(buf), "%.4g,%.17g\n", r.train_ratio, r.accuracy);
        csv += buf;
    }
    return csv;
}

CheckpointExtras snapshot_to_extras(const OptimSnapshot& snap, const std::string& stage) {
    CheckpointExtras extras;
    nlohmann::ordered_json meta;
    meta["optim_step"] = snap.step_count;
    meta["next_epoch"] = snap.next_epoch;
    meta["stage"] = stage;
    extras.meta_json = meta.dump();
    for (const auto& [name, mv] : snap.moments) {
        extras.tensors["optim.m." + name] = mv.first;
        extras.tensors["optim.v." + name] = mv.second;
    }
    return extras;
}

OptimSnapshot extras_to_snapshot(const CheckpointExtras& extras) {
    OptimSnapshot snap;
    nlohmann::json meta = nlohmann::json::parse(extras.meta_json);
    snap.step_count = meta.value("optim_step", 0);
    snap.next_epoch = meta.value("next_epoch", 0);
    for (const auto& [name, data] : extras.tensors) {
        if (name.rfind("optim.m.", 0) == 0) snap.moments[name.substr(8)].first = data;
        if (name.rfind("optim.v.", 0) == 0) snap.moments[name.substr(8)].second = data;
    }
    return snap;
}

}  // namespace laytext
