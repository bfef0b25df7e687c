// laytext: synthesize layout-annotated corpora, train the interleaved
// box/text model in two stages, and evaluate KIE metrics per input scheme.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "laytext/corpus.hpp"
#include "laytext/errors.hpp"
#include "laytext/eval.hpp"
#include "laytext/kernels.hpp"
#include "laytext/model.hpp"
#include "laytext/sequencer.hpp"
#include "laytext/tokenizer.hpp"
#include "laytext/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace laytext;

namespace {

constexpr const char* kToolVersion = "0.1.0";

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
    if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open output file: " + path);
    out << text;
}

// Written before any work starts; a rerun with identical fields reproduces
// the outputs byte for byte.
void write_manifest(const std::string& where, const std::string& command, uint64_t seed,
                    const ordered_json& config, const ordered_json& inputs,
                    const ordered_json& outputs) {
    ordered_json m;
    m["command"] = command;
    m["tool_version"] = kToolVersion;
    m["seed"] = seed;
    m["config"] = config;
    m["inputs"] = inputs;
    m["outputs"] = outputs;
    write_file(where, m.dump(2) + "\n");
}

std::vector<std::string> corpus_texts(const std::vector<Document>& docs) {
    std::vector<std::string> texts;
    texts.reserve(docs.size());
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

struct TrainCli {
    std::string corpus_path;
    std::string config_path;
    std::string out_dir;
    std::string init_checkpoint;
    std::string vocab_path;
    int vocab_size = 2048;
    uint64_t seed = 0;
    bool resume = false;
    // flag overrides, applied on top of defaults < config file
    double lr = -1;
    int epochs = -1;
    int batch_size = -1;
    int max_len = -1;
    double shuffle_ratio = -1;
    std::string scheme;
    bool grounded = false;
    std::string model_config_path;
};

TrainConfig resolve_train_config(const TrainCli& cli, Stage stage) {
    TrainConfig cfg = TrainConfig::defaults_for(stage);
    if (!cli.config_path.empty()) cfg = TrainConfig::from_json(read_file(cli.config_path), stage);
    cfg.stage = stage;
    if (cli.lr > 0) cfg.lr = cli.lr;
    if (cli.epochs > 0) cfg.epochs = cli.epochs;
    if (cli.batch_size > 0) cfg.batch_size = cli.batch_size;
    if (cli.max_len > 0) cfg.max_len = cli.max_len;
    if (cli.shuffle_ratio >= 0) cfg.shuffle_ratio = cli.shuffle_ratio;
    if (!cli.scheme.empty()) cfg.scheme = scheme_from_string(cli.scheme);
    if (cli.grounded) cfg.grounded = true;
    cfg.seed = cli.seed;
    cfg.validate();
    return cfg;
}

void write_loss_csv(const std::string& path, const std::vector<StepRecord>& curve) {
    std::string csv = "step,lr,loss\n";
    char buf[96];
    for (const StepRecord& r : curve) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g\n", static_cast<long long>(r.step), r.lr,
                      r.loss);
        csv += buf;
    }
    write_file(path, csv);
}

// Shared by the pretrain and sft commands: resolves model + vocab, runs the
// stage, emits the run directory.
int run_training_command(const TrainCli& cli, Stage stage) {
    const TrainConfig cfg = resolve_train_config(cli, stage);
    fs::create_directories(cli.out_dir);

    std::vector<Document> docs = load_documents(cli.corpus_path);

    ModelParams params;
    Vocab vocab;
    OptimSnapshot resume_snap;
    bool have_resume = false;

    if (!cli.init_checkpoint.empty()) {
        LoadedCheckpoint ck = load_checkpoint(cli.init_checkpoint);
        params = std::move(ck.params);
        vocab = std::move(ck.vocab);
        if (cli.resume) {
            resume_snap = extras_to_snapshot(ck.extras);
            have_resume = !resume_snap.empty();
        }
    } else {
        if (!cli.vocab_path.empty())
            vocab = Vocab::load(cli.vocab_path);
        else
            vocab = train_bpe(corpus_texts(docs), cli.vocab_size);
        ModelConfig mc;
        if (!cli.model_config_path.empty()) mc = ModelConfig::from_json(read_file(cli.model_config_path));
        if (mc.vocab_size < vocab.size()) mc.vocab_size = vocab.size();
        params = init_params(mc, cfg.seed);
    }
    if (vocab.size() > params.config.vocab_size)
        throw ValidationError("vocabulary does not fit the model's head");

    const std::string stage_label = stage_name(stage);
    write_manifest(cli.out_dir + "/manifest.json", stage_label, cfg.seed,
                   ordered_json::parse(cfg.to_json()),
                   {{"corpus", cli.corpus_path},
                    {"init", cli.init_checkpoint},
                    {"vocab", cli.vocab_path},
                    {"config_file", cli.config_path}},
                   {{"dir", cli.out_dir}});
    write_file(cli.out_dir + "/config.json", cfg.to_json() + "\n");
    vocab.save(cli.out_dir + "/vocab.json");

    const EpochCallback on_epoch = [&](int epoch, const OptimSnapshot& snap) {
        CheckpointExtras extras = snapshot_to_extras(snap, stage_label);
        save_checkpoint(cli.out_dir + "/ckpt_epoch_" + std::to_string(epoch + 1) + ".ltx", params,
                        vocab, &extras);
    };

    TrainResult result;
    if (stage == Stage::pretrain)
        result = pretrain(docs, params, vocab, cfg, on_epoch, have_resume ? &resume_snap : nullptr);
    else
        result = sft(docs, params, vocab, cfg, on_epoch, have_resume ? &resume_snap : nullptr);

    write_loss_csv(cli.out_dir + "/loss.csv", result.curve);
    CheckpointExtras extras = snapshot_to_extras(result.optim, stage_label);
    save_checkpoint(cli.out_dir + "/final.ltx", params, vocab, &extras);

    std::cout << stage_label << ": " << result.curve.size() << " steps, first-epoch loss "
              << result.first_epoch_mean_loss << ", last-epoch loss " << result.last_epoch_mean_loss
              << "\n";
    return 0;
}

EvalReport report_from_json_file(const std::string& path) {
    nlohmann::json j = nlohmann::json::parse(read_file(path));
    EvalReport rep;
    rep.scheme = j.value("scheme", "unknown");
    rep.grounded = j.value("grounded", false);
    rep.mean_prompt_len = j.value("mean_prompt_len", 0.0);
    if (j.contains("aggregates"))
        for (const auto& [k, v] : j["aggregates"].items()) rep.aggregates[k] = v.get<double>();
    return rep;
}

}  // namespace

int main(int argc, char** argv) {
    if (const char* threads = std::getenv("LAYTEXT_THREADS")) {
        const int n = std::atoi(threads);
        if (n > 0) set_threads(n);
    }

    CLI::App app{"layout-interleaved language modeling toolkit"};
    app.require_subcommand(1);

    // ---- synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic key-value corpus");
    uint64_t synth_seed = 0;
    int n_docs = 100;
    SynthSpec spec;
    std::string synth_out;
    synth->add_option("--seed", synth_seed, "corpus seed");
    synth->add_option("--n-docs", n_docs, "number of documents")->check(CLI::NonNegativeNumber);
    synth->add_option("--trap-fraction", spec.trap_fraction,
                      "fraction of documents with table-trap layouts");
    synth->add_option("--qa-per-doc", spec.qa_per_doc, "qa pairs per document");
    synth->add_option("--min-fields", spec.min_fields, "minimum fields per document");
    synth->add_option("--max-fields", spec.max_fields, "maximum fields per document");
    synth->add_option("--out", synth_out, "output JSONL path")->required();

    // ---- train-vocab
    auto* tv = app.add_subcommand("train-vocab", "train a BPE vocabulary from a corpus");
    std::string tv_corpus, tv_out;
    int tv_size = 2048;
    tv->add_option("--corpus", tv_corpus, "corpus JSONL")->required();
    tv->add_option("--vocab-size", tv_size, "target vocabulary size");
    tv->add_option("--out", tv_out, "output vocab JSON")->required();

    // ---- pretrain / sft
    TrainCli pre_cli, sft_cli;
    auto add_train_opts = [](CLI::App* cmd, TrainCli& cli, bool is_sft) {
        cmd->add_option("--corpus", cli.corpus_path, "corpus JSONL")->required();
        cmd->add_option("--config", cli.config_path, "training config JSON");
        cmd->add_option("--out-dir", cli.out_dir, "run directory")->required();
        cmd->add_option("--init", cli.init_checkpoint, "initial checkpoint");
        cmd->add_option("--vocab", cli.vocab_path, "vocabulary JSON (otherwise trained)");
        cmd->add_option("--vocab-size", cli.vocab_size, "vocabulary size when training one");
        cmd->add_option("--model-config", cli.model_config_path, "model config JSON");
        cmd->add_option("--seed", cli.seed, "training seed");
        cmd->add_option("--lr", cli.lr, "learning rate override");
        cmd->add_option("--epochs", cli.epochs, "epoch override");
        cmd->add_option("--batch-size", cli.batch_size, "batch size override");
        cmd->add_option("--max-len", cli.max_len, "sequence length cap");
        cmd->add_flag("--resume", cli.resume, "restore optimizer state from --init");
        if (is_sft) {
            cmd->add_option("--shuffle-ratio", cli.shuffle_ratio,
                            "fraction of examples with shuffled OCR order (default 0.2)");
            cmd->add_option("--scheme", cli.scheme, "context scheme: interleaved|plain|coord_tokens");
            cmd->add_flag("--grounded", cli.grounded, "train on coordinate-suffixed answers");
        }
    };
    auto* pre = app.add_subcommand("pretrain", "layout-aware next-token pre-training");
    add_train_opts(pre, pre_cli, false);
    auto* sft_cmd = app.add_subcommand("sft", "shuffled-OCR supervised fine-tuning");
    add_train_opts(sft_cmd, sft_cli, true);

    // ---- eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a corpus");
    std::string ev_ckpt, ev_corpus, ev_scheme = "interleaved", ev_out;
    bool ev_grounded = false, ev_shuffle = false;
    uint64_t ev_seed = 0;
    int ev_max_new = 32;
    ev->add_option("--checkpoint", ev_ckpt, "model checkpoint")->required();
    ev->add_option("--corpus", ev_corpus, "corpus JSONL with qa pairs")->required();
    ev->add_option("--scheme", ev_scheme, "interleaved|plain|coord_tokens");
    ev->add_flag("--grounded", ev_grounded, "expect coordinate-suffixed answers");
    ev->add_flag("--shuffle-inputs", ev_shuffle, "shuffle every document's word order");
    ev->add_option("--seed", ev_seed, "seed for input shuffling");
    ev->add_option("--max-new", ev_max_new, "generation budget per answer");
    ev->add_option("--out", ev_out, "output prefix (.report.json/.aggregates.csv/.predictions.jsonl)")
        ->required();

    // ---- seqlen
    auto* sl = app.add_subcommand("seqlen", "per-document token counts for each scheme");
    std::string sl_corpus, sl_vocab, sl_out;
    sl->add_option("--corpus", sl_corpus, "corpus JSONL")->required();
    sl->add_option("--vocab", sl_vocab, "vocabulary JSON")->required();
    sl->add_option("--out", sl_out, "output CSV")->required();

    // ---- sweep
    auto* sw = app.add_subcommand("sweep", "train/eval across shuffle ratios");
    TrainCli sw_cli;
    std::string sw_test_corpus, sw_ratios = "1.0,0.5,0.2,0.0", sw_out;
    add_train_opts(sw, sw_cli, true);
    sw->add_option("--test-corpus", sw_test_corpus, "held-out corpus, evaluated fully shuffled")
        ->required();
    sw->add_option("--ratios", sw_ratios, "comma-separated training shuffle ratios");
    sw->get_option("--out-dir")->required(false);
    sw->add_option("--out", sw_out, "output CSV")->required();

    // ---- perf-csv
    auto* pc = app.add_subcommand("perf-csv", "merge eval reports into performance-vs-length rows");
    std::vector<std::string> pc_reports;
    std::string pc_out;
    pc->add_option("--reports", pc_reports, "report JSON files")->required()->expected(-1);
    pc->add_option("--out", pc_out, "output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage errors exit 1; --help exits 0
    }

    try {
        if (*synth) {
            write_manifest(synth_out + ".manifest.json", "synth", synth_seed,
                           {{"n_docs", n_docs},
                            {"trap_fraction", spec.trap_fraction},
                            {"qa_per_doc", spec.qa_per_doc},
                            {"min_fields", spec.min_fields},
                            {"max_fields", spec.max_fields}},
                           ordered_json::object(), {{"corpus", synth_out}});
            save_documents(synth_out, synth_kv_documents(synth_seed, n_docs, spec));
            std::cout << "wrote " << n_docs << " documents to " << synth_out << "\n";
        } else if (*tv) {
            write_manifest(tv_out + ".manifest.json", "train-vocab", 0,
                           {{"vocab_size", tv_size}}, {{"corpus", tv_corpus}}, {{"vocab", tv_out}});
            Vocab v = train_bpe(corpus_texts(load_documents(tv_corpus)), tv_size);
            v.save(tv_out);
            std::cout << "trained vocabulary of size " << v.size() << "\n";
        } else if (*pre) {
            return run_training_command(pre_cli, Stage::pretrain);
        } else if (*sft_cmd) {
            return run_training_command(sft_cli, Stage::sft);
        } else if (*ev) {
            LoadedCheckpoint ck = load_checkpoint(ev_ckpt);
            EvalOptions opts;
            opts.grounded = ev_grounded;
            opts.shuffle_inputs = ev_shuffle;
            opts.seed = ev_seed;
            opts.max_new_tokens = ev_max_new;
            write_manifest(ev_out + ".manifest.json", "eval", ev_seed,
                           {{"scheme", ev_scheme},
                            {"grounded", ev_grounded},
                            {"shuffle_inputs", ev_shuffle},
                            {"max_new", ev_max_new}},
                           {{"checkpoint", ev_ckpt}, {"corpus", ev_corpus}},
                           {{"prefix", ev_out}});
            EvalReport rep = evaluate(ck.params, ck.vocab, load_documents(ev_corpus),
                                      scheme_from_string(ev_scheme), opts);
            write_report_json(rep, ev_out + ".report.json");
            write_report_csv(rep, ev_out + ".aggregates.csv");
            write_predictions_jsonl(rep, ev_out + ".predictions.jsonl");
            std::cout << "scheme " << rep.scheme << ": accuracy "
                      << rep.aggregates.at("accuracy") << ", anls " << rep.aggregates.at("anls")
                      << ", f1 " << rep.aggregates.at("f1") << ", mean prompt len "
                      << rep.mean_prompt_len << "\n";
        } else if (*sl) {
            write_manifest(sl_out + ".manifest.json", "seqlen", 0, ordered_json::object(),
                           {{"corpus", sl_corpus}, {"vocab", sl_vocab}}, {{"csv", sl_out}});
            Vocab v = Vocab::load(sl_vocab);
            std::string csv = "doc_id,plain,interleaved,coord_tokens\n";
            for (const Document& d : load_documents(sl_corpus)) {
                csv += d.id + "," + std::to_string(seqlen_report(d, v, Scheme::plain)) + "," +
                       std::to_string(seqlen_report(d, v, Scheme::interleaved)) + "," +
                       std::to_string(seqlen_report(d, v, Scheme::coord_tokens)) + "\n";
            }
            write_file(sl_out, csv);
        } else if (*sw) {
            if (sw_cli.init_checkpoint.empty())
                throw ValidationError("sweep requires --init with the starting checkpoint");
            const TrainConfig cfg = resolve_train_config(sw_cli, Stage::sft);
            std::vector<double> ratios;
            std::stringstream ss(sw_ratios);
            std::string part;
            while (std::getline(ss, part, ',')) ratios.push_back(std::stod(part));
            write_manifest(sw_out + ".manifest.json", "sweep", cfg.seed,
                           ordered_json::parse(cfg.to_json()),
                           {{"corpus", sw_cli.corpus_path},
                            {"test_corpus", sw_test_corpus},
                            {"init", sw_cli.init_checkpoint},
                            {"ratios", sw_ratios}},
                           {{"csv", sw_out}});
            LoadedCheckpoint ck = load_checkpoint(sw_cli.init_checkpoint);
            auto rows = shuffle_sweep(load_documents(sw_cli.corpus_path),
                                      load_documents(sw_test_corpus), ck.params, ck.vocab, cfg,
                                      ratios);
            write_file(sw_out, sweep_csv(rows));
            for (const SweepRow& r : rows)
                std::cout << "ratio " << r.train_ratio << " -> accuracy " << r.accuracy << "\n";
        } else if (*pc) {
            std::vector<EvalReport> reports;
            for (const std::string& p : pc_reports) reports.push_back(report_from_json_file(p));
            write_file(pc_out, perf_vs_length_csv(reports));
        }
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const CLI::Error& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
