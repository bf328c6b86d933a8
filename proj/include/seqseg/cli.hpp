#pragma once

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "seqseg/annotate.hpp"
#include "seqseg/common.hpp"
#include "seqseg/config.hpp"
#include "seqseg/corpus.hpp"
#include "seqseg/eval.hpp"
#include "seqseg/inference.hpp"
#include "seqseg/lexicon.hpp"
#include "seqseg/model.hpp"
#include "seqseg/tokenizer.hpp"
#include "seqseg/training.hpp"

namespace seqseg {

namespace detail_cli {

inline void print_fingerprint(const std::string& subcommand,
                              std::vector<std::pair<std::string, std::string>> entries) {
    std::cout << "config fingerprint: "
              << fingerprint_hex(config_fingerprint(subcommand, std::move(entries))) << "\n";
}

struct LexiconBundle {
    PhoneLexicon lex;
    PhoneIdMap phones;
    bool present = false;

    const PhoneLexicon* lex_ptr() const { return present ? &lex : nullptr; }
    const PhoneIdMap* phones_ptr() const { return present ? &phones : nullptr; }
};

inline LexiconBundle load_lexicon_bundle(const std::string& path) {
    LexiconBundle b;
    if (path.empty()) return b;
    b.lex = load_lexicon(path);
    b.phones = make_phone_id_map(b.lex);
    b.present = true;
    return b;
}

// The config file named by --config, else by SEQSEG_CONFIG, else nothing.
inline void apply_config_sources(RunConfig& rc, const std::string& config_flag) {
    std::string path = config_flag;
    if (path.empty()) {
        if (const char* env = std::getenv("SEQSEG_CONFIG"); env != nullptr && *env != '\0')
            path = env;
    }
    if (!path.empty()) apply_config_file(rc, load_config_file(path));
}

template <typename T>
inline void override_if_set(const CLI::App& cmd, const std::string& flag, T& target,
                            const T& parsed) {
    if (cmd.count(flag) > 0) target = parsed;
}

// Checkpoint/vocab/lexicon consistency shared by segment and bench.
inline void check_model_inputs(const SegModel& model, const Vocab& vocab,
                               const LexiconBundle& lex) {
    if (model.config.vocab_size != vocab.size())
        throw DataError("model was trained with a different vocabulary size");
    if (model.config.use_phone) {
        if (!lex.present) throw DataError("model uses phone embeddings: --lexicon is required");
        if (model.config.phone_vocab_size != lex.phones.size())
            throw DataError("model was trained with a different phone inventory size");
    }
}

inline std::vector<DocResult> segment_corpus_parallel(const Corpus& corpus, const SegModel& model,
                                                      const Vocab& vocab,
                                                      const LexiconBundle& lex,
                                                      const InferenceConfig& cfg, int workers) {
    const std::size_t n = corpus.documents.size();
    std::vector<DocResult> results(n);
    if (workers <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            const auto& doc = corpus.documents[i];
            results[i] = {doc.id, segment(doc, model, vocab, lex.lex_ptr(), lex.phones_ptr(), cfg)};
        }
        return results;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto work = [&] {
        try {
            while (true) {
                std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                const auto& doc = corpus.documents[i];
                results[i] = {doc.id,
                              segment(doc, model, vocab, lex.lex_ptr(), lex.phones_ptr(), cfg)};
            }
        } catch (...) {
            std::lock_guard<std::mutex> lock(failure_mu);
            if (!failure) failure = std::current_exception();
        }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < workers; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    return results;
}

}  // namespace detail_cli

inline int run_cli(int argc, const char* const* argv) {
    CLI::App app{"sentence-level document segmentation toolkit"};
    app.require_subcommand(1);

    // ---- synth ----------------------------------------------------------
    auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
    struct {
        std::string out, lexicon_out;
        SynthSpec spec{.n_docs = 20,
                       .sentences_per_doc_min = 20,
                       .sentences_per_doc_max = 40,
                       .words_per_sentence_min = 6,
                       .words_per_sentence_max = 12,
                       .segment_length_min = 3,
                       .segment_length_max = 6,
                       .vocab_size = 200,
                       .boundary_cue_strength = 1.0,
                       .seed = 0};
        int variants = 2, body_variants = 0;
        double noise = 0.0;
        std::uint64_t noise_seed = 1;
    } sy;
    synth->add_option("--out", sy.out, "corpus output file (JSON lines)")->required();
    synth->add_option("--docs", sy.spec.n_docs, "number of documents");
    synth->add_option("--sentences-min", sy.spec.sentences_per_doc_min, "min sentences per doc");
    synth->add_option("--sentences-max", sy.spec.sentences_per_doc_max, "max sentences per doc");
    synth->add_option("--words-min", sy.spec.words_per_sentence_min, "min words per sentence");
    synth->add_option("--words-max", sy.spec.words_per_sentence_max, "max words per sentence");
    synth->add_option("--segment-min", sy.spec.segment_length_min, "min sentences per segment");
    synth->add_option("--segment-max", sy.spec.segment_length_max, "max sentences per segment");
    synth->add_option("--vocab", sy.spec.vocab_size, "synthetic vocabulary size");
    synth->add_option("--cue-strength", sy.spec.boundary_cue_strength,
                      "probability that a segment-initial sentence starts with a cue word");
    synth->add_option("--seed", sy.spec.seed, "generation seed");
    synth->add_option("--lexicon-out", sy.lexicon_out, "write the matching homophone lexicon");
    synth->add_option("--homophone-variants", sy.variants,
                      "extra surface forms per cue-word homophone class");
    synth->add_option("--homophone-body-variants", sy.body_variants,
                      "extra surface forms per body-word homophone class");
    synth->add_option("--noise-rate", sy.noise, "homophone substitution rate to apply");
    synth->add_option("--noise-seed", sy.noise_seed, "seed for homophone noise");
    synth->callback([&] {
        detail_cli::print_fingerprint(
            "synth", {{"out", sy.out},
                      {"docs", std::to_string(sy.spec.n_docs)},
                      {"sentences_min", std::to_string(sy.spec.sentences_per_doc_min)},
                      {"sentences_max", std::to_string(sy.spec.sentences_per_doc_max)},
                      {"words_min", std::to_string(sy.spec.words_per_sentence_min)},
                      {"words_max", std::to_string(sy.spec.words_per_sentence_max)},
                      {"segment_min", std::to_string(sy.spec.segment_length_min)},
                      {"segment_max", std::to_string(sy.spec.segment_length_max)},
                      {"vocab", std::to_string(sy.spec.vocab_size)},
                      {"cue_strength", detail_cfg::fmt_double(sy.spec.boundary_cue_strength)},
                      {"seed", std::to_string(sy.spec.seed)},
                      {"lexicon_out", sy.lexicon_out},
                      {"homophone_variants", std::to_string(sy.variants)},
                      {"homophone_body_variants", std::to_string(sy.body_variants)},
                      {"noise_rate", detail_cfg::fmt_double(sy.noise)},
                      {"noise_seed", std::to_string(sy.noise_seed)}});
        Corpus corpus = generate_synthetic(sy.spec);
        bool need_lexicon = !sy.lexicon_out.empty() || sy.noise > 0.0;
        if (need_lexicon) {
            PhoneLexicon lex =
                generate_homophone_lexicon(sy.spec, sy.variants, 2, sy.body_variants);
            if (sy.noise > 0.0)
                corpus = apply_homophone_noise(corpus, lex, sy.noise, sy.noise_seed);
            if (!sy.lexicon_out.empty()) save_lexicon(lex, sy.lexicon_out);
        }
        save_records(corpus, sy.out);
        std::cout << "wrote " << corpus.documents.size() << " documents to " << sy.out << "\n";
    });

    // ---- convert --------------------------------------------------------
    auto* convert = app.add_subcommand("convert", "convert raw wiki-style text to corpus records");
    struct {
        std::string in, out, id, granularity = "section", source = "written";
    } cv;
    convert->add_option("--in", cv.in, "raw text input file")->required();
    convert->add_option("--out", cv.out, "corpus output file (JSON lines)")->required();
    convert->add_option("--id", cv.id, "document id (default: input file stem)");
    convert->add_option("--granularity", cv.granularity, "segment granularity: section|paragraph")
        ->check(CLI::IsMember({"section", "paragraph"}));
    convert->add_option("--source", cv.source, "document source tag: written|spoken")
        ->check(CLI::IsMember({"written", "spoken"}));
    convert->callback([&] {
        detail_cli::print_fingerprint("convert", {{"in", cv.in},
                                                  {"out", cv.out},
                                                  {"id", cv.id},
                                                  {"granularity", cv.granularity},
                                                  {"source", cv.source}});
        std::ifstream in(cv.in);
        if (!in) throw DataError("cannot open input file: " + cv.in);
        std::ostringstream raw;
        raw << in.rdbuf();
        std::string id = cv.id.empty() ? std::filesystem::path(cv.in).stem().string() : cv.id;
        WikiGranularity g = cv.granularity == "section" ? WikiGranularity::section
                                                        : WikiGranularity::paragraph;
        Document doc = parse_wiki_text(raw.str(), g, id);
        doc.source = source_from_string(cv.source);
        Corpus corpus;
        corpus.documents.push_back(std::move(doc));
        save_records(corpus, cv.out);
        std::cout << "wrote 1 document (" << corpus.documents[0].sentences.size()
                  << " sentences) to " << cv.out << "\n";
    });

    // ---- vocab ----------------------------------------------------------
    auto* vocab_cmd = app.add_subcommand("vocab", "build a subword vocabulary from a corpus");
    struct {
        std::string in, out;
        int max_size = 8000;
    } vo;
    vocab_cmd->add_option("--in", vo.in, "corpus file (JSON lines)")->required();
    vocab_cmd->add_option("--out", vo.out, "vocabulary output file")->required();
    vocab_cmd->add_option("--max-size", vo.max_size, "maximum vocabulary size");
    vocab_cmd->callback([&] {
        detail_cli::print_fingerprint(
            "vocab", {{"in", vo.in}, {"out", vo.out}, {"max_size", std::to_string(vo.max_size)}});
        Corpus corpus = load_records(vo.in);
        Vocab vocab = build_vocab(corpus, vo.max_size);
        save_vocab(vocab, vo.out);
        std::cout << "wrote " << vocab.size() << " tokens to " << vo.out << "\n";
    });

    // ---- shared model/train/infer flags ---------------------------------
    struct ModelFlags {
        int d_model = 32, n_layers = 2, n_heads = 2, d_ff = 64, max_seq_len = 512;
        double dropout = 0.1;
        bool use_phone = false;
    };
    auto add_model_flags = [](CLI::App* cmd, ModelFlags& f) {
        cmd->add_option("--d-model", f.d_model, "hidden size");
        cmd->add_option("--n-layers", f.n_layers, "encoder layers");
        cmd->add_option("--n-heads", f.n_heads, "attention heads");
        cmd->add_option("--d-ff", f.d_ff, "feed-forward size");
        cmd->add_option("--max-seq-len", f.max_seq_len, "maximum window length in tokens");
        cmd->add_option("--dropout", f.dropout, "dropout rate");
        cmd->add_flag("--use-phone", f.use_phone, "add phone embeddings from the lexicon");
    };
    auto apply_model_flags = [](const CLI::App& cmd, const ModelFlags& f, RunConfig& rc) {
        detail_cli::override_if_set(cmd, "--d-model", rc.model.d_model, f.d_model);
        detail_cli::override_if_set(cmd, "--n-layers", rc.model.n_layers, f.n_layers);
        detail_cli::override_if_set(cmd, "--n-heads", rc.model.n_heads, f.n_heads);
        detail_cli::override_if_set(cmd, "--d-ff", rc.model.d_ff, f.d_ff);
        if (cmd.count("--max-seq-len") > 0)
            rc.model.max_seq_len = rc.train.max_seq_len = f.max_seq_len;
        detail_cli::override_if_set(cmd, "--dropout", rc.model.dropout_rate, f.dropout);
        if (cmd.count("--use-phone") > 0) rc.model.use_phone = f.use_phone;
    };

    // ---- train ----------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "train a segmentation model");
    struct {
        std::string train_path, dev_path, vocab_path, lexicon_path, out, config;
        std::string arch = "seq";
        ModelFlags mf;
        int forward_step = 10, max_sentences = 60, batch_size = 48, epochs = 2;
        double lr = 5e-5, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
        std::uint64_t seed = 0;
        bool adaptive_samples = false;
        int backward_step = 10, left_ctx = 128, right_ctx = 128;
    } tr;
    train_cmd->add_option("--train", tr.train_path, "training corpus")->required();
    train_cmd->add_option("--dev", tr.dev_path, "dev corpus for best-model selection");
    train_cmd->add_option("--vocab", tr.vocab_path, "vocabulary file")->required();
    train_cmd->add_option("--lexicon", tr.lexicon_path, "phone lexicon file");
    train_cmd->add_option("--out", tr.out, "checkpoint output path")->required();
    train_cmd->add_option("--arch", tr.arch, "seq (windowed sentences) or cross (per-break baseline)")
        ->check(CLI::IsMember({"seq", "cross"}));
    train_cmd->add_option("--config", tr.config, "key = value config file");
    add_model_flags(train_cmd, tr.mf);
    train_cmd->add_option("--forward-step", tr.forward_step, "training window stride (sentences)");
    train_cmd->add_option("--max-sentences", tr.max_sentences, "max sentences per window");
    train_cmd->add_option("--batch-size", tr.batch_size, "logical batch size");
    train_cmd->add_option("--epochs", tr.epochs, "training epochs");
    train_cmd->add_option("--lr", tr.lr, "learning rate");
    train_cmd->add_option("--beta1", tr.beta1, "Adam beta1");
    train_cmd->add_option("--beta2", tr.beta2, "Adam beta2");
    train_cmd->add_option("--eps", tr.eps, "Adam epsilon");
    train_cmd->add_option("--seed", tr.seed, "training seed");
    train_cmd->add_flag("--adaptive-samples", tr.adaptive_samples,
                        "window starts follow reference boundaries instead of a fixed stride");
    train_cmd->add_option("--backward-step", tr.backward_step,
                          "search span for --adaptive-samples");
    train_cmd->add_option("--left-ctx", tr.left_ctx, "cross baseline left context tokens");
    train_cmd->add_option("--right-ctx", tr.right_ctx, "cross baseline right context tokens");
    train_cmd->callback([&] {
        RunConfig rc;
        detail_cli::apply_config_sources(rc, tr.config);
        apply_model_flags(*train_cmd, tr.mf, rc);
        detail_cli::override_if_set(*train_cmd, "--forward-step", rc.train.forward_step,
                                    tr.forward_step);
        detail_cli::override_if_set(*train_cmd, "--max-sentences", rc.train.max_sentences,
                                    tr.max_sentences);
        detail_cli::override_if_set(*train_cmd, "--batch-size", rc.train.batch_size, tr.batch_size);
        detail_cli::override_if_set(*train_cmd, "--epochs", rc.train.epochs, tr.epochs);
        detail_cli::override_if_set(*train_cmd, "--lr", rc.train.learning_rate, tr.lr);
        detail_cli::override_if_set(*train_cmd, "--beta1", rc.train.adam_beta1, tr.beta1);
        detail_cli::override_if_set(*train_cmd, "--beta2", rc.train.adam_beta2, tr.beta2);
        detail_cli::override_if_set(*train_cmd, "--eps", rc.train.adam_eps, tr.eps);
        detail_cli::override_if_set(*train_cmd, "--seed", rc.train.seed, tr.seed);
        if (train_cmd->count("--adaptive-samples") > 0)
            rc.train.adaptive_window_samples = tr.adaptive_samples;
        detail_cli::override_if_set(*train_cmd, "--backward-step", rc.train.backward_step,
                                    tr.backward_step);
        if (train_cmd->count("--left-ctx") > 0)
            rc.train.cross_left_ctx = rc.infer.left_ctx = tr.left_ctx;
        if (train_cmd->count("--right-ctx") > 0)
            rc.train.cross_right_ctx = rc.infer.right_ctx = tr.right_ctx;
        if (train_cmd->count("--arch") > 0)
            rc.model.head = tr.arch == "cross" ? ClassifierHead::cls_token
                                               : ClassifierHead::sentence_mean;

        Vocab vocab = load_vocab(tr.vocab_path);
        auto lex = detail_cli::load_lexicon_bundle(tr.lexicon_path);
        rc.model.vocab_size = vocab.size();
        rc.model.phone_vocab_size = lex.present ? lex.phones.size() : 0;
        if (rc.model.use_phone && !lex.present)
            throw UsageError("--use-phone requires --lexicon");

        auto entries = config_entries(rc);
        entries.emplace_back("train", tr.train_path);
        entries.emplace_back("dev", tr.dev_path);
        entries.emplace_back("vocab", tr.vocab_path);
        entries.emplace_back("lexicon", tr.lexicon_path);
        entries.emplace_back("out", tr.out);
        detail_cli::print_fingerprint("train", std::move(entries));

        Corpus train_corpus = load_records(tr.train_path);
        Corpus dev_corpus;
        bool has_dev = !tr.dev_path.empty();
        if (has_dev) {
            dev_corpus = load_records(tr.dev_path);
            dev_corpus.split = Split::dev;
        }
        TrainResult result =
            train(train_corpus, has_dev ? &dev_corpus : nullptr, vocab, lex.lex_ptr(),
                  lex.phones_ptr(), rc.model, rc.train);
        for (std::size_t e = 0; e < result.epoch_losses.size(); ++e) {
            std::cout << "epoch " << e << ": loss=" << result.epoch_losses[e];
            if (e < result.dev_f1.size()) std::cout << " dev_f1=" << result.dev_f1[e];
            std::cout << "\n";
        }
        if (result.best_epoch >= 0)
            std::cout << "kept model from epoch " << result.best_epoch << "\n";
        save_model(result.model, tr.out);
        std::cout << "wrote checkpoint to " << tr.out << "\n";
    });

    // ---- segment --------------------------------------------------------
    auto* seg_cmd = app.add_subcommand("segment", "segment documents with a trained model");
    struct {
        std::string model, in, vocab, lexicon, out, config;
        std::string strategy = "fixed";
        int step = 10, window_tokens = 512, window_sentences = 60, left_ctx = 128,
            right_ctx = 128, workers = 1;
        double threshold = 0.5;
    } sg;
    seg_cmd->add_option("--model", sg.model, "model checkpoint")->required();
    seg_cmd->add_option("--in", sg.in, "corpus to segment")->required();
    seg_cmd->add_option("--vocab", sg.vocab, "vocabulary file")->required();
    seg_cmd->add_option("--lexicon", sg.lexicon, "phone lexicon file");
    seg_cmd->add_option("--out", sg.out, "segmentation results output (JSON lines)")->required();
    seg_cmd->add_option("--strategy", sg.strategy, "fixed|adaptive|cross-segment")
        ->check(CLI::IsMember({"fixed", "adaptive", "cross-segment"}));
    seg_cmd->add_option("--step", sg.step, "max backward step size (sentences)");
    seg_cmd->add_option("--threshold", sg.threshold, "boundary probability threshold");
    seg_cmd->add_option("--window-tokens", sg.window_tokens, "window token budget");
    seg_cmd->add_option("--window-sentences", sg.window_sentences, "max sentences per window");
    seg_cmd->add_option("--left-ctx", sg.left_ctx, "cross-segment left context tokens");
    seg_cmd->add_option("--right-ctx", sg.right_ctx, "cross-segment right context tokens");
    seg_cmd->add_option("--workers", sg.workers, "parallel workers over documents");
    seg_cmd->add_option("--config", sg.config, "key = value config file");
    seg_cmd->callback([&] {
        if (sg.workers < 1) throw UsageError("--workers must be >= 1");
        RunConfig rc;
        detail_cli::apply_config_sources(rc, sg.config);
        if (seg_cmd->count("--strategy") > 0) rc.infer.strategy = strategy_from_string(sg.strategy);
        detail_cli::override_if_set(*seg_cmd, "--step", rc.infer.step, sg.step);
        detail_cli::override_if_set(*seg_cmd, "--threshold", rc.infer.threshold, sg.threshold);
        detail_cli::override_if_set(*seg_cmd, "--window-tokens", rc.infer.window_token_budget,
                                    sg.window_tokens);
        detail_cli::override_if_set(*seg_cmd, "--window-sentences", rc.infer.max_window_sentences,
                                    sg.window_sentences);
        detail_cli::override_if_set(*seg_cmd, "--left-ctx", rc.infer.left_ctx, sg.left_ctx);
        detail_cli::override_if_set(*seg_cmd, "--right-ctx", rc.infer.right_ctx, sg.right_ctx);
        validate_inference_config(rc.infer);

        SegModel model = load_model(sg.model);
        Vocab vocab = load_vocab(sg.vocab);
        auto lex = detail_cli::load_lexicon_bundle(sg.lexicon);
        detail_cli::check_model_inputs(model, vocab, lex);

        auto entries = config_entries(rc);
        entries.emplace_back("model", sg.model);
        entries.emplace_back("in", sg.in);
        entries.emplace_back("vocab", sg.vocab);
        entries.emplace_back("lexicon", sg.lexicon);
        entries.emplace_back("out", sg.out);
        entries.emplace_back("workers", std::to_string(sg.workers));
        detail_cli::print_fingerprint("segment", std::move(entries));

        Corpus corpus = load_records(sg.in);
        auto results =
            detail_cli::segment_corpus_parallel(corpus, model, vocab, lex, rc.infer, sg.workers);
        save_results(results, sg.out);
        long calls = 0;
        for (const auto& r : results) calls += r.seg.n_encoder_calls;
        std::cout << "segmented " << results.size() << " documents (" << calls
                  << " encoder calls) to " << sg.out << "\n";
    });

    // ---- eval -----------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "score segmentation results against references");
    struct {
        std::string pred, ref, out;
    } ev;
    eval_cmd->add_option("--pred", ev.pred, "segmentation results file")->required();
    eval_cmd->add_option("--ref", ev.ref, "reference corpus file")->required();
    eval_cmd->add_option("--out", ev.out, "metric report output (JSON)");
    eval_cmd->callback([&] {
        detail_cli::print_fingerprint("eval",
                                      {{"pred", ev.pred}, {"ref", ev.ref}, {"out", ev.out}});
        auto results = load_results(ev.pred);
        Corpus refs = load_records(ev.ref);
        RunEval run = evaluate_results(results, refs);
        std::cout << format_metric_report(run.pooled) << "\n";
        if (!ev.out.empty()) save_metric_report(run.pooled, ev.out);
    });

    // ---- bench ----------------------------------------------------------
    auto* bench_cmd = app.add_subcommand("bench", "sweep inference strategies over step sizes");
    struct {
        std::string model, baseline, in, vocab, lexicon, out, series, config;
        std::vector<int> steps{1, 3, 5, 7, 10};
        int window_tokens = 512, window_sentences = 60, left_ctx = 128, right_ctx = 128;
        double threshold = 0.5;
    } bn;
    bench_cmd->add_option("--model", bn.model, "windowed model checkpoint")->required();
    bench_cmd->add_option("--baseline", bn.baseline, "cross-segment baseline checkpoint");
    bench_cmd->add_option("--in", bn.in, "corpus to benchmark on")->required();
    bench_cmd->add_option("--vocab", bn.vocab, "vocabulary file")->required();
    bench_cmd->add_option("--lexicon", bn.lexicon, "phone lexicon file");
    bench_cmd->add_option("--steps", bn.steps, "step sizes to sweep")->delimiter(',');
    bench_cmd->add_option("--out", bn.out, "bench report output (JSON lines)");
    bench_cmd->add_option("--series", bn.series, "path prefix for two-column plot series");
    bench_cmd->add_option("--window-tokens", bn.window_tokens, "window token budget");
    bench_cmd->add_option("--window-sentences", bn.window_sentences, "max sentences per window");
    bench_cmd->add_option("--left-ctx", bn.left_ctx, "cross-segment left context tokens");
    bench_cmd->add_option("--right-ctx", bn.right_ctx, "cross-segment right context tokens");
    bench_cmd->add_option("--threshold", bn.threshold, "boundary probability threshold");
    bench_cmd->add_option("--config", bn.config, "key = value config file");
    bench_cmd->callback([&] {
        RunConfig rc;
        detail_cli::apply_config_sources(rc, bn.config);
        detail_cli::override_if_set(*bench_cmd, "--window-tokens", rc.infer.window_token_budget,
                                    bn.window_tokens);
        detail_cli::override_if_set(*bench_cmd, "--window-sentences",
                                    rc.infer.max_window_sentences, bn.window_sentences);
        detail_cli::override_if_set(*bench_cmd, "--left-ctx", rc.infer.left_ctx, bn.left_ctx);
        detail_cli::override_if_set(*bench_cmd, "--right-ctx", rc.infer.right_ctx, bn.right_ctx);
        detail_cli::override_if_set(*bench_cmd, "--threshold", rc.infer.threshold, bn.threshold);
        validate_inference_config(rc.infer);

        SegModel model = load_model(bn.model);
        Vocab vocab = load_vocab(bn.vocab);
        auto lex = detail_cli::load_lexicon_bundle(bn.lexicon);
        detail_cli::check_model_inputs(model, vocab, lex);
        SegModel baseline;
        bool has_baseline = !bn.baseline.empty();
        if (has_baseline) {
            baseline = load_model(bn.baseline);
            detail_cli::check_model_inputs(baseline, vocab, lex);
        }

        auto entries = config_entries(rc);
        entries.emplace_back("model", bn.model);
        entries.emplace_back("baseline", bn.baseline);
        entries.emplace_back("in", bn.in);
        entries.emplace_back("vocab", bn.vocab);
        entries.emplace_back("lexicon", bn.lexicon);
        {
            std::string steps_str;
            for (int s : bn.steps) steps_str += std::to_string(s) + ",";
            entries.emplace_back("steps", steps_str);
        }
        detail_cli::print_fingerprint("bench", std::move(entries));

        Corpus corpus = load_records(bn.in);
        BenchReport report =
            bench_sweep(model, has_baseline ? &baseline : nullptr, corpus, vocab, lex.lex_ptr(),
                        lex.phones_ptr(), bn.steps, rc.infer);
        std::cout << format_bench_table(report);
        if (!bn.out.empty()) save_bench_report(report, bn.out);
        if (!bn.series.empty()) save_bench_series(report, bn.series);
    });

    // ---- aggregate ------------------------------------------------------
    auto* agg_cmd = app.add_subcommand("aggregate", "aggregate annotator votes into labels");
    struct {
        std::string in, docs, out, screen_refs;
        int k = 4, votes = 3;
        double min_f1 = 0.60;
    } ag;
    agg_cmd->add_option("--in", ag.in, "annotation records (JSON lines)")->required();
    agg_cmd->add_option("--docs", ag.docs, "corpus with the annotated sentences")->required();
    agg_cmd->add_option("--out", ag.out, "labeled corpus output")->required();
    agg_cmd->add_option("--k", ag.k, "annotators retained per document");
    agg_cmd->add_option("--votes", ag.votes, "positive votes required for a positive label");
    agg_cmd->add_option("--screen-refs", ag.screen_refs,
                        "reference corpus: drop annotators failing the F1 screen");
    agg_cmd->add_option("--min-f1", ag.min_f1, "screening threshold (strict)");
    agg_cmd->callback([&] {
        detail_cli::print_fingerprint("aggregate",
                                      {{"in", ag.in},
                                       {"docs", ag.docs},
                                       {"out", ag.out},
                                       {"k", std::to_string(ag.k)},
                                       {"votes", std::to_string(ag.votes)},
                                       {"screen_refs", ag.screen_refs},
                                       {"min_f1", detail_cfg::fmt_double(ag.min_f1)}});
        auto sets = load_annotations(ag.in);
        Corpus docs = load_records(ag.docs);

        if (!ag.screen_refs.empty()) {
            Corpus refs = load_records(ag.screen_refs);
            auto screened = screen(sets, refs, ag.min_f1);
            std::set<std::string> dropped;
            for (const auto& r : screened) {
                std::cout << "annotator " << r.annotator_id << ": "
                          << (r.pass ? "pass" : "fail") << " f1=" << r.f1;
                if (!r.note.empty()) std::cout << " (" << r.note << ")";
                std::cout << "\n";
                if (!r.pass) dropped.insert(r.annotator_id);
            }
            for (auto& a : sets) {
                for (std::size_t i = a.annotator_ids.size(); i > 0; --i) {
                    if (dropped.count(a.annotator_ids[i - 1]) > 0) {
                        a.annotator_ids.erase(a.annotator_ids.begin() +
                                              static_cast<long>(i - 1));
                        a.votes.erase(a.votes.begin() + static_cast<long>(i - 1));
                    }
                }
            }
        }

        std::map<std::string, const AnnotationSet*> set_by_doc;
        for (const auto& a : sets) set_by_doc[a.doc_id] = &a;
        for (auto& doc : docs.documents) {
            auto it = set_by_doc.find(doc.id);
            if (it == set_by_doc.end()) throw DataError("no annotations for doc " + doc.id);
            const AnnotationSet& a = *it->second;
            if (a.n_sentences != static_cast<int>(doc.sentences.size()))
                throw DataError("annotation length mismatch for doc " + doc.id);
            std::vector<bool> labels = aggregate_topk(a, ag.k, ag.votes);
            for (std::size_t s = 0; s < doc.sentences.size(); ++s)
                doc.sentences[s].is_boundary = labels[s];
            doc.sentences.back().is_boundary = true;  // document end stays a boundary
        }
        save_records(docs, ag.out);
        std::cout << "aggregated labels for " << docs.documents.size() << " documents to "
                  << ag.out << "\n";
    });

    // ---- gradcheck ------------------------------------------------------
    auto* gc_cmd = app.add_subcommand("gradcheck", "verify gradients against finite differences");
    struct {
        int d_model = 8, n_layers = 1, n_heads = 1, d_ff = 16, coords = 20;
        double epsilon = 1e-5, tol = 1e-4;
        std::uint64_t seed = 0;
        bool use_phone = false;
    } gc;
    gc_cmd->add_option("--d-model", gc.d_model, "hidden size");
    gc_cmd->add_option("--n-layers", gc.n_layers, "encoder layers");
    gc_cmd->add_option("--n-heads", gc.n_heads, "attention heads");
    gc_cmd->add_option("--d-ff", gc.d_ff, "feed-forward size");
    gc_cmd->add_option("--epsilon", gc.epsilon, "finite-difference step");
    gc_cmd->add_option("--coords", gc.coords, "coordinates checked per tensor");
    gc_cmd->add_option("--seed", gc.seed, "fixture and subsample seed");
    gc_cmd->add_option("--tol", gc.tol, "max relative error tolerated");
    gc_cmd->add_flag("--use-phone", gc.use_phone, "include phone embeddings in the check");
    gc_cmd->callback([&] {
        detail_cli::print_fingerprint("gradcheck",
                                      {{"d_model", std::to_string(gc.d_model)},
                                       {"n_layers", std::to_string(gc.n_layers)},
                                       {"n_heads", std::to_string(gc.n_heads)},
                                       {"d_ff", std::to_string(gc.d_ff)},
                                       {"epsilon", detail_cfg::fmt_double(gc.epsilon)},
                                       {"coords", std::to_string(gc.coords)},
                                       {"seed", std::to_string(gc.seed)},
                                       {"tol", detail_cfg::fmt_double(gc.tol)},
                                       {"use_phone", gc.use_phone ? "true" : "false"}});
        SynthSpec spec;
        spec.n_docs = 1;
        spec.sentences_per_doc_min = spec.sentences_per_doc_max = 3;
        spec.words_per_sentence_min = spec.words_per_sentence_max = 4;
        spec.segment_length_min = 1;
        spec.segment_length_max = 2;
        spec.vocab_size = 40;
        spec.boundary_cue_strength = 1.0;
        spec.seed = gc.seed;
        Corpus corpus = generate_synthetic(spec);
        Vocab vocab = build_vocab(corpus, 400);
        PhoneLexicon lex = generate_homophone_lexicon(spec, 1);
        PhoneIdMap phones = make_phone_id_map(lex);

        ModelConfig mc;
        mc.vocab_size = vocab.size();
        mc.phone_vocab_size = gc.use_phone ? phones.size() : 0;
        mc.d_model = gc.d_model;
        mc.n_layers = gc.n_layers;
        mc.n_heads = gc.n_heads;
        mc.d_ff = gc.d_ff;
        mc.max_seq_len = 64;
        mc.dropout_rate = 0.0;
        mc.use_phone = gc.use_phone;

        const Document& doc = corpus.documents[0];
        InferenceConfig pack_cfg;
        pack_cfg.window_token_budget = mc.max_seq_len;
        pack_cfg.max_window_sentences = 8;
        PackedWindow packed = pack_window(doc, 0, vocab, gc.use_phone ? &lex : nullptr,
                                          gc.use_phone ? &phones : nullptr, pack_cfg);
        std::vector<bool> labels;
        for (int s = packed.start; s < packed.end; ++s)
            labels.push_back(doc.sentences[s].is_boundary);

        SegModel model = init_model(mc, gc.seed);
        GradCheckReport rep =
            grad_check(model, packed.window, labels, gc.epsilon, gc.coords, gc.seed);
        std::cout << "max relative error: " << rep.max_rel_error << " (tensor "
                  << rep.worst_tensor << ", " << rep.n_coords << " coordinates)\n";
        if (rep.max_rel_error > gc.tol)
            throw NumericError("gradient check failed: max relative error " +
                               std::to_string(rep.max_rel_error) + " exceeds tolerance");
        std::cout << "gradient check passed\n";
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

inline int run_cli(const std::vector<std::string>& args) {
    std::vector<std::string> full;
    full.reserve(args.size() + 1);
    full.emplace_back("seqseg");
    full.insert(full.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    argv.reserve(full.size());
    for (const auto& s : full) argv.push_back(s.c_str());
    return run_cli(static_cast<int>(argv.size()), argv.data());
}

// ---------------------------------------------------------------------------
// End-to-end smoke run: synth -> vocab -> train -> segment (both strategies)
// -> eval -> bench, asserting success and non-empty outputs at each stage.
// ---------------------------------------------------------------------------

struct SmokePaths {
    std::string dir;
    std::string corpus, vocab, model;
    std::string seg_fixed, seg_adaptive;
    std::string eval_fixed, eval_adaptive;
    std::string bench;
};

inline SmokePaths pipeline_smoke(const std::string& tmpdir) {
    namespace fs = std::filesystem;
    fs::create_directories(tmpdir);
    SmokePaths p;
    p.dir = tmpdir;
    auto at = [&](const char* name) { return (fs::path(tmpdir) / name).string(); };
    p.corpus = at("corpus.jsonl");
    p.vocab = at("vocab.txt");
    p.model = at("model.ckpt");
    p.seg_fixed = at("seg_fixed.jsonl");
    p.seg_adaptive = at("seg_adaptive.jsonl");
    p.eval_fixed = at("eval_fixed.json");
    p.eval_adaptive = at("eval_adaptive.json");
    p.bench = at("bench.jsonl");

    auto run_stage = [&](const std::string& stage, const std::vector<std::string>& args,
                         const std::vector<std::string>& outputs) {
        int code = run_cli(args);
        if (code != 0)
            throw DataError("pipeline stage '" + stage + "' failed with exit code " +
                            std::to_string(code));
        for (const auto& out : outputs) {
            std::error_code ec;
            if (!fs::exists(out, ec) || fs::file_size(out, ec) == 0)
                throw DataError("pipeline stage '" + stage + "' left empty output " + out);
        }
    };

    run_stage("synth",
              {"synth", "--out", p.corpus, "--docs", "12", "--sentences-min", "8",
               "--sentences-max", "12", "--words-min", "3", "--words-max", "6", "--segment-min",
               "2", "--segment-max", "4", "--vocab", "60", "--cue-strength", "1.0", "--seed", "7"},
              {p.corpus});
    run_stage("vocab", {"vocab", "--in", p.corpus, "--out", p.vocab, "--max-size", "400"},
              {p.vocab});
    run_stage("train",
              {"train", "--train", p.corpus, "--vocab", p.vocab, "--out", p.model, "--d-model",
               "16", "--n-layers", "1", "--n-heads", "2", "--d-ff", "32", "--max-seq-len", "64",
               "--dropout", "0.1", "--epochs", "2", "--batch-size", "8", "--lr", "1e-3",
               "--max-sentences", "12", "--forward-step", "12", "--seed", "7"},
              {p.model});
    run_stage("segment-fixed",
              {"segment", "--model", p.model, "--in", p.corpus, "--vocab", p.vocab, "--out",
               p.seg_fixed, "--strategy", "fixed", "--step", "3", "--window-tokens", "64",
               "--window-sentences", "8"},
              {p.seg_fixed});
    run_stage("segment-adaptive",
              {"segment", "--model", p.model, "--in", p.corpus, "--vocab", p.vocab, "--out",
               p.seg_adaptive, "--strategy", "adaptive", "--step", "3", "--window-tokens", "64",
               "--window-sentences", "8"},
              {p.seg_adaptive});
    run_stage("eval-fixed",
              {"eval", "--pred", p.seg_fixed, "--ref", p.corpus, "--out", p.eval_fixed},
              {p.eval_fixed});
    run_stage("eval-adaptive",
              {"eval", "--pred", p.seg_adaptive, "--ref", p.corpus, "--out", p.eval_adaptive},
              {p.eval_adaptive});
    run_stage("bench",
              {"bench", "--model", p.model, "--in", p.corpus, "--vocab", p.vocab, "--steps",
               "1,3", "--out", p.bench, "--window-tokens", "64", "--window-sentences", "8"},
              {p.bench});
    return p;
}

}  // namespace seqseg
