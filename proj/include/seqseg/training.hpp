#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "seqseg/common.hpp"
#include "seqseg/corpus.hpp"
#include "seqseg/eval.hpp"
#include "seqseg/inference.hpp"
#include "seqseg/lexicon.hpp"
#include "seqseg/model.hpp"
#include "seqseg/tokenizer.hpp"

namespace seqseg {

struct TrainConfig {
    int forward_step = 10;
    int max_sentences = 60;
    int max_seq_len = 512;
    int batch_size = 48;
    int epochs = 2;
    double learning_rate = 5e-5;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    std::uint64_t seed = 0;
    // Window starts driven by reference boundaries instead of a fixed stride
    // (the weaker alternative; off by default).
    bool adaptive_window_samples = false;
    int backward_step = 10;  // search span for adaptive sample construction
    int cross_left_ctx = 128;
    int cross_right_ctx = 128;
};

inline void validate_train_config(const TrainConfig& c) {
    if (c.forward_step < 1) throw UsageError("train config: forward_step must be >= 1");
    if (c.max_sentences < c.forward_step)
        throw UsageError("train config: max_sentences must be >= forward_step");
    if (c.max_seq_len < 8) throw UsageError("train config: max_seq_len must be >= 8");
    if (c.max_sentences > c.max_seq_len - 1)
        throw UsageError("train config: max_sentences exceeds the token budget");
    if (c.batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
    if (c.epochs < 1) throw UsageError("train config: epochs must be >= 1");
    if (c.learning_rate < 0.0) throw UsageError("train config: negative learning rate");
    if (c.adam_beta1 < 0.0 || c.adam_beta1 >= 1.0 || c.adam_beta2 < 0.0 || c.adam_beta2 >= 1.0)
        throw UsageError("train config: adam betas outside [0,1)");
    if (c.adam_eps <= 0.0) throw UsageError("train config: adam_eps must be positive");
    if (c.backward_step < 1) throw UsageError("train config: backward_step must be >= 1");
    if (c.cross_left_ctx < 1 || c.cross_right_ctx < 1)
        throw UsageError("train config: context lengths must be >= 1");
}

enum class SampleVariant { tail_truncate, per_sentence_truncate };

struct TrainSample {
    WindowInput window;
    std::vector<bool> labels;
    SampleVariant variant = SampleVariant::tail_truncate;
};

namespace detail_samples {

// Content key for deduplication: two samples are the same if they present the
// same tokens, spans, phone plan and labels, regardless of variant.
inline std::string sample_key(const TrainSample& s) {
    std::ostringstream key;
    for (int id : s.window.token_ids) key << id << ',';
    key << ';';
    for (const auto& [a, b] : s.window.sentence_spans) key << a << '-' << b << ',';
    key << ';';
    for (const auto& ids : s.window.phone_ids) {
        for (int p : ids) key << p << '.';
        key << ',';
    }
    key << ';';
    for (bool l : s.labels) key << (l ? '1' : '0');
    return key.str();
}

inline std::vector<int> fixed_window_starts(int n_sentences, const TrainConfig& cfg) {
    std::vector<int> starts;
    for (int s = 0; s < n_sentences; s += cfg.forward_step) starts.push_back(s);
    return starts;
}

// Start placement driven by the reference boundaries, mirroring the adaptive
// inference rule with gold labels standing in for positive decisions.
inline std::vector<int> adaptive_window_starts(const Document& doc, const TrainConfig& cfg) {
    const int n = static_cast<int>(doc.sentences.size());
    std::vector<int> starts;
    int start = 0;
    while (true) {
        starts.push_back(start);
        int b = std::min(start + cfg.max_sentences, n) - 1;
        if (b >= n - 1) break;
        int next = b;
        for (int i = b; i >= std::max(start, b - cfg.backward_step + 1); --i) {
            if (doc.sentences[i].is_boundary) {
                next = i + 1;
                break;
            }
        }
        start = std::max(next, start + 1);
    }
    return starts;
}

}  // namespace detail_samples

// Both truncation variants of every window, deduplicated: tail_truncate packs
// whole sentences into the token budget (max_seq_len - 1 after [CLS]) and
// truncates the final partial sentence; per_sentence_truncate keeps every
// window sentence, capping each at floor((max_seq_len - 1) / n) tokens.
inline std::vector<TrainSample> build_training_samples(const Document& doc, const Vocab& vocab,
                                                       const PhoneLexicon* lex,
                                                       const PhoneIdMap* phones,
                                                       const TrainConfig& cfg) {
    validate_train_config(cfg);
    validate_document(doc);
    auto sentences = encode_document(doc, vocab, lex, phones);
    const int n = static_cast<int>(sentences.size());
    std::vector<int> starts = cfg.adaptive_window_samples
                                  ? detail_samples::adaptive_window_starts(doc, cfg)
                                  : detail_samples::fixed_window_starts(n, cfg);

    InferenceConfig pack_cfg;
    pack_cfg.window_token_budget = cfg.max_seq_len;
    pack_cfg.max_window_sentences = cfg.max_sentences;

    std::vector<TrainSample> out;
    std::set<std::string> seen;
    auto push_unique = [&](TrainSample&& sample) {
        if (seen.insert(detail_samples::sample_key(sample)).second)
            out.push_back(std::move(sample));
    };

    for (int a : starts) {
        PackedWindow packed = pack_window(sentences, a, pack_cfg);
        TrainSample tail;
        tail.window = std::move(packed.window);
        tail.variant = SampleVariant::tail_truncate;
        for (int s = packed.start; s < packed.end; ++s)
            tail.labels.push_back(doc.sentences[s].is_boundary);
        push_unique(std::move(tail));

        int e = std::min(a + cfg.max_sentences, n);
        int cap = (cfg.max_seq_len - 1) / (e - a);
        TrainSample per;
        per.variant = SampleVariant::per_sentence_truncate;
        per.window.token_ids.push_back(Vocab::CLS);
        per.window.phone_ids.push_back({});
        for (int s = a; s < e; ++s) {
            int take = std::min(static_cast<int>(sentences[s].token_ids.size()), cap);
            int span_start = static_cast<int>(per.window.token_ids.size());
            for (int t = 0; t < take; ++t) {
                per.window.token_ids.push_back(sentences[s].token_ids[t]);
                per.window.phone_ids.push_back(sentences[s].phone_ids[t]);
            }
            per.window.sentence_spans.emplace_back(span_start, span_start + take);
            per.labels.push_back(doc.sentences[s].is_boundary);
        }
        push_unique(std::move(per));
    }
    return out;
}

// One single-decision sample per candidate break, for the cls-token head.
inline std::vector<TrainSample> build_cross_segment_samples(const Document& doc,
                                                            const Vocab& vocab,
                                                            const PhoneLexicon* lex,
                                                            const PhoneIdMap* phones,
                                                            const TrainConfig& cfg) {
    validate_train_config(cfg);
    validate_document(doc);
    auto sentences = encode_document(doc, vocab, lex, phones);
    const int n = static_cast<int>(sentences.size());
    std::vector<TrainSample> out;
    for (int i = 0; i + 1 < n; ++i) {
        TrainSample s;
        s.window = make_cross_window(sentences, i, cfg.cross_left_ctx, cfg.cross_right_ctx);
        s.labels = {doc.sentences[i].is_boundary};
        out.push_back(std::move(s));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Adam with bias correction
// ---------------------------------------------------------------------------

struct AdamState {
    SegModel m;
    SegModel v;
    long t = 0;
};

inline AdamState make_adam_state(const SegModel& model) {
    AdamState s;
    s.m = zeros_like(model);
    s.v = zeros_like(model);
    return s;
}

inline void adam_step(SegModel& params, const SegModel& grads, AdamState& state, double lr,
                      double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
    auto ps = params.tensors();
    auto gs = grads.tensors();
    auto ms = state.m.tensors();
    auto vs = state.v.tensors();
    if (gs.size() != ps.size()) throw DataError("parameter/gradient tensor count mismatch");
    ++state.t;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
    for (std::size_t i = 0; i < ps.size(); ++i) {
        const Mat& g = *gs[i].second;
        Mat& p = *ps[i].second;
        if (g.rows() != p.rows() || g.cols() != p.cols())
            throw DataError("gradient shape mismatch for " + gs[i].first);
        if (!g.allFinite()) throw NumericError("non-finite gradient in " + gs[i].first);
        Mat& m = *ms[i].second;
        Mat& v = *vs[i].second;
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g).eval();
        p.array() -= lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps);
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct TrainResult {
    SegModel model;
    std::vector<double> epoch_losses;  // mean per-sample loss
    std::vector<double> dev_f1;        // filled when a dev corpus is given
    int best_epoch = -1;               // epoch of the returned model under dev selection
};

// Returning true from the callback stops training after that epoch.
using EpochCallback = std::function<bool(int epoch, double mean_loss, const SegModel& model)>;

inline double evaluate_corpus_f1(const Corpus& corpus, const SegModel& model, const Vocab& vocab,
                                 const PhoneLexicon* lex, const PhoneIdMap* phones,
                                 const InferenceConfig& cfg) {
    return evaluate_results(segment_corpus(corpus, model, vocab, lex, phones, cfg), corpus)
        .pooled.f1;
}

inline TrainResult train(const Corpus& train_corpus, const Corpus* dev_corpus, const Vocab& vocab,
                         const PhoneLexicon* lex, const PhoneIdMap* phones,
                         const ModelConfig& model_cfg, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = nullptr) {
    validate_train_config(cfg);
    validate_config(model_cfg);
    if (train_corpus.documents.empty()) throw DataError("training corpus is empty");

    std::vector<TrainSample> samples;
    for (const auto& doc : train_corpus.documents) {
        auto docs_samples = model_cfg.head == ClassifierHead::cls_token
                                ? build_cross_segment_samples(doc, vocab, lex, phones, cfg)
                                : build_training_samples(doc, vocab, lex, phones, cfg);
        for (auto& s : docs_samples) samples.push_back(std::move(s));
    }
    if (samples.empty()) throw DataError("no training samples could be built");

    TrainResult result;
    result.model = init_model(model_cfg, cfg.seed);
    AdamState state = make_adam_state(result.model);
    Rng rng(cfg.seed);

    InferenceConfig dev_cfg;
    dev_cfg.strategy = model_cfg.head == ClassifierHead::cls_token ? Strategy::cross_segment
                                                                   : Strategy::fixed;
    dev_cfg.window_token_budget = cfg.max_seq_len;
    dev_cfg.max_window_sentences = cfg.max_sentences;
    dev_cfg.left_ctx = cfg.cross_left_ctx;
    dev_cfg.right_ctx = cfg.cross_right_ctx;

    SegModel best_model = result.model;
    double best_f1 = -1.0;

    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    SegModel acc = zeros_like(result.model);
    auto acc_tensors = acc.tensors();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t batch_start = 0; batch_start < order.size();
             batch_start += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t batch_end =
                std::min(order.size(), batch_start + static_cast<std::size_t>(cfg.batch_size));
            for (auto& [name, p] : acc_tensors) p->setZero();
            for (std::size_t i = batch_start; i < batch_end; ++i) {
                const TrainSample& s = samples[order[i]];
                DropoutPlan plan{model_cfg.dropout_rate, &rng};
                BackwardResult br = backward(s.window, s.labels, result.model, plan);
                if (!std::isfinite(br.loss))
                    throw NumericError("training diverged: non-finite loss");
                loss_sum += br.loss;
                auto g_tensors = br.grads.tensors();
                for (std::size_t t = 0; t < acc_tensors.size(); ++t)
                    *acc_tensors[t].second += *g_tensors[t].second;
            }
            double inv = 1.0 / static_cast<double>(batch_end - batch_start);
            for (auto& [name, p] : acc_tensors) *p *= inv;
            adam_step(result.model, acc, state, cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2,
                      cfg.adam_eps);
        }
        double mean_loss = loss_sum / static_cast<double>(samples.size());
        result.epoch_losses.push_back(mean_loss);

        if (dev_corpus != nullptr) {
            double f1 = evaluate_corpus_f1(*dev_corpus, result.model, vocab, lex, phones, dev_cfg);
            result.dev_f1.push_back(f1);
            if (f1 > best_f1) {
                best_f1 = f1;
                best_model = result.model;
                result.best_epoch = epoch;
            }
        }
        if (on_epoch && on_epoch(epoch, mean_loss, result.model)) break;
    }

    if (dev_corpus != nullptr && result.best_epoch >= 0) result.model = best_model;
    return result;
}

// ---------------------------------------------------------------------------
// Gradient verification against central finite differences
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_tensor;
    long n_coords = 0;
};

// Compares analytic gradients to (f(t+e) - f(t-e)) / 2e on a random subsample
// of at least `coords_per_tensor` coordinates per tensor (all of them for
// small tensors). Relative error uses max(|fd|, |analytic|, 1e-6).
inline GradCheckReport grad_check(SegModel& model, const WindowInput& w,
                                  const std::vector<bool>& labels, double epsilon = 1e-5,
                                  int coords_per_tensor = 20, std::uint64_t seed = 0,
                                  const std::vector<std::string>* only_tensors = nullptr) {
    BackwardResult br = backward(w, labels, model);
    auto params = model.tensors();
    auto grads = br.grads.tensors();
    Rng rng(seed);
    GradCheckReport rep;
    for (std::size_t ti = 0; ti < params.size(); ++ti) {
        const std::string& name = params[ti].first;
        if (only_tensors != nullptr &&
            std::find(only_tensors->begin(), only_tensors->end(), name) == only_tensors->end())
            continue;
        Mat& p = *params[ti].second;
        const Mat& g = *grads[ti].second;
        const long size = static_cast<long>(p.size());
        if (size == 0) continue;
        std::set<long> coords;
        if (size <= coords_per_tensor) {
            for (long c = 0; c < size; ++c) coords.insert(c);
        } else {
            while (static_cast<int>(coords.size()) < coords_per_tensor)
                coords.insert(rng.uniform_int(0, size - 1));
        }
        for (long c : coords) {
            const long r = c / p.cols();
            const long col = c % p.cols();
            const double orig = p(r, col);
            p(r, col) = orig + epsilon;
            double lp = compute_loss(w, labels, model);
            p(r, col) = orig - epsilon;
            double lm = compute_loss(w, labels, model);
            p(r, col) = orig;
            double fd = (lp - lm) / (2.0 * epsilon);
            double an = g(r, col);
            double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6});
            if (rel > rep.max_rel_error) {
                rep.max_rel_error = rel;
                rep.worst_tensor = name;
            }
            ++rep.n_coords;
        }
    }
    return rep;
}

}  // namespace seqseg
