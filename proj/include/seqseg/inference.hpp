#pragma once

#include <algorithm>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqseg/common.hpp"
#include "seqseg/corpus.hpp"
#include "seqseg/model.hpp"
#include "seqseg/tokenizer.hpp"

namespace seqseg {

enum class Strategy { fixed, adaptive, cross_segment };

inline const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::fixed: return "fixed";
        case Strategy::adaptive: return "adaptive";
        default: return "cross-segment";
    }
}

inline Strategy strategy_from_string(const std::string& s) {
    if (s == "fixed") return Strategy::fixed;
    if (s == "adaptive") return Strategy::adaptive;
    if (s == "cross-segment" || s == "cross_segment") return Strategy::cross_segment;
    throw UsageError("unknown strategy '" + s + "'");
}

struct InferenceConfig {
    Strategy strategy = Strategy::fixed;
    int window_token_budget = 512;
    int max_window_sentences = 60;
    // fixed: next start = last covered index - step + 1; adaptive: the maximum
    // backward step size of the search span.
    int step = 10;
    int left_ctx = 128;   // cross-segment context token lengths
    int right_ctx = 128;
    double threshold = 0.5;
};

inline void validate_inference_config(const InferenceConfig& c) {
    if (c.step < 1) throw UsageError("inference config: step must be >= 1");
    if (!(c.threshold > 0.0 && c.threshold < 1.0))
        throw UsageError("inference config: threshold outside (0,1)");
    if (c.window_token_budget < 2)
        throw UsageError("inference config: window token budget too small");
    if (c.max_window_sentences < 1)
        throw UsageError("inference config: max window sentences must be >= 1");
    if (c.left_ctx < 1 || c.right_ctx < 1)
        throw UsageError("inference config: context lengths must be >= 1");
}

struct SegmentationResult {
    std::vector<double> probs;
    std::vector<bool> decisions;
    long n_encoder_calls = 0;
    long n_windows = 0;

    bool operator==(const SegmentationResult&) const = default;
};

// ---------------------------------------------------------------------------
// Window packing
// ---------------------------------------------------------------------------

struct PackedWindow {
    WindowInput window;
    int start = 0;  // covered sentence range [start, end)
    int end = 0;
};

// [CLS] + whole sentences from `start` until the token budget or the sentence
// cap is hit; a final partial sentence is tail-truncated and kept when at
// least one token survives. A single over-long first sentence is truncated to
// the whole budget and still emitted.
inline PackedWindow pack_window(const std::vector<EncodedSentence>& sentences, int start,
                                const InferenceConfig& cfg) {
    if (start < 0 || start >= static_cast<int>(sentences.size()))
        throw DataError("window start outside document");
    PackedWindow out;
    out.start = start;
    out.end = start;
    out.window.token_ids.push_back(Vocab::CLS);
    out.window.phone_ids.push_back({});
    int budget = cfg.window_token_budget - 1;
    int limit = std::min(static_cast<int>(sentences.size()), start + cfg.max_window_sentences);
    for (int s = start; s < limit && budget > 0; ++s) {
        const auto& sent = sentences[s];
        int take = std::min(static_cast<int>(sent.token_ids.size()), budget);
        int span_start = static_cast<int>(out.window.token_ids.size());
        for (int t = 0; t < take; ++t) {
            out.window.token_ids.push_back(sent.token_ids[t]);
            out.window.phone_ids.push_back(sent.phone_ids[t]);
        }
        out.window.sentence_spans.emplace_back(span_start, span_start + take);
        out.end = s + 1;
        budget -= take;
        if (take < static_cast<int>(sent.token_ids.size())) break;
    }
    return out;
}

inline PackedWindow pack_window(const Document& doc, int start, const Vocab& vocab,
                                const PhoneLexicon* lex, const PhoneIdMap* phones,
                                const InferenceConfig& cfg) {
    return pack_window(encode_document(doc, vocab, lex, phones), start, cfg);
}

// [CLS] + last left_ctx tokens before the break + [SEP] + first right_ctx
// tokens after it, for the candidate break after sentence break_idx.
inline WindowInput make_cross_window(const std::vector<EncodedSentence>& sentences,
                                     int break_idx, int left_ctx, int right_ctx) {
    if (break_idx < 0 || break_idx + 1 >= static_cast<int>(sentences.size()))
        throw DataError("candidate break outside document");
    WindowInput w;
    w.token_ids.push_back(Vocab::CLS);
    w.phone_ids.push_back({});

    std::vector<int> left_tok;
    std::vector<std::vector<int>> left_ph;
    for (int s = break_idx; s >= 0 && static_cast<int>(left_tok.size()) < left_ctx; --s) {
        const auto& sent = sentences[s];
        for (int t = static_cast<int>(sent.token_ids.size()) - 1;
             t >= 0 && static_cast<int>(left_tok.size()) < left_ctx; --t) {
            left_tok.push_back(sent.token_ids[t]);
            left_ph.push_back(sent.phone_ids[t]);
        }
    }
    for (std::size_t i = left_tok.size(); i > 0; --i) {
        w.token_ids.push_back(left_tok[i - 1]);
        w.phone_ids.push_back(left_ph[i - 1]);
    }

    w.token_ids.push_back(Vocab::SEP);
    w.phone_ids.push_back({});

    int taken = 0;
    for (std::size_t s = static_cast<std::size_t>(break_idx) + 1;
         s < sentences.size() && taken < right_ctx; ++s) {
        const auto& sent = sentences[s];
        for (std::size_t t = 0; t < sent.token_ids.size() && taken < right_ctx; ++t) {
            w.token_ids.push_back(sent.token_ids[t]);
            w.phone_ids.push_back(sent.phone_ids[t]);
            ++taken;
        }
    }
    return w;
}

// ---------------------------------------------------------------------------
// Window scoring abstraction: the sliding-window logic only needs "score the
// window starting here", so tests can drive it with scripted probabilities.
// ---------------------------------------------------------------------------

struct WindowScore {
    int start = 0;  // covered range [start, end)
    int end = 0;
    std::vector<double> probs;  // one per covered sentence
};

class WindowScorer {
public:
    virtual ~WindowScorer() = default;
    virtual WindowScore score_from(int start) = 0;
    virtual int sentence_count() const = 0;
    long calls() const { return calls_; }

protected:
    long calls_ = 0;
};

class ModelScorer : public WindowScorer {
public:
    ModelScorer(const Document& doc, const SegModel& model, const Vocab& vocab,
                const PhoneLexicon* lex, const PhoneIdMap* phones, const InferenceConfig& cfg)
        : sentences_(encode_document(doc, vocab, lex, phones)), model_(model), cfg_(cfg) {
        if (model.config.head != ClassifierHead::sentence_mean)
            throw DataError("windowed segmentation needs a sentence-mean head model");
    }

    WindowScore score_from(int start) override {
        PackedWindow packed = pack_window(sentences_, start, cfg_);
        ++calls_;
        WindowScore out;
        out.start = packed.start;
        out.end = packed.end;
        out.probs = forward(packed.window, model_);
        return out;
    }

    int sentence_count() const override { return static_cast<int>(sentences_.size()); }

private:
    std::vector<EncodedSentence> sentences_;
    const SegModel& model_;
    InferenceConfig cfg_;
};

// Fixed per-sentence probabilities and a fixed window capacity; no model.
class ScriptedScorer : public WindowScorer {
public:
    ScriptedScorer(std::vector<double> probs, int window_sentences)
        : probs_(std::move(probs)), window_sentences_(window_sentences) {
        if (window_sentences_ < 1) throw DataError("window capacity must be >= 1");
    }

    WindowScore score_from(int start) override {
        if (start < 0 || start >= sentence_count()) throw DataError("window start outside document");
        ++calls_;
        WindowScore out;
        out.start = start;
        out.end = std::min(sentence_count(), start + window_sentences_);
        out.probs.assign(probs_.begin() + start, probs_.begin() + out.end);
        return out;
    }

    int sentence_count() const override { return static_cast<int>(probs_.size()); }

private:
    std::vector<double> probs_;
    int window_sentences_;
};

// ---------------------------------------------------------------------------
// Segmentation strategies
// ---------------------------------------------------------------------------

namespace detail_seg {

inline void finalize(SegmentationResult& r, const WindowScore& ws, int from, int to,
                     double threshold) {
    for (int i = from; i < to; ++i) {
        double p = ws.probs[i - ws.start];
        r.probs[i] = p;
        r.decisions[i] = p > threshold;
    }
}

}  // namespace detail_seg

// Fixed sliding window: next start = last covered index - step + 1, clamped
// to guarantee progress; each window finalizes everything before the next
// window's start, and the window covering the last sentence finalizes all of
// its sentences.
inline SegmentationResult segment_fixed(WindowScorer& scorer, const InferenceConfig& cfg) {
    validate_inference_config(cfg);
    const int n = scorer.sentence_count();
    if (n < 1) throw DataError("cannot segment an empty document");
    SegmentationResult r;
    r.probs.assign(n, 0.0);
    r.decisions.assign(n, false);
    long calls_before = scorer.calls();
    int start = 0;
    while (true) {
        WindowScore ws = scorer.score_from(start);
        ++r.n_windows;
        if (ws.end >= n) {
            detail_seg::finalize(r, ws, ws.start, n, cfg.threshold);
            break;
        }
        int next_start = std::max(ws.end - 1 - cfg.step + 1, ws.start + 1);
        detail_seg::finalize(r, ws, ws.start, next_start, cfg.threshold);
        start = next_start;
    }
    r.n_encoder_calls = scorer.calls() - calls_before;
    return r;
}

// Self-adaptive sliding window: search the backward span [max(a, b-step+1), b]
// of window [a, b] for decisions above threshold; restart after the most
// recent one, else at b.
inline SegmentationResult segment_adaptive(WindowScorer& scorer, const InferenceConfig& cfg) {
    validate_inference_config(cfg);
    const int n = scorer.sentence_count();
    if (n < 1) throw DataError("cannot segment an empty document");
    SegmentationResult r;
    r.probs.assign(n, 0.0);
    r.decisions.assign(n, false);
    long calls_before = scorer.calls();
    int start = 0;
    while (true) {
        WindowScore ws = scorer.score_from(start);
        ++r.n_windows;
        const int a = ws.start;
        const int b = ws.end - 1;
        if (ws.end >= n) {
            detail_seg::finalize(r, ws, a, n, cfg.threshold);
            break;
        }
        int next_start = b;
        for (int i = b; i >= std::max(a, b - cfg.step + 1); --i) {
            if (ws.probs[i - a] > cfg.threshold) {
                next_start = i + 1;
                break;
            }
        }
        next_start = std::max(next_start, a + 1);
        detail_seg::finalize(r, ws, a, next_start, cfg.threshold);
        start = next_start;
    }
    r.n_encoder_calls = scorer.calls() - calls_before;
    return r;
}

inline SegmentationResult segment_fixed(const Document& doc, const SegModel& model,
                                        const Vocab& vocab, const PhoneLexicon* lex,
                                        const PhoneIdMap* phones, const InferenceConfig& cfg) {
    ModelScorer scorer(doc, model, vocab, lex, phones, cfg);
    return segment_fixed(scorer, cfg);
}

inline SegmentationResult segment_adaptive(const Document& doc, const SegModel& model,
                                           const Vocab& vocab, const PhoneLexicon* lex,
                                           const PhoneIdMap* phones, const InferenceConfig& cfg) {
    ModelScorer scorer(doc, model, vocab, lex, phones, cfg);
    return segment_adaptive(scorer, cfg);
}

// One encoder call per candidate break (every sentence boundary except the
// document-final one, which is trivially positive).
inline SegmentationResult segment_cross_segment(const Document& doc, const SegModel& model,
                                                const Vocab& vocab, const PhoneLexicon* lex,
                                                const PhoneIdMap* phones,
                                                const InferenceConfig& cfg) {
    validate_inference_config(cfg);
    if (model.config.head != ClassifierHead::cls_token)
        throw DataError("cross-segment segmentation needs a cls-token head model");
    if (doc.sentences.empty()) throw DataError("cannot segment an empty document");
    if (cfg.left_ctx + cfg.right_ctx + 2 > model.config.max_seq_len)
        throw UsageError("context lengths exceed the model's max sequence length");
    auto sentences = encode_document(doc, vocab, lex, phones);
    const int n = static_cast<int>(sentences.size());
    SegmentationResult r;
    r.probs.assign(n, 0.0);
    r.decisions.assign(n, false);
    for (int i = 0; i + 1 < n; ++i) {
        WindowInput w = make_cross_window(sentences, i, cfg.left_ctx, cfg.right_ctx);
        double p = forward(w, model)[0];
        r.probs[i] = p;
        r.decisions[i] = p > cfg.threshold;
        ++r.n_encoder_calls;
        ++r.n_windows;
    }
    r.probs[n - 1] = 1.0;
    r.decisions[n - 1] = true;
    return r;
}

inline SegmentationResult segment(const Document& doc, const SegModel& model, const Vocab& vocab,
                                  const PhoneLexicon* lex, const PhoneIdMap* phones,
                                  const InferenceConfig& cfg) {
    switch (cfg.strategy) {
        case Strategy::fixed: return segment_fixed(doc, model, vocab, lex, phones, cfg);
        case Strategy::adaptive: return segment_adaptive(doc, model, vocab, lex, phones, cfg);
        default: return segment_cross_segment(doc, model, vocab, lex, phones, cfg);
    }
}

inline long count_encoder_calls(const SegmentationResult& r) { return r.n_encoder_calls; }

// ---------------------------------------------------------------------------
// Result records: one JSON object per line,
// {id, probs, decisions, n_windows, n_encoder_calls}.
// ---------------------------------------------------------------------------

struct DocResult {
    std::string id;
    SegmentationResult seg;

    bool operator==(const DocResult&) const = default;
};

inline std::vector<DocResult> segment_corpus(const Corpus& corpus, const SegModel& model,
                                             const Vocab& vocab, const PhoneLexicon* lex,
                                             const PhoneIdMap* phones, const InferenceConfig& cfg) {
    std::vector<DocResult> out;
    out.reserve(corpus.documents.size());
    for (const auto& doc : corpus.documents) {
        out.push_back({doc.id, segment(doc, model, vocab, lex, phones, cfg)});
    }
    return out;
}

inline void save_results(const std::vector<DocResult>& results, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write results file: " + path);
    for (const auto& r : results) {
        nlohmann::ordered_json j;
        j["id"] = r.id;
        j["probs"] = r.seg.probs;
        j["decisions"] = r.seg.decisions;
        j["n_windows"] = r.seg.n_windows;
        j["n_encoder_calls"] = r.seg.n_encoder_calls;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

inline std::vector<DocResult> load_results(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open results file: " + path);
    std::vector<DocResult> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception&) {
            throw DataError("malformed record at line " + std::to_string(line_no));
        }
        try {
            DocResult r;
            r.id = j.at("id").get<std::string>();
            r.seg.probs = j.at("probs").get<std::vector<double>>();
            r.seg.decisions = j.at("decisions").get<std::vector<bool>>();
            r.seg.n_windows = j.at("n_windows").get<long>();
            r.seg.n_encoder_calls = j.at("n_encoder_calls").get<long>();
            if (r.seg.probs.size() != r.seg.decisions.size())
                throw DataError("probs/decisions length mismatch at line " +
                                std::to_string(line_no));
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception&) {
            throw DataError("missing record field at line " + std::to_string(line_no));
        }
    }
    return out;
}

}  // namespace seqseg
