#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqseg/common.hpp"
#include "seqseg/corpus.hpp"
#include "seqseg/inference.hpp"

namespace seqseg {

struct MetricReport {
    long tp = 0;
    long fp = 0;
    long fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

// Ratios are 0 when undefined, penalizing degenerate all-negative predictors.
inline MetricReport make_report(long tp, long fp, long fn) {
    MetricReport r;
    r.tp = tp;
    r.fp = fp;
    r.fn = fn;
    if (tp + fp > 0) r.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    if (tp + fn > 0) r.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    if (r.precision + r.recall > 0.0)
        r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

// Positive-class confusion counts pooled over documents (micro-average); the
// final sentence of every document is a trivial boundary and is excluded.
inline MetricReport positive_prf(const std::vector<std::vector<bool>>& pred,
                                 const std::vector<std::vector<bool>>& ref,
                                 const std::vector<std::string>* doc_ids = nullptr) {
    if (pred.size() != ref.size()) throw DataError("document count mismatch");
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t d = 0; d < pred.size(); ++d) {
        if (pred[d].size() != ref[d].size()) {
            std::string name = doc_ids ? (*doc_ids)[d] : "#" + std::to_string(d);
            throw DataError("prediction length mismatch for doc " + name);
        }
        for (std::size_t i = 0; i + 1 < pred[d].size(); ++i) {
            if (pred[d][i] && ref[d][i]) ++tp;
            else if (pred[d][i] && !ref[d][i]) ++fp;
            else if (!pred[d][i] && ref[d][i]) ++fn;
        }
    }
    return make_report(tp, fp, fn);
}

struct RunEval {
    std::vector<std::string> doc_ids;
    std::vector<double> doc_f1;  // per-document F1, same exclusion rule
    MetricReport pooled;
};

inline RunEval evaluate_run(const std::vector<std::vector<bool>>& pred,
                            const std::vector<std::vector<bool>>& ref,
                            const std::vector<std::string>& doc_ids) {
    if (pred.size() != doc_ids.size()) throw DataError("document count mismatch");
    RunEval run;
    run.doc_ids = doc_ids;
    run.pooled = positive_prf(pred, ref, &doc_ids);
    run.doc_f1.reserve(pred.size());
    for (std::size_t d = 0; d < pred.size(); ++d) {
        MetricReport r = positive_prf({pred[d]}, {ref[d]}, nullptr);
        run.doc_f1.push_back(r.f1);
    }
    return run;
}

inline std::vector<std::vector<bool>> corpus_labels(const Corpus& corpus) {
    std::vector<std::vector<bool>> out;
    out.reserve(corpus.documents.size());
    for (const auto& doc : corpus.documents) {
        std::vector<bool> labels;
        labels.reserve(doc.sentences.size());
        for (const auto& s : doc.sentences) labels.push_back(s.is_boundary);
        out.push_back(std::move(labels));
    }
    return out;
}

inline std::vector<std::string> corpus_ids(const Corpus& corpus) {
    std::vector<std::string> out;
    out.reserve(corpus.documents.size());
    for (const auto& doc : corpus.documents) out.push_back(doc.id);
    return out;
}

// Aligns prediction records with reference documents by id.
inline RunEval evaluate_results(const std::vector<DocResult>& results, const Corpus& refs) {
    std::map<std::string, const DocResult*> by_id;
    for (const auto& r : results) {
        if (!by_id.emplace(r.id, &r).second) throw DataError("duplicate predictions for doc " + r.id);
    }
    std::vector<std::vector<bool>> pred;
    pred.reserve(refs.documents.size());
    for (const auto& doc : refs.documents) {
        auto it = by_id.find(doc.id);
        if (it == by_id.end()) throw DataError("missing predictions for doc " + doc.id);
        pred.push_back(it->second->seg.decisions);
    }
    return evaluate_run(pred, corpus_labels(refs), corpus_ids(refs));
}

// ---------------------------------------------------------------------------
// Paired sign-flip permutation test over per-document F1 differences.
// ---------------------------------------------------------------------------

struct SignificanceSummary {
    double mean_diff = 0.0;  // mean over docs of (mean-over-seeds A - B) per-doc F1
    double p_value = 1.0;
    int n_docs = 0;
    bool exact = false;  // exhaustive sign enumeration vs Monte Carlo
};

inline SignificanceSummary compare_runs(const std::vector<RunEval>& runs_a,
                                        const std::vector<RunEval>& runs_b,
                                        std::uint64_t seed = 0, int max_exact_docs = 20,
                                        int mc_samples = 10000) {
    if (runs_a.size() < 2 || runs_b.size() < 2)
        throw DataError("need at least two seeds per side");
    const auto& ids = runs_a.front().doc_ids;
    auto check = [&](const RunEval& run) {
        if (run.doc_ids != ids) throw DataError("mismatched document sets across runs");
    };
    for (const auto& r : runs_a) check(r);
    for (const auto& r : runs_b) check(r);

    const int n = static_cast<int>(ids.size());
    if (n == 0) throw DataError("no documents to compare");
    std::vector<double> diff(n, 0.0);
    for (int d = 0; d < n; ++d) {
        double a = 0.0, b = 0.0;
        for (const auto& r : runs_a) a += r.doc_f1[d];
        for (const auto& r : runs_b) b += r.doc_f1[d];
        diff[d] = a / static_cast<double>(runs_a.size()) - b / static_cast<double>(runs_b.size());
    }

    SignificanceSummary s;
    s.n_docs = n;
    double observed = 0.0;
    for (double d : diff) observed += d;
    observed /= n;
    s.mean_diff = observed;

    const double target = std::abs(observed) - 1e-12;
    if (n <= max_exact_docs) {
        s.exact = true;
        const std::uint64_t total = 1ull << n;
        std::uint64_t hits = 0;
        for (std::uint64_t mask = 0; mask < total; ++mask) {
            double sum = 0.0;
            for (int d = 0; d < n; ++d) sum += (mask >> d) & 1 ? -diff[d] : diff[d];
            if (std::abs(sum / n) >= target) ++hits;
        }
        s.p_value = static_cast<double>(hits) / static_cast<double>(total);
    } else {
        Rng rng(seed);
        long hits = 0;
        for (int it = 0; it < mc_samples; ++it) {
            double sum = 0.0;
            for (int d = 0; d < n; ++d) sum += rng.bernoulli(0.5) ? -diff[d] : diff[d];
            if (std::abs(sum / n) >= target) ++hits;
        }
        s.p_value = static_cast<double>(hits + 1) / static_cast<double>(mc_samples + 1);
    }
    return s;
}

// ---------------------------------------------------------------------------
// Efficiency sweep: fixed and adaptive at each step, cross-segment once.
// ---------------------------------------------------------------------------

struct BenchRow {
    std::string strategy;
    int step = 0;  // 0 for the cross-segment row
    double f1 = 0.0;
    long n_encoder_calls_total = 0;
    double wall_ms_total = 0.0;
};

struct BenchReport {
    std::vector<BenchRow> rows;
};

namespace detail_bench {

template <typename SegmentFn>
inline BenchRow run_config(const std::string& strategy, int step, const Corpus& corpus,
                           SegmentFn&& segment_doc) {
    BenchRow row;
    row.strategy = strategy;
    row.step = step;
    std::vector<std::vector<bool>> pred;
    pred.reserve(corpus.documents.size());
    auto t0 = std::chrono::steady_clock::now();
    for (const auto& doc : corpus.documents) {
        SegmentationResult r = segment_doc(doc);
        row.n_encoder_calls_total += r.n_encoder_calls;
        pred.push_back(std::move(r.decisions));
    }
    auto t1 = std::chrono::steady_clock::now();
    row.wall_ms_total = std::chrono::duration<double, std::milli>(t1 - t0).count();
    auto ids = corpus_ids(corpus);
    row.f1 = positive_prf(pred, corpus_labels(corpus), &ids).f1;
    return row;
}

}  // namespace detail_bench

inline BenchReport bench_sweep(const SegModel& model, const SegModel* baseline_model,
                               const Corpus& corpus, const Vocab& vocab, const PhoneLexicon* lex,
                               const PhoneIdMap* phones, const std::vector<int>& steps,
                               const InferenceConfig& base_cfg) {
    if (corpus.documents.empty()) throw DataError("cannot benchmark an empty corpus");
    if (steps.empty()) throw UsageError("no step sizes requested");
    BenchReport report;
    for (int step : steps) {
        InferenceConfig cfg = base_cfg;
        cfg.step = step;
        cfg.strategy = Strategy::fixed;
        report.rows.push_back(detail_bench::run_config("fixed", step, corpus, [&](const Document& d) {
            return segment_fixed(d, model, vocab, lex, phones, cfg);
        }));
        cfg.strategy = Strategy::adaptive;
        report.rows.push_back(
            detail_bench::run_config("adaptive", step, corpus, [&](const Document& d) {
                return segment_adaptive(d, model, vocab, lex, phones, cfg);
            }));
    }
    if (baseline_model != nullptr) {
        InferenceConfig cfg = base_cfg;
        cfg.strategy = Strategy::cross_segment;
        report.rows.push_back(
            detail_bench::run_config("cross-segment", 0, corpus, [&](const Document& d) {
                return segment_cross_segment(d, *baseline_model, vocab, lex, phones, cfg);
            }));
    }
    return report;
}

inline void save_bench_report(const BenchReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write bench report: " + path);
    for (const auto& row : report.rows) {
        nlohmann::ordered_json j;
        j["strategy"] = row.strategy;
        j["step"] = row.step;
        j["f1"] = row.f1;
        j["n_encoder_calls_total"] = row.n_encoder_calls_total;
        j["wall_ms_total"] = row.wall_ms_total;
        out << j.dump() << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

inline std::string format_bench_table(const BenchReport& report) {
    std::string out = "strategy        step      f1       calls     wall_ms\n";
    char buf[128];
    for (const auto& row : report.rows) {
        std::snprintf(buf, sizeof(buf), "%-14s %5d  %7.4f  %9ld  %10.1f\n", row.strategy.c_str(),
                      row.step, row.f1, row.n_encoder_calls_total, row.wall_ms_total);
        out += buf;
    }
    return out;
}

// One two-column (step, value) file per curve, for external plotting.
inline void save_bench_series(const BenchReport& report, const std::string& path_prefix) {
    for (const std::string& strategy : {std::string("fixed"), std::string("adaptive")}) {
        for (const std::string& metric : {std::string("f1"), std::string("calls"), std::string("wall_ms")}) {
            std::string path = path_prefix + "-" + strategy + "-" + metric + ".tsv";
            std::ofstream out(path);
            if (!out) throw DataError("cannot write series file: " + path);
            for (const auto& row : report.rows) {
                if (row.strategy != strategy) continue;
                out << row.step << '\t';
                if (metric == "f1") out << row.f1;
                else if (metric == "calls") out << row.n_encoder_calls_total;
                else out << row.wall_ms_total;
                out << '\n';
            }
        }
    }
}

inline void save_metric_report(const MetricReport& r, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write metric report: " + path);
    nlohmann::ordered_json j;
    j["tp"] = r.tp;
    j["fp"] = r.fp;
    j["fn"] = r.fn;
    j["precision"] = r.precision;
    j["recall"] = r.recall;
    j["f1"] = r.f1;
    out << j.dump() << '\n';
    if (!out) throw DataError("write failed: " + path);
}

inline std::string format_metric_report(const MetricReport& r) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "tp=%ld fp=%ld fn=%ld precision=%.4f recall=%.4f f1=%.4f",
                  r.tp, r.fp, r.fn, r.precision, r.recall, r.f1);
    return buf;
}

}  // namespace seqseg
