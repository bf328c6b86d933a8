#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqseg/common.hpp"
#include "seqseg/corpus.hpp"
#include "seqseg/eval.hpp"

namespace seqseg {

struct AnnotationSet {
    std::string doc_id;
    int n_sentences = 0;
    std::vector<std::string> annotator_ids;
    std::vector<std::vector<bool>> votes;  // [annotator][sentence]
};

inline void validate_annotation_set(const AnnotationSet& a) {
    if (a.annotator_ids.size() != a.votes.size())
        throw DataError("annotator id/vote row count mismatch for doc " + a.doc_id);
    std::set<std::string> seen;
    for (const auto& id : a.annotator_ids) {
        if (id.empty()) throw DataError("empty annotator id for doc " + a.doc_id);
        if (!seen.insert(id).second)
            throw DataError("duplicate annotator " + id + " for doc " + a.doc_id);
    }
    for (const auto& row : a.votes) {
        if (static_cast<int>(row.size()) != a.n_sentences)
            throw DataError("vote row length mismatch for doc " + a.doc_id);
    }
}

// ---------------------------------------------------------------------------
// Screening against reference documents
// ---------------------------------------------------------------------------

struct ScreenResult {
    std::string annotator_id;
    bool pass = false;
    double f1 = 0.0;
    std::string note;  // diagnostic for failures that never reached scoring
};

// An annotator passes iff they annotated every reference document and their
// pooled positive F1 strictly exceeds min_f1.
inline std::vector<ScreenResult> screen(const std::vector<AnnotationSet>& sets,
                                        const Corpus& refs, double min_f1 = 0.60) {
    if (refs.documents.empty()) throw DataError("no reference documents for screening");
    std::map<std::string, const AnnotationSet*> set_by_doc;
    for (const auto& a : sets) {
        validate_annotation_set(a);
        if (!set_by_doc.emplace(a.doc_id, &a).second)
            throw DataError("duplicate annotation set for doc " + a.doc_id);
    }
    std::set<std::string> annotators;
    for (const auto& a : sets) {
        for (const auto& id : a.annotator_ids) annotators.insert(id);
    }

    auto refs_labels = corpus_labels(refs);
    std::vector<ScreenResult> out;
    for (const auto& annotator : annotators) {
        ScreenResult r;
        r.annotator_id = annotator;
        std::vector<std::vector<bool>> pred;
        std::vector<std::vector<bool>> ref;
        bool complete = true;
        for (std::size_t d = 0; d < refs.documents.size(); ++d) {
            const auto& doc = refs.documents[d];
            auto it = set_by_doc.find(doc.id);
            const AnnotationSet* a = it == set_by_doc.end() ? nullptr : it->second;
            int row = -1;
            if (a != nullptr) {
                for (std::size_t i = 0; i < a->annotator_ids.size(); ++i) {
                    if (a->annotator_ids[i] == annotator) row = static_cast<int>(i);
                }
            }
            if (row < 0) {
                r.note = "missing screening doc " + doc.id;
                complete = false;
                break;
            }
            if (a->n_sentences != static_cast<int>(doc.sentences.size()))
                throw DataError("annotation length mismatch for doc " + doc.id);
            pred.push_back(a->votes[row]);
            ref.push_back(refs_labels[d]);
        }
        if (complete) {
            r.f1 = positive_prf(pred, ref).f1;
            r.pass = r.f1 > min_f1;
        }
        out.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Leave-one-out scoring and top-k aggregation
// ---------------------------------------------------------------------------

// Reference for annotator i = vote of the others: with threshold_votes=0 a
// strict majority (ties negative), otherwise at least threshold_votes
// positives. Scores use the same positive-F1 convention as eval.
inline std::vector<double> loo_scores(const AnnotationSet& a, int threshold_votes = 0) {
    validate_annotation_set(a);
    const int n_ann = static_cast<int>(a.annotator_ids.size());
    if (n_ann < 3) throw DataError("leave-one-out scoring needs at least 3 annotators");
    std::vector<double> out(n_ann, 0.0);
    for (int i = 0; i < n_ann; ++i) {
        std::vector<bool> reference(a.n_sentences, false);
        for (int s = 0; s < a.n_sentences; ++s) {
            int pos = 0;
            for (int j = 0; j < n_ann; ++j) {
                if (j != i && a.votes[j][s]) ++pos;
            }
            reference[s] =
                threshold_votes > 0 ? pos >= threshold_votes : 2 * pos > n_ann - 1;
        }
        out[i] = positive_prf({a.votes[i]}, {reference}).f1;
    }
    return out;
}

// Keeps the k annotators with the highest LOO F1 for this document (ties by
// annotator id), then labels each sentence positive iff at least
// positive_threshold of the retained annotators voted positive.
inline std::vector<bool> aggregate_topk(const AnnotationSet& a, int k = 4,
                                        int positive_threshold = 3) {
    validate_annotation_set(a);
    const int n_ann = static_cast<int>(a.annotator_ids.size());
    if (k < 1) throw UsageError("k must be >= 1");
    if (k > n_ann)
        throw DataError("k exceeds annotator count for doc " + a.doc_id);
    if (positive_threshold < 1 || positive_threshold > k)
        throw UsageError("positive_threshold must be in [1, k]");

    std::vector<int> retained(n_ann);
    std::iota(retained.begin(), retained.end(), 0);
    if (k < n_ann) {
        std::vector<double> scores = loo_scores(a);
        std::sort(retained.begin(), retained.end(), [&](int x, int y) {
            if (scores[x] != scores[y]) return scores[x] > scores[y];
            return a.annotator_ids[x] < a.annotator_ids[y];
        });
        retained.resize(k);
    }

    std::vector<bool> labels(a.n_sentences, false);
    for (int s = 0; s < a.n_sentences; ++s) {
        int pos = 0;
        for (int i : retained) {
            if (a.votes[i][s]) ++pos;
        }
        labels[s] = pos >= positive_threshold;
    }
    return labels;
}

// ---------------------------------------------------------------------------
// Annotation records: one JSON object per line, {doc_id, annotator_id, votes}.
// ---------------------------------------------------------------------------

inline void save_annotations(const std::vector<AnnotationSet>& sets, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write annotation file: " + path);
    for (const auto& a : sets) {
        validate_annotation_set(a);
        for (std::size_t i = 0; i < a.annotator_ids.size(); ++i) {
            nlohmann::ordered_json j;
            j["doc_id"] = a.doc_id;
            j["annotator_id"] = a.annotator_ids[i];
            j["votes"] = a.votes[i];
            out << j.dump() << '\n';
        }
    }
    if (!out) throw DataError("write failed: " + path);
}

inline std::vector<AnnotationSet> load_annotations(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open annotation file: " + path);
    std::vector<AnnotationSet> sets;
    std::map<std::string, std::size_t> index_of;
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
        std::string doc_id, annotator_id;
        std::vector<bool> votes;
        try {
            doc_id = j.at("doc_id").get<std::string>();
            annotator_id = j.at("annotator_id").get<std::string>();
            votes = j.at("votes").get<std::vector<bool>>();
        } catch (const nlohmann::json::exception&) {
            throw DataError("missing record field at line " + std::to_string(line_no));
        }
        auto [it, inserted] = index_of.emplace(doc_id, sets.size());
        if (inserted) {
            AnnotationSet a;
            a.doc_id = doc_id;
            a.n_sentences = static_cast<int>(votes.size());
            sets.push_back(std::move(a));
        }
        AnnotationSet& a = sets[it->second];
        if (static_cast<int>(votes.size()) != a.n_sentences)
            throw DataError("vote row length mismatch for doc " + doc_id + " at line " +
                            std::to_string(line_no));
        for (const auto& id : a.annotator_ids) {
            if (id == annotator_id)
                throw DataError("duplicate annotator " + annotator_id + " for doc " + doc_id);
        }
        a.annotator_ids.push_back(annotator_id);
        a.votes.push_back(std::move(votes));
    }
    return sets;
}

}  // namespace seqseg
