#pragma once

#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "seqseg/common.hpp"
#include "seqseg/lexicon.hpp"

namespace seqseg {

enum class Source { written, spoken };

inline const char* to_string(Source s) { return s == Source::written ? "written" : "spoken"; }

inline Source source_from_string(const std::string& s) {
    if (s == "written") return Source::written;
    if (s == "spoken") return Source::spoken;
    throw DataError("unknown source '" + s + "'");
}

struct Sentence {
    std::vector<std::string> words;
    bool is_boundary = false;  // true = this sentence ends a segment

    bool operator==(const Sentence&) const = default;
};

struct Document {
    std::string id;
    std::vector<Sentence> sentences;
    Source source = Source::written;

    bool operator==(const Document&) const = default;
};

enum class Split { train, dev, test, unsplit };

struct Corpus {
    std::vector<Document> documents;
    Split split = Split::unsplit;

    bool operator==(const Corpus&) const = default;
};

inline void validate_document(const Document& doc) {
    if (doc.sentences.empty()) throw DataError("document '" + doc.id + "' has no sentences");
    for (const auto& s : doc.sentences) {
        if (s.words.empty()) throw DataError("document '" + doc.id + "' has an empty sentence");
        for (const auto& w : s.words) {
            if (w.empty()) throw DataError("document '" + doc.id + "' has an empty word");
            if (contains_whitespace(w)) {
                throw DataError("document '" + doc.id + "' has a word with internal whitespace");
            }
        }
    }
    if (!doc.sentences.back().is_boundary) {
        throw DataError("document '" + doc.id + "' must end with a boundary label");
    }
}

inline void validate_corpus(const Corpus& corpus) {
    std::set<std::string> ids;
    for (const auto& doc : corpus.documents) {
        validate_document(doc);
        if (!ids.insert(doc.id).second) throw DataError("duplicate document id '" + doc.id + "'");
    }
}

// ---------------------------------------------------------------------------
// Wiki-style plain text parsing
// ---------------------------------------------------------------------------

enum class WikiGranularity { section, paragraph };

namespace detail {

inline bool is_sentence_final(const std::string& cp) {
    return cp == "." || cp == "?" || cp == "!" ||
           cp == "\xE3\x80\x82" ||      // U+3002 ideographic full stop
           cp == "\xEF\xBC\x8E" ||      // U+FF0E fullwidth full stop
           cp == "\xEF\xBC\x9F" ||      // U+FF1F fullwidth question mark
           cp == "\xEF\xBC\x81";        // U+FF01 fullwidth exclamation mark
}

inline std::string trim(const std::string& s) {
    std::size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

inline bool is_heading_line(const std::string& line) {
    std::string t = trim(line);
    return t.size() >= 4 && t.substr(0, 2) == "==" && t.substr(t.size() - 2) == "==";
}

// Splits a text block into sentences: a sentence ends at sentence-final
// punctuation (a run of them stays with the sentence); words are
// whitespace-delimited.
inline std::vector<Sentence> split_sentences(const std::string& block) {
    std::vector<Sentence> out;
    std::vector<std::string> cps = utf8_chars(block);
    std::string chunk;
    auto flush = [&]() {
        std::vector<std::string> words = split_whitespace(chunk);
        chunk.clear();
        if (!words.empty()) out.push_back(Sentence{std::move(words), false});
    };
    for (std::size_t i = 0; i < cps.size(); ++i) {
        chunk += cps[i];
        if (is_sentence_final(cps[i])) {
            while (i + 1 < cps.size() && is_sentence_final(cps[i + 1])) {
                chunk += cps[++i];
            }
            flush();
        }
    }
    flush();
    return out;
}

}  // namespace detail

// Splits raw text into segments (blank lines for paragraph granularity,
// `== ... ==` heading lines for section granularity; headings are discarded),
// then into sentences. The last sentence of each segment is labeled true.
inline Document parse_wiki_text(const std::string& raw, WikiGranularity granularity,
                                const std::string& id = "doc") {
    if (detail::trim(raw).empty()) throw DataError("empty document");

    std::vector<std::string> blocks;
    std::string current;
    std::istringstream in(raw);
    std::string line;
    auto close_block = [&]() {
        blocks.push_back(current);
        current.clear();
    };
    while (std::getline(in, line)) {
        if (granularity == WikiGranularity::section) {
            if (detail::is_heading_line(line)) {
                close_block();
                continue;
            }
        } else {
            if (detail::trim(line).empty()) {
                close_block();
                continue;
            }
        }
        current += line;
        current += '\n';
    }
    close_block();

    Document doc;
    doc.id = id;
    doc.source = Source::written;
    for (const auto& block : blocks) {
        std::vector<Sentence> sentences = detail::split_sentences(block);
        if (sentences.empty()) continue;  // zero-sentence segment: skipped
        sentences.back().is_boundary = true;
        doc.sentences.insert(doc.sentences.end(), sentences.begin(), sentences.end());
    }
    if (doc.sentences.empty()) throw DataError("empty document");
    validate_document(doc);
    return doc;
}

// ---------------------------------------------------------------------------
// Line-delimited record files
// Schema per line: {id: string, sentences: [[string]], labels: [bool],
//                   source: "written"|"spoken"}
// ---------------------------------------------------------------------------

inline Corpus load_records(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open corpus file: " + path);
    Corpus corpus;
    std::string line;
    int line_no = 0;
    std::set<std::string> ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (detail::trim(line).empty()) continue;
        nlohmann::json rec;
        try {
            rec = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed record at line " + std::to_string(line_no) + ": " + e.what());
        }
        auto where = " at line " + std::to_string(line_no);
        if (!rec.is_object() || !rec.contains("id") || !rec.contains("sentences") ||
            !rec.contains("labels") || !rec.contains("source")) {
            throw DataError("missing record field" + where);
        }
        Document doc;
        try {
            doc.id = rec.at("id").get<std::string>();
            doc.source = source_from_string(rec.at("source").get<std::string>());
            const auto& sents = rec.at("sentences");
            const auto& labels = rec.at("labels");
            if (!sents.is_array() || !labels.is_array()) throw DataError("bad field type" + where);
            if (sents.size() != labels.size()) {
                throw DataError("label count mismatch at line " + std::to_string(line_no));
            }
            for (std::size_t i = 0; i < sents.size(); ++i) {
                Sentence s;
                s.words = sents[i].get<std::vector<std::string>>();
                s.is_boundary = labels[i].get<bool>();
                doc.sentences.push_back(std::move(s));
            }
        } catch (const nlohmann::json::exception& e) {
            throw DataError("malformed record at line " + std::to_string(line_no) + ": " + e.what());
        }
        try {
            validate_document(doc);
        } catch (const DataError& e) {
            throw DataError(std::string(e.what()) + where);
        }
        if (!ids.insert(doc.id).second) {
            throw DataError("duplicate document id '" + doc.id + "'" + where);
        }
        corpus.documents.push_back(std::move(doc));
    }
    if (corpus.documents.empty()) {
        std::cerr << "warning: corpus file '" << path << "' contains no documents\n";
    }
    return corpus;
}

inline void save_records(const Corpus& corpus, const std::string& path) {
    validate_corpus(corpus);
    std::ofstream out(path);
    if (!out) throw DataError("cannot write corpus file: " + path);
    for (const auto& doc : corpus.documents) {
        nlohmann::json sents = nlohmann::json::array();
        nlohmann::json labels = nlohmann::json::array();
        for (const auto& s : doc.sentences) {
            sents.push_back(s.words);
            labels.push_back(s.is_boundary);
        }
        nlohmann::ordered_json rec;
        rec["id"] = doc.id;
        rec["sentences"] = std::move(sents);
        rec["labels"] = std::move(labels);
        rec["source"] = to_string(doc.source);
        out << rec.dump() << '\n';
    }
    if (!out) throw DataError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

struct SynthSpec {
    int n_docs = 1;
    int sentences_per_doc_min = 1, sentences_per_doc_max = 1;
    int words_per_sentence_min = 1, words_per_sentence_max = 1;
    int segment_length_min = 1, segment_length_max = 1;   // sentences per segment
    int vocab_size = 2;
    double boundary_cue_strength = 0.0;  // P(segment-initial sentence starts with a cue word)
    std::uint64_t seed = 0;
};

inline void validate_synth_spec(const SynthSpec& spec) {
    auto range_ok = [](int lo, int hi) { return lo >= 1 && lo <= hi; };
    if (spec.n_docs < 1) throw DataError("synth spec: n_docs must be >= 1");
    if (!range_ok(spec.sentences_per_doc_min, spec.sentences_per_doc_max))
        throw DataError("synth spec: degenerate sentences_per_doc range");
    if (!range_ok(spec.words_per_sentence_min, spec.words_per_sentence_max))
        throw DataError("synth spec: degenerate words_per_sentence range");
    if (!range_ok(spec.segment_length_min, spec.segment_length_max))
        throw DataError("synth spec: degenerate segment_length range");
    if (spec.vocab_size < 2) throw DataError("synth spec: vocab_size must be >= 2");
    if (spec.boundary_cue_strength < 0.0 || spec.boundary_cue_strength > 1.0)
        throw DataError("synth spec: boundary_cue_strength outside [0,1]");
}

// The first cue_vocab_size(spec) synthetic words form the cue sub-vocabulary.
inline int cue_vocab_size(const SynthSpec& spec) {
    return std::max(1, spec.vocab_size / 20);
}

inline std::string synth_cue_word(int i) { return "cue" + std::to_string(i); }
inline std::string synth_body_word(int i) { return "w" + std::to_string(i); }

inline Corpus generate_synthetic(const SynthSpec& spec) {
    validate_synth_spec(spec);
    int n_cue = cue_vocab_size(spec);
    int n_body = spec.vocab_size - n_cue;
    if (n_body < 1) throw DataError("synth spec: vocab_size leaves no body words");

    Rng rng(spec.seed);
    Corpus corpus;
    corpus.split = Split::unsplit;
    for (int d = 0; d < spec.n_docs; ++d) {
        Document doc;
        doc.id = "synth-" + std::to_string(d);
        doc.source = Source::written;

        int n_sent = static_cast<int>(
            rng.uniform_int(spec.sentences_per_doc_min, spec.sentences_per_doc_max));

        // segment plan: boundary marks + segment-initial positions
        std::vector<bool> boundary(n_sent, false);
        std::vector<int> initials;
        int cursor = 0;
        while (cursor < n_sent) {
            initials.push_back(cursor);
            int len = static_cast<int>(
                rng.uniform_int(spec.segment_length_min, spec.segment_length_max));
            len = std::min(len, n_sent - cursor);
            boundary[cursor + len - 1] = true;
            cursor += len;
        }

        for (int s = 0; s < n_sent; ++s) {
            int n_words = static_cast<int>(
                rng.uniform_int(spec.words_per_sentence_min, spec.words_per_sentence_max));
            Sentence sent;
            sent.is_boundary = boundary[s];
            sent.words.reserve(n_words);
            for (int w = 0; w < n_words; ++w) {
                sent.words.push_back(synth_body_word(
                    static_cast<int>(rng.uniform_int(0, n_body - 1))));
            }
            doc.sentences.push_back(std::move(sent));
        }

        for (int pos : initials) {
            if (rng.bernoulli(spec.boundary_cue_strength)) {
                doc.sentences[pos].words[0] =
                    synth_cue_word(static_cast<int>(rng.uniform_int(0, n_cue - 1)));
            }
        }
        corpus.documents.push_back(std::move(doc));
    }
    return corpus;
}

// Synthetic pronunciation dictionary matching generate_synthetic's vocabulary.
// Each cue word heads a homophone class: `variants_per_cue` extra surface
// forms share its canonical phone sequence but never occur in generated text.
// Body words get unique pronunciations (singleton classes).
inline PhoneLexicon generate_homophone_lexicon(const SynthSpec& spec, int variants_per_cue,
                                               int phones_per_word = 2,
                                               int variants_per_body = 0) {
    validate_synth_spec(spec);
    if (variants_per_cue < 0 || variants_per_body < 0)
        throw DataError("variant counts must be >= 0");
    if (phones_per_word < 1) throw DataError("phones_per_word must be >= 1");
    int n_cue = cue_vocab_size(spec);
    int n_body = spec.vocab_size - n_cue;
    PhoneLexicon lex;
    auto phone_seq = [&](const std::string& tag, int i) {
        PhoneSeq seq;
        for (int k = 0; k < phones_per_word; ++k) {
            seq.push_back(tag + std::to_string(i) + "_" + std::to_string(k));
        }
        return seq;
    };
    for (int i = 0; i < n_cue; ++i) {
        PhoneSeq seq = phone_seq("C", i);
        lex.add(synth_cue_word(i), seq);
        for (int v = 0; v < variants_per_cue; ++v) {
            lex.add(synth_cue_word(i) + "v" + std::to_string(v), seq);
        }
    }
    for (int i = 0; i < n_body; ++i) {
        PhoneSeq seq = phone_seq("B", i);
        lex.add(synth_body_word(i), seq);
        for (int v = 0; v < variants_per_body; ++v) {
            lex.add(synth_body_word(i) + "v" + std::to_string(v), seq);
        }
    }
    return lex;
}

// ---------------------------------------------------------------------------
// Homophone noise (simulated ASR substitution errors)
// ---------------------------------------------------------------------------

// Each word independently, with probability `rate`, is replaced by a uniformly
// chosen different member of its homophone class (words sharing an identical
// canonical pronunciation). Labels and sentence structure are unchanged.
inline Document apply_homophone_noise(const Document& doc, const PhoneLexicon& lex, double rate,
                                      std::uint64_t seed) {
    if (rate < 0.0 || rate > 1.0) throw UsageError("noise rate outside [0,1]");
    validate_document(doc);

    std::map<std::string, std::vector<std::string>> alternatives;
    for (const auto& cls : lex.homophone_classes()) {
        if (cls.size() < 2) continue;
        for (const auto& w : cls) {
            auto& others = alternatives[w];
            for (const auto& o : cls) {
                if (o != w) others.push_back(o);
            }
        }
    }

    Rng rng(seed);
    Document out = doc;
    for (auto& sent : out.sentences) {
        for (auto& word : sent.words) {
            if (!rng.bernoulli(rate)) continue;
            auto it = alternatives.find(word);
            if (it == alternatives.end()) continue;  // singleton class or unknown word
            const auto& others = it->second;
            word = others[static_cast<std::size_t>(
                rng.uniform_int(0, static_cast<std::int64_t>(others.size()) - 1))];
        }
    }
    return out;
}

inline Corpus apply_homophone_noise(const Corpus& corpus, const PhoneLexicon& lex, double rate,
                                    std::uint64_t seed) {
    Corpus out;
    out.split = corpus.split;
    out.documents.reserve(corpus.documents.size());
    std::uint64_t k = 0;
    for (const auto& doc : corpus.documents) {
        out.documents.push_back(apply_homophone_noise(doc, lex, rate, seed + k));
        ++k;
    }
    return out;
}

}  // namespace seqseg
