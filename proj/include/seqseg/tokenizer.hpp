#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqseg/common.hpp"
#include "seqseg/corpus.hpp"
#include "seqseg/lexicon.hpp"

namespace seqseg {

// Subword vocabulary with BERT-style specials and `##` continuation pieces.
struct Vocab {
    static constexpr int PAD = 0;
    static constexpr int UNK = 1;
    static constexpr int CLS = 2;
    static constexpr int SEP = 3;
    static constexpr const char* kContinuationPrefix = "##";

    std::unordered_map<std::string, int> id_of;
    std::vector<std::string> tokens;

    int size() const { return static_cast<int>(tokens.size()); }

    bool has(const std::string& token) const { return id_of.count(token) > 0; }

    int id(const std::string& token) const {
        auto it = id_of.find(token);
        if (it == id_of.end()) throw DataError("token not in vocabulary: '" + token + "'");
        return it->second;
    }

    void append(const std::string& token) {
        if (token.empty()) throw DataError("empty token");
        if (!id_of.emplace(token, size()).second) {
            throw DataError("duplicate token '" + token + "'");
        }
        tokens.push_back(token);
    }
};

inline const std::vector<std::string>& special_tokens() {
    static const std::vector<std::string> specials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]"};
    return specials;
}

struct TokenizedSentence {
    std::vector<int> token_ids;
    std::vector<std::pair<int, int>> word_spans;  // half-open token ranges, one per word
};

// Vocabulary = specials + every single character of the corpus + the most
// frequent whole words and continuation n-grams up to max_size. Ties break
// lexicographically, so builds are deterministic.
inline Vocab build_vocab(const Corpus& corpus, int max_size) {
    if (corpus.documents.empty()) throw DataError("cannot build vocabulary from empty corpus");

    std::map<std::string, long long> word_freq;
    for (const auto& doc : corpus.documents) {
        for (const auto& sent : doc.sentences) {
            for (const auto& w : sent.words) ++word_freq[w];
        }
    }

    std::map<std::string, long long> singles;    // bare single characters (mandatory)
    std::map<std::string, long long> candidates; // whole words + ##-pieces (ranked)
    for (const auto& [word, freq] : word_freq) {
        std::vector<std::string> cps = utf8_chars(word);
        std::size_t n = cps.size();
        for (const auto& cp : cps) singles[cp] += freq;
        if (n >= 2) candidates[word] += freq;
        for (std::size_t i = 1; i < n; ++i) {
            std::string piece = Vocab::kContinuationPrefix;
            for (std::size_t j = i; j < n; ++j) {
                piece += cps[j];
                candidates[piece] += freq;
            }
        }
    }

    int required = 5 + static_cast<int>(singles.size());
    if (max_size < required) {
        throw DataError("max_size " + std::to_string(max_size) +
                        " too small: need at least " + std::to_string(required));
    }

    Vocab vocab;
    for (const auto& s : special_tokens()) vocab.append(s);
    for (const auto& [cp, freq] : singles) vocab.append(cp);

    std::vector<std::pair<std::string, long long>> ranked(candidates.begin(), candidates.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    for (const auto& [token, freq] : ranked) {
        if (vocab.size() >= max_size) break;
        vocab.append(token);
    }
    return vocab;
}

// Greedy longest-match subword tokenization. Non-initial pieces match with
// the ## prefix; a word with any unmatchable position maps to [UNK] whole.
inline std::vector<int> tokenize_word(const std::string& word, const Vocab& vocab) {
    if (word.empty()) throw DataError("cannot tokenize empty word");
    std::vector<std::string> cps = utf8_chars(word);
    std::size_t n = cps.size();
    std::vector<int> ids;
    std::size_t pos = 0;
    while (pos < n) {
        int match = -1;
        for (std::size_t end = n; end > pos; --end) {
            std::string piece = pos == 0 ? "" : Vocab::kContinuationPrefix;
            for (std::size_t k = pos; k < end; ++k) piece += cps[k];
            auto it = vocab.id_of.find(piece);
            if (it != vocab.id_of.end()) {
                match = it->second;
                pos = end;
                break;
            }
        }
        if (match < 0) return {Vocab::UNK};
        ids.push_back(match);
    }
    return ids;
}

inline TokenizedSentence tokenize_sentence(const Sentence& sentence, const Vocab& vocab) {
    TokenizedSentence out;
    for (const auto& word : sentence.words) {
        std::vector<int> ids = tokenize_word(word, vocab);
        int start = static_cast<int>(out.token_ids.size());
        out.token_ids.insert(out.token_ids.end(), ids.begin(), ids.end());
        out.word_spans.emplace_back(start, static_cast<int>(out.token_ids.size()));
    }
    return out;
}

// Sentence encoded for model input: subword ids plus, per token, the phone
// ids of the token's source word (every subword of a word carries the word's
// full phone sequence; words outside the lexicon carry none).
struct EncodedSentence {
    std::vector<int> token_ids;
    std::vector<std::vector<int>> phone_ids;

    bool operator==(const EncodedSentence&) const = default;
};

inline EncodedSentence encode_sentence(const Sentence& sentence, const Vocab& vocab,
                                       const PhoneLexicon* lex, const PhoneIdMap* phones) {
    EncodedSentence out;
    for (const auto& word : sentence.words) {
        std::vector<int> ids = tokenize_word(word, vocab);
        std::vector<int> word_phones;
        if (lex != nullptr && phones != nullptr) {
            if (const PhoneSeq* seq = lex->canonical(word)) word_phones = phones->ids(*seq);
        }
        for (int id : ids) {
            out.token_ids.push_back(id);
            out.phone_ids.push_back(word_phones);
        }
    }
    return out;
}

inline std::vector<EncodedSentence> encode_document(const Document& doc, const Vocab& vocab,
                                                    const PhoneLexicon* lex,
                                                    const PhoneIdMap* phones) {
    std::vector<EncodedSentence> out;
    out.reserve(doc.sentences.size());
    for (const auto& s : doc.sentences) out.push_back(encode_sentence(s, vocab, lex, phones));
    return out;
}

// Vocab file: one token per line, 0-based line number = id, first four lines
// are the specials in order.
inline void save_vocab(const Vocab& vocab, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocab file: " + path);
    for (const auto& t : vocab.tokens) out << t << '\n';
    if (!out) throw DataError("write failed: " + path);
}

inline Vocab load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocab file: " + path);
    Vocab vocab;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) throw DataError("vocab file has an empty line: " + path);
        vocab.append(line);
    }
    if (vocab.size() < 4) throw DataError("vocab file too short: " + path);
    for (int i = 0; i < 4; ++i) {
        if (vocab.tokens[i] != special_tokens()[i]) {
            throw DataError("vocab file must start with the four special tokens: " + path);
        }
    }
    return vocab;
}

}  // namespace seqseg
