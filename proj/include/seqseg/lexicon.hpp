#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "seqseg/common.hpp"

namespace seqseg {

using PhoneSeq = std::vector<std::string>;

// Pronunciation dictionary: word -> one or more phone sequences.
// The first entry for a word is its canonical pronunciation.
class PhoneLexicon {
public:
    void add(const std::string& word, PhoneSeq phones) {
        if (phones.empty()) throw DataError("lexicon: empty phone sequence for word '" + word + "'");
        entries_[word].push_back(std::move(phones));
    }

    bool contains(const std::string& word) const { return entries_.count(word) > 0; }

    // Canonical (first) pronunciation, or nullptr when the word is unknown.
    const PhoneSeq* canonical(const std::string& word) const {
        auto it = entries_.find(word);
        if (it == entries_.end()) return nullptr;
        return &it->second.front();
    }

    const std::vector<PhoneSeq>* all(const std::string& word) const {
        auto it = entries_.find(word);
        if (it == entries_.end()) return nullptr;
        return &it->second;
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }

    const std::map<std::string, std::vector<PhoneSeq>>& entries() const { return entries_; }

    // Distinct phone symbols across all pronunciations, sorted; index = phone id.
    std::vector<std::string> phone_inventory() const {
        std::set<std::string> symbols;
        for (const auto& [word, prons] : entries_) {
            for (const auto& seq : prons) {
                symbols.insert(seq.begin(), seq.end());
            }
        }
        return {symbols.begin(), symbols.end()};
    }

    // Groups of words sharing an identical canonical pronunciation.
    // Singleton classes are included; word order inside a class is lexicographic.
    std::vector<std::vector<std::string>> homophone_classes() const {
        std::map<PhoneSeq, std::vector<std::string>> by_pron;
        for (const auto& [word, prons] : entries_) {
            by_pron[prons.front()].push_back(word);
        }
        std::vector<std::vector<std::string>> classes;
        classes.reserve(by_pron.size());
        for (auto& [pron, words] : by_pron) {
            std::sort(words.begin(), words.end());
            classes.push_back(std::move(words));
        }
        return classes;
    }

private:
    std::map<std::string, std::vector<PhoneSeq>> entries_;
};

// Maps phone symbols to dense ids (inventory order).
struct PhoneIdMap {
    std::unordered_map<std::string, int> id_of;
    std::vector<std::string> symbols;

    int size() const { return static_cast<int>(symbols.size()); }

    std::vector<int> ids(const PhoneSeq& seq) const {
        std::vector<int> out;
        out.reserve(seq.size());
        for (const auto& p : seq) {
            auto it = id_of.find(p);
            if (it == id_of.end()) throw DataError("unknown phone symbol '" + p + "'");
            out.push_back(it->second);
        }
        return out;
    }
};

inline PhoneIdMap make_phone_id_map(const PhoneLexicon& lex) {
    PhoneIdMap m;
    m.symbols = lex.phone_inventory();
    for (std::size_t i = 0; i < m.symbols.size(); ++i) {
        m.id_of[m.symbols[i]] = static_cast<int>(i);
    }
    return m;
}

// File format: `word<TAB>phone1 phone2 ...`, one entry per line.
// Repeated words append alternative pronunciations in file order.
inline PhoneLexicon load_lexicon(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open lexicon file: " + path);
    PhoneLexicon lex;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw DataError("lexicon: malformed line " + std::to_string(line_no) + " (expected word<TAB>phones)");
        }
        std::string word = line.substr(0, tab);
        PhoneSeq phones = split_whitespace(line.substr(tab + 1));
        if (phones.empty()) {
            throw DataError("lexicon: no phones on line " + std::to_string(line_no));
        }
        lex.add(word, std::move(phones));
    }
    return lex;
}

inline void save_lexicon(const PhoneLexicon& lex, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write lexicon file: " + path);
    for (const auto& [word, prons] : lex.entries()) {
        for (const auto& seq : prons) {
            out << word << '\t';
            for (std::size_t i = 0; i < seq.size(); ++i) {
                if (i) out << ' ';
                out << seq[i];
            }
            out << '\n';
        }
    }
    if (!out) throw DataError("write failed: " + path);
}

}  // namespace seqseg
