#pragma once

#include <cctype>
#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "memchain/errors.hpp"

namespace memchain {

/// Binary supervision sequences over the concatenated context tokens.
struct TriggerLabels {
    std::vector<std::uint8_t> event;
    std::vector<std::uint8_t> sentiment;
    std::vector<std::uint8_t> topic;

    std::size_t size() const { return event.size(); }

    static TriggerLabels zeros(std::size_t n) {
        TriggerLabels l;
        l.event.assign(n, 0);
        l.sentiment.assign(n, 0);
        l.topic.assign(n, 0);
        return l;
    }
};

/// Trigger lexicons standing in for external NLP tooling: event terms and
/// phrases (frame-target proxy), sentiment and negation word lists, and topic
/// rules (word list plus noun/verb suffixes).
struct LexiconSet {
    std::set<std::string> event_terms;
    std::vector<std::vector<std::string>> event_phrases;  // multi-token entries
    std::set<std::string> sentiment_terms;
    std::set<std::string> negation_terms;
    std::set<std::string> topic_words;
    std::vector<std::string> topic_suffixes;

    bool topic_match(const std::string& token) const {
        if (topic_words.count(token)) return true;
        for (const std::string& suf : topic_suffixes) {
            if (token.size() > suf.size() &&
                token.compare(token.size() - suf.size(), suf.size(), suf) == 0)
                return true;
        }
        return false;
    }
};

/// Event phrases match greedily left to right; every covered token gets 1.
/// A token may trigger any number of aspects.
inline TriggerLabels label_story(const std::vector<std::string>& tokens,
                                 const LexiconSet& lex) {
    TriggerLabels labels = TriggerLabels::zeros(tokens.size());
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        const std::string& t = tokens[i];
        if (lex.event_terms.count(t)) labels.event[i] = 1;
        if (lex.sentiment_terms.count(t) || lex.negation_terms.count(t))
            labels.sentiment[i] = 1;
        if (lex.topic_match(t)) labels.topic[i] = 1;
    }
    std::size_t i = 0;
    while (i < tokens.size()) {
        std::size_t matched = 0;
        for (const auto& phrase : lex.event_phrases) {
            if (phrase.size() <= matched || i + phrase.size() > tokens.size()) continue;
            bool ok = true;
            for (std::size_t k = 0; k < phrase.size(); ++k)
                if (tokens[i + k] != phrase[k]) { ok = false; break; }
            if (ok) matched = phrase.size();
        }
        if (matched > 0) {
            for (std::size_t k = 0; k < matched; ++k) labels.event[i + k] = 1;
            i += matched;
        } else {
            ++i;
        }
    }
    return labels;
}

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::string lower(std::string s) {
    for (char& c : s)
        c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

inline std::vector<std::string> read_terms(const std::string& path, const char* aspect) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError(std::string("lexicon '") + aspect + "': cannot open '" + path + "'");
    std::vector<std::string> terms;
    std::string line;
    while (std::getline(in, line)) {
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        terms.push_back(lower(t));
    }
    return terms;
}

}  // namespace detail

/// One term per line, '#' comments. Multi-word lines in the event file become
/// phrases; topic lines starting with '-' are suffix rules (e.g. "-ing").
inline LexiconSet load_lexicons(const std::string& event_path,
                                const std::string& sentiment_path,
                                const std::string& negation_path,
                                const std::string& topic_path) {
    LexiconSet lex;
    for (const std::string& term : detail::read_terms(event_path, "event")) {
        std::istringstream ts(term);
        std::vector<std::string> parts;
        std::string p;
        while (ts >> p) parts.push_back(p);
        if (parts.size() == 1)
            lex.event_terms.insert(parts[0]);
        else if (parts.size() > 1)
            lex.event_phrases.push_back(parts);
    }
    for (const std::string& term : detail::read_terms(sentiment_path, "sentiment"))
        lex.sentiment_terms.insert(term);
    for (const std::string& term : detail::read_terms(negation_path, "negation"))
        lex.negation_terms.insert(term);
    for (const std::string& term : detail::read_terms(topic_path, "topic")) {
        if (term.size() > 1 && term[0] == '-')
            lex.topic_suffixes.push_back(term.substr(1));
        else
            lex.topic_words.insert(term);
    }
    return lex;
}

using LabelMap = std::unordered_map<std::string, TriggerLabels>;

/// Precomputed labels: `story_id<TAB>aspect<TAB>bitstring` per line. This is
/// the drop-in surface for real tagger output.
inline LabelMap load_label_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("labels: cannot open '" + path + "'");
    LabelMap map;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string id, aspect, bits;
        if (!std::getline(ls, id, '\t') || !std::getline(ls, aspect, '\t') ||
            !std::getline(ls, bits))
            throw ParseError("labels line " + std::to_string(lineno) + ": expected 3 columns");
        std::vector<std::uint8_t> row;
        row.reserve(bits.size());
        for (char c : bits) {
            if (c != '0' && c != '1')
                throw ParseError("labels line " + std::to_string(lineno) + ": bad bit '" +
                                 std::string(1, c) + "'");
            row.push_back(static_cast<std::uint8_t>(c - '0'));
        }
        TriggerLabels& l = map.try_emplace(id).first->second;
        if (aspect == "event")
            l.event = std::move(row);
        else if (aspect == "sentiment")
            l.sentiment = std::move(row);
        else if (aspect == "topic")
            l.topic = std::move(row);
        else
            throw ParseError("labels line " + std::to_string(lineno) + ": unknown aspect '" +
                             aspect + "'");
    }
    // Absent aspects default to all-zero at the observed length.
    for (auto& [id, l] : map) {
        std::size_t n = std::max({l.event.size(), l.sentiment.size(), l.topic.size()});
        if (l.event.empty()) l.event.assign(n, 0);
        if (l.sentiment.empty()) l.sentiment.assign(n, 0);
        if (l.topic.empty()) l.topic.assign(n, 0);
        if (l.event.size() != n || l.sentiment.size() != n || l.topic.size() != n)
            throw ParseError("labels for story '" + id + "': aspect lengths disagree");
    }
    return map;
}

inline void save_label_file(const std::vector<std::pair<std::string, TriggerLabels>>& rows,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("labels: cannot write '" + path + "'");
    auto bits = [](const std::vector<std::uint8_t>& v) {
        std::string s;
        s.reserve(v.size());
        for (std::uint8_t b : v) s += static_cast<char>('0' + b);
        return s;
    };
    for (const auto& [id, l] : rows) {
        out << id << "\tevent\t" << bits(l.event) << '\n';
        out << id << "\tsentiment\t" << bits(l.sentiment) << '\n';
        out << id << "\ttopic\t" << bits(l.topic) << '\n';
    }
}

}  // namespace memchain
