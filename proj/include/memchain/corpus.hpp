#pragma once

#include <array>
#include <cctype>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "memchain/errors.hpp"
#include "memchain/rng.hpp"
#include "memchain/tensor.hpp"

namespace memchain {

/// One cloze item: four context sentences, two candidate endings, and which
/// ending is the coherent one.
struct Story {
    std::string id;
    std::array<std::vector<std::string>, 4> context;
    std::vector<std::string> ending_a;
    std::vector<std::string> ending_b;
    char gold = 'A';  // 'A' or 'B'

    std::vector<std::string> context_tokens() const {
        std::vector<std::string> out;
        for (const auto& sent : context)
            out.insert(out.end(), sent.begin(), sent.end());
        return out;
    }
};

inline bool is_terminal_punct(char c) {
    return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

/// Lowercase, split on whitespace, then peel terminal punctuation off each
/// piece into standalone tokens.
inline std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> tokens;
    std::istringstream in(text);
    std::string piece;
    while (in >> piece) {
        for (char& c : piece)
            c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        std::size_t end = piece.size();
        while (end > 0 && is_terminal_punct(piece[end - 1])) --end;
        if (end > 0) tokens.push_back(piece.substr(0, end));
        for (std::size_t i = end; i < piece.size(); ++i)
            tokens.push_back(std::string(1, piece[i]));
    }
    return tokens;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string out;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) out += ' ';
        out += tokens[i];
    }
    return out;
}

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> cols;
    std::string cur;
    for (char c : line) {
        if (c == '\t') {
            cols.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    cols.push_back(cur);
    return cols;
}

/// Tab-separated cloze corpus: header row, then
/// id, sent1..sent4, ending_a, ending_b, gold per row.
inline std::vector<Story> load_corpus(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("corpus: cannot open '" + path + "'");
    std::vector<Story> stories;
    std::string line;
    std::size_t lineno = 0;
    bool saw_header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!saw_header) {
            saw_header = true;  // header is required and skipped
            continue;
        }
        std::vector<std::string> cols = split_tabs(line);
        if (cols.size() != 8)
            throw ParseError("corpus line " + std::to_string(lineno) + ": expected 8 columns, got " +
                             std::to_string(cols.size()));
        for (std::size_t c = 0; c < cols.size(); ++c)
            if (cols[c].empty())
                throw ParseError("corpus line " + std::to_string(lineno) + ": empty field in column " +
                                 std::to_string(c + 1));
        Story s;
        s.id = cols[0];
        for (int k = 0; k < 4; ++k) {
            s.context[k] = tokenize(cols[1 + k]);
            if (s.context[k].empty())
                throw ParseError("corpus line " + std::to_string(lineno) + ": sentence " +
                                 std::to_string(k + 1) + " has no tokens");
        }
        s.ending_a = tokenize(cols[5]);
        s.ending_b = tokenize(cols[6]);
        if (s.ending_a.empty() || s.ending_b.empty())
            throw ParseError("corpus line " + std::to_string(lineno) + ": empty ending");
        if (cols[7] != "A" && cols[7] != "B")
            throw ParseError("corpus line " + std::to_string(lineno) + ": gold must be A or B, got '" +
                             cols[7] + "'");
        s.gold = cols[7][0];
        stories.push_back(std::move(s));
    }
    if (!saw_header) throw ParseError("corpus '" + path + "': missing header row");
    return stories;
}

inline void save_corpus(const std::vector<Story>& stories, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("corpus: cannot write '" + path + "'");
    out << "id\tsent1\tsent2\tsent3\tsent4\tending_a\tending_b\tgold\n";
    for (const Story& s : stories) {
        out << s.id;
        for (const auto& sent : s.context) out << '\t' << join_tokens(sent);
        out << '\t' << join_tokens(s.ending_a) << '\t' << join_tokens(s.ending_b)
            << '\t' << s.gold << '\n';
    }
}

/// Train/validation split by file order: the last val_count stories form the
/// validation set.
struct CorpusSplit {
    std::vector<Story> train;
    std::vector<Story> validation;
};

inline CorpusSplit split_corpus(const std::vector<Story>& stories, std::size_t val_count) {
    if (val_count >= stories.size())
        throw ConfigError("split: validation count " + std::to_string(val_count) +
                          " >= corpus size " + std::to_string(stories.size()));
    CorpusSplit out;
    out.train.assign(stories.begin(), stories.end() - static_cast<std::ptrdiff_t>(val_count));
    out.validation.assign(stories.end() - static_cast<std::ptrdiff_t>(val_count), stories.end());
    return out;
}

/// Token ids; index 0 is reserved for unknown words.
class Vocabulary {
public:
    Vocabulary() : tokens_{"<unk>"} { index_["<unk>"] = 0; }

    int add(const std::string& token) {
        auto it = index_.find(token);
        if (it != index_.end()) return it->second;
        int id = static_cast<int>(tokens_.size());
        index_[token] = id;
        tokens_.push_back(token);
        return id;
    }

    int lookup(const std::string& token) const {
        auto it = index_.find(token);
        return it == index_.end() ? 0 : it->second;
    }

    std::size_t size() const { return tokens_.size(); }
    const std::string& token(int id) const { return tokens_.at(id); }
    const std::vector<std::string>& tokens() const { return tokens_; }

private:
    std::unordered_map<std::string, int> index_;
    std::vector<std::string> tokens_;
};

inline Vocabulary build_vocabulary(const std::vector<Story>& stories) {
    Vocabulary v;
    for (const Story& s : stories) {
        for (const auto& sent : s.context)
            for (const auto& t : sent) v.add(t);
        for (const auto& t : s.ending_a) v.add(t);
        for (const auto& t : s.ending_b) v.add(t);
    }
    return v;
}

/// Word vectors, one row per vocabulary entry. Row 0 (unknown) stays zero
/// unless trained.
struct EmbeddingTable {
    Tensor matrix;  // |V| x d
    bool frozen = false;

    std::size_t dim() const { return matrix.cols(); }
};

inline EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t dim,
                                        Rng& rng, double stddev = 0.1) {
    EmbeddingTable table;
    table.matrix = Tensor::zeros({vocab.size(), dim});
    table.frozen = false;
    // Row 0 stays zero: the unknown token is neutral by convention.
    for (std::size_t r = 1; r < vocab.size(); ++r)
        for (std::size_t c = 0; c < dim; ++c)
            table.matrix.at2(r, c) = rng.normal(0.0, stddev);
    return table;
}

/// Text embeddings: `token v1 ... vd` per line; dimension fixed by the first
/// line. Vocabulary words absent from the file keep zero rows.
inline EmbeddingTable load_embeddings(const std::string& path, const Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw ConfigError("embeddings: cannot open '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    std::size_t dim = 0;
    std::size_t matched = 0;
    std::vector<std::pair<int, std::vector<double>>> rows;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string token;
        ls >> token;
        std::vector<double> vals;
        double v;
        while (ls >> v) vals.push_back(v);
        if (vals.empty())
            throw ParseError("embeddings line " + std::to_string(lineno) + ": no values");
        if (dim == 0) {
            dim = vals.size();
        } else if (vals.size() != dim) {
            throw ParseError("embeddings line " + std::to_string(lineno) + ": expected " +
                             std::to_string(dim) + " values, got " + std::to_string(vals.size()));
        }
        int id = vocab.lookup(token);
        if (id != 0) {
            rows.emplace_back(id, std::move(vals));
            ++matched;
        }
    }
    if (dim == 0) throw ParseError("embeddings '" + path + "': no data lines");
    EmbeddingTable table;
    table.matrix = Tensor::zeros({vocab.size(), dim});
    table.frozen = true;
    for (const auto& [id, vals] : rows)
        for (std::size_t c = 0; c < dim; ++c)
            table.matrix.at2(static_cast<std::size_t>(id), c) = vals[c];
    if (matched == 0)
        std::cerr << "warning: embeddings '" << path
                  << "' share no tokens with the vocabulary; table is all-zero\n";
    return table;
}

inline void save_embeddings(const EmbeddingTable& table, const Vocabulary& vocab,
                            const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("embeddings: cannot write '" + path + "'");
    out.precision(17);
    for (std::size_t r = 1; r < vocab.size(); ++r) {
        out << vocab.token(static_cast<int>(r));
        for (std::size_t c = 0; c < table.dim(); ++c) out << ' ' << table.matrix.at2(r, c);
        out << '\n';
    }
}

}  // namespace memchain
