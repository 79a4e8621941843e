#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "memchain/corpus.hpp"
#include "memchain/model.hpp"

namespace memchain {

// Text checkpoint format, one record per line:
//   memchain-checkpoint v1
//   config hidden embed_dim bidirectional free_chain embeddings_frozen
//   vocab <n> followed by n token lines
//   param <name> <trainable> <rank> <dims...> followed by one line of
//     space-separated 16-digit hex words (IEEE-754 bit patterns), so a
//     round-trip reproduces every double bit for bit.

namespace detail {

inline std::string hex_double(double v) {
    static const char* digits = "0123456789abcdef";
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[bits & 0xf];
        bits >>= 4;
    }
    return out;
}

inline double unhex_double(const std::string& s) {
    if (s.size() != 16) throw ParseError("checkpoint: bad hex word '" + s + "'");
    std::uint64_t bits = 0;
    for (char c : s) {
        bits <<= 4;
        if (c >= '0' && c <= '9') bits |= static_cast<std::uint64_t>(c - '0');
        else if (c >= 'a' && c <= 'f') bits |= static_cast<std::uint64_t>(c - 'a' + 10);
        else throw ParseError("checkpoint: bad hex word '" + s + "'");
    }
    return std::bit_cast<double>(bits);
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const Vocabulary& vocab) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write checkpoint: " + path);
    out << "memchain-checkpoint v1\n";
    out << "config " << params.cfg.hidden << ' ' << params.cfg.embed_dim << ' '
        << (params.cfg.bidirectional ? 1 : 0) << ' ' << (params.cfg.free_chain ? 1 : 0)
        << ' ' << (params.embeddings_frozen ? 1 : 0) << '\n';
    out << "vocab " << vocab.size() << '\n';
    for (std::size_t i = 0; i < vocab.size(); ++i) out << vocab.token(static_cast<int>(i)) << '\n';
    for (ParamId pid = 0; pid < static_cast<ParamId>(params.store.size()); ++pid) {
        const Tensor& t = params.store.value(pid);
        out << "param " << params.store.name(pid) << ' '
            << (params.store.trainable(pid) ? 1 : 0) << ' ' << t.shape.size();
        for (std::size_t d : t.shape) out << ' ' << d;
        out << '\n';
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            if (i) out << ' ';
            out << detail::hex_double(t.data[i]);
        }
        out << '\n';
    }
    if (!out) throw ConfigError("write failed: " + path);
}

struct Checkpoint {
    ModelParams params;
    Vocabulary vocab;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read checkpoint: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "memchain-checkpoint v1")
        throw ParseError("checkpoint: unrecognized header in " + path);

    Checkpoint ck;
    if (!std::getline(in, line)) throw ParseError("checkpoint: missing config line");
    {
        std::istringstream ss(line);
        std::string tag;
        int bi = 0, free = 0, frozen = 0;
        ss >> tag >> ck.params.cfg.hidden >> ck.params.cfg.embed_dim >> bi >> free >> frozen;
        if (tag != "config" || !ss) throw ParseError("checkpoint: bad config line");
        ck.params.cfg.bidirectional = bi != 0;
        ck.params.cfg.free_chain = free != 0;
        ck.params.embeddings_frozen = frozen != 0;
    }

    if (!std::getline(in, line)) throw ParseError("checkpoint: missing vocab line");
    std::size_t vocab_n = 0;
    {
        std::istringstream ss(line);
        std::string tag;
        ss >> tag >> vocab_n;
        if (tag != "vocab" || !ss) throw ParseError("checkpoint: bad vocab line");
    }
    for (std::size_t i = 0; i < vocab_n; ++i) {
        if (!std::getline(in, line)) throw ParseError("checkpoint: truncated vocab");
        if (i == 0) {
            if (line != "<unk>") throw ParseError("checkpoint: vocab must start with <unk>");
            continue;  // constructor already added it
        }
        ck.vocab.add(line);
    }

    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string tag, name;
        int trainable = 0;
        std::size_t rank = 0;
        ss >> tag >> name >> trainable >> rank;
        if (tag != "param" || !ss) throw ParseError("checkpoint: bad param header: " + line);
        std::vector<std::size_t> shape(rank);
        for (std::size_t i = 0; i < rank; ++i) ss >> shape[i];
        if (!ss) throw ParseError("checkpoint: bad shape for " + name);
        Tensor t;
        t.shape = shape;
        t.data.resize(Tensor::numel_of(shape));
        if (!std::getline(in, line)) throw ParseError("checkpoint: missing data for " + name);
        std::istringstream ds(line);
        std::string word;
        for (std::size_t i = 0; i < t.data.size(); ++i) {
            if (!(ds >> word)) throw ParseError("checkpoint: truncated data for " + name);
            t.data[i] = detail::unhex_double(word);
        }
        ck.params.store.add(name, std::move(t), trainable != 0);
    }

    // Rebind the well-known ids so the loaded store drives the model directly.
    ModelParams& p = ck.params;
    auto id = [&](const std::string& n) {
        if (!p.store.has(n)) throw ParseError("checkpoint: missing parameter " + n);
        return p.store.id_of(n);
    };
    p.embeddings = id("embeddings");
    const char* dir_prefix[2] = {"gru_fwd", "gru_bwd"};
    const char* chain_prefix[2] = {"chain_fwd", "chain_bwd"};
    for (int d = 0; d < 2; ++d) {
        std::string g = dir_prefix[d];
        p.gru[d] = {id(g + "_wr"), id(g + "_ur"), id(g + "_br"),
                    id(g + "_wz"), id(g + "_uz"), id(g + "_bz"),
                    id(g + "_wn"), id(g + "_un"), id(g + "_bn")};
        std::string c = chain_prefix[d];
        p.chain[d] = {id(c + "_u"), id(c + "_v"), id(c + "_w")};
    }
    p.keys = id("keys");
    p.w_att = id("w_att");
    p.h_out = id("h_out");
    p.r_out = id("r_out");
    p.chain_slope = id("chain_slope");
    p.clf_slope = id("clf_slope");
    return ck;
}

}  // namespace memchain
