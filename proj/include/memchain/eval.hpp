#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "memchain/corpus.hpp"
#include "memchain/labeler.hpp"
#include "memchain/model.hpp"
#include "memchain/rng.hpp"

namespace memchain {

struct StoryScore {
    std::string id;
    double score_a = 0.0;
    double score_b = 0.0;
    char predicted = 'A';
    char gold = 'A';
};

struct EvalReport {
    double accuracy = 0.0;
    std::size_t n = 0;
    std::vector<StoryScore> records;  // ordered by story id
};

inline double score_instance(ModelParams& params, const std::vector<int>& context_ids,
                             const std::vector<int>& ending_ids) {
    Tape tape;
    ForwardGraph g = forward(tape, params, context_ids, ending_ids);
    return tape.value(g.yhat)[0];
}

/// Scores both endings of every story with dropout disabled and predicts the
/// higher one, ties going to A. Records are sorted by story id.
inline EvalReport evaluate(ModelParams& params, const Vocabulary& vocab,
                           const std::vector<Story>& stories) {
    std::size_t rows = params.store.value(params.embeddings).rows();
    if (rows != vocab.size())
        throw ConfigError("embedding table has " + std::to_string(rows) +
                          " rows but vocabulary has " + std::to_string(vocab.size()));
    EvalReport report;
    report.n = stories.size();
    std::size_t correct = 0;
    for (const Story& s : stories) {
        std::vector<int> ctx = to_ids(vocab, s.context_tokens());
        StoryScore rec;
        rec.id = s.id;
        rec.gold = s.gold;
        rec.score_a = score_instance(params, ctx, to_ids(vocab, s.ending_a));
        rec.score_b = score_instance(params, ctx, to_ids(vocab, s.ending_b));
        rec.predicted = rec.score_b > rec.score_a ? 'B' : 'A';
        if (rec.predicted == rec.gold) ++correct;
        report.records.push_back(std::move(rec));
    }
    std::sort(report.records.begin(), report.records.end(),
              [](const StoryScore& a, const StoryScore& b) { return a.id < b.id; });
    report.accuracy =
        report.n == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(report.n);
    return report;
}

inline std::string report_to_csv(const EvalReport& report) {
    std::ostringstream out;
    out << "id,score_a,score_b,predicted,gold\n";
    out << std::setprecision(17);
    for (const StoryScore& r : report.records)
        out << r.id << ',' << r.score_a << ',' << r.score_b << ',' << r.predicted << ','
            << r.gold << '\n';
    return out.str();
}

/// Population standard deviation, the form used when quoting accuracy spread
/// across checkpoints.
inline double population_sd(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    return std::sqrt(var / static_cast<double>(xs.size()));
}

// --- representation export -------------------------------------------------

/// Encoder states for aspect-triggering tokens plus the learned keys, as CSV
/// rows `token,aspects,v1..vh`. At most `cap` rows per aspect; when an aspect
/// has more candidates than the cap, a deterministic seeded sample is taken.
inline std::string export_vectors(ModelParams& params, const Vocabulary& vocab,
                                  const std::vector<Story>& stories,
                                  const LabelMap& labels, std::size_t cap = 500,
                                  std::uint64_t seed = 0) {
    std::size_t h = params.cfg.hidden;

    struct Candidate {
        std::size_t story = 0, pos = 0;
    };
    // Candidates per supervised aspect, in corpus order.
    std::array<std::vector<Candidate>, kSupervisedChains> by_aspect;
    std::vector<std::vector<std::string>> toks(stories.size());
    for (std::size_t s = 0; s < stories.size(); ++s) {
        toks[s] = stories[s].context_tokens();
        auto it = labels.find(stories[s].id);
        if (it == labels.end()) continue;
        const TriggerLabels& l = it->second;
        if (l.size() != toks[s].size())
            throw ContractError("labels for story " + stories[s].id + " cover " +
                                std::to_string(l.size()) + " tokens, context has " +
                                std::to_string(toks[s].size()));
        for (std::size_t i = 0; i < toks[s].size(); ++i) {
            if (l.event[i]) by_aspect[0].push_back({s, i});
            if (l.sentiment[i]) by_aspect[1].push_back({s, i});
            if (l.topic[i]) by_aspect[2].push_back({s, i});
        }
    }

    // Per-aspect cap with a seeded shuffle; selections merge so a position
    // chosen for several aspects emits one row carrying all of its tags.
    Rng rng(seed);
    std::map<std::pair<std::size_t, std::size_t>, std::string> selected;
    for (std::size_t a = 0; a < kSupervisedChains; ++a) {
        std::vector<std::size_t> order(by_aspect[a].size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        if (order.size() > cap) rng.shuffle(order);
        std::size_t take = std::min(cap, order.size());
        std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(take));
        std::sort(chosen.begin(), chosen.end());
        for (std::size_t i : chosen) {
            const Candidate& c = by_aspect[a][i];
            std::string& tags = selected[{c.story, c.pos}];
            if (!tags.empty()) tags += '|';
            tags += kChainNames[a];
        }
    }

    std::ostringstream out;
    out << "token,aspects";
    for (std::size_t i = 1; i <= h; ++i) out << ",v" << i;
    out << '\n';
    out << std::setprecision(17);

    // Encode each selected story once (evaluation mode) and emit its rows.
    std::size_t current_story = stories.size();
    std::vector<Tensor> states;
    for (const auto& [key, tags] : selected) {
        auto [s, pos] = key;
        if (s != current_story) {
            Tape tape;
            GraphBuilder g(tape, params);
            EncodeResult enc = encode_sequence(g, params, embed_tokens(g, to_ids(vocab, toks[s]), nullptr));
            states.clear();
            for (NodeId n : enc.states) states.push_back(tape.value(n));
            current_story = s;
        }
        out << toks[s][pos] << ',' << tags;
        for (double v : states[pos].data) out << ',' << v;
        out << '\n';
    }

    const Tensor& keys = params.store.value(params.keys);
    for (std::size_t j = 0; j < keys.rows(); ++j) {
        out << "<key>," << kChainNames[j];
        for (std::size_t c = 0; c < keys.cols(); ++c) out << ',' << keys.at2(j, c);
        out << '\n';
    }
    return out.str();
}

}  // namespace memchain
