#pragma once

#include <algorithm>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "memchain/train.hpp"

namespace memchain {

/// Supported ablation switches and the table labels they produce.
struct AblationDelta {
    const char* name;   // CLI token
    const char* label;  // row label in the emitted table
};

inline constexpr AblationDelta kAblationDeltas[] = {
    {"no-bidirectionality", "-bi-directionality"},
    {"no-supervision", "-all semantic supervision"},
    {"no-event", "-event sequence"},
    {"no-sentiment", "-sentiment trajectory"},
    {"no-topic", "-topical consistency"},
    {"no-free-chain", "-free chain"},
};

inline TrainConfig apply_delta(TrainConfig cfg, const std::string& delta) {
    if (delta == "no-bidirectionality") cfg.bidirectional = false;
    else if (delta == "no-supervision") {
        cfg.supervise_event = cfg.supervise_sentiment = cfg.supervise_topic = false;
    } else if (delta == "no-event") cfg.supervise_event = false;
    else if (delta == "no-sentiment") cfg.supervise_sentiment = false;
    else if (delta == "no-topic") cfg.supervise_topic = false;
    else if (delta == "no-free-chain") cfg.free_chain = false;
    else {
        std::string valid;
        for (const AblationDelta& d : kAblationDeltas) {
            if (!valid.empty()) valid += ", ";
            valid += d.name;
        }
        throw ConfigError("unknown ablation switch '" + delta + "' (valid: " + valid + ")");
    }
    return cfg;
}

struct AblationRow {
    std::string name;               // "baseline" or the delta token
    std::string label;              // table label
    std::vector<double> seed_accs;  // best validation accuracy per seed
    double mean = 0.0;
    double sd = 0.0;
};

/// Trains the baseline and each requested delta under identical seeds, runs,
/// split, and epochs. A row's accuracy follows the reporting protocol used
/// everywhere else: per seed, the best validation accuracy across that seed's
/// runs; mean +/- population SD across seeds.
inline std::vector<AblationRow> ablate(
    const std::vector<Story>& stories, const Vocabulary& vocab,
    const EmbeddingTable& embeddings, const LabelMap* labels, const TrainConfig& base,
    const std::vector<std::string>& deltas,
    const std::function<TrainHooks(const std::string&)>& hooks_for = {}) {
    std::vector<std::pair<std::string, std::string>> jobs;
    jobs.emplace_back("baseline", "baseline");
    for (const std::string& d : deltas) {
        std::string lbl = d;
        for (const AblationDelta& known : kAblationDeltas)
            if (d == known.name) lbl = known.label;
        apply_delta(base, d);  // reject unknown switches before any training
        jobs.emplace_back(d, lbl);
    }

    std::vector<AblationRow> rows;
    for (const auto& [name, label] : jobs) {
        TrainConfig cfg = name == "baseline" ? base : apply_delta(base, name);
        TrainHooks hooks = hooks_for ? hooks_for(name) : TrainHooks{};
        TrainResult res = train(stories, vocab, embeddings, labels, cfg, hooks);

        AblationRow row;
        row.name = name;
        row.label = label;
        for (std::uint64_t seed : cfg.seeds) {
            double best = -1.0;
            for (const RunSummary& s : res.runs)
                if (s.seed == seed) best = std::max(best, s.best_val_acc);
            row.seed_accs.push_back(best);
        }
        double sum = 0.0;
        for (double a : row.seed_accs) sum += a;
        row.mean = sum / static_cast<double>(row.seed_accs.size());
        row.sd = population_sd(row.seed_accs);
        rows.push_back(std::move(row));
    }
    return rows;
}

inline std::string ablation_table(const std::vector<AblationRow>& rows) {
    std::ostringstream out;
    out << "row\taccuracy\tsd\n";
    out << std::fixed << std::setprecision(4);
    for (const AblationRow& r : rows)
        out << r.label << '\t' << r.mean << '\t' << r.sd << '\n';
    return out.str();
}

}  // namespace memchain
