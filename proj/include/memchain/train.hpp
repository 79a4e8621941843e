#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "memchain/corpus.hpp"
#include "memchain/eval.hpp"
#include "memchain/ftrl.hpp"
#include "memchain/labeler.hpp"
#include "memchain/loss.hpp"
#include "memchain/model.hpp"
#include "memchain/rng.hpp"

namespace memchain {

struct TrainConfig {
    // model
    std::size_t hidden = 300;
    bool bidirectional = true;
    bool free_chain = true;
    bool freeze_embeddings = false;
    // loss
    double alpha = 0.5;
    double lambda = 0.001;
    bool supervise_event = true;
    bool supervise_sentiment = true;
    bool supervise_topic = true;
    // optimizer
    double learning_rate = 0.1;
    double ftrl_beta = 1.0;
    double ftrl_l1 = 0.0;
    double ftrl_l2 = 0.0;
    // schedule
    std::size_t batch_size = 128;
    std::size_t epochs = 200;
    std::vector<std::uint64_t> seeds = {13};
    std::size_t runs_per_seed = 5;
    // dropout
    double dropout_embed = 0.5;
    double dropout_chain = 0.2;
    double dropout_classifier = 0.2;
    // data: last val_count stories form the validation split; 0 means
    // validate on the training set itself (useful for overfit probes).
    std::size_t val_count = 188;

    SupervisionFlags supervision() const {
        return {supervise_event, supervise_sentiment, supervise_topic};
    }

    void validate() const {
        if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
        if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
        for (double r : {dropout_embed, dropout_chain, dropout_classifier})
            if (r < 0.0 || r >= 1.0) throw ConfigError("dropout rates must be in [0,1)");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (hidden < 1) throw ConfigError("hidden must be >= 1");
        if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
        if (seeds.empty()) throw ConfigError("at least one seed required");
        if (runs_per_seed < 1) throw ConfigError("runs_per_seed must be >= 1");
    }
};

// --- flat key-value config file --------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
    std::ostringstream ss;
    ss << std::setprecision(17) << v;
    return ss.str();
}

inline bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::vector<std::uint64_t> parse_seed_list(const std::string& v) {
    std::vector<std::uint64_t> out;
    std::string item;
    std::istringstream ss(v);
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoull(item));
    }
    if (out.empty()) throw ConfigError("config key 'seeds': empty list");
    return out;
}

inline std::string seeds_to_string(const std::vector<std::uint64_t>& seeds) {
    std::string out;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(seeds[i]);
    }
    return out;
}

}  // namespace detail

/// Applies one `key = value` assignment; shared by the file parser and
/// command-line overrides. Unknown keys are configuration errors.
inline void apply_config_kv(TrainConfig& cfg, const std::string& key,
                            const std::string& value) {
    try {
        if (key == "hidden") cfg.hidden = std::stoul(value);
        else if (key == "bidirectional") cfg.bidirectional = detail::parse_bool(value, key);
        else if (key == "free_chain") cfg.free_chain = detail::parse_bool(value, key);
        else if (key == "freeze_embeddings") cfg.freeze_embeddings = detail::parse_bool(value, key);
        else if (key == "alpha") cfg.alpha = std::stod(value);
        else if (key == "lambda") cfg.lambda = std::stod(value);
        else if (key == "supervise_event") cfg.supervise_event = detail::parse_bool(value, key);
        else if (key == "supervise_sentiment") cfg.supervise_sentiment = detail::parse_bool(value, key);
        else if (key == "supervise_topic") cfg.supervise_topic = detail::parse_bool(value, key);
        else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
        else if (key == "ftrl_beta") cfg.ftrl_beta = std::stod(value);
        else if (key == "ftrl_l1") cfg.ftrl_l1 = std::stod(value);
        else if (key == "ftrl_l2") cfg.ftrl_l2 = std::stod(value);
        else if (key == "batch_size") cfg.batch_size = std::stoul(value);
        else if (key == "epochs") cfg.epochs = std::stoul(value);
        else if (key == "seeds") cfg.seeds = detail::parse_seed_list(value);
        else if (key == "runs_per_seed") cfg.runs_per_seed = std::stoul(value);
        else if (key == "dropout_embed") cfg.dropout_embed = std::stod(value);
        else if (key == "dropout_chain") cfg.dropout_chain = std::stod(value);
        else if (key == "dropout_classifier") cfg.dropout_classifier = std::stod(value);
        else if (key == "val_count") cfg.val_count = std::stoul(value);
        else throw ConfigError("unknown config key '" + key + "'");
    } catch (const std::invalid_argument&) {
        throw ConfigError("config key '" + key + "': bad value '" + value + "'");
    } catch (const std::out_of_range&) {
        throw ConfigError("config key '" + key + "': value out of range: '" + value + "'");
    }
}

inline TrainConfig parse_config_text(std::istream& in, const std::string& origin) {
    TrainConfig cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError(origin + ":" + std::to_string(lineno) +
                              ": expected 'key = value', got '" + s + "'");
        std::string key = detail::trim(s.substr(0, eq));
        std::string value = detail::trim(s.substr(eq + 1));
        apply_config_kv(cfg, key, value);
    }
    return cfg;
}

inline TrainConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    return parse_config_text(in, path);
}

inline std::string config_to_text(const TrainConfig& cfg) {
    std::ostringstream out;
    out << "hidden = " << cfg.hidden << '\n';
    out << "bidirectional = " << (cfg.bidirectional ? "true" : "false") << '\n';
    out << "free_chain = " << (cfg.free_chain ? "true" : "false") << '\n';
    out << "freeze_embeddings = " << (cfg.freeze_embeddings ? "true" : "false") << '\n';
    out << "alpha = " << detail::fmt_double(cfg.alpha) << '\n';
    out << "lambda = " << detail::fmt_double(cfg.lambda) << '\n';
    out << "supervise_event = " << (cfg.supervise_event ? "true" : "false") << '\n';
    out << "supervise_sentiment = " << (cfg.supervise_sentiment ? "true" : "false") << '\n';
    out << "supervise_topic = " << (cfg.supervise_topic ? "true" : "false") << '\n';
    out << "learning_rate = " << detail::fmt_double(cfg.learning_rate) << '\n';
    out << "ftrl_beta = " << detail::fmt_double(cfg.ftrl_beta) << '\n';
    out << "ftrl_l1 = " << detail::fmt_double(cfg.ftrl_l1) << '\n';
    out << "ftrl_l2 = " << detail::fmt_double(cfg.ftrl_l2) << '\n';
    out << "batch_size = " << cfg.batch_size << '\n';
    out << "epochs = " << cfg.epochs << '\n';
    out << "seeds = " << detail::seeds_to_string(cfg.seeds) << '\n';
    out << "runs_per_seed = " << cfg.runs_per_seed << '\n';
    out << "dropout_embed = " << detail::fmt_double(cfg.dropout_embed) << '\n';
    out << "dropout_chain = " << detail::fmt_double(cfg.dropout_chain) << '\n';
    out << "dropout_classifier = " << detail::fmt_double(cfg.dropout_classifier) << '\n';
    out << "val_count = " << cfg.val_count << '\n';
    return out.str();
}

inline void save_config(const std::string& path, const TrainConfig& cfg) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file: " + path);
    out << config_to_text(cfg);
}

// --- training --------------------------------------------------------------

/// One (context, ending) classification instance. Each story expands to two:
/// the coherent ending with target 1 and the incoherent one with target 0.
struct Instance {
    std::vector<int> context_ids;
    std::vector<int> ending_ids;
    double target = 0.0;
    TriggerLabels labels;  // over context tokens; zeros when unsupervised
};

inline std::vector<Instance> expand_instances(const std::vector<Story>& stories,
                                              const Vocabulary& vocab,
                                              const LabelMap* labels,
                                              bool need_labels) {
    std::vector<Instance> out;
    out.reserve(stories.size() * 2);
    for (const Story& s : stories) {
        std::vector<std::string> ctx_tokens = s.context_tokens();
        std::vector<int> ctx = to_ids(vocab, ctx_tokens);
        TriggerLabels l;
        if (need_labels) {
            if (!labels) throw ConfigError("gate supervision enabled but no labels given");
            auto it = labels->find(s.id);
            if (it == labels->end())
                throw ConfigError("no trigger labels for story " + s.id);
            l = it->second;
            if (l.size() != ctx.size())
                throw ContractError("labels for story " + s.id + " cover " +
                                    std::to_string(l.size()) + " tokens, context has " +
                                    std::to_string(ctx.size()));
        } else {
            l = TriggerLabels::zeros(ctx.size());
        }
        bool a_coherent = s.gold == 'A';
        out.push_back({ctx, to_ids(vocab, s.ending_a), a_coherent ? 1.0 : 0.0, l});
        out.push_back({ctx, to_ids(vocab, s.ending_b), a_coherent ? 0.0 : 1.0, l});
    }
    return out;
}

struct LogRow {
    std::uint64_t seed = 0;
    std::size_t run = 0;
    std::size_t epoch = 0;
    double loss_total = 0.0;
    double loss_pred = 0.0;
    double loss_gate = 0.0;
    double val_acc = 0.0;
};

inline std::string log_to_csv(const std::vector<LogRow>& rows) {
    std::ostringstream out;
    out << "seed,run,epoch,loss_total,loss_pred,loss_gate,val_acc\n";
    out << std::setprecision(17);
    for (const LogRow& r : rows)
        out << r.seed << ',' << r.run << ',' << r.epoch << ',' << r.loss_total << ','
            << r.loss_pred << ',' << r.loss_gate << ',' << r.val_acc << '\n';
    return out.str();
}

struct RunSummary {
    std::uint64_t seed = 0;
    std::size_t run = 0;
    double best_val_acc = 0.0;
    std::size_t best_epoch = 0;
    // Final-parameter diagnostics with dropout off.
    double final_train_loss = 0.0;
    double final_train_acc = 0.0;
};

struct TrainResult {
    ModelParams best_params;
    Vocabulary vocab;
    double best_val_acc = -1.0;
    std::uint64_t best_seed = 0;
    std::size_t best_run = 0;
    std::size_t best_epoch = 0;
    std::vector<LogRow> log;
    std::vector<RunSummary> runs;
};

struct TrainHooks {
    // Called with the batch-mean gradients right before each optimizer step.
    std::function<void(const ParamStore&, const std::vector<Tensor>&)> on_gradients;
    // Called after each epoch's log row is finalized.
    std::function<void(const LogRow&)> on_epoch;
};

namespace detail {

struct InstanceLoss {
    double total = 0.0, pred = 0.0, gate = 0.0;
};

/// Mean per-instance loss over a set with dropout disabled; no gradients.
inline InstanceLoss eval_mode_loss(ModelParams& params, const std::vector<Instance>& insts,
                                   const SupervisionFlags& flags, double alpha,
                                   double lambda) {
    InstanceLoss sum;
    for (const Instance& inst : insts) {
        Tape tape;
        ForwardGraph fwd = forward(tape, params, inst.context_ids, inst.ending_ids);
        LossGraph lg = compute_loss(tape, params, fwd, inst.target, inst.labels, flags,
                                    alpha, lambda);
        sum.total += tape.value(lg.total)[0];
        sum.pred += tape.value(lg.prediction)[0];
        if (lg.gate >= 0) sum.gate += tape.value(lg.gate)[0];
    }
    double n = static_cast<double>(insts.size());
    return {sum.total / n, sum.pred / n, sum.gate / n};
}

/// Story-level accuracy of the current parameters on a story list.
inline double story_accuracy(ModelParams& params, const Vocabulary& vocab,
                             const std::vector<Story>& stories) {
    return evaluate(params, vocab, stories).accuracy;
}

}  // namespace detail

/// Trains runs_per_seed independent runs per seed and keeps the checkpoint
/// with the best validation accuracy seen at any epoch of any run (earliest
/// wins on ties). Single-threaded and deterministic for a fixed config.
inline TrainResult train(const std::vector<Story>& stories, const Vocabulary& vocab,
                         const EmbeddingTable& embeddings, const LabelMap* labels,
                         const TrainConfig& cfg, const TrainHooks& hooks = {}) {
    cfg.validate();
    if (stories.empty()) throw ConfigError("training corpus is empty");
    if (cfg.val_count >= stories.size() && cfg.val_count != 0)
        throw ConfigError("val_count " + std::to_string(cfg.val_count) +
                          " leaves no training stories (corpus has " +
                          std::to_string(stories.size()) + ")");

    CorpusSplit split = split_corpus(stories, cfg.val_count);
    const std::vector<Story>& val_stories =
        cfg.val_count == 0 ? split.train : split.validation;

    SupervisionFlags flags = cfg.supervision();
    bool need_labels = flags.any() && cfg.alpha != 0.0;
    std::vector<Instance> insts = expand_instances(split.train, vocab, labels, need_labels);

    ModelConfig mc;
    mc.hidden = cfg.hidden;
    mc.embed_dim = embeddings.dim();
    mc.bidirectional = cfg.bidirectional;
    mc.free_chain = cfg.free_chain;

    EmbeddingTable table = embeddings;
    table.frozen = cfg.freeze_embeddings;

    FtrlConfig fc{cfg.learning_rate, cfg.ftrl_beta, cfg.ftrl_l1, cfg.ftrl_l2};

    TrainResult result;
    result.vocab = vocab;

    for (std::uint64_t seed : cfg.seeds) {
        for (std::size_t run = 0; run < cfg.runs_per_seed; ++run) {
            Rng rng(run_seed(seed, run));
            ModelParams params = init_params(mc, table, rng);
            FtrlOptimizer opt(fc, params.store);

            // Shape prototypes for gradient extraction, fixed per run.
            std::vector<Tensor> protos = params.store.values();
            for (Tensor& t : protos) std::fill(t.data.begin(), t.data.end(), 0.0);

            RunSummary summary;
            summary.seed = seed;
            summary.run = run;
            summary.best_val_acc = -1.0;

            std::vector<std::size_t> order(insts.size());
            for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

            for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
                rng.shuffle(order);
                double sum_total = 0.0, sum_pred = 0.0, sum_gate = 0.0;

                for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                    std::size_t stop = std::min(order.size(), start + cfg.batch_size);
                    std::vector<Tensor> grad_sum = protos;
                    for (std::size_t b = start; b < stop; ++b) {
                        const Instance& inst = insts[order[b]];
                        DropoutMasks masks;
                        masks.context_embed = make_mask(mc.embed_dim, cfg.dropout_embed, rng);
                        masks.ending_embed = make_mask(mc.embed_dim, cfg.dropout_embed, rng);
                        masks.chain_input = make_mask(mc.hidden, cfg.dropout_chain, rng);
                        masks.classifier = make_mask(mc.hidden, cfg.dropout_classifier, rng);

                        Tape tape;
                        ForwardGraph fwd = forward(tape, params, inst.context_ids,
                                                   inst.ending_ids, &masks);
                        LossGraph lg = compute_loss(tape, params, fwd, inst.target,
                                                    inst.labels, flags, cfg.alpha,
                                                    cfg.lambda);
                        tape.backward(lg.total);
                        std::vector<Tensor> grads = tape.param_grads(protos);
                        for (std::size_t p = 0; p < grads.size(); ++p)
                            for (std::size_t i = 0; i < grads[p].size(); ++i)
                                grad_sum[p][i] += grads[p][i];

                        sum_total += tape.value(lg.total)[0];
                        sum_pred += tape.value(lg.prediction)[0];
                        if (lg.gate >= 0) sum_gate += tape.value(lg.gate)[0];
                    }
                    double inv = 1.0 / static_cast<double>(stop - start);
                    for (Tensor& g : grad_sum)
                        for (double& v : g.data) v *= inv;
                    if (hooks.on_gradients) hooks.on_gradients(params.store, grad_sum);
                    opt.step(params.store, grad_sum);
                }

                double n = static_cast<double>(insts.size());
                LogRow row;
                row.seed = seed;
                row.run = run;
                row.epoch = epoch;
                row.loss_total = sum_total / n;
                row.loss_pred = sum_pred / n;
                row.loss_gate = sum_gate / n;
                row.val_acc = detail::story_accuracy(params, vocab, val_stories);
                result.log.push_back(row);
                if (hooks.on_epoch) hooks.on_epoch(row);

                if (row.val_acc > summary.best_val_acc) {
                    summary.best_val_acc = row.val_acc;
                    summary.best_epoch = epoch;
                }
                if (row.val_acc > result.best_val_acc) {
                    result.best_val_acc = row.val_acc;
                    result.best_seed = seed;
                    result.best_run = run;
                    result.best_epoch = epoch;
                    result.best_params = params;  // deep copy
                }
            }

            detail::InstanceLoss fin =
                detail::eval_mode_loss(params, insts, flags, cfg.alpha, cfg.lambda);
            summary.final_train_loss = fin.total;
            summary.final_train_acc = detail::story_accuracy(params, vocab, split.train);
            result.runs.push_back(summary);
        }
    }
    return result;
}

}  // namespace memchain
