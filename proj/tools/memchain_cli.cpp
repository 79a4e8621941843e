// Command-line surface for the memory-chain story-ending classifier:
// train, eval, ablate, label, export-vectors, gen-synthetic, grad-check.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "memchain/ablate.hpp"
#include "memchain/checkpoint.hpp"
#include "memchain/eval.hpp"
#include "memchain/grad_check.hpp"
#include "memchain/loss.hpp"
#include "memchain/synthetic.hpp"
#include "memchain/train.hpp"

namespace fs = std::filesystem;
using namespace memchain;

namespace {

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << content;
    if (!out) throw ConfigError("write failed: " + path);
}

TrainConfig resolve_config(const std::string& config_path,
                           const std::vector<std::string>& overrides) {
    TrainConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    for (const std::string& kv : overrides) {
        std::size_t eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        apply_config_kv(cfg, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
    }
    cfg.validate();
    return cfg;
}

LexiconSet load_lexicon_dir(const std::string& dir) {
    return load_lexicons(dir + "/event.txt", dir + "/sentiment.txt",
                         dir + "/negation.txt", dir + "/topic.txt");
}

LabelMap labels_from_lexicons(const std::vector<Story>& stories, const LexiconSet& lex) {
    LabelMap map;
    for (const Story& s : stories) map[s.id] = label_story(s.context_tokens(), lex);
    return map;
}

/// Labels from either a precomputed label file or a lexicon directory.
LabelMap resolve_labels(const std::vector<Story>& stories, const std::string& label_file,
                        const std::string& lexicon_dir) {
    if (!label_file.empty() && !lexicon_dir.empty())
        throw ConfigError("give either --labels or --lexicons, not both");
    if (!label_file.empty()) return load_label_file(label_file);
    if (!lexicon_dir.empty()) return labels_from_lexicons(stories, load_lexicon_dir(lexicon_dir));
    return {};
}

EmbeddingTable resolve_embeddings(const Vocabulary& vocab, const TrainConfig& cfg,
                                  const std::string& path) {
    if (!path.empty()) return load_embeddings(path, vocab);
    Rng rng(cfg.seeds.front());
    return random_embeddings(vocab, cfg.hidden, rng);
}

struct TrainArgs {
    std::string corpus, config, labels, lexicons, embeddings, out_dir = "train_out";
    std::vector<std::string> overrides;
};

int run_train(const TrainArgs& a) {
    TrainConfig cfg = resolve_config(a.config, a.overrides);
    std::vector<Story> stories = load_corpus(a.corpus);
    Vocabulary vocab = build_vocabulary(stories);
    EmbeddingTable table = resolve_embeddings(vocab, cfg, a.embeddings);
    LabelMap labels = resolve_labels(stories, a.labels, a.lexicons);

    fs::create_directories(a.out_dir);
    TrainResult res = train(stories, vocab, table, labels.empty() ? nullptr : &labels, cfg);

    save_checkpoint(a.out_dir + "/checkpoint.txt", res.best_params, res.vocab);
    write_text(a.out_dir + "/log.csv", log_to_csv(res.log));
    save_config(a.out_dir + "/config_used.cfg", cfg);
    {
        std::ostringstream runs;
        runs << "seed,run,best_val_acc,best_epoch,final_train_loss,final_train_acc\n";
        runs << std::setprecision(17);
        for (const RunSummary& r : res.runs)
            runs << r.seed << ',' << r.run << ',' << r.best_val_acc << ',' << r.best_epoch
                 << ',' << r.final_train_loss << ',' << r.final_train_acc << '\n';
        write_text(a.out_dir + "/runs.csv", runs.str());
    }
    std::cout << "best_val_acc " << res.best_val_acc << " (seed " << res.best_seed
              << " run " << res.best_run << " epoch " << res.best_epoch << ")\n"
              << "checkpoint " << a.out_dir << "/checkpoint.txt\n";
    return 0;
}

struct EvalArgs {
    std::vector<std::string> checkpoints;
    std::string corpus, report;
};

int run_eval(const EvalArgs& a) {
    std::vector<Story> stories = load_corpus(a.corpus);
    std::vector<double> accs;
    std::string first_report;
    for (std::size_t i = 0; i < a.checkpoints.size(); ++i) {
        Checkpoint ck = load_checkpoint(a.checkpoints[i]);
        EvalReport rep = evaluate(ck.params, ck.vocab, stories);
        accs.push_back(rep.accuracy);
        if (i == 0) first_report = report_to_csv(rep);
        std::cout << "accuracy " << rep.accuracy << " (" << a.checkpoints[i] << ", n="
                  << rep.n << ")\n";
    }
    if (accs.size() > 1) {
        double mean = 0.0;
        for (double v : accs) mean += v;
        mean /= static_cast<double>(accs.size());
        std::cout << "mean " << mean << " sd " << population_sd(accs) << "\n";
    }
    if (!a.report.empty()) write_text(a.report, first_report);
    return 0;
}

struct AblateArgs {
    std::string corpus, config, labels, lexicons, embeddings, out;
    std::vector<std::string> deltas;
    std::vector<std::string> overrides;
};

int run_ablate(const AblateArgs& a) {
    TrainConfig cfg = resolve_config(a.config, a.overrides);
    std::vector<Story> stories = load_corpus(a.corpus);
    Vocabulary vocab = build_vocabulary(stories);
    EmbeddingTable table = resolve_embeddings(vocab, cfg, a.embeddings);
    LabelMap labels = resolve_labels(stories, a.labels, a.lexicons);

    std::vector<std::string> deltas = a.deltas;
    if (deltas.empty())
        for (const AblationDelta& d : kAblationDeltas) deltas.push_back(d.name);

    std::vector<AblationRow> rows =
        ablate(stories, vocab, table, labels.empty() ? nullptr : &labels, cfg, deltas);
    std::string tbl = ablation_table(rows);
    std::cout << tbl;
    if (!a.out.empty()) write_text(a.out, tbl);
    return 0;
}

struct LabelArgs {
    std::string corpus, lexicons, out;
};

int run_label(const LabelArgs& a) {
    std::vector<Story> stories = load_corpus(a.corpus);
    LexiconSet lex = load_lexicon_dir(a.lexicons);
    // Emit in corpus order for reproducible files.
    std::vector<std::pair<std::string, TriggerLabels>> rows;
    rows.reserve(stories.size());
    for (const Story& s : stories) rows.emplace_back(s.id, label_story(s.context_tokens(), lex));
    save_label_file(rows, a.out);
    std::cout << "labeled " << stories.size() << " stories -> " << a.out << "\n";
    return 0;
}

struct ExportArgs {
    std::string checkpoint, corpus, labels, lexicons, out = "vectors.csv";
    std::size_t cap = 500;
    std::uint64_t seed = 0;
};

int run_export(const ExportArgs& a) {
    Checkpoint ck = load_checkpoint(a.checkpoint);
    std::vector<Story> stories = load_corpus(a.corpus);
    LabelMap labels = resolve_labels(stories, a.labels, a.lexicons);
    if (labels.empty()) throw ConfigError("export-vectors needs --labels or --lexicons");
    write_text(a.out, export_vectors(ck.params, ck.vocab, stories, labels, a.cap, a.seed));
    std::cout << "wrote " << a.out << "\n";
    return 0;
}

struct GenArgs {
    std::size_t n = 256;
    std::uint64_t seed = 1;
    std::string out_dir = "synthetic";
};

int run_gen(const GenArgs& a) {
    SyntheticCorpus corpus = generate_synthetic(a.n, a.seed);
    fs::create_directories(a.out_dir);
    fs::create_directories(a.out_dir + "/lexicons");
    save_corpus(corpus.stories, a.out_dir + "/stories.tsv");
    save_lexicons(corpus.lexicons, a.out_dir + "/lexicons");
    std::vector<std::pair<std::string, TriggerLabels>> rows;
    rows.reserve(corpus.stories.size());
    for (std::size_t i = 0; i < corpus.stories.size(); ++i)
        rows.emplace_back(corpus.stories[i].id, corpus.planted[i]);
    save_label_file(rows, a.out_dir + "/labels.tsv");
    std::cout << "wrote " << corpus.stories.size() << " stories under " << a.out_dir << "\n";
    return 0;
}

struct GradArgs {
    std::size_t hidden = 8, embed_dim = 8, tokens = 6;
    std::uint64_t seed = 5;
    double tol = 1e-4;
    bool unidirectional = false, no_free_chain = false;
};

int run_grad_check(const GradArgs& a) {
    ModelConfig mc;
    mc.hidden = a.hidden;
    mc.embed_dim = a.embed_dim;
    mc.bidirectional = !a.unidirectional;
    mc.free_chain = !a.no_free_chain;

    Rng rng(a.seed);
    Vocabulary vocab;
    for (int i = 1; i < 12; ++i) vocab.add("t" + std::to_string(i));
    EmbeddingTable table = random_embeddings(vocab, mc.embed_dim, rng);
    table.frozen = false;
    ModelParams params = init_params(mc, table, rng);

    std::vector<int> ctx(a.tokens), end(3);
    for (int& t : ctx) t = 1 + static_cast<int>(rng.below(vocab.size() - 1));
    for (int& t : end) t = 1 + static_cast<int>(rng.below(vocab.size() - 1));
    TriggerLabels labels = TriggerLabels::zeros(a.tokens);
    for (std::size_t i = 0; i < a.tokens; ++i) {
        labels.event[i] = rng.bernoulli(0.4) ? 1 : 0;
        labels.sentiment[i] = rng.bernoulli(0.4) ? 1 : 0;
        labels.topic[i] = rng.bernoulli(0.4) ? 1 : 0;
    }

    GradCheckReport rep = grad_check(params.store, [&](Tape& tape) {
        ForwardGraph fwd = forward(tape, params, ctx, end);
        return compute_loss(tape, params, fwd, 1.0, labels, SupervisionFlags{}, 0.5, 0.001)
            .total;
    });
    for (const GradCheckEntry& e : rep.entries)
        std::cout << e.name << " max_rel_err " << e.max_rel_err << "\n";
    std::cout << "worst " << rep.worst << " tol " << a.tol << "\n";
    if (!rep.all_below(a.tol)) {
        std::cerr << "error [internal] gradient check exceeded tolerance\n";
        return 1;
    }
    std::cout << "gradient check passed\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"memory-chain story ending classifier"};
    app.require_subcommand(1);

    TrainArgs train_args;
    CLI::App* cmd_train = app.add_subcommand("train", "train a model");
    cmd_train->add_option("--corpus", train_args.corpus, "story TSV")->required();
    cmd_train->add_option("--config", train_args.config, "flat key=value config file");
    cmd_train->add_option("--labels", train_args.labels, "precomputed trigger-label TSV");
    cmd_train->add_option("--lexicons", train_args.lexicons, "lexicon directory");
    cmd_train->add_option("--embeddings", train_args.embeddings, "embedding text file");
    cmd_train->add_option("--out-dir", train_args.out_dir, "output directory");
    cmd_train->add_option("--set", train_args.overrides, "override: key=value");

    EvalArgs eval_args;
    CLI::App* cmd_eval = app.add_subcommand("eval", "evaluate checkpoints");
    cmd_eval->add_option("--checkpoint", eval_args.checkpoints, "checkpoint file (repeatable)")
        ->required();
    cmd_eval->add_option("--corpus", eval_args.corpus, "story TSV")->required();
    cmd_eval->add_option("--report", eval_args.report, "per-story report CSV path");

    AblateArgs ablate_args;
    CLI::App* cmd_ablate = app.add_subcommand("ablate", "run ablation table");
    cmd_ablate->add_option("--corpus", ablate_args.corpus, "story TSV")->required();
    cmd_ablate->add_option("--config", ablate_args.config, "flat key=value config file");
    cmd_ablate->add_option("--labels", ablate_args.labels, "precomputed trigger-label TSV");
    cmd_ablate->add_option("--lexicons", ablate_args.lexicons, "lexicon directory");
    cmd_ablate->add_option("--embeddings", ablate_args.embeddings, "embedding text file");
    cmd_ablate->add_option("--delta", ablate_args.deltas, "ablation switch (repeatable)");
    cmd_ablate->add_option("--out", ablate_args.out, "write table to file");
    cmd_ablate->add_option("--set", ablate_args.overrides, "override: key=value");

    LabelArgs label_args;
    CLI::App* cmd_label = app.add_subcommand("label", "label a corpus with lexicons");
    cmd_label->add_option("--corpus", label_args.corpus, "story TSV")->required();
    cmd_label->add_option("--lexicons", label_args.lexicons, "lexicon directory")->required();
    cmd_label->add_option("--out", label_args.out, "label TSV path")->required();

    ExportArgs export_args;
    CLI::App* cmd_export = app.add_subcommand("export-vectors", "dump trigger-token vectors");
    cmd_export->add_option("--checkpoint", export_args.checkpoint, "checkpoint file")->required();
    cmd_export->add_option("--corpus", export_args.corpus, "story TSV")->required();
    cmd_export->add_option("--labels", export_args.labels, "precomputed trigger-label TSV");
    cmd_export->add_option("--lexicons", export_args.lexicons, "lexicon directory");
    cmd_export->add_option("--out", export_args.out, "output CSV");
    cmd_export->add_option("--cap", export_args.cap, "max rows per aspect");
    cmd_export->add_option("--seed", export_args.seed, "sampling seed");

    GenArgs gen_args;
    CLI::App* cmd_gen = app.add_subcommand("gen-synthetic", "generate a synthetic corpus");
    cmd_gen->add_option("--n", gen_args.n, "story count");
    cmd_gen->add_option("--seed", gen_args.seed, "generator seed");
    cmd_gen->add_option("--out-dir", gen_args.out_dir, "output directory");

    GradArgs grad_args;
    CLI::App* cmd_grad = app.add_subcommand("grad-check", "finite-difference gradient check");
    cmd_grad->add_option("--hidden", grad_args.hidden, "hidden size");
    cmd_grad->add_option("--embed-dim", grad_args.embed_dim, "embedding size");
    cmd_grad->add_option("--tokens", grad_args.tokens, "context length");
    cmd_grad->add_option("--seed", grad_args.seed, "seed");
    cmd_grad->add_option("--tol", grad_args.tol, "relative-error tolerance");
    cmd_grad->add_flag("--unidirectional", grad_args.unidirectional, "disable backward direction");
    cmd_grad->add_flag("--no-free-chain", grad_args.no_free_chain, "disable the free chain");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error [cli] " << e.what() << "\n";
        return 2;
    }

    try {
        if (cmd_train->parsed()) return run_train(train_args);
        if (cmd_eval->parsed()) return run_eval(eval_args);
        if (cmd_ablate->parsed()) return run_ablate(ablate_args);
        if (cmd_label->parsed()) return run_label(label_args);
        if (cmd_export->parsed()) return run_export(export_args);
        if (cmd_gen->parsed()) return run_gen(gen_args);
        if (cmd_grad->parsed()) return run_grad_check(grad_args);
    } catch (const ParseError& e) {
        std::cerr << "error [parse] " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error [config] " << e.what() << "\n";
        return 3;
    } catch (const ContractError& e) {
        std::cerr << "error [contract] " << e.what() << "\n";
        return 4;
    } catch (const DimError& e) {
        std::cerr << "error [dimension] " << e.what() << "\n";
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error [internal] " << e.what() << "\n";
        return 1;
    }
    return 0;
}
