#pragma once

#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "memchain/corpus.hpp"
#include "memchain/labeler.hpp"
#include "memchain/rng.hpp"

namespace memchain {

/// Trigger lexicon sizes for generated corpora.
struct SyntheticSpec {
    std::size_t event_terms = 12;
    std::size_t sentiment_terms = 6;  // per polarity
    std::size_t topic_terms = 8;
    std::size_t distractor_topics = 4;
    std::size_t filler_terms = 24;
};

struct SyntheticCorpus {
    std::vector<Story> stories;
    LexiconSet lexicons;
    // Ground-truth trigger positions recorded at assembly time, for
    // cross-checking the labeler.
    std::vector<TriggerLabels> planted;
};

namespace detail {

inline std::vector<std::string> family(const std::string& stem, std::size_t n) {
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(stem + std::to_string(i));
    return out;
}

template <typename T>
const T& choice(Rng& rng, const std::vector<T>& v) {
    return v[rng.below(v.size())];
}

}  // namespace detail

/// Deterministic cloze corpus with planted triggers. Every context carries one
/// topic token (twice), one sentiment polarity, and event verbs; the coherent
/// ending repeats the topic and polarity, while the incoherent ending either
/// switches to a held-out distractor topic or negates the sentiment. Both
/// contradiction markers are absent from every context, so the instances are
/// linearly separable from trigger counts alone.
inline SyntheticCorpus generate_synthetic(std::size_t n, std::uint64_t seed,
                                          const SyntheticSpec& spec = {}) {
    Rng rng(seed);
    SyntheticCorpus out;

    std::vector<std::string> events = detail::family("ev", spec.event_terms);
    std::vector<std::string> pos = detail::family("pos", spec.sentiment_terms);
    std::vector<std::string> neg = detail::family("neg", spec.sentiment_terms);
    std::vector<std::string> topics = detail::family("topic", spec.topic_terms);
    std::vector<std::string> distractors = detail::family("dtop", spec.distractor_topics);
    std::vector<std::string> filler = detail::family("w", spec.filler_terms);
    std::vector<std::string> negations = {"not", "never"};

    LexiconSet& lex = out.lexicons;
    for (const auto& t : events) lex.event_terms.insert(t);
    for (const auto& t : pos) lex.sentiment_terms.insert(t);
    for (const auto& t : neg) lex.sentiment_terms.insert(t);
    for (const auto& t : negations) lex.negation_terms.insert(t);
    // Topic rules cover nouns and verbs, so event verbs are topic triggers too.
    for (const auto& t : topics) lex.topic_words.insert(t);
    for (const auto& t : distractors) lex.topic_words.insert(t);
    for (const auto& t : events) lex.topic_words.insert(t);

    for (std::size_t s = 0; s < n; ++s) {
        Story story;
        std::ostringstream id;
        id << "syn" << std::setw(4) << std::setfill('0') << s;
        story.id = id.str();

        const std::string& topic = detail::choice(rng, topics);
        bool positive = rng.bernoulli(0.5);
        const std::vector<std::string>& senti = positive ? pos : neg;

        story.context[0] = {"the", topic, detail::choice(rng, events),
                            detail::choice(rng, filler)};
        story.context[1] = {detail::choice(rng, filler), "was",
                            detail::choice(rng, senti), topic};
        story.context[2] = {detail::choice(rng, filler), detail::choice(rng, events),
                            "a", detail::choice(rng, filler)};
        story.context[3] = {"the", detail::choice(rng, filler),
                            detail::choice(rng, senti), detail::choice(rng, events)};

        std::vector<std::string> coherent = {"the", topic, "was",
                                             detail::choice(rng, senti)};
        std::vector<std::string> incoherent;
        if (rng.bernoulli(0.5)) {
            // Topic contradiction: a distractor topic never seen in context.
            incoherent = {"the", detail::choice(rng, distractors), "was",
                          detail::choice(rng, senti)};
        } else {
            // Sentiment contradiction: negated polarity.
            incoherent = {"the", topic, "was", detail::choice(rng, negations),
                          detail::choice(rng, senti)};
        }

        if (rng.bernoulli(0.5)) {
            story.ending_a = coherent;
            story.ending_b = incoherent;
            story.gold = 'A';
        } else {
            story.ending_a = incoherent;
            story.ending_b = coherent;
            story.gold = 'B';
        }

        std::vector<std::string> ctx = story.context_tokens();
        TriggerLabels planted = TriggerLabels::zeros(ctx.size());
        for (std::size_t i = 0; i < ctx.size(); ++i) {
            const std::string& t = ctx[i];
            bool is_event = lex.event_terms.count(t) > 0;
            bool is_senti = lex.sentiment_terms.count(t) > 0;
            bool is_topic = lex.topic_words.count(t) > 0;
            planted.event[i] = is_event ? 1 : 0;
            planted.sentiment[i] = is_senti ? 1 : 0;
            planted.topic[i] = is_topic ? 1 : 0;
        }
        out.planted.push_back(std::move(planted));
        out.stories.push_back(std::move(story));
    }
    return out;
}

inline void save_lexicons(const LexiconSet& lex, const std::string& dir) {
    auto dump = [](const std::set<std::string>& terms, const std::string& path) {
        std::ofstream out(path);
        if (!out) throw ConfigError("lexicon: cannot write '" + path + "'");
        for (const auto& t : terms) out << t << '\n';
    };
    dump(lex.event_terms, dir + "/event.txt");
    dump(lex.sentiment_terms, dir + "/sentiment.txt");
    dump(lex.negation_terms, dir + "/negation.txt");
    std::ofstream topic(dir + "/topic.txt");
    if (!topic) throw ConfigError("lexicon: cannot write '" + dir + "/topic.txt'");
    for (const auto& t : lex.topic_words) topic << t << '\n';
    for (const auto& s : lex.topic_suffixes) topic << '-' << s << '\n';
}

}  // namespace memchain
