#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "memchain/corpus.hpp"
#include "memchain/params.hpp"
#include "memchain/rng.hpp"
#include "memchain/tape.hpp"

namespace memchain {

constexpr std::size_t kSupervisedChains = 3;  // event, sentiment, topic
constexpr const char* kChainNames[4] = {"event", "sentiment", "topic", "free"};

struct ModelConfig {
    std::size_t hidden = 300;
    std::size_t embed_dim = 300;
    bool bidirectional = true;
    bool free_chain = true;

    std::size_t chains() const { return kSupervisedChains + (free_chain ? 1 : 0); }
};

/// Locked dropout masks for one instance. Each mask is a single vector reused
/// at every timestep of its sequence; empty tensors mean evaluation mode.
struct DropoutMasks {
    Tensor context_embed;  // d
    Tensor ending_embed;   // d
    Tensor chain_input;    // h
    Tensor classifier;     // h

    bool active() const { return context_embed.size() > 0; }
};

inline Tensor make_mask(std::size_t n, double rate, Rng& rng) {
    Tensor m = Tensor::zeros({n});
    if (rate <= 0.0) {
        for (double& v : m.data) v = 1.0;
        return m;
    }
    double keep_scale = 1.0 / (1.0 - rate);
    for (double& v : m.data) v = rng.bernoulli(rate) ? 0.0 : keep_scale;
    return m;
}

struct GruParamIds {
    ParamId wr, ur, br;
    ParamId wz, uz, bz;
    ParamId wn, un, bn;
};

struct ChainParamIds {
    ParamId u, v, w;
};

/// All trainable tensors. Construction order is fixed; it defines both the
/// RNG draw order at init and the checkpoint layout.
struct ModelParams {
    ModelConfig cfg;
    ParamStore store;

    ParamId embeddings = -1;
    bool embeddings_frozen = false;
    std::array<GruParamIds, 2> gru;      // 0 = forward, 1 = backward
    std::array<ChainParamIds, 2> chain;  // 0 = forward, 1 = backward
    ParamId keys = -1;                   // K x h, shared across directions
    ParamId w_att = -1;                  // h x h
    ParamId h_out = -1;                  // h x h
    ParamId r_out = -1;                  // h
    ParamId chain_slope = -1;  // h, shared by both directions' update candidates
    ParamId clf_slope = -1;    // h
};

namespace detail {

inline Tensor glorot(std::size_t rows, std::size_t cols, Rng& rng) {
    double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Tensor t = Tensor::zeros({rows, cols});
    for (double& v : t.data) v = rng.uniform(-bound, bound);
    return t;
}

inline GruParamIds add_gru(ParamStore& store, const std::string& prefix, std::size_t h,
                           std::size_t d, Rng& rng) {
    GruParamIds ids;
    ids.wr = store.add(prefix + "_wr", glorot(h, d, rng));
    ids.ur = store.add(prefix + "_ur", glorot(h, h, rng));
    ids.br = store.add(prefix + "_br", Tensor::zeros({h}));
    ids.wz = store.add(prefix + "_wz", glorot(h, d, rng));
    ids.uz = store.add(prefix + "_uz", glorot(h, h, rng));
    ids.bz = store.add(prefix + "_bz", Tensor::zeros({h}));
    ids.wn = store.add(prefix + "_wn", glorot(h, d, rng));
    ids.un = store.add(prefix + "_un", glorot(h, h, rng));
    ids.bn = store.add(prefix + "_bn", Tensor::zeros({h}));
    return ids;
}

inline ChainParamIds add_chain(ParamStore& store, const std::string& prefix,
                               std::size_t h, Rng& rng) {
    ChainParamIds ids;
    ids.u = store.add(prefix + "_u", glorot(h, h, rng));
    ids.v = store.add(prefix + "_v", glorot(h, h, rng));
    ids.w = store.add(prefix + "_w", glorot(h, h, rng));
    return ids;
}

}  // namespace detail

/// Fresh parameters. The embedding matrix is registered first so external
/// tables can be spliced in; everything else draws from rng in fixed order.
inline ModelParams init_params(const ModelConfig& cfg, const EmbeddingTable& embeddings,
                               Rng& rng) {
    ModelParams p;
    p.cfg = cfg;
    std::size_t h = cfg.hidden;
    std::size_t d = cfg.embed_dim;
    if (embeddings.dim() != d)
        throw ConfigError("embedding dim " + std::to_string(embeddings.dim()) +
                          " != configured embed_dim " + std::to_string(d));
    p.embeddings_frozen = embeddings.frozen;
    p.embeddings = p.store.add("embeddings", embeddings.matrix, !embeddings.frozen);
    p.gru[0] = detail::add_gru(p.store, "gru_fwd", h, d, rng);
    p.gru[1] = detail::add_gru(p.store, "gru_bwd", h, d, rng);
    p.chain[0] = detail::add_chain(p.store, "chain_fwd", h, rng);
    p.chain[1] = detail::add_chain(p.store, "chain_bwd", h, rng);
    Tensor keys = Tensor::zeros({cfg.chains(), h});
    for (double& v : keys.data) v = rng.normal(0.0, 0.1);
    p.keys = p.store.add("keys", std::move(keys));
    p.w_att = p.store.add("w_att", detail::glorot(h, h, rng));
    p.h_out = p.store.add("h_out", detail::glorot(h, h, rng));
    {
        // Glorot fan-in/fan-out for the readout vector, like the matrices; a
        // zero readout would silence every prediction gradient at the start.
        double bound = std::sqrt(6.0 / static_cast<double>(h + 1));
        Tensor r = Tensor::zeros({h});
        for (double& v : r.data) v = rng.uniform(-bound, bound);
        p.r_out = p.store.add("r_out", std::move(r));
    }
    p.chain_slope = p.store.add("chain_slope", Tensor::full({h}, 0.25));
    p.clf_slope = p.store.add("clf_slope", Tensor::full({h}, 0.25));
    return p;
}

/// Caches one tape leaf per parameter so repeated uses share a node and
/// gradients accumulate.
class GraphBuilder {
public:
    GraphBuilder(Tape& tape, ModelParams& params)
        : tape_(tape), params_(params), cache_(params.store.size(), -1) {}

    Tape& tape() { return tape_; }

    NodeId param(ParamId pid) {
        NodeId& slot = cache_.at(static_cast<std::size_t>(pid));
        if (slot < 0) {
            bool trainable = params_.store.trainable(pid);
            slot = tape_.leaf(params_.store.value(pid), trainable ? pid : -1);
        }
        return slot;
    }

    /// Embedding row for one token id; bypasses the big matrix leaf entirely
    /// when the table is frozen.
    NodeId embed(int token_id) {
        std::size_t r = static_cast<std::size_t>(token_id);
        if (params_.embeddings_frozen) {
            const Tensor& E = params_.store.value(params_.embeddings);
            Tensor row = Tensor::zeros({E.cols()});
            std::copy(E.data.begin() + r * E.cols(), E.data.begin() + (r + 1) * E.cols(),
                      row.data.begin());
            return tape_.constant(std::move(row));
        }
        return tape_.row(param(params_.embeddings), r);
    }

private:
    Tape& tape_;
    ModelParams& params_;
    std::vector<NodeId> cache_;
};

namespace detail {

inline NodeId gru_cell(GraphBuilder& g, const GruParamIds& ids, NodeId x, NodeId h_prev) {
    Tape& t = g.tape();
    NodeId r = t.sigmoid(t.add(t.add(t.matvec(g.param(ids.wr), x),
                                     t.matvec(g.param(ids.ur), h_prev)),
                               g.param(ids.br)));
    NodeId z = t.sigmoid(t.add(t.add(t.matvec(g.param(ids.wz), x),
                                     t.matvec(g.param(ids.uz), h_prev)),
                               g.param(ids.bz)));
    NodeId n = t.tanh(t.add(t.add(t.matvec(g.param(ids.wn), x),
                                  t.matvec(g.param(ids.un), t.hadamard(r, h_prev))),
                            g.param(ids.bn)));
    // h = (1 - z) * h_prev + z * n
    NodeId one_minus_z = t.affine(z, -1.0, 1.0);
    return t.add(t.hadamard(one_minus_z, h_prev), t.hadamard(z, n));
}

}  // namespace detail

struct EncodeResult {
    std::vector<NodeId> states;  // per position, sum of both directions
    NodeId final_fwd = -1;
    NodeId final_bwd = -1;  // unset when unidirectional
};

/// Runs the token encoder over an embedded sequence. Forward and backward
/// recurrences use separate parameter sets; each position's output is the
/// elementwise sum of the two directions (forward state alone when the
/// backward direction is disabled).
inline EncodeResult encode_sequence(GraphBuilder& g, ModelParams& params,
                                    const std::vector<NodeId>& inputs) {
    Tape& t = g.tape();
    std::size_t T = inputs.size();
    std::size_t h = params.cfg.hidden;
    EncodeResult out;

    std::vector<NodeId> fwd(T);
    NodeId state = t.constant(Tensor::zeros({h}));
    for (std::size_t i = 0; i < T; ++i) {
        state = detail::gru_cell(g, params.gru[0], inputs[i], state);
        fwd[i] = state;
    }
    out.final_fwd = state;

    if (!params.cfg.bidirectional) {
        out.states = fwd;
        return out;
    }

    std::vector<NodeId> bwd(T);
    state = t.constant(Tensor::zeros({h}));
    for (std::size_t i = T; i-- > 0;) {
        state = detail::gru_cell(g, params.gru[1], inputs[i], state);
        bwd[i] = state;
    }
    out.final_bwd = state;

    out.states.resize(T);
    for (std::size_t i = 0; i < T; ++i) out.states[i] = t.add(fwd[i], bwd[i]);
    return out;
}

/// One memory update. The candidate mixes previous memory, key, and input
/// through a parametric ReLU; the scalar gate is the sigmoid of the location
/// and content dot products; the updated memory is renormalized to the unit
/// sphere, which is what lets the chain forget.
struct ChainStepOut {
    NodeId memory;
    NodeId gate;
};

inline ChainStepOut chain_step(GraphBuilder& g, ModelParams& params,
                               const ChainParamIds& ids, NodeId h_i, NodeId key,
                               NodeId m_prev) {
    Tape& t = g.tape();
    NodeId candidate = t.prelu(t.add(t.add(t.matvec(g.param(ids.u), m_prev),
                                           t.matvec(g.param(ids.v), key)),
                                     t.matvec(g.param(ids.w), h_i)),
                               g.param(params.chain_slope));
    NodeId gate = t.sigmoid(t.add(t.dot(h_i, key), t.dot(h_i, m_prev)));
    NodeId updated = t.add(m_prev, t.scale_by(gate, candidate));
    return {t.l2_normalize(updated), gate};
}

/// Everything run_chains produces. Memories are indexed by token position;
/// for the backward direction, position i holds the state right after the
/// backward scan visited token i. Terminal states (each scan's last update)
/// feed the classifier.
struct ChainsGraph {
    // [direction][position][chain]; direction 1 empty when unidirectional.
    std::array<std::vector<std::vector<NodeId>>, 2> memories;
    std::array<std::vector<std::vector<NodeId>>, 2> gates;
    std::vector<std::vector<NodeId>> avg_gates;  // [position][chain]
    std::vector<NodeId> final_memories;          // [chain], fused terminal states
};

inline ChainsGraph run_chains(GraphBuilder& g, ModelParams& params,
                              const std::vector<NodeId>& h_seq) {
    Tape& t = g.tape();
    std::size_t T = h_seq.size();
    // Chain count follows the key table so the module works at any K.
    std::size_t K = params.store.value(params.keys).rows();
    ChainsGraph out;

    std::vector<NodeId> key_nodes(K);
    std::vector<NodeId> init(K);
    for (std::size_t j = 0; j < K; ++j) {
        key_nodes[j] = t.row(g.param(params.keys), j);
        init[j] = t.l2_normalize(key_nodes[j]);  // memory starts at its key
    }

    std::size_t dirs = params.cfg.bidirectional ? 2 : 1;
    for (std::size_t dir = 0; dir < dirs; ++dir) {
        out.memories[dir].assign(T, std::vector<NodeId>(K, -1));
        out.gates[dir].assign(T, std::vector<NodeId>(K, -1));
        std::vector<NodeId> m = init;
        for (std::size_t step = 0; step < T; ++step) {
            std::size_t pos = dir == 0 ? step : T - 1 - step;
            for (std::size_t j = 0; j < K; ++j) {
                ChainStepOut res = chain_step(g, params, params.chain[dir], h_seq[pos],
                                              key_nodes[j], m[j]);
                m[j] = res.memory;
                out.memories[dir][pos][j] = res.memory;
                out.gates[dir][pos][j] = res.gate;
            }
        }
        if (dir == 0) {
            out.final_memories = m;  // overwritten below when bidirectional
        } else {
            for (std::size_t j = 0; j < K; ++j)
                out.final_memories[j] = t.add(out.final_memories[j], m[j]);
        }
    }

    out.avg_gates.assign(T, std::vector<NodeId>(K, -1));
    for (std::size_t i = 0; i < T; ++i) {
        for (std::size_t j = 0; j < K; ++j) {
            if (dirs == 2) {
                out.avg_gates[i][j] =
                    t.scale(t.add(out.gates[0][i][j], out.gates[1][i][j]), 0.5);
            } else {
                out.avg_gates[i][j] = out.gates[0][i][j];
            }
        }
    }
    return out;
}

struct ScoreGraph {
    NodeId yhat;
    NodeId attention;  // K-vector
};

/// Attention over chains keyed against the encoded ending, then the final
/// prediction sigma(R . phi(H u + o)).
inline ScoreGraph score_ending(GraphBuilder& g, ModelParams& params,
                               const std::vector<NodeId>& final_memories, NodeId ending,
                               const DropoutMasks* masks) {
    Tape& t = g.tape();
    std::size_t K = final_memories.size();

    NodeId att_o = t.matvec(g.param(params.w_att), ending);
    std::vector<NodeId> logits(K);
    for (std::size_t j = 0; j < K; ++j)
        logits[j] = t.dot(t.row(g.param(params.keys), j), att_o);
    NodeId attention = t.softmax(t.concat(logits));

    NodeId weighted = t.scale_by(t.pick(attention, 0), final_memories[0]);
    for (std::size_t j = 1; j < K; ++j)
        weighted = t.add(weighted, t.scale_by(t.pick(attention, j), final_memories[j]));

    NodeId hidden = t.prelu(t.add(t.matvec(g.param(params.h_out), weighted), ending),
                            g.param(params.clf_slope));
    if (masks && masks->active()) hidden = t.dropout(hidden, masks->classifier);
    NodeId yhat = t.sigmoid(t.dot(g.param(params.r_out), hidden));
    return {yhat, attention};
}

/// Full forward graph for one (context, ending) instance.
struct ForwardGraph {
    NodeId yhat = -1;
    NodeId attention = -1;
    NodeId ending = -1;
    std::vector<NodeId> context_states;          // fused h_i
    std::vector<std::vector<NodeId>> avg_gates;  // [T][K]
    std::vector<NodeId> final_memories;          // [K]
    ChainsGraph chains;
};

inline std::vector<NodeId> embed_tokens(GraphBuilder& g, const std::vector<int>& ids,
                                        const Tensor* mask) {
    std::vector<NodeId> out;
    out.reserve(ids.size());
    for (int id : ids) {
        NodeId e = g.embed(id);
        if (mask) e = g.tape().dropout(e, *mask);
        out.push_back(e);
    }
    return out;
}

inline ForwardGraph forward(Tape& tape, ModelParams& params,
                            const std::vector<int>& context_ids,
                            const std::vector<int>& ending_ids,
                            const DropoutMasks* masks = nullptr) {
    if (context_ids.empty() || ending_ids.empty())
        throw ContractError("forward: empty token sequence");
    GraphBuilder g(tape, params);
    bool dropout_on = masks && masks->active();

    std::vector<NodeId> ctx_in =
        embed_tokens(g, context_ids, dropout_on ? &masks->context_embed : nullptr);
    EncodeResult ctx = encode_sequence(g, params, ctx_in);

    std::vector<NodeId> end_in =
        embed_tokens(g, ending_ids, dropout_on ? &masks->ending_embed : nullptr);
    EncodeResult end = encode_sequence(g, params, end_in);
    NodeId ending = params.cfg.bidirectional
                        ? tape.add(end.final_fwd, end.final_bwd)
                        : end.final_fwd;

    std::vector<NodeId> chain_in = ctx.states;
    if (dropout_on)
        for (NodeId& s : chain_in) s = tape.dropout(s, masks->chain_input);

    ForwardGraph out;
    out.chains = run_chains(g, params, chain_in);
    out.context_states = ctx.states;
    out.ending = ending;
    out.avg_gates = out.chains.avg_gates;
    out.final_memories = out.chains.final_memories;

    ScoreGraph score = score_ending(g, params, out.final_memories, ending, masks);
    out.yhat = score.yhat;
    out.attention = score.attention;
    return out;
}

/// Values extracted from a forward graph.
struct ForwardResult {
    double yhat = 0.0;
    std::vector<std::vector<double>> gates;  // [T][K] averaged
    std::vector<double> attention;           // [K]
    std::vector<Tensor> final_memories;      // [K]
    Tensor ending;
};

inline ForwardResult extract(const Tape& tape, const ForwardGraph& g) {
    ForwardResult r;
    r.yhat = tape.value(g.yhat)[0];
    r.gates.resize(g.avg_gates.size());
    for (std::size_t i = 0; i < g.avg_gates.size(); ++i) {
        r.gates[i].resize(g.avg_gates[i].size());
        for (std::size_t j = 0; j < g.avg_gates[i].size(); ++j)
            r.gates[i][j] = tape.value(g.avg_gates[i][j])[0];
    }
    r.attention = tape.value(g.attention).data;
    for (NodeId m : g.final_memories) r.final_memories.push_back(tape.value(m));
    r.ending = tape.value(g.ending);
    return r;
}

inline std::vector<int> to_ids(const Vocabulary& vocab, const std::vector<std::string>& tokens) {
    std::vector<int> ids;
    ids.reserve(tokens.size());
    for (const std::string& t : tokens) ids.push_back(vocab.lookup(t));
    return ids;
}

}  // namespace memchain
