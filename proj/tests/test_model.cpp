#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "memchain/grad_check.hpp"
#include "memchain/loss.hpp"
#include "memchain/model.hpp"
#include "memchain/rng.hpp"

#include "support/chain_oracle.hpp"

using namespace memchain;

namespace {

struct Rig {
    ModelConfig cfg;
    Vocabulary vocab;
    ModelParams params;
};

Rig make_rig(std::uint64_t seed, std::size_t h, std::size_t d, bool bidirectional = true,
             bool free_chain = true, bool frozen_embeddings = false,
             std::size_t vocab_words = 11) {
    Rig rig;
    rig.cfg.hidden = h;
    rig.cfg.embed_dim = d;
    rig.cfg.bidirectional = bidirectional;
    rig.cfg.free_chain = free_chain;
    for (std::size_t i = 1; i <= vocab_words; ++i) rig.vocab.add("t" + std::to_string(i));
    Rng rng(seed);
    EmbeddingTable table = random_embeddings(rig.vocab, d, rng);
    table.frozen = frozen_embeddings;
    rig.params = init_params(rig.cfg, table, rng);
    return rig;
}

std::vector<int> random_ids(Rng& rng, std::size_t len, std::size_t vocab_size) {
    std::vector<int> ids(len);
    for (int& t : ids) t = 1 + static_cast<int>(rng.below(vocab_size - 1));
    return ids;
}

}  // namespace

TEST_CASE("zero readout weights give score one half") {
    Rig rig = make_rig(3, 6, 5);
    for (double& v : rig.params.store.value(rig.params.r_out).data) v = 0.0;
    Tape tape;
    ForwardGraph g = forward(tape, rig.params, {1, 2, 3}, {4, 5});
    CHECK(tape.value(g.yhat)[0] == 0.5);
}

TEST_CASE("forward rejects empty sequences") {
    Rig rig = make_rig(3, 6, 5);
    Tape tape;
    CHECK_THROWS_AS(forward(tape, rig.params, {}, {1}), ContractError);
    CHECK_THROWS_AS(forward(tape, rig.params, {1}, {}), ContractError);
}

TEST_CASE("forward invariants hold across random passes") {
    Rng rng(17);
    for (int pass = 0; pass < 20; ++pass) {
        Rig rig = make_rig(100 + static_cast<std::uint64_t>(pass), 6, 5,
                           pass % 2 == 0, pass % 3 != 0);
        // Give the output weights signal so yhat moves off 0.5.
        for (double& v : rig.params.store.value(rig.params.r_out).data)
            v = rng.normal(0.0, 0.5);

        std::vector<int> ctx = random_ids(rng, 2 + rng.below(8), rig.vocab.size());
        std::vector<int> end = random_ids(rng, 1 + rng.below(4), rig.vocab.size());

        DropoutMasks masks;
        bool use_dropout = pass % 4 == 0;
        if (use_dropout) {
            masks.context_embed = make_mask(5, 0.5, rng);
            masks.ending_embed = make_mask(5, 0.5, rng);
            masks.chain_input = make_mask(6, 0.2, rng);
            masks.classifier = make_mask(6, 0.2, rng);
        }

        Tape tape;
        ForwardGraph g = forward(tape, rig.params, ctx, end, use_dropout ? &masks : nullptr);
        ForwardResult r = extract(tape, g);

        CHECK(r.yhat > 0.0);
        CHECK(r.yhat < 1.0);
        double att_sum = 0.0;
        for (double a : r.attention) {
            CHECK(a > 0.0);
            att_sum += a;
        }
        CHECK(att_sum == Catch::Approx(1.0).margin(1e-9));
        for (const auto& row : r.gates)
            for (double gate : row) {
                CHECK(gate > 0.0);
                CHECK(gate < 1.0);
            }
        std::size_t dirs = rig.cfg.bidirectional ? 2 : 1;
        for (std::size_t dir = 0; dir < dirs; ++dir)
            for (const auto& pos : g.chains.memories[dir])
                for (NodeId m : pos) {
                    CHECK(tape.value(m).norm2() == Catch::Approx(1.0).margin(1e-9));
                    CHECK(tape.value(m).all_finite());
                }
        CHECK(tape.value(g.ending).all_finite());
    }
}

TEST_CASE("single-token context works") {
    Rig rig = make_rig(9, 4, 4);
    Tape tape;
    ForwardGraph g = forward(tape, rig.params, {2}, {3});
    ForwardResult r = extract(tape, g);
    CHECK(r.gates.size() == 1);
    CHECK(r.yhat > 0.0);
    CHECK(r.yhat < 1.0);
}

TEST_CASE("chain count follows the key table") {
    Rig rig = make_rig(5, 4, 4, true, false);  // no free chain -> K = 3
    Tape tape;
    ForwardGraph g = forward(tape, rig.params, {1, 2}, {3});
    CHECK(extract(tape, g).attention.size() == 3);
    CHECK(g.final_memories.size() == 3);
}

TEST_CASE("run_chains matches the scalar oracle") {
    const std::size_t h = 4, T = 3, K = 2;
    Rig rig = make_rig(21, h, h);
    // Shrink the key table to K rows; run_chains sizes itself from it.
    Rng rng(77);
    Tensor keys = Tensor::zeros({K, h});
    for (double& v : keys.data) v = rng.normal(0.0, 0.7);
    rig.params.store.value(rig.params.keys) = keys;

    std::vector<Tensor> h_vals;
    for (std::size_t i = 0; i < T; ++i) h_vals.push_back([&] {
        Tensor t = Tensor::zeros({h});
        for (double& v : t.data) v = rng.normal(0.0, 1.0);
        return t;
    }());

    Tape tape;
    GraphBuilder g(tape, rig.params);
    std::vector<NodeId> h_seq;
    for (const Tensor& t : h_vals) h_seq.push_back(tape.constant(t));
    ChainsGraph cg = run_chains(g, rig.params, h_seq);

    // Mirror the parameters into plain nested vectors for the oracle.
    auto to_mat = [&](ParamId pid) {
        const Tensor& t = rig.params.store.value(pid);
        oracle::Mat m(t.rows(), oracle::Vec(t.cols()));
        for (std::size_t r = 0; r < t.rows(); ++r)
            for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at2(r, c);
        return m;
    };
    auto to_vec = [](const Tensor& t) { return oracle::Vec(t.data.begin(), t.data.end()); };

    oracle::ChainWeights fwd{to_mat(rig.params.chain[0].u), to_mat(rig.params.chain[0].v),
                             to_mat(rig.params.chain[0].w)};
    oracle::ChainWeights bwd{to_mat(rig.params.chain[1].u), to_mat(rig.params.chain[1].v),
                             to_mat(rig.params.chain[1].w)};
    std::vector<oracle::Vec> okeys;
    for (std::size_t j = 0; j < K; ++j) {
        oracle::Vec k(h);
        for (std::size_t c = 0; c < h; ++c) k[c] = keys.at2(j, c);
        okeys.push_back(k);
    }
    std::vector<oracle::Vec> oh;
    for (const Tensor& t : h_vals) oh.push_back(to_vec(t));
    oracle::ChainsOut expect =
        oracle::run(oh, okeys, fwd, bwd,
                    to_vec(rig.params.store.value(rig.params.chain_slope)), true);

    for (std::size_t dir = 0; dir < 2; ++dir)
        for (std::size_t i = 0; i < T; ++i)
            for (std::size_t j = 0; j < K; ++j) {
                CHECK(tape.value(cg.gates[dir][i][j])[0] ==
                      Catch::Approx(expect.gates[dir][i][j]).margin(1e-12));
                const Tensor& mem = tape.value(cg.memories[dir][i][j]);
                for (std::size_t c = 0; c < h; ++c)
                    CHECK(mem[c] == Catch::Approx(expect.memories[dir][i][j][c]).margin(1e-12));
            }
    for (std::size_t j = 0; j < K; ++j) {
        const Tensor& fin = tape.value(cg.final_memories[j]);
        for (std::size_t c = 0; c < h; ++c)
            CHECK(fin[c] == Catch::Approx(expect.finals[j][c]).margin(1e-12));
    }
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < K; ++j)
            CHECK(tape.value(cg.avg_gates[i][j])[0] ==
                  Catch::Approx(expect.avg_gates[i][j]).margin(1e-12));
}

TEST_CASE("palindromic input with tied directions gives palindromic gates") {
    const std::size_t h = 4, T = 5;
    Rig rig = make_rig(31, h, h);
    // Tie the two directions' chain weights.
    for (int w = 0; w < 3; ++w) {
        ParamId src[3] = {rig.params.chain[0].u, rig.params.chain[0].v, rig.params.chain[0].w};
        ParamId dst[3] = {rig.params.chain[1].u, rig.params.chain[1].v, rig.params.chain[1].w};
        rig.params.store.value(dst[w]) = rig.params.store.value(src[w]);
    }

    Rng rng(8);
    std::vector<Tensor> h_vals(T, Tensor::zeros({h}));
    for (std::size_t i = 0; i <= T / 2; ++i) {
        Tensor t = Tensor::zeros({h});
        for (double& v : t.data) v = rng.normal(0.0, 1.0);
        h_vals[i] = t;
        h_vals[T - 1 - i] = t;  // mirror
    }

    Tape tape;
    GraphBuilder g(tape, rig.params);
    std::vector<NodeId> h_seq;
    for (const Tensor& t : h_vals) h_seq.push_back(tape.constant(t));
    ChainsGraph cg = run_chains(g, rig.params, h_seq);

    std::size_t K = rig.params.store.value(rig.params.keys).rows();
    for (std::size_t i = 0; i < T; ++i)
        for (std::size_t j = 0; j < K; ++j)
            CHECK(tape.value(cg.avg_gates[i][j])[0] ==
                  Catch::Approx(tape.value(cg.avg_gates[T - 1 - i][j])[0]).margin(1e-12));
}

TEST_CASE("stronger gates forget the previous memory faster") {
    const std::size_t h = 4;
    Rig rig = make_rig(41, h, h);
    // Candidate fixed and orthogonal to the previous memory; only the gate
    // logit moves, via the key.
    rig.params.store.value(rig.params.chain[0].u) = Tensor::zeros({h, h});
    rig.params.store.value(rig.params.chain[0].v) = Tensor::zeros({h, h});
    Tensor w = Tensor::zeros({h, h});
    w.at2(2, 1) = 2.0;  // W e2 = 2 e3
    rig.params.store.value(rig.params.chain[0].w) = w;

    Tensor m_prev = Tensor::vec({1.0, 0.0, 0.0, 0.0});
    Tensor h_in = Tensor::vec({0.0, 1.0, 0.0, 0.0});

    double prev_cos = 2.0;
    double prev_gate = -1.0;
    for (double t : {-4.0, -2.0, 0.0, 2.0, 4.0}) {
        Tape tape;
        GraphBuilder g(tape, rig.params);
        Tensor key = Tensor::vec({0.0, t, 0.0, 0.0});
        ChainStepOut out = chain_step(g, rig.params, rig.params.chain[0],
                                      tape.constant(h_in), tape.constant(key),
                                      tape.constant(m_prev));
        double gate = tape.value(out.gate)[0];
        const Tensor& mem = tape.value(out.memory);
        double cosine = 0.0;
        for (std::size_t i = 0; i < h; ++i) cosine += mem[i] * m_prev[i];

        CHECK(mem.norm2() == Catch::Approx(1.0).margin(1e-12));
        CHECK(gate > prev_gate);
        CHECK(cosine < prev_cos);
        prev_gate = gate;
        prev_cos = cosine;
    }
}

TEST_CASE("disabling the backward direction leaves backward parameters untouched") {
    Rig rig = make_rig(51, 5, 4, /*bidirectional=*/false);
    for (double& v : rig.params.store.value(rig.params.r_out).data) v = 0.3;

    Tape tape;
    ForwardGraph g = forward(tape, rig.params, {1, 2, 3}, {4});
    TriggerLabels labels = TriggerLabels::zeros(3);
    labels.event = {1, 0, 1};
    LossGraph lg = compute_loss(tape, rig.params, g, 1.0, labels, SupervisionFlags{}, 0.5, 0.001);
    tape.backward(lg.total);
    std::vector<Tensor> grads = tape.param_grads(rig.params.store.values());

    auto all_zero = [&](ParamId pid) {
        for (double v : grads[static_cast<std::size_t>(pid)].data)
            if (v != 0.0) return false;
        return true;
    };
    for (ParamId pid : {rig.params.gru[1].wr, rig.params.gru[1].ur, rig.params.gru[1].br,
                        rig.params.gru[1].wz, rig.params.gru[1].uz, rig.params.gru[1].bz,
                        rig.params.gru[1].wn, rig.params.gru[1].un, rig.params.gru[1].bn,
                        rig.params.chain[1].u, rig.params.chain[1].v, rig.params.chain[1].w})
        CHECK(all_zero(pid));
    // The forward path, by contrast, is alive.
    CHECK_FALSE(all_zero(rig.params.gru[0].wn));
}

TEST_CASE("prediction path is direction independent when the backward half is silenced") {
    // A unidirectional model and a bidirectional one sharing its forward
    // weights agree exactly once the backward half is zeroed. Keys are zeroed
    // in both (they are shared across directions), which leaves attention
    // uniform and memories starting at the origin.
    Rig uni = make_rig(61, 5, 4, /*bidirectional=*/false);
    Rig bi = make_rig(999, 5, 4, /*bidirectional=*/true);

    for (ParamId pid = 0; pid < static_cast<ParamId>(uni.params.store.size()); ++pid) {
        const std::string& name = uni.params.store.name(pid);
        bi.params.store.value(bi.params.store.id_of(name)) = uni.params.store.value(pid);
    }
    auto zero = [](ModelParams& p, ParamId pid) {
        Tensor& t = p.store.value(pid);
        std::fill(t.data.begin(), t.data.end(), 0.0);
    };
    for (ModelParams* p : {&uni.params, &bi.params}) {
        zero(*p, p->keys);
        for (double& v : p->store.value(p->r_out).data) v = 0.4;
    }
    for (ParamId pid : {bi.params.gru[1].wr, bi.params.gru[1].ur, bi.params.gru[1].br,
                        bi.params.gru[1].wz, bi.params.gru[1].uz, bi.params.gru[1].bz,
                        bi.params.gru[1].wn, bi.params.gru[1].un, bi.params.gru[1].bn,
                        bi.params.chain[1].u, bi.params.chain[1].v, bi.params.chain[1].w})
        zero(bi.params, pid);

    std::vector<int> ctx = {1, 3, 2, 4};
    std::vector<int> end = {2, 1};
    Tape ta, tb;
    double ya = ta.value(forward(ta, uni.params, ctx, end).yhat)[0];
    double yb = tb.value(forward(tb, bi.params, ctx, end).yhat)[0];
    CHECK(ya == yb);
    CHECK(ya != 0.5);  // nontrivial output under the nonzero readout
}

TEST_CASE("full forward-loss gradient matches finite differences") {
    Rig rig = make_rig(71, 5, 4);
    Rng rng(72);
    for (double& v : rig.params.store.value(rig.params.r_out).data) v = rng.normal(0.0, 0.1);

    std::vector<int> ctx = {1, 4, 2, 3};
    std::vector<int> end = {5, 2};
    TriggerLabels labels = TriggerLabels::zeros(4);
    labels.event = {1, 0, 0, 1};
    labels.sentiment = {0, 1, 0, 0};
    labels.topic = {1, 1, 0, 0};

    DropoutMasks masks;
    masks.context_embed = make_mask(4, 0.5, rng);
    masks.ending_embed = make_mask(4, 0.5, rng);
    masks.chain_input = make_mask(5, 0.2, rng);
    masks.classifier = make_mask(5, 0.2, rng);

    GradCheckReport rep = grad_check(rig.params.store, [&](Tape& t) {
        ForwardGraph fwd = forward(t, rig.params, ctx, end, &masks);
        return compute_loss(t, rig.params, fwd, 1.0, labels, SupervisionFlags{}, 0.5, 0.001)
            .total;
    });
    INFO("worst " << rep.worst);
    CHECK(rep.all_below(1e-4));
}

TEST_CASE("frozen embeddings register as non-trainable") {
    Rig rig = make_rig(81, 4, 4, true, true, /*frozen=*/true);
    CHECK_FALSE(rig.params.store.trainable(rig.params.embeddings));

    Tape tape;
    ForwardGraph g = forward(tape, rig.params, {1, 2}, {3});
    tape.backward(tape.bce(g.yhat, 1.0));
    std::vector<Tensor> grads = tape.param_grads(rig.params.store.values());
    for (double v : grads[static_cast<std::size_t>(rig.params.embeddings)].data)
        CHECK(v == 0.0);
}

TEST_CASE("dropout masks carry the inverse keep probability") {
    Rng rng(91);
    Tensor m = make_mask(1000, 0.5, rng);
    std::size_t kept = 0;
    for (double v : m.data) {
        CHECK((v == 0.0 || v == 2.0));
        if (v != 0.0) ++kept;
    }
    CHECK(kept > 400);
    CHECK(kept < 600);
    Tensor all = make_mask(8, 0.0, rng);
    for (double v : all.data) CHECK(v == 1.0);
}
