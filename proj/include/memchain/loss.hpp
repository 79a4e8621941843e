#pragma once

#include <string>
#include <vector>

#include "memchain/labeler.hpp"
#include "memchain/model.hpp"
#include "memchain/tape.hpp"

namespace memchain {

/// Which supervised chains actually receive gate supervision. The free chain
/// never does.
struct SupervisionFlags {
    bool event = true;
    bool sentiment = true;
    bool topic = true;

    bool any() const { return event || sentiment || topic; }
};

struct LossGraph {
    NodeId total = -1;
    NodeId prediction = -1;  // BCE(y, yhat)
    NodeId gate = -1;        // mean over supervised (i, j); -1 when no terms
    NodeId l2 = -1;          // lambda * ||R||^2; -1 when lambda == 0
};

/// Assembles the training objective for one instance on top of an existing
/// forward graph: prediction BCE + alpha * mean gate BCE over every
/// (position, supervised chain) pair + L2 on the output weights only.
inline LossGraph compute_loss(Tape& t, ModelParams& params, const ForwardGraph& fwd,
                              double target, const TriggerLabels& labels,
                              const SupervisionFlags& flags, double alpha,
                              double lambda) {
    std::size_t T = fwd.avg_gates.size();
    if (labels.size() != T)
        throw ContractError("gate labels cover " + std::to_string(labels.size()) +
                            " tokens but context has " + std::to_string(T));

    LossGraph out;
    out.prediction = t.bce(fwd.yhat, target);
    out.total = out.prediction;

    const std::vector<std::uint8_t>* aspect_bits[kSupervisedChains] = {
        &labels.event, &labels.sentiment, &labels.topic};
    bool aspect_on[kSupervisedChains] = {flags.event, flags.sentiment, flags.topic};

    std::vector<NodeId> terms;
    if (alpha != 0.0) {
        for (std::size_t i = 0; i < T; ++i) {
            for (std::size_t j = 0; j < kSupervisedChains; ++j) {
                if (!aspect_on[j]) continue;
                double l = static_cast<double>((*aspect_bits[j])[i]);
                terms.push_back(t.bce(fwd.avg_gates[i][j], l));
            }
        }
    }
    if (!terms.empty()) {
        NodeId sum = terms[0];
        for (std::size_t i = 1; i < terms.size(); ++i) sum = t.add(sum, terms[i]);
        out.gate = t.scale(sum, 1.0 / static_cast<double>(terms.size()));
        out.total = t.add(out.total, t.scale(out.gate, alpha));
    }

    if (lambda != 0.0) {
        GraphBuilder g(t, params);
        NodeId r = g.param(params.r_out);
        out.l2 = t.scale(t.dot(r, r), lambda);
        out.total = t.add(out.total, out.l2);
    }
    return out;
}

}  // namespace memchain
