#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "memchain/params.hpp"
#include "memchain/tape.hpp"

namespace memchain {

/// Central-difference gradient verification. The caller provides a builder
/// that constructs the scalar loss on a fresh tape from the current parameter
/// values; the builder must be deterministic (masks frozen, no RNG).
struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    std::size_t worst_coord = 0;
    double analytic = 0.0;
    double numeric = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double worst = 0.0;

    bool all_below(double tol) const { return worst < tol; }
};

// Relative error with the denominator floored at 1e-6: central differences on
// a loss of magnitude ~1 carry ~1e-11 of roundoff noise, so comparisons below
// the floor would measure that noise rather than the backward pass.
inline double rel_err(double a, double n) {
    return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), 1e-6});
}

using LossBuilder = std::function<NodeId(Tape&)>;

inline GradCheckReport grad_check(ParamStore& params, const LossBuilder& build,
                                  double h = 1e-5) {
    Tape tape;
    NodeId loss = build(tape);
    tape.backward(loss);
    std::vector<Tensor> analytic = tape.param_grads(params.values());

    GradCheckReport report;
    for (ParamId pid = 0; pid < static_cast<ParamId>(params.size()); ++pid) {
        if (!params.trainable(pid)) continue;
        GradCheckEntry entry;
        entry.name = params.name(pid);
        Tensor& value = params.value(pid);
        for (std::size_t c = 0; c < value.size(); ++c) {
            double saved = value[c];
            value[c] = saved + h;
            Tape tp;
            double fp = tp.value(build(tp))[0];
            value[c] = saved - h;
            Tape tm;
            double fm = tm.value(build(tm))[0];
            value[c] = saved;
            double numeric = (fp - fm) / (2.0 * h);
            double err = rel_err(analytic[pid][c], numeric);
            if (err > entry.max_rel_err) {
                entry.max_rel_err = err;
                entry.worst_coord = c;
                entry.analytic = analytic[pid][c];
                entry.numeric = numeric;
            }
        }
        report.worst = std::max(report.worst, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace memchain
