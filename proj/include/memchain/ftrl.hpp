#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "memchain/params.hpp"
#include "memchain/tensor.hpp"

namespace memchain {

struct FtrlConfig {
    double learning_rate = 0.1;
    double beta = 1.0;
    double l1 = 0.0;
    double l2 = 0.0;
};

/// Per-coordinate FTRL-Proximal. Each coordinate carries the squared-gradient
/// accumulator n and the shifted linear term z; the weight is always the
/// closed-form argmin. z is seeded from the initial weights (z = -w*beta/lr at
/// n = 0) so that nonzero initialization survives the first step and, at
/// l1 = l2 = 0, every step is exactly w -= lr * g / (beta + sqrt(n_new)).
class FtrlOptimizer {
public:
    FtrlOptimizer(const FtrlConfig& cfg, const ParamStore& store) : cfg_(cfg) {
        n_.reserve(store.size());
        z_.reserve(store.size());
        for (ParamId pid = 0; pid < static_cast<ParamId>(store.size()); ++pid) {
            const Tensor& w = store.value(pid);
            n_.push_back(Tensor::zeros(w.shape));
            Tensor z = Tensor::zeros(w.shape);
            if (store.trainable(pid))
                for (std::size_t i = 0; i < w.size(); ++i)
                    z[i] = -w[i] * cfg_.beta / cfg_.learning_rate;
            z_.push_back(std::move(z));
        }
    }

    /// One update from per-parameter gradients (indexed by ParamId, as
    /// produced by Tape::param_grads). Frozen parameters are left untouched.
    void step(ParamStore& store, const std::vector<Tensor>& grads) {
        if (grads.size() != store.size())
            throw ContractError("optimizer: gradient count " + std::to_string(grads.size()) +
                                " != parameter count " + std::to_string(store.size()));
        for (ParamId pid = 0; pid < static_cast<ParamId>(store.size()); ++pid) {
            if (!store.trainable(pid)) continue;
            Tensor& w = store.value(pid);
            const Tensor& g = grads[static_cast<std::size_t>(pid)];
            require_same_shape(w, g, "ftrl step");
            Tensor& n = n_[static_cast<std::size_t>(pid)];
            Tensor& z = z_[static_cast<std::size_t>(pid)];
            for (std::size_t i = 0; i < w.size(); ++i) {
                double gi = g[i];
                if (!std::isfinite(gi))
                    throw ContractError("non-finite gradient in parameter '" +
                                        store.name(pid) + "' at coordinate " +
                                        std::to_string(i));
                double n_new = n[i] + gi * gi;
                double sigma = (std::sqrt(n_new) - std::sqrt(n[i])) / cfg_.learning_rate;
                z[i] += gi - sigma * w[i];
                n[i] = n_new;
                double zi = z[i];
                if (std::fabs(zi) <= cfg_.l1) {
                    w[i] = 0.0;
                } else {
                    double sign = zi < 0.0 ? -1.0 : 1.0;
                    w[i] = -(zi - sign * cfg_.l1) /
                           ((cfg_.beta + std::sqrt(n[i])) / cfg_.learning_rate + cfg_.l2);
                }
            }
        }
    }

    const Tensor& accumulator_n(ParamId pid) const { return n_.at(static_cast<std::size_t>(pid)); }
    const Tensor& accumulator_z(ParamId pid) const { return z_.at(static_cast<std::size_t>(pid)); }

private:
    FtrlConfig cfg_;
    std::vector<Tensor> n_, z_;
};

}  // namespace memchain
